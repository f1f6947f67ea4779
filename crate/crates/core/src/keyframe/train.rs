use eventdepth_nn::{CosineSchedule, Graph, NAdam, NAdamConfig, OptimizerState, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{DetectorConfig, DetectorModel};
use super::eval::{predict_samples, Confusion, DetectorSample, DECISION_THRESHOLD};
use crate::error::{Error, Result};
use crate::event_core::EventFrame;
use crate::train_log::{EpochLog, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-anneal the learning rate to 0 over `epochs`.
    pub cosine: bool,
    /// Weight BCE terms by inverse class frequency.
    pub balance_classes: bool,
    pub seed: u64,
    pub model: DetectorConfig,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-4,
            cosine: false,
            balance_classes: true,
            seed: 0,
            model: DetectorConfig::default(),
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        self.model.validate()
    }
}

fn class_weights(train: &[DetectorSample], balance: bool) -> (f32, f32) {
    if !balance {
        return (1.0, 1.0);
    }
    let n = train.len() as f32;
    let pos = train.iter().filter(|s| s.label).count() as f32;
    (n / (2.0 * pos), n / (2.0 * (n - pos)))
}

fn batch_loss(model: &DetectorModel, batch: &[&DetectorSample], w: (f32, f32)) -> Result<(Graph<f32>, Var)> {
    let frames: Vec<&EventFrame> = batch.iter().map(|s| &s.frame).collect();
    let labels: Vec<f32> = batch.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
    let weights: Vec<f32> = batch.iter().map(|s| if s.label { w.0 } else { w.1 }).collect();
    let mut g = Graph::new();
    let x = g.input(model.input_tensor::<f32>(&frames)?);
    let p = model.forward(&mut g, model.params(), x)?;
    let loss = g.bce(p, &labels, Some(&weights))?;
    Ok((g, loss))
}

fn dataset_loss(model: &DetectorModel, train: &[DetectorSample], w: (f32, f32), batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in train.chunks(batch) {
        let refs: Vec<&DetectorSample> = chunk.iter().collect();
        let (g, loss) = batch_loss(model, &refs, w)?;
        total += g.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(total / train.len() as f64)
}

/// Minibatch NAdam on weighted BCE. Fully determined by `config.seed`.
pub fn train_detector(
    train: &[DetectorSample],
    val: &[DetectorSample],
    config: &DetectorTrainConfig,
) -> Result<(DetectorModel, TrainLog)> {
    fit_detector(train, val, config).map(|(m, log, _)| (m, log))
}

/// As [`train_detector`], also returning the final optimizer state.
pub fn fit_detector(
    train: &[DetectorSample],
    val: &[DetectorSample],
    config: &DetectorTrainConfig,
) -> Result<(DetectorModel, TrainLog, OptimizerState<f32>)> {
    config.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::Data("empty detector training set".into()));
    };
    let positives = train.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Data(format!(
            "detector training set is single-class ({positives} of {} positive)",
            train.len()
        )));
    }
    let geometry = first.frame.geometry;
    let mut model = DetectorModel::new(geometry, config.model.clone(), config.seed)?;
    let weights = class_weights(train, config.balance_classes);
    let initial_loss = dataset_loss(&model, train, weights, config.batch_size)?;

    let mut opt = NAdam::new(
        NAdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        model.params(),
    );
    if config.cosine {
        opt = opt.with_schedule(CosineSchedule {
            total_epochs: config.epochs,
            lr_min: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd7ec_7042);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    for epoch in 0..config.epochs {
        let lr = opt.start_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DetectorSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (g, loss) = batch_loss(&model, &batch, weights)?;
            let l = g.value(loss).item();
            if !l.is_finite() {
                return Err(Error::Nn(eventdepth_nn::NnError::NonFinite(format!(
                    "detector loss at epoch {}",
                    epoch + 1
                ))));
            }
            sum += l as f64 * chunk.len() as f64;
            g.backward(loss, model.params_mut())?;
            opt.step(model.params_mut())?;
        }
        let val_metric = if val.is_empty() {
            None
        } else {
            let probs = predict_samples(&model, val, config.batch_size)?;
            let predicted: Vec<bool> = probs.iter().map(|&p| p >= DECISION_THRESHOLD).collect();
            let labels: Vec<bool> = val.iter().map(|s| s.label).collect();
            Some(Confusion::from_pairs(&predicted, &labels)?.f1())
        };
        epochs.push(EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: sum / train.len() as f64,
            val_metric,
        });
    }
    Ok((
        model,
        TrainLog {
            initial_loss,
            val_metric_name: "f1".into(),
            epochs,
        },
        opt.state().clone(),
    ))
}
