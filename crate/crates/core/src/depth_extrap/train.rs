use eventdepth_nn::{CosineSchedule, Graph, NAdam, NAdamConfig, NnError, OptimizerState, SsimConfig, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::DepthFrame;
use super::loss::{total_loss_graph, LossWeights};
use super::model::{ExtrapolatorConfig, ExtrapolatorModel};
use super::samples::{Baseline, ExtrapSample};
use crate::error::{Error, Result};
use crate::event_core::EventVoxelGrid;
use crate::metrics::{aggregate, evaluate, DepthMetrics};
use crate::train_log::{EpochLog, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub cosine: bool,
    /// Linear learning-rate ramp over the first optimizer steps.
    pub warmup_steps: u64,
    /// Rescale the gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    pub ssim_window: usize,
    /// Compare prediction and target in meters (SSIM range = max range)
    /// rather than in range-normalized units.
    pub loss_in_meters: bool,
    pub model: ExtrapolatorConfig,
}

impl Default for ExtrapTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            cosine: true,
            warmup_steps: 0,
            grad_clip: None,
            seed: 0,
            weights: LossWeights::default(),
            ssim_window: 7,
            loss_in_meters: true,
            model: ExtrapolatorConfig::default(),
        }
    }
}

impl ExtrapTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.ssim_window == 0 {
            return Err(Error::Config("ssim_window must be positive".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    fn ssim(&self) -> SsimConfig {
        SsimConfig {
            window: self.ssim_window,
            range: self.loss_scale(),
        }
    }

    fn loss_scale(&self) -> f64 {
        if self.loss_in_meters {
            self.model.max_range_m as f64
        } else {
            1.0
        }
    }
}

fn target_tensor(model: &ExtrapolatorModel, batch: &[&ExtrapSample], scale: f32) -> Result<Tensor<f32>> {
    let g = model.geometry();
    let range = model.config().max_range_m / scale;
    let mut data = Vec::with_capacity(batch.len() * g.pixels());
    for s in batch {
        if s.target.geometry != g {
            return Err(Error::Geometry(format!(
                "target {}x{} does not match model {}x{}",
                s.target.geometry.height, s.target.geometry.width, g.height, g.width
            )));
        }
        data.extend(s.target.values.iter().map(|&v| v / range));
    }
    Ok(Tensor::new(&[batch.len(), 1, g.height, g.width], data)?)
}

fn batch_loss(model: &ExtrapolatorModel, batch: &[&ExtrapSample], cfg: &ExtrapTrainConfig) -> Result<(Graph<f32>, Var)> {
    let priors: Vec<&DepthFrame> = batch.iter().map(|s| &s.prior).collect();
    let voxels: Vec<&EventVoxelGrid> = batch.iter().map(|s| &s.voxel).collect();
    let inputs = model.prepare::<f32>(&priors, &voxels)?;
    let scale = cfg.loss_scale();
    let target = target_tensor(model, batch, scale as f32)?;
    let mut g = Graph::new();
    let mut pred = model.forward(&mut g, model.params(), &inputs)?;
    if cfg.loss_in_meters {
        pred = g.scale(pred, scale as f32);
    }
    let loss = total_loss_graph(&mut g, pred, &target, &cfg.weights, cfg.ssim())?;
    Ok((g, loss))
}

fn dataset_loss(model: &ExtrapolatorModel, samples: &[ExtrapSample], cfg: &ExtrapTrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&ExtrapSample> = chunk.iter().collect();
        let (g, loss) = batch_loss(model, &refs, cfg)?;
        total += g.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Model predictions for every sample, in order.
pub fn predict_model(model: &ExtrapolatorModel, samples: &[ExtrapSample], batch_size: usize) -> Result<Vec<DepthFrame>> {
    let range = model.config().max_range_m;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let priors: Vec<&DepthFrame> = chunk.iter().map(|s| &s.prior).collect();
        let voxels: Vec<&EventVoxelGrid> = chunk.iter().map(|s| &s.voxel).collect();
        for (norm, s) in model.predict_normalized(&priors, &voxels)?.into_iter().zip(chunk) {
            let values = norm.into_iter().map(|v| (v * range).min(range)).collect();
            out.push(DepthFrame::new(model.geometry(), values, s.t1)?);
        }
    }
    Ok(out)
}

/// Pooled metrics of `preds` against the sample targets.
pub fn score(preds: &[DepthFrame], samples: &[ExtrapSample]) -> Result<DepthMetrics> {
    if preds.len() != samples.len() {
        return Err(Error::Data(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let per: Vec<DepthMetrics> = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| evaluate(p, &s.target))
        .collect::<Result<_>>()?;
    aggregate(&per)
}

pub fn score_model(model: &ExtrapolatorModel, samples: &[ExtrapSample], batch_size: usize) -> Result<DepthMetrics> {
    score(&predict_model(model, samples, batch_size)?, samples)
}

pub fn score_baseline(baseline: Baseline, samples: &[ExtrapSample]) -> Result<DepthMetrics> {
    let preds: Vec<DepthFrame> = samples.iter().map(|s| baseline.predict(s)).collect::<Result<_>>()?;
    score(&preds, samples)
}

/// Global gradient L2 norm before clipping.
fn clip_gradients(params: &mut eventdepth_nn::ParamStore<f32>, max_norm: Option<f64>) -> f64 {
    let sq: f64 = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt();
    if let Some(max) = max_norm {
        if norm > max {
            let s = (max / norm) as f32;
            for p in params.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

/// Minibatch NAdam on the composite loss. Fully determined by `config.seed`.
/// The validation metric is pooled RMSE in meters.
pub fn train_extrapolator(
    train: &[ExtrapSample],
    val: &[ExtrapSample],
    config: &ExtrapTrainConfig,
) -> Result<(ExtrapolatorModel, TrainLog)> {
    fit_extrapolator(train, val, config).map(|(m, log, _)| (m, log))
}

/// As [`train_extrapolator`], also returning the final optimizer state.
pub fn fit_extrapolator(
    train: &[ExtrapSample],
    val: &[ExtrapSample],
    config: &ExtrapTrainConfig,
) -> Result<(ExtrapolatorModel, TrainLog, OptimizerState<f32>)> {
    config.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::Data("empty extrapolator training set".into()));
    };
    let mut model = ExtrapolatorModel::new(first.prior.geometry, config.model.clone(), config.seed)?;
    let initial_loss = dataset_loss(&model, train, config)?;
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
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe7_a9_01a7);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let lr = opt.start_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if step < config.warmup_steps {
                opt.set_lr(lr * (step + 1) as f64 / config.warmup_steps as f64);
            } else if step == config.warmup_steps {
                opt.set_lr(lr);
            }
            step += 1;
            let batch: Vec<&ExtrapSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (g, loss) = batch_loss(&model, &batch, config)?;
            let l = g.value(loss).item();
            if !l.is_finite() {
                return Err(Error::Nn(NnError::NonFinite(format!("extrapolator loss at epoch {}", epoch + 1))));
            }
            sum += l as f64 * chunk.len() as f64;
            g.backward(loss, model.params_mut())?;
            clip_gradients(model.params_mut(), config.grad_clip);
            opt.step(model.params_mut())?;
        }
        let val_metric = if val.is_empty() {
            None
        } else {
            Some(score_model(&model, val, config.batch_size)?.rmse)
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
            val_metric_name: "rmse_m".into(),
            epochs,
        },
        opt.state().clone(),
    ))
}
