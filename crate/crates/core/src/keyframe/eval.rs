use serde::{Deserialize, Serialize};

use super::detector::DetectorModel;
use super::rules::{label_windows, KeyframeRuleConfig, Rule};
use crate::error::{Error, Result};
use crate::event_core::{build_event_frame, EventFrame, Micros};
use crate::scene_sim::Sequence;

/// One labeled detector window.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSample {
    pub sequence: usize,
    pub window: usize,
    /// Window end: the trigger time if the window is a keyframe.
    pub t: Micros,
    pub frame: EventFrame,
    pub label: bool,
    pub rules: Vec<Rule>,
}

impl DetectorSample {
    pub fn new(frame: EventFrame, label: bool) -> Self {
        Self {
            sequence: 0,
            window: 0,
            t: 0,
            frame,
            label,
            rules: Vec::new(),
        }
    }
}

/// Event frames and rule labels for every `delta`-window of a sequence.
pub fn detector_samples(
    sequence: &Sequence,
    sequence_index: usize,
    delta: Micros,
    rules: &KeyframeRuleConfig,
) -> Result<Vec<DetectorSample>> {
    let labels = label_windows(sequence, delta, rules)?;
    let geometry = sequence.config.geometry();
    labels
        .into_iter()
        .map(|l| {
            let slice = sequence.events.slice(l.t_start, l.t_end)?;
            Ok(DetectorSample {
                sequence: sequence_index,
                window: l.index,
                t: l.t_end,
                frame: build_event_frame(&slice, geometry)?,
                label: l.label,
                rules: l.rules,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(predicted: &[bool], labels: &[bool]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub rule: Rule,
    /// Positives in which this rule fired.
    pub support: usize,
    pub recall: f64,
    /// F1 over all negatives plus the positives in which this rule fired.
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per false positive: distance to the nearest true positive of the same
    /// sequence or to the next LiDAR frame, whichever is closer.
    pub fp_gaps_us: Vec<Micros>,
    pub per_rule: Vec<RuleScore>,
}

pub const DECISION_THRESHOLD: f32 = 0.5;

pub fn evaluate_predictions(probs: &[f32], samples: &[DetectorSample], lidar_period_us: Micros) -> Result<DetectorEval> {
    if probs.len() != samples.len() {
        return Err(Error::Data(format!("{} probabilities for {} samples", probs.len(), samples.len())));
    }
    if lidar_period_us == 0 {
        return Err(Error::Config("LiDAR period must be positive".into()));
    }
    let predicted: Vec<bool> = probs.iter().map(|&p| p >= DECISION_THRESHOLD).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let confusion = Confusion::from_pairs(&predicted, &labels)?;

    let mut fp_gaps_us = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if !(predicted[i] && !s.label) {
            continue;
        }
        let next_lidar = (s.t / lidar_period_us + 1) * lidar_period_us - s.t;
        let nearest_tp = samples
            .iter()
            .zip(&predicted)
            .filter(|(o, &p)| p && o.label && o.sequence == s.sequence)
            .map(|(o, _)| o.t.abs_diff(s.t))
            .min();
        fp_gaps_us.push(nearest_tp.map_or(next_lidar, |g| g.min(next_lidar)));
    }

    let per_rule = Rule::ALL
        .iter()
        .map(|&rule| {
            let keep: Vec<usize> = (0..samples.len())
                .filter(|&i| !samples[i].label || samples[i].rules.contains(&rule))
                .collect();
            let c = Confusion::from_pairs(
                &keep.iter().map(|&i| predicted[i]).collect::<Vec<_>>(),
                &keep.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
            )
            .expect("equal lengths");
            RuleScore {
                rule,
                support: c.tp + c.fn_,
                recall: c.recall(),
                f1: c.f1(),
            }
        })
        .collect();

    Ok(DetectorEval {
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        confusion,
        fp_gaps_us,
        per_rule,
    })
}

pub fn predict_samples(model: &DetectorModel, samples: &[DetectorSample], batch: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let frames: Vec<&EventFrame> = chunk.iter().map(|s| &s.frame).collect();
        out.extend(model.predict_batch(&frames)?);
    }
    Ok(out)
}

pub fn eval_detector(model: &DetectorModel, samples: &[DetectorSample], lidar_period_us: Micros) -> Result<DetectorEval> {
    let probs = predict_samples(model, samples, 64)?;
    evaluate_predictions(&probs, samples, lidar_period_us)
}
