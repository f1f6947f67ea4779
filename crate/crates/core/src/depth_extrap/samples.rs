//! (prior, events, target) triples cut from simulated sequences.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_exponential, baseline_linear, baseline_repeat, DEFAULT_LINEAR_HISTORY};
use super::frame::DepthFrame;
use crate::error::{Error, Result};
use crate::event_core::{build_voxel_grid, EventVoxelGrid, Micros};
use crate::scene_sim::Sequence;

pub const DEFAULT_FPS_SET: [f64; 5] = [2.0, 5.0, 10.0, 20.0, 50.0];

/// How the gap between prior and target is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GapMode {
    Fixed { fps: f64 },
    /// Each sample draws its rate uniformly from the set.
    Adaptive { fps_set: Vec<f64> },
}

impl GapMode {
    pub fn label(&self) -> String {
        match self {
            GapMode::Fixed { fps } => format!("{fps}"),
            GapMode::Adaptive { .. } => "adaptive".into(),
        }
    }

    fn rates(&self) -> &[f64] {
        match self {
            GapMode::Fixed { fps } => std::slice::from_ref(fps),
            GapMode::Adaptive { fps_set } => fps_set,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: GapMode,
    pub bins: usize,
    /// Frames of history kept per sample, prior included.
    pub history: usize,
    /// Spacing of candidate prior frames, in ground-truth frames.
    pub stride_frames: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            mode: GapMode::Adaptive {
                fps_set: DEFAULT_FPS_SET.to_vec(),
            },
            bins: 5,
            history: DEFAULT_LINEAR_HISTORY,
            stride_frames: 10,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = self.mode.rates();
        if rates.is_empty() {
            return Err(Error::Config("fps set is empty".into()));
        }
        if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("fps {r} must be positive")));
        }
        if self.bins == 0 || self.history < 2 || self.stride_frames == 0 {
            return Err(Error::Config(format!(
                "need bins >= 1, history >= 2, stride_frames >= 1 (got {}, {}, {})",
                self.bins, self.history, self.stride_frames
            )));
        }
        Ok(())
    }

    /// Gap in ground-truth frames for each rate; rates must divide the frame rate.
    fn gap_frames(&self, frame_rate: f64) -> Result<Vec<usize>> {
        self.mode
            .rates()
            .iter()
            .map(|&fps| {
                let g = frame_rate / fps;
                let r = g.round();
                if r < 1.0 || (g - r).abs() > 1e-9 {
                    Err(Error::Config(format!(
                        "fps {fps} does not divide the {frame_rate} Hz ground-truth rate"
                    )))
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapSample {
    pub sequence: usize,
    pub fps: f64,
    pub t0: Micros,
    pub t1: Micros,
    pub prior: DepthFrame,
    /// Earlier frames, oldest first, spaced by the same gap.
    pub history: Vec<DepthFrame>,
    /// Events over `[t0, t1)`.
    pub voxel: EventVoxelGrid,
    pub target: DepthFrame,
}

impl ExtrapSample {
    /// History with the prior appended.
    pub fn frames(&self) -> Vec<&DepthFrame> {
        self.history.iter().chain(std::iter::once(&self.prior)).collect()
    }
}

/// Samples from one sequence. Candidate priors are every `stride_frames`-th
/// frame with enough history before it and a target after it.
pub fn extrap_samples(sequence: &Sequence, sequence_index: usize, cfg: &SamplingConfig) -> Result<Vec<ExtrapSample>> {
    cfg.validate()?;
    let gaps = cfg.gap_frames(sequence.config.rate_hz)?;
    let rates = cfg.mode.rates();
    let choices: Vec<(f64, usize)> = rates.iter().copied().zip(gaps).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (sequence_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let geometry = sequence.config.geometry();
    let n = sequence.depth.len();
    let mut out = Vec::new();
    for i in (0..n).step_by(cfg.stride_frames) {
        let &(fps, gap) = choices.choose(&mut rng).expect("validated non-empty");
        let back = (cfg.history - 1) * gap;
        if i < back || i + gap >= n {
            continue;
        }
        let target = &sequence.depth[i + gap];
        if target.valid_count() == 0 {
            continue;
        }
        let prior = sequence.depth[i].clone();
        let history = (1..cfg.history).rev().map(|j| sequence.depth[i - j * gap].clone()).collect();
        let slice = sequence.events.slice(prior.timestamp, target.timestamp)?;
        out.push(ExtrapSample {
            sequence: sequence_index,
            fps,
            t0: prior.timestamp,
            t1: target.timestamp,
            voxel: build_voxel_grid(&slice, cfg.bins, geometry)?,
            prior,
            history,
            target: target.clone(),
        });
    }
    Ok(out)
}

/// Analytic predictors evaluated on [`ExtrapSample`]s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Repeat,
    Linear,
    Exponential,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Repeat, Baseline::Linear, Baseline::Exponential];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Repeat => "repeat",
            Baseline::Linear => "linear",
            Baseline::Exponential => "exponential",
        }
    }

    pub fn predict(self, sample: &ExtrapSample) -> Result<DepthFrame> {
        let frames = sample.frames();
        match self {
            Baseline::Repeat => Ok(baseline_repeat(&sample.prior, sample.t1)),
            Baseline::Linear => baseline_linear(&frames, frames.len(), sample.t1),
            Baseline::Exponential => baseline_exponential(&frames, sample.t1),
        }
    }
}
