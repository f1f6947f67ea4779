//! Detector and extrapolator stand-ins the pipeline can be run with.

use std::collections::HashMap;

use crate::depth_extrap::{DepthFrame, ExtrapolatorModel};
use crate::error::{Error, Result};
use crate::event_core::{EventFrame, EventVoxelGrid, Geometry, Micros};
use crate::keyframe::{label_windows, DetectorModel, KeyframeRuleConfig, DECISION_THRESHOLD};
use crate::scene_sim::Sequence;

/// One detector window as seen by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowInfo {
    pub index: usize,
    pub t_start: Micros,
    pub t_end: Micros,
    /// Most recent LiDAR frame before `t_end`.
    pub lidar_t: Micros,
    /// First window after that LiDAR frame.
    pub first_after_lidar: bool,
}

pub trait KeyframeDetector: Send {
    fn name(&self) -> String;

    /// Input geometry, if fixed.
    fn geometry(&self) -> Option<Geometry> {
        None
    }

    /// Keyframe score in `[0, 1]`; positive at [`DECISION_THRESHOLD`] and above.
    fn score(&mut self, window: &WindowInfo, frame: &EventFrame) -> Result<f64>;
}

pub trait DepthExtrapolator: Send {
    fn name(&self) -> String;

    fn geometry(&self) -> Option<Geometry> {
        None
    }

    fn bins(&self) -> usize;

    fn extrapolate(&mut self, prior: &DepthFrame, voxel: &EventVoxelGrid, t1: Micros) -> Result<DepthFrame>;
}

pub struct CnnDetector(pub DetectorModel);

impl KeyframeDetector for CnnDetector {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn geometry(&self) -> Option<Geometry> {
        Some(self.0.geometry())
    }

    fn score(&mut self, _: &WindowInfo, frame: &EventFrame) -> Result<f64> {
        Ok(self.0.predict(frame)? as f64)
    }
}

/// Ground-truth keyframe rules over the global window grid.
pub struct RuleOracle {
    labels: HashMap<(Micros, Micros), bool>,
}

impl RuleOracle {
    pub fn new(sequence: &Sequence, window_us: Micros, rules: &KeyframeRuleConfig) -> Result<Self> {
        let labels = label_windows(sequence, window_us, rules)?
            .into_iter()
            .map(|l| ((l.t_start, l.t_end), l.label))
            .collect();
        Ok(Self { labels })
    }
}

impl KeyframeDetector for RuleOracle {
    fn name(&self) -> String {
        "rule_oracle".into()
    }

    fn score(&mut self, w: &WindowInfo, _: &EventFrame) -> Result<f64> {
        match self.labels.get(&(w.t_start, w.t_end)) {
            Some(&l) => Ok(if l { 1.0 } else { 0.0 }),
            None => Err(Error::Data(format!("no rule label for window [{}, {})", w.t_start, w.t_end))),
        }
    }
}

pub struct AlwaysTrigger;

impl KeyframeDetector for AlwaysTrigger {
    fn name(&self) -> String {
        "always".into()
    }

    fn score(&mut self, _: &WindowInfo, _: &EventFrame) -> Result<f64> {
        Ok(1.0)
    }
}

/// Fires on the first window after each LiDAR frame.
pub struct OncePerGap;

impl KeyframeDetector for OncePerGap {
    fn name(&self) -> String {
        "once_per_gap".into()
    }

    fn score(&mut self, w: &WindowInfo, _: &EventFrame) -> Result<f64> {
        Ok(if w.first_after_lidar { 1.0 } else { 0.0 })
    }
}

pub struct CnnExtrapolator(pub ExtrapolatorModel);

impl DepthExtrapolator for CnnExtrapolator {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn geometry(&self) -> Option<Geometry> {
        Some(self.0.geometry())
    }

    fn bins(&self) -> usize {
        self.0.config().bins
    }

    fn extrapolate(&mut self, prior: &DepthFrame, voxel: &EventVoxelGrid, t1: Micros) -> Result<DepthFrame> {
        self.0.extrapolate(prior, voxel, t1)
    }
}

/// Returns the ground-truth frame at `t1`.
pub struct GroundTruthCopy {
    frames: Vec<DepthFrame>,
    bins: usize,
}

impl GroundTruthCopy {
    pub fn new(sequence: &Sequence, bins: usize) -> Self {
        Self {
            frames: sequence.depth.clone(),
            bins,
        }
    }
}

impl DepthExtrapolator for GroundTruthCopy {
    fn name(&self) -> String {
        "ground_truth".into()
    }

    fn bins(&self) -> usize {
        self.bins
    }

    fn extrapolate(&mut self, _: &DepthFrame, _: &EventVoxelGrid, t1: Micros) -> Result<DepthFrame> {
        match self.frames.binary_search_by_key(&t1, |f| f.timestamp) {
            Ok(i) => Ok(self.frames[i].clone()),
            Err(_) => Err(Error::Data(format!("no ground-truth depth at t = {t1} us"))),
        }
    }
}

pub struct RepeatExtrapolator {
    pub bins: usize,
}

impl DepthExtrapolator for RepeatExtrapolator {
    fn name(&self) -> String {
        "repeat".into()
    }

    fn bins(&self) -> usize {
        self.bins
    }

    fn extrapolate(&mut self, prior: &DepthFrame, _: &EventVoxelGrid, t1: Micros) -> Result<DepthFrame> {
        Ok(prior.clone().with_timestamp(t1))
    }
}

pub(crate) fn is_positive(score: f64) -> bool {
    score >= DECISION_THRESHOLD as f64
}
