//! Rule-based keyframe labels and the event-frame keyframe classifier.

mod detector;
mod eval;
mod rules;
mod train;

pub use detector::{DetectorArch, DetectorConfig, DetectorModel};
pub use eval::{
    detector_samples, eval_detector, evaluate_predictions, predict_samples, Confusion, DetectorEval, DetectorSample,
    RuleScore, DECISION_THRESHOLD,
};
pub use rules::{label_keyframe, label_windows, KeyframeLabel, KeyframeRuleConfig, Rule, WindowLabel};
pub use train::{fit_detector, train_detector, DetectorTrainConfig};
