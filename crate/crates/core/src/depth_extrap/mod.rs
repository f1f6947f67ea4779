//! Event-guided depth extrapolation: the U-Net, its loss, analytic baselines
//! and the sample protocols used to train and score them.

mod baselines;
mod frame;
mod loss;
mod model;
mod samples;
mod train;

pub use baselines::{baseline_exponential, baseline_linear, baseline_repeat, DEFAULT_LINEAR_HISTORY};
pub use frame::{
    read_depth, read_depth_stream, write_depth, write_depth_stream, DepthFrame, DEPTH_HEADER_BYTES, DEPTH_MAGIC,
};
pub use loss::{total_loss, total_loss_graph, valid_mask, LossBreakdown, LossWeights};
pub use model::{
    resconv_forward, EventInput, ExtrapolatorArch, ExtrapolatorConfig, ExtrapolatorInputs, ExtrapolatorModel, Fusion,
    VARIANTS,
};
pub use samples::{extrap_samples, Baseline, ExtrapSample, GapMode, SamplingConfig, DEFAULT_FPS_SET};
pub use train::{predict_model, score, score_baseline, score_model, fit_extrapolator, train_extrapolator, ExtrapTrainConfig};
