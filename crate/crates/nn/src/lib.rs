//! Dense tensors, a reverse-mode tape, and exactly the layers, losses and
//! optimizer needed by the keyframe detector and the depth extrapolator.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod optim;
pub mod param;
pub mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{sigmoid_scalar, softplus_scalar, Graph, Var};
pub use kernels::{conv2d, conv_transpose2d, maxpool2d, Conv2dSpec};
pub use loss::{bce_loss, gradient_loss, mse_loss, normal_loss, ssim, SsimConfig};
pub use optim::{cosine_anneal_lr, CosineSchedule, NAdam, NAdamConfig, OptimizerState};
pub use param::{kaiming_uniform, ParamId, ParamStore, Parameter};
pub use tensor::{Element, Tensor};

/// Elementwise activations on plain tensors.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn softplus<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(softplus_scalar)
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}
