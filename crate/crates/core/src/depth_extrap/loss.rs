use eventdepth_nn::loss::{gradient_loss, mse_masked, normal_loss, ssim_masked};
use eventdepth_nn::{Element, Graph, SsimConfig, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub depth: f64,
    pub grad: f64,
    pub normal: f64,
    pub ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 1.0,
            grad: 10.0,
            normal: 0.01,
            ssim: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.depth, self.grad, self.normal, self.ssim];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights {all:?} must be finite and non-negative")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub grad: f64,
    pub normal: f64,
    /// `(1 - SSIM) / 2`.
    pub ssim: f64,
    pub total: f64,
}

/// Valid-target mask (`target > 0`); errors when nothing is valid.
pub fn valid_mask<T: Element>(target: &Tensor<T>) -> Result<Vec<bool>> {
    let mask: Vec<bool> = target.data().iter().map(|&v| v > T::zero()).collect();
    if !mask.contains(&true) {
        return Err(Error::Data("target has no valid pixels".into()));
    }
    Ok(mask)
}

/// `λ1·MSE + λ2·L_grad + λ3·L_norm + λ4·(1 - SSIM)/2` over valid target pixels.
pub fn total_loss<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
    ssim_cfg: &SsimConfig,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let mask = valid_mask(target)?;
    let m = Some(mask.as_slice());
    let mse = mse_masked(pred, target, m)?.as_f64();
    let grad = gradient_loss(pred, target, m)?.as_f64();
    let normal = normal_loss(pred, target, m)?.as_f64();
    let ssim = (1.0 - ssim_masked(pred, target, ssim_cfg, m)?.as_f64()) / 2.0;
    Ok(LossBreakdown {
        mse,
        grad,
        normal,
        ssim,
        total: weights.depth * mse + weights.grad * grad + weights.normal * normal + weights.ssim * ssim,
    })
}

/// Records [`total_loss`] on a graph.
pub fn total_loss_graph<T: Element>(
    g: &mut Graph<T>,
    pred: Var,
    target: &Tensor<T>,
    weights: &LossWeights,
    ssim_cfg: SsimConfig,
) -> Result<Var> {
    weights.validate()?;
    let mask = valid_mask(target)?;
    let m = Some(mask.as_slice());
    let f = T::from_f64_lossy;
    let mse = g.mse(pred, target, m)?;
    let grad = g.gradient_loss(pred, target, m)?;
    let normal = g.normal_loss(pred, target, m)?;
    let ssim = g.ssim(pred, target, ssim_cfg, m)?;
    let sum = g.weighted_sum(&[
        (mse, f(weights.depth)),
        (grad, f(weights.grad)),
        (normal, f(weights.normal)),
        (ssim, f(-weights.ssim / 2.0)),
    ])?;
    let offset = g.input(Tensor::scalar(f(weights.ssim / 2.0)));
    Ok(g.add(sum, offset)?)
}
