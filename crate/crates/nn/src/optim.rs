/*!
NAdam (Adam with Nesterov momentum) and a cosine-annealed learning rate.

The update follows the momentum-decay formulation:

```text
mu_t     = beta1 * (1 - 0.5 * 0.96^(t * psi))
m_t      = beta1 * m + (1 - beta1) * g
v_t      = beta2 * v + (1 - beta2) * g^2
m_hat    = mu_{t+1} * m_t / (1 - prod_{i<=t+1} mu_i) + (1 - mu_t) * g / (1 - prod_{i<=t} mu_i)
v_hat    = v_t / (1 - beta2^t)
theta   -= lr * m_hat / (sqrt(v_hat) + eps)
```
*/

use std::f64::consts::PI;

use crate::error::{NnError, Result};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
}

impl Default for NAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 0.004,
        }
    }
}

/// Cosine schedule over a fixed number of epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub total_epochs: u32,
    pub lr_min: f64,
}

/// `lr(e) = lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi e / E))`.
pub fn cosine_anneal_lr(base_lr: f64, lr_min: f64, epoch: u32, total_epochs: u32) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    let e = epoch.min(total_epochs) as f64;
    lr_min + 0.5 * (base_lr - lr_min) * (1.0 + (PI * e / total_epochs as f64).cos())
}

/// Moments, step counter and schedule of an NAdam run.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub base_lr: f64,
    pub lr: f64,
    pub schedule: Option<CosineSchedule>,
    pub mu_product: f64,
    pub first_moments: Vec<Tensor<T>>,
    pub second_moments: Vec<Tensor<T>>,
}

pub struct NAdam<T> {
    config: NAdamConfig,
    state: OptimizerState<T>,
}

impl<T: Element> NAdam<T> {
    pub fn new(config: NAdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            state: OptimizerState {
                step: 0,
                base_lr: config.lr,
                lr: config.lr,
                schedule: None,
                mu_product: 1.0,
                first_moments: zeros(),
                second_moments: zeros(),
            },
        }
    }

    pub fn with_schedule(mut self, schedule: CosineSchedule) -> Self {
        self.state.schedule = Some(schedule);
        self
    }

    pub fn from_state(config: NAdamConfig, state: OptimizerState<T>) -> Self {
        Self { config, state }
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    pub fn config(&self) -> &NAdamConfig {
        &self.config
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.lr = lr;
    }

    /// Sets the learning rate for `epoch` from the attached cosine schedule.
    pub fn start_epoch(&mut self, epoch: u32) -> f64 {
        if let Some(s) = self.state.schedule {
            self.state.lr = cosine_anneal_lr(self.state.base_lr, s.lr_min, epoch, s.total_epochs);
        }
        self.state.lr
    }

    fn mu(&self, t: u64) -> f64 {
        self.config.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.config.momentum_decay))
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if !params.grads_ready() {
            return Err(NnError::State("optimizer step before gradients were computed".into()));
        }
        if params.len() != self.state.first_moments.len() {
            return Err(NnError::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.first_moments.len(),
                params.len()
            )));
        }
        self.state.step += 1;
        let t = self.state.step;
        let c = self.config;
        let mu_t = self.mu(t);
        let mu_next = self.mu(t + 1);
        let prod_t = self.state.mu_product * mu_t;
        let prod_next = prod_t * mu_next;
        self.state.mu_product = prod_t;
        let bias2 = 1.0 - c.beta2.powf(t as f64);
        let lr = self.state.lr;
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.state.first_moments[i].data_mut();
            let v = self.state.second_moments[i].data_mut();
            for (((theta, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g64 = g.as_f64();
                let m_new = c.beta1 * m.as_f64() + (1.0 - c.beta1) * g64;
                let v_new = c.beta2 * v.as_f64() + (1.0 - c.beta2) * g64 * g64;
                let m_hat = mu_next * m_new / (1.0 - prod_next) + (1.0 - mu_t) * g64 / (1.0 - prod_t);
                let v_hat = v_new / bias2;
                let update = lr * m_hat / (v_hat.sqrt() + c.eps);
                *theta = T::from_f64_lossy(theta.as_f64() - update);
                *m = T::from_f64_lossy(m_new);
                *v = T::from_f64_lossy(v_new);
            }
        }
        params.zero_grad();
        Ok(())
    }
}
