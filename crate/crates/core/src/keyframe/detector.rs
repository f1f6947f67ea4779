use eventdepth_nn::{kaiming_uniform, Conv2dSpec, Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::event_core::{EventFrame, Geometry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub channels: [usize; 3],
    /// Event counts are clipped to `±clip` and divided by `clip`.
    pub clip: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            clip: 10.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config(format!("detector channels {:?} must be positive", self.channels)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("detector clip {} must be positive", self.clip)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorArch {
    pub kind: String,
    pub geometry: Geometry,
    pub config: DetectorConfig,
}

/// Three stride-2 3x3 conv + ReLU blocks, global average pool, dense, sigmoid.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    geometry: Geometry,
    config: DetectorConfig,
    params: ParamStore<f32>,
}

const KIND: &str = "keyframe-detector";
const CONVS: usize = 3;
const FC_W: usize = 2 * CONVS;
const FC_B: usize = 2 * CONVS + 1;

fn layout(config: &DetectorConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut cin = 1;
    for (i, &c) in config.channels.iter().enumerate() {
        out.push((format!("conv{i}.weight"), vec![c, cin, 3, 3]));
        out.push((format!("conv{i}.bias"), vec![c]));
        cin = c;
    }
    out.push(("fc.weight".into(), vec![1, cin]));
    out.push(("fc.bias".into(), vec![1]));
    out
}

impl DetectorModel {
    pub fn new(geometry: Geometry, config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in layout(&config) {
            let value = if name.ends_with("bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in = shape[1..].iter().product();
                kaiming_uniform(&shape, fan_in, &mut rng)
            };
            params.add(name, value)?;
        }
        Ok(Self {
            geometry,
            config,
            params,
        })
    }

    pub fn from_params(geometry: Geometry, config: DetectorConfig, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        checkpoint::check_params(&params, &layout(&config))?;
        Ok(Self {
            geometry,
            config,
            params,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    /// Zeroes the dense layer so every output is exactly 0.5.
    pub fn zero_head(&mut self) {
        for id in [FC_W, FC_B] {
            self.params.get_mut(ParamId::from_index(id)).value.data_mut().fill(0.0);
        }
    }

    pub fn arch(&self) -> DetectorArch {
        DetectorArch {
            kind: KIND.into(),
            geometry: self.geometry,
            config: self.config.clone(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.arch(), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (arch, params): (DetectorArch, _) = checkpoint::load(path)?;
        if arch.kind != KIND {
            return Err(Error::Data(format!("{} holds a {:?}, not a detector", path.display(), arch.kind)));
        }
        Self::from_params(arch.geometry, arch.config, params)
    }

    /// Stacks frames into a clipped, scaled `(N, 1, H, W)` tensor.
    pub fn input_tensor<T: Element>(&self, frames: &[&EventFrame]) -> Result<Tensor<T>> {
        let g = self.geometry;
        let mut data = Vec::with_capacity(frames.len() * g.pixels());
        let clip = self.config.clip as f64;
        for f in frames {
            if f.geometry != g {
                return Err(Error::Geometry(format!(
                    "event frame {}x{} does not match detector input {}x{}",
                    f.geometry.height, f.geometry.width, g.height, g.width
                )));
            }
            data.extend(
                f.values
                    .iter()
                    .map(|&v| T::from_f64_lossy((v as f64).clamp(-clip, clip) / clip)),
            );
        }
        Ok(Tensor::new(&[frames.len(), 1, g.height, g.width], data)?)
    }

    /// Records the forward pass; returns probabilities of shape `(N, 1)`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..CONVS {
            let w = g.param(store, ParamId::from_index(2 * i));
            let b = g.param(store, ParamId::from_index(2 * i + 1));
            h = g.conv2d(h, w, Some(b), Conv2dSpec::new(2, 1))?;
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h)?;
        let w = g.param(store, ParamId::from_index(FC_W));
        let b = g.param(store, ParamId::from_index(FC_B));
        let logit = g.linear(pooled, w, b)?;
        Ok(g.sigmoid(logit))
    }

    pub fn predict_batch(&self, frames: &[&EventFrame]) -> Result<Vec<f32>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(self.input_tensor(frames)?);
        let p = self.forward(&mut g, &self.params, x)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn predict(&self, frame: &EventFrame) -> Result<f32> {
        Ok(self.predict_batch(&[frame])?[0])
    }
}
