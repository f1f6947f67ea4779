//! Dual-encoder U-Net over a normalized depth prior and an event voxel grid.

use eventdepth_nn::{kaiming_uniform, Conv2dSpec, Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::DepthFrame;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::event_core::{EventVoxelGrid, Geometry, Micros};

/// What the event branch is fed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventInput {
    Voxel,
    /// All-zero events ("without events" ablation).
    Zero,
    /// The collapsed event frame copied into every bin.
    FrameReplicated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Separate depth and event encoders joined at the bottleneck.
    DualEncoder,
    /// One encoder over the channel-concatenated prior and events.
    DataConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolatorConfig {
    pub channels: [usize; 3],
    pub bottleneck: usize,
    pub bins: usize,
    pub max_range_m: f32,
    /// Voxel counts are clipped to `±event_clip` and divided by it.
    pub event_clip: f32,
    pub event_input: EventInput,
    pub fusion: Fusion,
    /// Parallel 1x1 path inside every ResConv block.
    pub one_by_one: bool,
    /// Depthwise 3x3 followed by pointwise 1x1 instead of a full 3x3.
    pub depthwise_separable: bool,
    /// Add softplus⁻¹(prior) before the output SoftPlus, so a zero head
    /// reproduces the prior.
    pub residual_prior: bool,
}

impl Default for ExtrapolatorConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            bottleneck: 128,
            bins: 5,
            max_range_m: 200.0,
            event_clip: 10.0,
            event_input: EventInput::Voxel,
            fusion: Fusion::DualEncoder,
            one_by_one: true,
            depthwise_separable: false,
            residual_prior: true,
        }
    }
}

impl ExtrapolatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.bottleneck == 0 {
            return Err(Error::Config(format!(
                "extrapolator channels {:?} / bottleneck {} must be positive",
                self.channels, self.bottleneck
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("voxel bins must be positive".into()));
        }
        if !(self.max_range_m > 0.0 && self.max_range_m.is_finite()) {
            return Err(Error::Config(format!("max_range_m = {} must be positive", self.max_range_m)));
        }
        if !(self.event_clip > 0.0 && self.event_clip.is_finite()) {
            return Err(Error::Config(format!("event_clip = {} must be positive", self.event_clip)));
        }
        Ok(())
    }

    /// Named ablation variants.
    pub fn variant(name: &str) -> Result<Self> {
        let base = Self::default();
        Ok(match name {
            "full" => base,
            "no_event" => Self {
                event_input: EventInput::Zero,
                ..base
            },
            "event_frame" => Self {
                event_input: EventInput::FrameReplicated,
                ..base
            },
            "data_concat" => Self {
                fusion: Fusion::DataConcat,
                ..base
            },
            "no_skip" => Self {
                one_by_one: false,
                ..base
            },
            "depthwise" => Self {
                depthwise_separable: true,
                ..base
            },
            other => return Err(Error::Config(format!("unknown extrapolator variant {other:?}"))),
        })
    }
}

pub const VARIANTS: [&str; 6] = ["full", "no_event", "event_frame", "data_concat", "no_skip", "depthwise"];

#[derive(Clone, Copy, Debug)]
enum Init {
    Kaiming(usize),
    Zero,
}

#[derive(Default)]
struct Layout {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Layout {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push((name, shape, init));
        ParamId::from_index(self.specs.len() - 1)
    }
}

#[derive(Clone, Debug)]
enum Main3 {
    Full { w: ParamId, b: ParamId },
    Separable { dw: ParamId, db: ParamId, pw: ParamId, pb: ParamId, cin: usize },
}

/// `ReLU(conv3x3(x) + conv1x1(x))`; the 1x1 path is optional.
#[derive(Clone, Debug)]
struct ResConv {
    main: Main3,
    skip: Option<(ParamId, ParamId)>,
}

impl ResConv {
    fn declare(l: &mut Layout, prefix: &str, cin: usize, cout: usize, one_by_one: bool, separable: bool) -> Self {
        // two summed paths each get half the variance so the block output keeps its scale
        let paths = if one_by_one { 2 } else { 1 };
        let main = if separable {
            Main3::Separable {
                dw: l.add(format!("{prefix}.dw.weight"), vec![cin, 1, 3, 3], Init::Kaiming(9)),
                db: l.add(format!("{prefix}.dw.bias"), vec![cin], Init::Zero),
                pw: l.add(format!("{prefix}.pw.weight"), vec![cout, cin, 1, 1], Init::Kaiming(cin * paths)),
                pb: l.add(format!("{prefix}.pw.bias"), vec![cout], Init::Zero),
                cin,
            }
        } else {
            Main3::Full {
                w: l.add(format!("{prefix}.conv3.weight"), vec![cout, cin, 3, 3], Init::Kaiming(cin * 9 * paths)),
                b: l.add(format!("{prefix}.conv3.bias"), vec![cout], Init::Zero),
            }
        };
        let skip = one_by_one.then(|| {
            (
                l.add(format!("{prefix}.conv1.weight"), vec![cout, cin, 1, 1], Init::Kaiming(cin * paths)),
                l.add(format!("{prefix}.conv1.bias"), vec![cout], Init::Zero),
            )
        });
        Self { main, skip }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let main = match self.main {
            Main3::Full { w, b } => {
                let (w, b) = (g.param(store, w), g.param(store, b));
                g.conv2d(x, w, Some(b), Conv2dSpec::new(1, 1))?
            }
            Main3::Separable { dw, db, pw, pb, cin } => {
                let (dw, db) = (g.param(store, dw), g.param(store, db));
                let h = g.conv2d(x, dw, Some(db), Conv2dSpec::new(1, 1).with_groups(cin))?;
                let (pw, pb) = (g.param(store, pw), g.param(store, pb));
                g.conv2d(h, pw, Some(pb), Conv2dSpec::default())?
            }
        };
        let sum = match self.skip {
            Some((w, b)) => {
                let (w, b) = (g.param(store, w), g.param(store, b));
                let s = g.conv2d(x, w, Some(b), Conv2dSpec::default())?;
                g.add(main, s)?
            }
            None => main,
        };
        Ok(g.relu(sum))
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: [ResConv; 3],
}

impl Encoder {
    fn declare(l: &mut Layout, prefix: &str, cin: usize, cfg: &ExtrapolatorConfig) -> Self {
        let c = cfg.channels;
        let (o, s) = (cfg.one_by_one, cfg.depthwise_separable);
        Self {
            blocks: [
                ResConv::declare(l, &format!("{prefix}.0"), cin, c[0], o, s),
                ResConv::declare(l, &format!("{prefix}.1"), c[0], c[1], o, s),
                ResConv::declare(l, &format!("{prefix}.2"), c[1], c[2], o, s),
            ],
        }
    }

    /// Returns the three pre-pool feature maps and the pooled output.
    fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<([Var; 3], Var)> {
        let mut h = x;
        let mut skips = [x; 3];
        for (i, b) in self.blocks.iter().enumerate() {
            let f = b.forward(g, store, h)?;
            skips[i] = f;
            h = g.maxpool2d(f, 2)?;
        }
        Ok((skips, h))
    }
}

#[derive(Clone, Debug)]
struct Up {
    w: ParamId,
    b: ParamId,
    block: ResConv,
}

#[derive(Clone, Debug)]
struct Net {
    depth_enc: Encoder,
    event_enc: Option<Encoder>,
    bottleneck: ResConv,
    ups: [Up; 3],
    head_w: ParamId,
    head_b: ParamId,
}

fn declare(cfg: &ExtrapolatorConfig) -> (Layout, Net) {
    let mut l = Layout::default();
    let c = cfg.channels;
    let (o, s) = (cfg.one_by_one, cfg.depthwise_separable);
    let (depth_enc, event_enc, fused) = match cfg.fusion {
        Fusion::DualEncoder => {
            let d = Encoder::declare(&mut l, "depth_enc", 1, cfg);
            let e = Encoder::declare(&mut l, "event_enc", cfg.bins, cfg);
            (d, Some(e), 2 * c[2])
        }
        Fusion::DataConcat => (Encoder::declare(&mut l, "enc", 1 + cfg.bins, cfg), None, c[2]),
    };
    let bottleneck = ResConv::declare(&mut l, "bottleneck", fused, cfg.bottleneck, o, s);
    let mut ups = Vec::new();
    let mut cin = cfg.bottleneck;
    for (i, &cout) in c.iter().enumerate().rev() {
        let w = l.add(format!("up{i}.weight"), vec![cin, cout, 2, 2], Init::Kaiming(cin));
        let b = l.add(format!("up{i}.bias"), vec![cout], Init::Zero);
        let block = ResConv::declare(&mut l, &format!("dec{i}"), 2 * cout, cout, o, s);
        ups.push(Up { w, b, block });
        cin = cout;
    }
    let head_init = if cfg.residual_prior { Init::Zero } else { Init::Kaiming(c[0]) };
    let head_w = l.add("head.weight".into(), vec![1, c[0], 1, 1], head_init);
    let head_b = l.add("head.bias".into(), vec![1], Init::Zero);
    let ups: [Up; 3] = ups.try_into().expect("three decoder stages");
    (
        l,
        Net {
            depth_enc,
            event_enc,
            bottleneck,
            ups,
            head_w,
            head_b,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatorArch {
    pub kind: String,
    pub geometry: Geometry,
    pub config: ExtrapolatorConfig,
}

/// Network inputs for a batch, already normalized.
pub struct ExtrapolatorInputs<T> {
    /// `(N, 1, H, W)` prior depth divided by the max range.
    pub prior: Tensor<T>,
    /// `(N, B, H, W)` event representation after clipping and scaling.
    pub events: Tensor<T>,
    /// `(N, 1, H, W)` softplus⁻¹ of the clamped normalized prior.
    pub prior_logit: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ExtrapolatorModel {
    geometry: Geometry,
    config: ExtrapolatorConfig,
    params: ParamStore<f32>,
    net: Net,
}

const KIND: &str = "depth-extrapolator";
/// Lower clamp of the normalized prior inside softplus⁻¹.
const PRIOR_FLOOR: f64 = 1e-3;

fn softplus_inv(y: f64) -> f64 {
    let y = y.max(PRIOR_FLOOR);
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl ExtrapolatorModel {
    pub fn new(geometry: Geometry, config: ExtrapolatorConfig, seed: u64) -> Result<Self> {
        Self::check_geometry(geometry)?;
        config.validate()?;
        let (layout, net) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in layout.specs {
            let value = match init {
                Init::Zero => Tensor::zeros(&shape),
                Init::Kaiming(fan_in) => kaiming_uniform(&shape, fan_in, &mut rng),
            };
            params.add(name, value)?;
        }
        Ok(Self {
            geometry,
            config,
            params,
            net,
        })
    }

    pub fn from_params(geometry: Geometry, config: ExtrapolatorConfig, params: ParamStore<f32>) -> Result<Self> {
        Self::check_geometry(geometry)?;
        config.validate()?;
        let (layout, net) = declare(&config);
        let expected: Vec<(String, Vec<usize>)> = layout.specs.into_iter().map(|(n, s, _)| (n, s)).collect();
        checkpoint::check_params(&params, &expected)?;
        Ok(Self {
            geometry,
            config,
            params,
            net,
        })
    }

    fn check_geometry(g: Geometry) -> Result<()> {
        if g.height == 0 || g.width == 0 || g.height % 8 != 0 || g.width % 8 != 0 {
            return Err(Error::Geometry(format!(
                "extrapolator needs H and W divisible by 8, got {}x{}",
                g.height, g.width
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn config(&self) -> &ExtrapolatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn arch(&self) -> ExtrapolatorArch {
        ExtrapolatorArch {
            kind: KIND.into(),
            geometry: self.geometry,
            config: self.config.clone(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.arch(), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (arch, params): (ExtrapolatorArch, _) = checkpoint::load(path)?;
        if arch.kind != KIND {
            return Err(Error::Data(format!(
                "{} holds a {:?}, not an extrapolator",
                path.display(),
                arch.kind
            )));
        }
        Self::from_params(arch.geometry, arch.config, params)
    }

    pub fn prepare<T: Element>(&self, priors: &[&DepthFrame], voxels: &[&EventVoxelGrid]) -> Result<ExtrapolatorInputs<T>> {
        if priors.len() != voxels.len() {
            return Err(Error::Data(format!("{} priors for {} voxel grids", priors.len(), voxels.len())));
        }
        let g = self.geometry;
        let (n, b, px) = (priors.len(), self.config.bins, g.pixels());
        let range = self.config.max_range_m as f64;
        let clip = self.config.event_clip as f64;
        let mut prior = Vec::with_capacity(n * px);
        let mut logit = Vec::with_capacity(n * px);
        let mut events = Vec::with_capacity(n * b * px);
        for (p, v) in priors.iter().zip(voxels) {
            if p.geometry != g || v.geometry != g {
                return Err(Error::Geometry(format!(
                    "inputs {}x{} / {}x{} do not match model {}x{}",
                    p.geometry.height, p.geometry.width, v.geometry.height, v.geometry.width, g.height, g.width
                )));
            }
            if v.bins != b {
                return Err(Error::Geometry(format!("voxel grid has {} bins, model expects {b}", v.bins)));
            }
            for &d in &p.values {
                let y = d as f64 / range;
                prior.push(T::from_f64_lossy(y));
                logit.push(T::from_f64_lossy(softplus_inv(y)));
            }
            let scale = |c: f64| T::from_f64_lossy(c.clamp(-clip, clip) / clip);
            match self.config.event_input {
                EventInput::Voxel => events.extend(v.values.iter().map(|&c| scale(c as f64))),
                EventInput::Zero => events.extend(std::iter::repeat_n(T::zero(), b * px)),
                EventInput::FrameReplicated => {
                    let frame = v.collapse();
                    for _ in 0..b {
                        events.extend(frame.values.iter().map(|&c| scale(c as f64)));
                    }
                }
            }
        }
        Ok(ExtrapolatorInputs {
            prior: Tensor::new(&[n, 1, g.height, g.width], prior)?,
            events: Tensor::new(&[n, b, g.height, g.width], events)?,
            prior_logit: Tensor::new(&[n, 1, g.height, g.width], logit)?,
        })
    }

    /// Records the forward pass; output is normalized depth `(N, 1, H, W)`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, inputs: &ExtrapolatorInputs<T>) -> Result<Var> {
        let prior = g.input(inputs.prior.clone());
        let events = g.input(inputs.events.clone());
        let net = &self.net;
        let (skips, fused) = match &net.event_enc {
            Some(ev) => {
                let (skips, pd) = net.depth_enc.forward(g, store, prior)?;
                let (_, pe) = ev.forward(g, store, events)?;
                (skips, g.concat_channels(&[pd, pe])?)
            }
            None => {
                let x = g.concat_channels(&[prior, events])?;
                net.depth_enc.forward(g, store, x)?
            }
        };
        let mut h = net.bottleneck.forward(g, store, fused)?;
        for (up, skip) in net.ups.iter().zip(skips.iter().rev()) {
            let (w, b) = (g.param(store, up.w), g.param(store, up.b));
            let u = g.conv_transpose2d(h, w, Some(b), 2, 0)?;
            let cat = g.concat_channels(&[u, *skip])?;
            h = up.block.forward(g, store, cat)?;
        }
        let (w, b) = (g.param(store, net.head_w), g.param(store, net.head_b));
        let mut z = g.conv2d(h, w, Some(b), Conv2dSpec::default())?;
        if self.config.residual_prior {
            let base = g.input(inputs.prior_logit.clone());
            z = g.add(z, base)?;
        }
        Ok(g.softplus(z))
    }

    /// Normalized predictions for a batch, `N` rasters of `H·W` values.
    pub fn predict_normalized(&self, priors: &[&DepthFrame], voxels: &[&EventVoxelGrid]) -> Result<Vec<Vec<f32>>> {
        let inputs = self.prepare::<f32>(priors, voxels)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, &inputs)?;
        let px = self.geometry.pixels();
        Ok(g.value(out).data().chunks(px).map(|c| c.to_vec()).collect())
    }

    /// Predicted metric depth at `t1`, clamped to the max range.
    pub fn extrapolate(&self, prior: &DepthFrame, voxel: &EventVoxelGrid, t1: Micros) -> Result<DepthFrame> {
        let range = self.config.max_range_m;
        let norm = self.predict_normalized(&[prior], &[voxel])?.remove(0);
        let values = norm.into_iter().map(|v| (v * range).min(range)).collect();
        DepthFrame::new(self.geometry, values, t1)
    }
}

/// Single ResConv block on plain tensors: `ReLU(conv3x3(x; pad 1) + conv1x1(x))`,
/// the 1x1 path omitted when `skip` is `None`.
pub fn resconv_forward<T: Element>(
    x: &Tensor<T>,
    w3: &Tensor<T>,
    b3: &Tensor<T>,
    skip: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (w, b) = (g.input(w3.clone()), g.input(b3.clone()));
    let mut h = g.conv2d(xv, w, Some(b), Conv2dSpec::new(1, 1))?;
    if let Some((w1, b1)) = skip {
        let (w, b) = (g.input(w1.clone()), g.input(b1.clone()));
        let s = g.conv2d(xv, w, Some(b), Conv2dSpec::default())?;
        h = g.add(h, s)?;
    }
    let out = g.relu(h);
    Ok(g.value(out).clone())
}
