use super::geometry::{norm, Trajectory};
use super::render::{distance_to, render, RenderOutput};
use super::synth::EventSynthesizer;
use super::{Primitive, PrimitiveState, SceneConfig, SceneState};
use crate::depth_extrap::DepthFrame;
use crate::error::{Error, Result};
use crate::event_core::{EventStream, Micros};

/// One generated recording: ground-truth depth at the configured rate, the
/// event stream over `[0, duration]` and per-frame scene annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub config: SceneConfig,
    pub primitives: Vec<Primitive>,
    pub ego: Trajectory,
    pub depth: Vec<DepthFrame>,
    pub events: EventStream,
    pub states: Vec<SceneState>,
}

impl Sequence {
    pub fn duration_us(&self) -> Micros {
        self.config.duration_us()
    }

    /// Index of the depth frame captured exactly at `t`.
    pub fn frame_index(&self, t: Micros) -> Option<usize> {
        self.depth.binary_search_by_key(&t, |f| f.timestamp).ok()
    }

    pub fn depth_at(&self, t: Micros) -> Option<&DepthFrame> {
        self.frame_index(t).map(|i| &self.depth[i])
    }

    pub fn state_at(&self, t: Micros) -> Option<&SceneState> {
        self.frame_index(t).map(|i| &self.states[i])
    }
}

fn check_inputs(config: &SceneConfig, primitives: &[Primitive], ego: &Trajectory) -> Result<()> {
    config.validate()?;
    let end = config.duration_us();
    for (i, p) in primitives.iter().enumerate() {
        p.validate(end)
            .map_err(|e| Error::Config(format!("primitive {i}: {e}")))?;
    }
    Trajectory::new(ego.knots.clone())?;
    if !ego.covers(end) {
        return Err(Error::Config(format!("ego trajectory does not cover [0, {end}] us")));
    }
    Ok(())
}

fn state_from(out: &RenderOutput, primitives: &[Primitive], ego: &Trajectory, t: Micros) -> SceneState {
    let camera = ego.position(t);
    SceneState {
        t,
        ego_speed: norm(ego.velocity(t)),
        primitives: primitives
            .iter()
            .enumerate()
            .map(|(i, p)| PrimitiveState {
                index: i,
                is_object: p.is_object(),
                distance_m: distance_to(p, p.trajectory.position(t), camera),
                visible: out.visible(i),
            })
            .collect(),
    }
}

pub fn render_depth(config: &SceneConfig, primitives: &[Primitive], ego: &Trajectory, t: Micros) -> DepthFrame {
    render(config, primitives, ego.position(t), t).depth_frame(t)
}

pub fn render_intensity(config: &SceneConfig, primitives: &[Primitive], ego: &Trajectory, t: Micros) -> Vec<f64> {
    render(config, primitives, ego.position(t), t).intensity
}

pub fn generate_sequence(config: &SceneConfig, primitives: &[Primitive], ego: &Trajectory) -> Result<Sequence> {
    check_inputs(config, primitives, ego)?;
    let n = config.num_frames();
    let end = config.duration_us();
    let mut synth = EventSynthesizer::new(config);
    let mut depth = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for k in 0..=n {
        let t = if k < n { config.frame_time(k) } else { end };
        if k == n && depth.last().is_some_and(|f: &DepthFrame| f.timestamp >= t) {
            break;
        }
        let out = render(config, primitives, ego.position(t), t);
        synth.push(t, &out.intensity)?;
        if k < n {
            states.push(state_from(&out, primitives, ego, t));
            depth.push(out.depth_frame(t));
        }
    }
    Ok(Sequence {
        config: config.clone(),
        primitives: primitives.to_vec(),
        ego: ego.clone(),
        depth,
        events: synth.finish()?,
        states,
    })
}

/// Scene state at an arbitrary instant of the sequence.
pub fn scene_state_at(sequence: &Sequence, t: Micros) -> Result<SceneState> {
    let end = sequence.duration_us();
    if t > end {
        return Err(Error::Range(format!("t = {t} us outside [0, {end}] us")));
    }
    if let Some(s) = sequence.state_at(t) {
        return Ok(s.clone());
    }
    let out = render(&sequence.config, &sequence.primitives, sequence.ego.position(t), t);
    Ok(state_from(&out, &sequence.primitives, &sequence.ego, t))
}
