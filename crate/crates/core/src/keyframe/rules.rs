use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::Micros;
use crate::scene_sim::{scene_state_at, SceneState, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeRuleConfig {
    /// m/s; strictly greater fires.
    pub speed_threshold: f64,
    /// m; strictly smaller fires.
    pub distance_threshold: f64,
    pub new_object: bool,
}

impl Default for KeyframeRuleConfig {
    fn default() -> Self {
        Self {
            speed_threshold: 10.0,
            distance_threshold: 8.0,
            new_object: true,
        }
    }
}

impl KeyframeRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_threshold > 0.0 && self.speed_threshold.is_finite()) {
            return Err(Error::Config(format!("speed_threshold = {} must be positive", self.speed_threshold)));
        }
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "distance_threshold = {} must be positive",
                self.distance_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Speed,
    Proximity,
    NewObject,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Speed, Rule::Proximity, Rule::NewObject];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Speed => "speed",
            Rule::Proximity => "proximity",
            Rule::NewObject => "new_object",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeLabel {
    pub t: Micros,
    pub label: bool,
    pub rules: Vec<Rule>,
}

pub fn label_keyframe(prev: &SceneState, now: &SceneState, rules: &KeyframeRuleConfig) -> Result<KeyframeLabel> {
    if now.t <= prev.t {
        return Err(Error::Range(format!("state at {} does not follow {}", now.t, prev.t)));
    }
    let mut fired = Vec::new();
    if now.ego_speed > rules.speed_threshold {
        fired.push(Rule::Speed);
    }
    if now
        .min_visible_object_distance()
        .is_some_and(|d| d < rules.distance_threshold)
    {
        fired.push(Rule::Proximity);
    }
    if rules.new_object
        && now
            .primitives
            .iter()
            .any(|p| p.is_object && p.visible && !prev.object_visible(p.index))
    {
        fired.push(Rule::NewObject);
    }
    Ok(KeyframeLabel {
        t: now.t,
        label: !fired.is_empty(),
        rules: fired,
    })
}

/// One detector window `[t_start, t_end)` of a sequence with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub index: usize,
    pub t_start: Micros,
    pub t_end: Micros,
    pub label: bool,
    pub rules: Vec<Rule>,
}

/// Labels consecutive `delta`-windows covering `[0, duration)`, comparing
/// the scene state at each window's end against its start.
pub fn label_windows(sequence: &Sequence, delta: Micros, rules: &KeyframeRuleConfig) -> Result<Vec<WindowLabel>> {
    if delta == 0 {
        return Err(Error::Range("window length must be positive".into()));
    }
    rules.validate()?;
    let end = sequence.duration_us();
    let mut out = Vec::new();
    let mut t = 0;
    let mut prev = scene_state_at(sequence, 0)?;
    while t + delta <= end {
        let now = scene_state_at(sequence, t + delta)?;
        let l = label_keyframe(&prev, &now, rules)?;
        out.push(WindowLabel {
            index: out.len(),
            t_start: t,
            t_end: t + delta,
            label: l.label,
            rules: l.rules,
        });
        prev = now;
        t += delta;
    }
    Ok(out)
}
