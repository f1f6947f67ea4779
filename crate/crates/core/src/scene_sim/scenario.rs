//! Seeded random driving-like scenes: a checkered ground plane, a distant
//! backdrop, 1-6 boxes and spheres (some crossing the view laterally) and a
//! forward-moving ego camera with piecewise-constant speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Trajectory, Vec3};
use super::{Primitive, SceneConfig, Shape, Texture};
use crate::error::{Error, Result};
use crate::event_core::Micros;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Ego speed per segment is drawn uniformly from this range (m/s).
    pub speed_min: f64,
    pub speed_max: f64,
    pub segment_min_s: f64,
    pub segment_max_s: f64,
    pub camera_height_m: f64,
    /// Probability that an object crosses the view laterally.
    pub crosser_prob: f64,
    pub crosser_speed_max: f64,
    /// Randomize light direction and albedos per scene.
    pub vary_lighting: bool,
    pub backdrop: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 6,
            speed_min: 0.0,
            speed_max: 20.0,
            segment_min_s: 1.0,
            segment_max_s: 3.0,
            camera_height_m: 1.5,
            crosser_prob: 0.35,
            crosser_speed_max: 6.0,
            vary_lighting: true,
            backdrop: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_objects > self.max_objects {
            return bad(format!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad(format!("speed range [{}, {}] invalid", self.speed_min, self.speed_max));
        }
        if !(0.0 < self.segment_min_s && self.segment_min_s <= self.segment_max_s && self.segment_max_s.is_finite()) {
            return bad(format!(
                "segment length range [{}, {}] invalid",
                self.segment_min_s, self.segment_max_s
            ));
        }
        if !(self.camera_height_m > 0.0) {
            return bad(format!("camera_height_m = {} must be positive", self.camera_height_m));
        }
        if !(0.0..=1.0).contains(&self.crosser_prob) {
            return bad(format!("crosser_prob = {} outside [0, 1]", self.crosser_prob));
        }
        if !(self.crosser_speed_max >= 0.0) {
            return bad(format!("crosser_speed_max = {} must be non-negative", self.crosser_speed_max));
        }
        Ok(())
    }
}

/// Everything needed to call [`super::generate_sequence`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub primitives: Vec<Primitive>,
    pub ego: Trajectory,
}

fn ego_trajectory(rng: &mut ChaCha8Rng, sc: &ScenarioConfig, end: Micros) -> Trajectory {
    let mut knots = vec![(0, [0.0; 3])];
    let mut t = 0;
    let mut z = 0.0;
    while t < end {
        let seg = rng.random_range(sc.segment_min_s..=sc.segment_max_s);
        let speed = rng.random_range(sc.speed_min..=sc.speed_max);
        let next = (t + (seg * 1e6).round() as Micros).min(end).max(t + 1);
        z += speed * (next - t) as f64 * 1e-6;
        knots.push((next, [0.0, 0.0, z]));
        t = next;
    }
    Trajectory { knots }
}

fn checker(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Texture {
    Texture::Checker {
        period_m: rng.random_range(lo..hi),
        contrast: rng.random_range(0.4..0.8),
    }
}

pub fn random_scene(base: &SceneConfig, sc: &ScenarioConfig, seed: u64) -> Result<Scene> {
    base.validate()?;
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = base.clone();
    config.seed = seed;
    let end = config.duration_us();
    let secs = end as f64 * 1e-6;
    let h = sc.camera_height_m;
    if sc.vary_lighting {
        config.light_dir = [rng.random_range(-0.6..0.6), rng.random_range(-1.0..-0.3), -1.0];
    }
    let albedo = |rng: &mut ChaCha8Rng| if sc.vary_lighting { rng.random_range(0.5..1.0) } else { 0.8 };

    let ego = ego_trajectory(&mut rng, sc, end);
    let travel = ego.position(end)[2];

    let mut primitives = Vec::new();
    let ground_albedo = albedo(&mut rng);
    let ground_tex = checker(&mut rng, 0.8, 2.0);
    primitives.push(Primitive::plane([0.0, h, 0.0], [0.0, -1.0, 0.0], ground_albedo).with_texture(ground_tex));
    if sc.backdrop {
        // Static when the whole run fits inside sensor range; otherwise it
        // recedes just enough to stay in range and at least 40 m away.
        let d0 = (travel + rng.random_range(40.0..120.0)).min(0.95 * config.max_range_m);
        let k = if travel > 0.0 { ((d0 - 40.0) / travel).min(1.0) } else { 1.0 };
        let a = albedo(&mut rng);
        let tex = checker(&mut rng, 3.0, 8.0);
        let knots = ego.knots.iter().map(|&(t, p)| (t, [0.0, 0.0, d0 + (1.0 - k) * p[2]])).collect();
        primitives.push(
            Primitive::plane([0.0, 0.0, d0], [0.0, 0.0, -1.0], a)
                .with_texture(tex)
                .with_trajectory(Trajectory { knots }),
        );
    }

    let half_fov = config.width as f64 / (2.0 * config.focal_px);
    let count = rng.random_range(sc.min_objects..=sc.max_objects);
    for _ in 0..count {
        let (shape, half_height, half_width) = if rng.random_bool(0.5) {
            let r = rng.random_range(0.4..1.5);
            (Shape::Sphere { radius: r }, r, r)
        } else {
            let he = [
                rng.random_range(0.3..1.5),
                rng.random_range(0.4..1.5),
                rng.random_range(0.3..1.5),
            ];
            (Shape::Cuboid { half_extents: he }, he[1], he[0].max(he[2]))
        };
        let y = h - half_height;
        let a = albedo(&mut rng);
        let tex = checker(&mut rng, 0.25, 0.8);
        let trajectory = if rng.random_bool(sc.crosser_prob) && sc.crosser_speed_max > 0.0 {
            // enter the view from one side at a random time
            let t_enter = rng.random_range(0.0..secs);
            let z = ego.position((t_enter * 1e6) as Micros)[2] + rng.random_range(8.0..40.0);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let speed = rng.random_range(1.0..sc.crosser_speed_max.max(1.0 + 1e-9));
            let edge = half_fov * (z - ego.position((t_enter * 1e6) as Micros)[2]) + half_width + 0.5;
            let x_enter = -dir * edge;
            let start: Vec3 = [x_enter - dir * speed * t_enter, y, z];
            Trajectory::linear(start, [dir * speed, 0.0, 0.0], end)
        } else {
            let z = rng.random_range(6.0..travel + 80.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x = side * (half_width + rng.random_range(1.2..8.0));
            let vz = if rng.random_bool(0.3) { rng.random_range(-3.0..3.0) } else { 0.0 };
            Trajectory::linear([x, y, z], [0.0, 0.0, vz], end)
        };
        primitives.push(Primitive {
            shape,
            trajectory,
            albedo: a,
            texture: tex,
        });
    }
    Ok(Scene {
        config,
        primitives,
        ego,
    })
}
