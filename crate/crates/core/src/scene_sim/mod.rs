//! Deterministic procedural scenes: depth, intensity-driven events and
//! per-frame scene-state annotations.

pub mod geometry;
mod generate;
pub mod render;
pub mod scenario;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::{Geometry, Micros};

pub use generate::{generate_sequence, render_depth, render_intensity, scene_state_at, Sequence};
pub use geometry::{Trajectory, Vec3};
pub use render::{distance_to, pixel_ray, render, RenderOutput, AMBIENT_FLOOR};
pub use scenario::{random_scene, ScenarioConfig, Scene};
pub use synth::{synthesize_events, EventSynthesizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub focal_px: f64,
    /// `(cx, cy)`; `None` puts it at the raster center `((W-1)/2, (H-1)/2)`.
    pub principal_point: Option<(f64, f64)>,
    /// Ground-truth depth rate.
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Log-intensity step per event.
    pub contrast_threshold: f64,
    pub max_range_m: f64,
    pub seed: u64,
    /// Direction towards the light, camera coordinates (x right, y down, z forward).
    pub light_dir: Vec3,
    /// Uniform background activity per pixel; 0 disables noise.
    pub noise_rate_hz: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            focal_px: 48.0,
            principal_point: None,
            rate_hz: 100.0,
            duration_s: 10.0,
            contrast_threshold: 0.2,
            max_range_m: 200.0,
            seed: 0,
            light_dir: [0.3, -0.6, -1.0],
            noise_rate_hz: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("geometry {}x{} below the 8x8 minimum", self.height, self.width));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad(format!("geometry {}x{} exceeds u16", self.height, self.width));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate_hz = {} must be positive", self.rate_hz));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s = {} must be positive", self.duration_s));
        }
        if self.num_frames() == 0 {
            return bad(format!(
                "duration_s = {} at rate_hz = {} yields no frames",
                self.duration_s, self.rate_hz
            ));
        }
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return bad(format!("contrast_threshold = {} must be positive", self.contrast_threshold));
        }
        if !(self.max_range_m > 0.0 && self.max_range_m.is_finite()) {
            return bad(format!("max_range_m = {} must be positive", self.max_range_m));
        }
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return bad(format!("focal_px = {} must be positive", self.focal_px));
        }
        if self.light_dir.iter().all(|&v| v == 0.0) || self.light_dir.iter().any(|v| !v.is_finite()) {
            return bad("light_dir must be a finite non-zero vector".into());
        }
        if !(self.noise_rate_hz >= 0.0 && self.noise_rate_hz.is_finite()) {
            return bad(format!("noise_rate_hz = {} must be non-negative", self.noise_rate_hz));
        }
        if let Some((cx, cy)) = self.principal_point {
            if !(cx.is_finite() && cy.is_finite()) {
                return bad("principal_point must be finite".into());
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.height, self.width)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        self.principal_point
            .unwrap_or(((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0))
    }

    pub fn duration_us(&self) -> Micros {
        (self.duration_s * 1e6).round() as Micros
    }

    /// Ground-truth depth frames at `k / rate` for `k < num_frames()`.
    pub fn num_frames(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn frame_time(&self, k: usize) -> Micros {
        (k as f64 * 1e6 / self.rate_hz).round() as Micros
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box.
    Cuboid { half_extents: Vec3 },
    /// Infinite plane through the trajectory position.
    Plane { normal: Vec3 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Uniform,
    /// 3-D checkerboard in object-local coordinates; odd cells are darkened
    /// by `contrast`.
    Checker { period_m: f64, contrast: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub trajectory: Trajectory,
    pub albedo: f64,
    pub texture: Texture,
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, albedo: f64) -> Self {
        Self {
            shape: Shape::Sphere { radius },
            trajectory: Trajectory::fixed(center),
            albedo,
            texture: Texture::Uniform,
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, albedo: f64) -> Self {
        Self {
            shape: Shape::Cuboid { half_extents },
            trajectory: Trajectory::fixed(center),
            albedo,
            texture: Texture::Uniform,
        }
    }

    pub fn plane(point: Vec3, normal: Vec3, albedo: f64) -> Self {
        Self {
            shape: Shape::Plane { normal },
            trajectory: Trajectory::fixed(point),
            albedo,
            texture: Texture::Uniform,
        }
    }

    pub fn with_trajectory(mut self, trajectory: Trajectory) -> Self {
        self.trajectory = trajectory;
        self
    }

    pub fn with_texture(mut self, texture: Texture) -> Self {
        self.texture = texture;
        self
    }

    /// Spheres and boxes are objects; planes are scenery and never count
    /// towards proximity or new-object rules.
    pub fn is_object(&self) -> bool {
        !matches!(self.shape, Shape::Plane { .. })
    }

    pub fn validate(&self, duration: Micros) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.shape {
            Shape::Sphere { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                return bad(format!("sphere radius {radius} must be positive"));
            }
            Shape::Cuboid { half_extents } if half_extents.iter().any(|h| !(*h > 0.0 && h.is_finite())) => {
                return bad(format!("box half extents {half_extents:?} must be positive"));
            }
            Shape::Plane { normal } if normal.iter().all(|&v| v == 0.0) || normal.iter().any(|v| !v.is_finite()) => {
                return bad("plane normal must be a finite non-zero vector".into());
            }
            _ => {}
        }
        if !(self.albedo > 0.0 && self.albedo <= 1.0) {
            return bad(format!("albedo {} outside (0, 1]", self.albedo));
        }
        if let Texture::Checker { period_m, contrast } = self.texture {
            if !(period_m > 0.0 && period_m.is_finite()) || !(0.0..1.0).contains(&contrast) {
                return bad(format!("checker period {period_m} / contrast {contrast} invalid"));
            }
        }
        Trajectory::new(self.trajectory.knots.clone())?;
        if !self.trajectory.covers(duration) {
            return bad(format!("primitive trajectory does not cover [0, {duration}] us"));
        }
        Ok(())
    }
}

/// Ground-truth annotation for one primitive at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveState {
    pub index: usize,
    pub is_object: bool,
    /// Shortest camera-to-surface distance, meters.
    pub distance_m: f64,
    /// Nearest in-range surface for at least one pixel.
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub t: Micros,
    pub ego_speed: f64,
    pub primitives: Vec<PrimitiveState>,
}

impl SceneState {
    /// Minimum distance over visible objects, if any is visible.
    pub fn min_visible_object_distance(&self) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.is_object && p.visible)
            .map(|p| p.distance_m)
            .min_by(f64::total_cmp)
    }

    pub fn object_visible(&self, index: usize) -> bool {
        self.primitives
            .iter()
            .any(|p| p.index == index && p.is_object && p.visible)
    }
}
