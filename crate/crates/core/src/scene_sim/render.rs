//! Pinhole ray casting against spheres, boxes and planes.

use super::geometry::{add, dot, normalize, scale, sub, Vec3};
use super::{Primitive, SceneConfig, Shape, Texture};
use crate::depth_extrap::DepthFrame;
use crate::event_core::{Geometry, Micros};

/// Lowest intensity; also the background value. Keeps `ln` finite.
pub const AMBIENT_FLOOR: f64 = 0.05;

const HIT_EPS: f64 = 1e-9;

pub(crate) struct Hit {
    /// Ray parameter; equals z-depth because ray directions have unit z.
    pub s: f64,
    pub normal: Vec3,
    pub local: Vec3,
}

fn intersect(prim: &Primitive, center: Vec3, origin: Vec3, dir: Vec3) -> Option<Hit> {
    match prim.shape {
        Shape::Sphere { radius } => {
            let oc = sub(origin, center);
            let a = dot(dir, dir);
            let b = 2.0 * dot(oc, dir);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let s0 = (-b - sq) / (2.0 * a);
            let s1 = (-b + sq) / (2.0 * a);
            let s = if s0 > HIT_EPS {
                s0
            } else if s1 > HIT_EPS {
                s1
            } else {
                return None;
            };
            let p = add(origin, scale(dir, s));
            let local = sub(p, center);
            Some(Hit {
                s,
                normal: scale(local, 1.0 / radius),
                local,
            })
        }
        Shape::Cuboid { half_extents } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut near_axis = 0;
            let mut far_axis = 0;
            for k in 0..3 {
                let lo = center[k] - half_extents[k];
                let hi = center[k] + half_extents[k];
                if dir[k].abs() < 1e-15 {
                    if origin[k] < lo || origin[k] > hi {
                        return None;
                    }
                    continue;
                }
                let mut t0 = (lo - origin[k]) / dir[k];
                let mut t1 = (hi - origin[k]) / dir[k];
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > t_near {
                    t_near = t0;
                    near_axis = k;
                }
                if t1 < t_far {
                    t_far = t1;
                    far_axis = k;
                }
            }
            if t_near > t_far {
                return None;
            }
            let (s, axis) = if t_near > HIT_EPS {
                (t_near, near_axis)
            } else if t_far > HIT_EPS {
                (t_far, far_axis)
            } else {
                return None;
            };
            let mut normal = [0.0; 3];
            normal[axis] = if dir[axis] > 0.0 { -1.0 } else { 1.0 };
            let p = add(origin, scale(dir, s));
            Some(Hit {
                s,
                normal,
                local: sub(p, center),
            })
        }
        Shape::Plane { normal } => {
            let n = normalize(normal);
            let denom = dot(n, dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let s = dot(n, sub(center, origin)) / denom;
            if s <= HIT_EPS {
                return None;
            }
            let p = add(origin, scale(dir, s));
            let facing = if denom > 0.0 { scale(n, -1.0) } else { n };
            Some(Hit {
                s,
                normal: facing,
                local: sub(p, center),
            })
        }
    }
}

fn texture_factor(texture: &Texture, local: Vec3) -> f64 {
    match *texture {
        Texture::Uniform => 1.0,
        Texture::Checker { period_m, contrast } => {
            let cell: i64 = local.iter().map(|&c| (c / period_m).floor() as i64).sum();
            if cell.rem_euclid(2) == 0 {
                1.0
            } else {
                1.0 - contrast
            }
        }
    }
}

/// Everything one ray-casting pass produces.
pub struct RenderOutput {
    pub geometry: Geometry,
    /// z-depth in meters, 0 for no hit or beyond the configured range.
    pub depth: Vec<f32>,
    pub intensity: Vec<f64>,
    /// Index of the primitive seen at each pixel (within range).
    pub hit_ids: Vec<Option<usize>>,
}

impl RenderOutput {
    pub fn depth_frame(&self, t: Micros) -> DepthFrame {
        DepthFrame {
            geometry: self.geometry,
            values: self.depth.clone(),
            timestamp: t,
        }
    }

    pub fn visible(&self, prim: usize) -> bool {
        self.hit_ids.contains(&Some(prim))
    }
}

/// Ray direction for pixel `(u, v)`; the z component is 1.
pub fn pixel_ray(config: &SceneConfig, u: usize, v: usize) -> Vec3 {
    let (cx, cy) = config.principal_point();
    [
        (u as f64 - cx) / config.focal_px,
        (v as f64 - cy) / config.focal_px,
        1.0,
    ]
}

pub fn render(config: &SceneConfig, primitives: &[Primitive], camera: Vec3, t: Micros) -> RenderOutput {
    let geometry = config.geometry();
    let n = geometry.pixels();
    let light = normalize(config.light_dir);
    let centers: Vec<Vec3> = primitives.iter().map(|p| p.trajectory.position(t)).collect();
    let mut depth = vec![0.0f32; n];
    let mut intensity = vec![AMBIENT_FLOOR; n];
    let mut hit_ids = vec![None; n];
    for v in 0..geometry.height {
        for u in 0..geometry.width {
            let dir = pixel_ray(config, u, v);
            let mut best: Option<(usize, Hit)> = None;
            for (i, prim) in primitives.iter().enumerate() {
                if let Some(hit) = intersect(prim, centers[i], camera, dir) {
                    if best.as_ref().is_none_or(|(_, b)| hit.s < b.s) {
                        best = Some((i, hit));
                    }
                }
            }
            let idx = v * geometry.width + u;
            if let Some((i, hit)) = best {
                let prim = &primitives[i];
                let lambert = dot(hit.normal, light).max(0.0);
                let albedo = prim.albedo * texture_factor(&prim.texture, hit.local);
                intensity[idx] = (albedo * lambert).clamp(AMBIENT_FLOOR, 1.0);
                if hit.s <= config.max_range_m {
                    depth[idx] = hit.s as f32;
                    hit_ids[idx] = Some(i);
                }
            }
        }
    }
    RenderOutput {
        geometry,
        depth,
        intensity,
        hit_ids,
    }
}

/// Shortest distance from `point` to the primitive's surface (0 inside).
pub fn distance_to(prim: &Primitive, center: Vec3, point: Vec3) -> f64 {
    match prim.shape {
        Shape::Sphere { radius } => (super::geometry::norm(sub(point, center)) - radius).max(0.0),
        Shape::Cuboid { half_extents } => {
            let d: Vec3 = std::array::from_fn(|k| ((point[k] - center[k]).abs() - half_extents[k]).max(0.0));
            super::geometry::norm(d)
        }
        Shape::Plane { normal } => dot(normalize(normal), sub(point, center)).abs(),
    }
}
