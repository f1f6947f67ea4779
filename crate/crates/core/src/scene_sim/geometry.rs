use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::Micros;

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Piecewise-linear position over time; constant before the first and
/// after the last knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub knots: Vec<(Micros, Vec3)>,
}

impl Trajectory {
    pub fn new(knots: Vec<(Micros, Vec3)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("trajectory needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("trajectory knot times must strictly increase".into()));
        }
        if knots.iter().any(|k| k.1.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("trajectory positions must be finite".into()));
        }
        Ok(Self { knots })
    }

    pub fn fixed(position: Vec3) -> Self {
        Self {
            knots: vec![(0, position)],
        }
    }

    /// Straight line at constant velocity (m/s) over `[0, end]`.
    pub fn linear(start: Vec3, velocity: Vec3, end: Micros) -> Self {
        let end = end.max(1);
        let secs = end as f64 * 1e-6;
        Self {
            knots: vec![(0, start), (end, add(start, scale(velocity, secs)))],
        }
    }

    /// True when the knots span `[0, end]` (or the trajectory is static).
    pub fn covers(&self, end: Micros) -> bool {
        self.knots.len() == 1 || (self.knots[0].0 == 0 && self.knots.last().unwrap().0 >= end)
    }

    fn segment(&self, t: Micros) -> Option<usize> {
        if self.knots.len() < 2 {
            return None;
        }
        let i = self.knots.partition_point(|k| k.0 <= t);
        if i == 0 {
            None
        } else if i >= self.knots.len() {
            // at or past the last knot: extend the last segment's velocity only
            // for the derivative query at exactly the last knot
            if t == self.knots.last().unwrap().0 {
                Some(self.knots.len() - 2)
            } else {
                None
            }
        } else {
            Some(i - 1)
        }
    }

    pub fn position(&self, t: Micros) -> Vec3 {
        let first = self.knots[0];
        if t <= first.0 || self.knots.len() == 1 {
            return first.1;
        }
        let last = *self.knots.last().unwrap();
        if t >= last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|k| k.0 <= t) - 1;
        let (t0, p0) = self.knots[i];
        let (t1, p1) = self.knots[i + 1];
        let a = (t - t0) as f64 / (t1 - t0) as f64;
        add(p0, scale(sub(p1, p0), a))
    }

    /// Velocity in m/s: the slope of the segment containing `t`.
    pub fn velocity(&self, t: Micros) -> Vec3 {
        match self.segment(t) {
            Some(i) => {
                let (t0, p0) = self.knots[i];
                let (t1, p1) = self.knots[i + 1];
                scale(sub(p1, p0), 1e6 / (t1 - t0) as f64)
            }
            None => [0.0; 3],
        }
    }
}
