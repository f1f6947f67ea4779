//! Contrast-threshold event model.
//!
//! Each pixel keeps a reference log-intensity. Over an inter-sample interval
//! the log-intensity is taken to move linearly; every crossing of
//! `L_ref ± k·C` emits one event at the interpolated crossing time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::AMBIENT_FLOOR;
use super::SceneConfig;
use crate::error::{Error, Result};
use crate::event_core::{Event, EventStream, Geometry, Micros, Polarity};

/// Absorbs rounding in `ln` so a change of exactly `k·C` yields `k` events.
const CROSSING_EPS: f64 = 1e-9;

fn log_intensity(i: f64) -> f64 {
    i.clamp(AMBIENT_FLOOR, 1.0).ln()
}

/// Incremental synthesizer fed one intensity raster at a time.
pub struct EventSynthesizer {
    geometry: Geometry,
    threshold: f64,
    noise_rate_hz: f64,
    rng: ChaCha8Rng,
    reference: Vec<f64>,
    previous: Vec<f64>,
    t_prev: Option<Micros>,
    events: Vec<Event>,
}

impl EventSynthesizer {
    pub fn new(config: &SceneConfig) -> Self {
        let geometry = config.geometry();
        Self {
            geometry,
            threshold: config.contrast_threshold,
            noise_rate_hz: config.noise_rate_hz,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7e7),
            reference: Vec::new(),
            previous: Vec::new(),
            t_prev: None,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, t: Micros, intensity: &[f64]) -> Result<()> {
        if intensity.len() != self.geometry.pixels() {
            return Err(Error::Geometry(format!(
                "intensity raster of {} values for {} pixels",
                intensity.len(),
                self.geometry.pixels()
            )));
        }
        let logs: Vec<f64> = intensity.iter().map(|&i| log_intensity(i)).collect();
        let Some(t0) = self.t_prev else {
            self.reference = logs.clone();
            self.previous = logs;
            self.t_prev = Some(t);
            return Ok(());
        };
        if t <= t0 {
            return Err(Error::Range(format!("intensity sample at {t} does not follow {t0}")));
        }
        let dt = (t - t0) as f64;
        let c = self.threshold;
        let mut batch = Vec::new();
        for (idx, &l_new) in logs.iter().enumerate() {
            let l_ref = self.reference[idx];
            let l_old = self.previous[idx];
            let delta = l_new - l_ref;
            let count = (delta.abs() / c + CROSSING_EPS).floor() as i64;
            if count > 0 {
                let sign = delta.signum();
                let polarity = if sign > 0.0 { Polarity::Positive } else { Polarity::Negative };
                let slope = l_new - l_old;
                for k in 1..=count {
                    let level = l_ref + sign * k as f64 * c;
                    let frac = if slope.abs() > 0.0 {
                        ((level - l_old) / slope).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let te = t0 + (frac * dt).floor() as Micros;
                    batch.push(Event {
                        t: te.min(t),
                        x: (idx % self.geometry.width) as u16,
                        y: (idx / self.geometry.width) as u16,
                        p: polarity,
                    });
                }
                self.reference[idx] = l_ref + sign * count as f64 * c;
            }
        }
        if self.noise_rate_hz > 0.0 {
            let p = (self.noise_rate_hz * dt * 1e-6).min(1.0);
            for idx in 0..self.geometry.pixels() {
                if self.rng.random_bool(p) {
                    let te = t0 + self.rng.random_range(0..(t - t0));
                    let polarity = if self.rng.random_bool(0.5) {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    };
                    batch.push(Event {
                        t: te,
                        x: (idx % self.geometry.width) as u16,
                        y: (idx / self.geometry.width) as u16,
                        p: polarity,
                    });
                }
            }
        }
        batch.sort_by_key(|e| (e.t, e.y, e.x, e.p.as_i8()));
        self.events.extend(batch);
        self.previous = logs;
        self.t_prev = Some(t);
        Ok(())
    }

    pub fn finish(self) -> Result<EventStream> {
        EventStream::new(self.geometry, self.events)
    }
}

/// Runs the synthesizer over a full sequence of `(t, intensity)` samples.
pub fn synthesize_events(config: &SceneConfig, samples: &[(Micros, Vec<f64>)]) -> Result<EventStream> {
    if samples.len() < 2 {
        return Err(Error::Range("event synthesis needs at least two intensity samples".into()));
    }
    let mut synth = EventSynthesizer::new(config);
    for (t, raster) in samples {
        synth.push(*t, raster)?;
    }
    synth.finish()
}
