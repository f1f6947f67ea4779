use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::Micros;

const WINDOW_US: Micros = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub mean_hz: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

/// `(n - 1) / (t_last - t_first)`, plus the extremes over consecutive 1 s
/// windows starting at the first frame.
///
/// Within a window the rate is the time average of the instantaneous rate
/// (`1 / gap` over each inter-frame gap), so the overall mean is the
/// length-weighted mean of the window rates and always lies between them.
/// A trailing partial window counts with its own length.
pub fn effective_frame_rate(timestamps: &[Micros]) -> Result<RateSummary> {
    if timestamps.len() < 2 {
        return Err(Error::Data(format!(
            "effective frame rate needs at least 2 frames, got {}",
            timestamps.len()
        )));
    }
    if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Data(format!("timestamps not strictly increasing ({} then {})", w[0], w[1])));
    }
    let first = timestamps[0];
    let last = *timestamps.last().unwrap();
    let mean_hz = (timestamps.len() - 1) as f64 / ((last - first) as f64 * 1e-6);

    let mut min_hz = f64::INFINITY;
    let mut max_hz = f64::NEG_INFINITY;
    let mut gap = 0;
    let mut start = first;
    while start < last {
        let end = (start + WINDOW_US).min(last);
        // frames "emitted" inside the window: each gap contributes its overlap / length
        let mut frames = 0.0;
        while gap + 1 < timestamps.len() && timestamps[gap + 1] <= start {
            gap += 1;
        }
        let mut k = gap;
        while k + 1 < timestamps.len() && timestamps[k] < end {
            let (a, b) = (timestamps[k], timestamps[k + 1]);
            let overlap = b.min(end).saturating_sub(a.max(start));
            frames += overlap as f64 / (b - a) as f64;
            k += 1;
        }
        let hz = frames / ((end - start) as f64 * 1e-6);
        min_hz = min_hz.min(hz);
        max_hz = max_hz.max(hz);
        start = end;
    }
    Ok(RateSummary { mean_hz, min_hz, max_hz })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50_us: u64,
    pub p95_us: u64,
    pub max_us: u64,
}

/// Nearest-rank percentiles; all zero for an empty sample.
pub fn percentiles(samples: &[u64]) -> Percentiles {
    if samples.is_empty() {
        return Percentiles::default();
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
    Percentiles {
        count: s.len(),
        p50_us: rank(0.50),
        p95_us: rank(0.95),
        max_us: *s.last().unwrap(),
    }
}
