//! Analytic extrapolation baselines. Each takes history oldest-first; the
//! last frame is the prior.

use super::frame::DepthFrame;
use crate::error::{Error, Result};
use crate::event_core::Micros;

pub const DEFAULT_LINEAR_HISTORY: usize = 3;

fn check_history(history: &[&DepthFrame], need: usize, what: &str) -> Result<()> {
    if history.len() < need {
        return Err(Error::Data(format!(
            "{what} baseline needs {need} frames of history, got {}",
            history.len()
        )));
    }
    for w in history.windows(2) {
        w[0].ensure_same_geometry(w[1])?;
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::Data(format!(
                "{what} baseline history not increasing in time ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
    }
    Ok(())
}

/// The prior, retimestamped to `t1`.
pub fn baseline_repeat(prior: &DepthFrame, t1: Micros) -> DepthFrame {
    prior.clone().with_timestamp(t1)
}

/// Per-pixel least-squares line through the last `k` frames, evaluated at
/// `t1`. Pixels invalid in any used frame stay invalid; negative
/// extrapolations clamp to 0.
pub fn baseline_linear(history: &[&DepthFrame], k: usize, t1: Micros) -> Result<DepthFrame> {
    if k < 2 {
        return Err(Error::Config(format!("linear baseline needs k >= 2, got {k}")));
    }
    check_history(history, k, "linear")?;
    let used = &history[history.len() - k..];
    let t_ref = used[k - 1].timestamp as f64;
    // times relative to the prior, in seconds, to keep the fit well conditioned
    let ts: Vec<f64> = used.iter().map(|f| (f.timestamp as f64 - t_ref) * 1e-6).collect();
    let t_mean = ts.iter().sum::<f64>() / k as f64;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let x1 = (t1 as f64 - t_ref) * 1e-6;
    let n = used[0].values.len();
    let mut values = vec![0.0f32; n];
    for (px, out) in values.iter_mut().enumerate() {
        if used.iter().any(|f| f.values[px] <= 0.0) {
            continue;
        }
        let d_mean = used.iter().map(|f| f.values[px] as f64).sum::<f64>() / k as f64;
        let sxy: f64 = used
            .iter()
            .zip(&ts)
            .map(|(f, t)| (t - t_mean) * (f.values[px] as f64 - d_mean))
            .sum();
        let slope = sxy / sxx;
        *out = (d_mean + slope * (x1 - t_mean)).max(0.0) as f32;
    }
    DepthFrame::new(used[0].geometry, values, t1)
}

/// Geometric extrapolation from the last two frames:
/// `d_t · (d_t / d_{t-Δ'})^(Δ/Δ')` with `Δ = t1 - t`, `Δ' = t - t_prev`.
pub fn baseline_exponential(history: &[&DepthFrame], t1: Micros) -> Result<DepthFrame> {
    check_history(history, 2, "exponential")?;
    let prev = history[history.len() - 2];
    let cur = history[history.len() - 1];
    let ratio_exp = (t1 as f64 - cur.timestamp as f64) / (cur.timestamp - prev.timestamp) as f64;
    let values = cur
        .values
        .iter()
        .zip(&prev.values)
        .map(|(&d, &p)| {
            if d <= 0.0 || p <= 0.0 {
                0.0
            } else {
                let v = d as f64 * (d as f64 / p as f64).powf(ratio_exp);
                if v.is_finite() {
                    v as f32
                } else {
                    f32::MAX
                }
            }
        })
        .collect();
    DepthFrame::new(cur.geometry, values, t1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_core::Geometry;

    fn frame(v: f32, t: Micros) -> DepthFrame {
        DepthFrame::filled(Geometry::new(2, 2), v, t)
    }

    #[test]
    fn constant_history_is_fixed_point() {
        let h = [frame(7.0, 0), frame(7.0, 100), frame(7.0, 200)];
        let refs: Vec<&DepthFrame> = h.iter().collect();
        for f in [
            baseline_repeat(&h[2], 300),
            baseline_linear(&refs, 3, 300).unwrap(),
            baseline_exponential(&refs, 300).unwrap(),
        ] {
            assert!(f.values.iter().all(|&v| (v - 7.0).abs() < 1e-6));
            assert_eq!(f.timestamp, 300);
        }
    }

    #[test]
    fn geometric_halving() {
        let h = [frame(8.0, 0), frame(4.0, 100)];
        let refs: Vec<&DepthFrame> = h.iter().collect();
        let e = baseline_exponential(&refs, 200).unwrap();
        assert!(e.values.iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn insufficient_history() {
        let f = frame(1.0, 0);
        assert!(baseline_linear(&[&f], 3, 10).is_err());
        assert!(baseline_exponential(&[&f], 10).is_err());
    }

    #[test]
    fn invalid_pixels_propagate() {
        let mut a = frame(5.0, 0);
        a.values[1] = 0.0;
        let b = frame(6.0, 10);
        let c = frame(7.0, 20);
        let l = baseline_linear(&[&a, &b, &c], 3, 30).unwrap();
        assert_eq!(l.values[1], 0.0);
        assert!((l.values[0] - 8.0).abs() < 1e-5);
        let e = baseline_exponential(&[&a, &b], 20).unwrap();
        assert_eq!(e.values[1], 0.0);
    }
}
