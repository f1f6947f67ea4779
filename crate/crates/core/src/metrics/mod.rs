//! Depth-error metrics over the valid-target mask.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::depth_extrap::DepthFrame;
use crate::error::{Error, Result};

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

/// Predictions are floored here (meters) inside log and ratio terms only.
pub const PRED_FLOOR_M: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub log_rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub valid_px: usize,
}

impl DepthMetrics {
    pub fn deltas(&self) -> [f64; 3] {
        [self.d1, self.d2, self.d3]
    }
}

/// Metrics of `pred` against `target` over pixels with `target > 0`.
pub fn evaluate(pred: &DepthFrame, target: &DepthFrame) -> Result<DepthMetrics> {
    pred.ensure_same_geometry(target)?;
    let mut n = 0usize;
    let (mut se, mut sle, mut ar, mut sr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut hits = [0usize; 3];
    for (&p, &t) in pred.values.iter().zip(&target.values) {
        if t <= 0.0 {
            continue;
        }
        let (p, t) = (p as f64, t as f64);
        if !p.is_finite() {
            return Err(Error::Data(format!("non-finite prediction {p}")));
        }
        n += 1;
        let e = p - t;
        se += e * e;
        ar += e.abs() / t;
        sr += e * e / t;
        let pf = p.max(PRED_FLOOR_M);
        let le = pf.ln() - t.ln();
        sle += le * le;
        let ratio = (pf / t).max(t / pf);
        for (h, thr) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < thr {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("no valid target pixels".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        rmse: (se / nf).sqrt(),
        log_rmse: (sle / nf).sqrt(),
        abs_rel: ar / nf,
        sq_rel: sr / nf,
        d1: hits[0] as f64 / nf,
        d2: hits[1] as f64 / nf,
        d3: hits[2] as f64 / nf,
        valid_px: n,
    })
}

/// Pixel-pooled aggregate: equals [`evaluate`] over the union of all pixels.
pub fn aggregate(frames: &[DepthMetrics]) -> Result<DepthMetrics> {
    if frames.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    let total: usize = frames.iter().map(|m| m.valid_px).sum();
    if total == 0 {
        return Err(Error::Data("aggregate over zero valid pixels".into()));
    }
    let w = |f: &dyn Fn(&DepthMetrics) -> f64| {
        frames.iter().map(|m| m.valid_px as f64 * f(m)).sum::<f64>() / total as f64
    };
    Ok(DepthMetrics {
        rmse: w(&|m| m.rmse * m.rmse).sqrt(),
        log_rmse: w(&|m| m.log_rmse * m.log_rmse).sqrt(),
        abs_rel: w(&|m| m.abs_rel),
        sq_rel: w(&|m| m.sq_rel),
        d1: w(&|m| m.d1),
        d2: w(&|m| m.d2),
        d3: w(&|m| m.d3),
        valid_px: total,
    })
}

/// One line of the metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    /// A fixed rate such as `"10"`, or `"adaptive"`.
    pub fps: String,
    pub metrics: DepthMetrics,
}

pub const CSV_HEADER: &str = "method,fps,rmse,log_rmse,abs_rel,sq_rel,d1,d2,d3,valid_px";

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.method, r.fps, m.rmse, m.log_rmse, m.abs_rel, m.sq_rel, m.d1, m.d2, m.d3, m.valid_px
        );
    }
    s
}
