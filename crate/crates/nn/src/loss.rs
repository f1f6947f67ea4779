//! Loss functions with their analytic gradients.
//!
//! All losses are mean-reduced. Dense-prediction losses accept an optional
//! validity mask over the target; invalid pixels contribute nothing.

use crate::error::{NnError, Result};
use crate::tensor::{ensure_same_shape, Element, Tensor};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logs.
pub const BCE_EPS: f64 = 1e-7;

fn mask_ok(mask: Option<&[bool]>, len: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != len => Err(NnError::Shape(format!(
            "mask has {} entries for {} values",
            m.len(),
            len
        ))),
        _ => Ok(()),
    }
}

fn valid(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Mean squared error over the valid pixels.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    mse_masked(pred, target, None)
}

pub fn mse_masked<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<T> {
    ensure_same_shape(pred, target, "mse")?;
    mask_ok(mask, pred.len())?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        if valid(mask, i) {
            let d = p - t;
            sum = sum + d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(NnError::Shape("mse: no valid pixels".into()));
    }
    Ok(sum / T::from_usize(count).unwrap())
}

pub(crate) fn mse_backward<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
    upstream: T,
) -> Tensor<T> {
    let count = (0..pred.len()).filter(|&i| valid(mask, i)).count().max(1);
    let scale = upstream * T::from_f64_lossy(2.0) / T::from_usize(count).unwrap();
    let mut g = Tensor::zeros(pred.shape());
    for (i, ((gv, &p), &t)) in g
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
        .enumerate()
    {
        if valid(mask, i) {
            *gv = scale * (p - t);
        }
    }
    g
}

/// Binary cross-entropy between probabilities and {0,1} labels.
pub fn bce_loss<T: Element>(prob: &Tensor<T>, labels: &[T]) -> Result<T> {
    bce_weighted(prob, labels, None)
}

/// BCE with optional per-sample weights (mean over samples).
pub fn bce_weighted<T: Element>(prob: &Tensor<T>, labels: &[T], weights: Option<&[T]>) -> Result<T> {
    if prob.len() != labels.len() || weights.is_some_and(|w| w.len() != labels.len()) {
        return Err(NnError::Shape(format!(
            "bce: {} probabilities vs {} labels",
            prob.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(NnError::Shape("bce: empty batch".into()));
    }
    let eps = T::from_f64_lossy(BCE_EPS);
    let one = T::one();
    let mut sum = T::zero();
    for (i, (&p, &y)) in prob.data().iter().zip(labels).enumerate() {
        let p = p.max(eps).min(one - eps);
        let w = weights.map_or(one, |w| w[i]);
        sum = sum - w * (y * p.ln() + (one - y) * (one - p).ln());
    }
    Ok(sum / T::from_usize(labels.len()).unwrap())
}

pub(crate) fn bce_backward<T: Element>(
    prob: &Tensor<T>,
    labels: &[T],
    weights: Option<&[T]>,
    upstream: T,
) -> Tensor<T> {
    let eps = T::from_f64_lossy(BCE_EPS);
    let one = T::one();
    let n = T::from_usize(labels.len().max(1)).unwrap();
    let mut g = Tensor::zeros(prob.shape());
    for (i, (gv, (&p, &y))) in g
        .data_mut()
        .iter_mut()
        .zip(prob.data().iter().zip(labels))
        .enumerate()
    {
        if p < eps || p > one - eps {
            continue;
        }
        let w = weights.map_or(one, |w| w[i]);
        *gv = upstream * w * (-y / p + (one - y) / (one - p)) / n;
    }
    g
}

/// Box-window SSIM settings. Stabilizing constants follow the usual
/// `C1 = (0.01 R)^2`, `C2 = (0.03 R)^2` with `R` the data range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (0.01 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (0.03 * self.range).powi(2)
    }
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats<T: Element>(x: &[T], y: &[T], width: usize, i: usize, j: usize, win: usize) -> WindowStats {
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in i..i + win {
        for c in j..j + win {
            let a = x[r * width + c].as_f64();
            let b = y[r * width + c].as_f64();
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
    }
    let n = (win * win) as f64;
    let mu_x = sx / n;
    let mu_y = sy / n;
    WindowStats {
        mu_x,
        mu_y,
        var_x: sxx / n - mu_x * mu_x,
        var_y: syy / n - mu_y * mu_y,
        cov: sxy / n - mu_x * mu_y,
    }
}

fn window_valid(mask: Option<&[bool]>, plane_off: usize, width: usize, i: usize, j: usize, win: usize) -> bool {
    let Some(m) = mask else { return true };
    (i..i + win).all(|r| (j..j + win).all(|c| m[plane_off + r * width + c]))
}

fn ssim_check<T: Element>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig, mask: Option<&[bool]>) -> Result<[usize; 4]> {
    ensure_same_shape(a, b, "ssim")?;
    mask_ok(mask, a.len())?;
    let dims = a.dims4()?;
    if cfg.window == 0 || dims[2] < cfg.window || dims[3] < cfg.window {
        return Err(NnError::Shape(format!(
            "ssim: window {} larger than input {:?}",
            cfg.window,
            a.shape()
        )));
    }
    Ok(dims)
}

/// Mean SSIM over every window position whose pixels are all valid.
/// Returns 1 when no window qualifies.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<T> {
    ssim_masked(a, b, cfg, None)
}

pub fn ssim_masked<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &SsimConfig,
    mask: Option<&[bool]>,
) -> Result<T> {
    let [n, c, h, w] = ssim_check(a, b, cfg, mask)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let win = cfg.window;
    let mut total = 0.0;
    let mut count = 0usize;
    for plane in 0..n * c {
        let off = plane * h * w;
        let x = &a.data()[off..off + h * w];
        let y = &b.data()[off..off + h * w];
        for i in 0..=h - win {
            for j in 0..=w - win {
                if !window_valid(mask, off, w, i, j, win) {
                    continue;
                }
                let s = window_stats(x, y, w, i, j, win);
                total += ((2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2))
                    / ((s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(T::one());
    }
    Ok(T::from_f64_lossy(total / count as f64))
}

/// Gradient of [`ssim_masked`] with respect to its first argument.
pub(crate) fn ssim_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &SsimConfig,
    mask: Option<&[bool]>,
    upstream: T,
) -> Tensor<T> {
    let [n, c, h, w] = a.dims4().expect("checked in forward");
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let win = cfg.window;
    let nwin = (win * win) as f64;
    let mut positions = Vec::new();
    for plane in 0..n * c {
        for i in 0..=h - win {
            for j in 0..=w - win {
                if window_valid(mask, plane * h * w, w, i, j, win) {
                    positions.push((plane, i, j));
                }
            }
        }
    }
    let mut grad = vec![0.0f64; a.len()];
    if !positions.is_empty() {
        let scale = upstream.as_f64() / positions.len() as f64;
        for &(plane, i, j) in &positions {
            let off = plane * h * w;
            let x = &a.data()[off..off + h * w];
            let y = &b.data()[off..off + h * w];
            let s = window_stats(x, y, w, i, j, win);
            let num_l = 2.0 * s.mu_x * s.mu_y + c1;
            let num_c = 2.0 * s.cov + c2;
            let den_l = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1;
            let den_c = s.var_x + s.var_y + c2;
            let value = num_l * num_c / (den_l * den_c);
            let d_mu = 2.0 * s.mu_y * num_c / (den_l * den_c) - value * 2.0 * s.mu_x / den_l;
            let d_var = -value / den_c;
            let d_cov = 2.0 * num_l / (den_l * den_c);
            for r in i..i + win {
                for cc in j..j + win {
                    let k = r * w + cc;
                    let xv = x[k].as_f64();
                    let yv = y[k].as_f64();
                    grad[off + k] += scale
                        * (d_mu + d_var * 2.0 * (xv - s.mu_x) + d_cov * (yv - s.mu_y))
                        / nwin;
                }
            }
        }
    }
    Tensor::new(a.shape(), grad.into_iter().map(T::from_f64_lossy).collect()).expect("same shape")
}

/// Mean absolute difference of forward-difference image gradients, summed
/// over the horizontal and vertical directions.
pub fn gradient_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<T> {
    ensure_same_shape(pred, target, "gradient_loss")?;
    mask_ok(mask, pred.len())?;
    let [n, c, h, w] = pred.dims4()?;
    let p = pred.data();
    let t = target.data();
    let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0usize, 0.0, 0usize);
    for plane in 0..n * c {
        let off = plane * h * w;
        for i in 0..h {
            for j in 0..w {
                let k = off + i * w + j;
                if j + 1 < w && valid(mask, k) && valid(mask, k + 1) {
                    sx += ((p[k + 1] - p[k]) - (t[k + 1] - t[k])).as_f64().abs();
                    nx += 1;
                }
                if i + 1 < h && valid(mask, k) && valid(mask, k + w) {
                    sy += ((p[k + w] - p[k]) - (t[k + w] - t[k])).as_f64().abs();
                    ny += 1;
                }
            }
        }
    }
    let mx = if nx > 0 { sx / nx as f64 } else { 0.0 };
    let my = if ny > 0 { sy / ny as f64 } else { 0.0 };
    Ok(T::from_f64_lossy(mx + my))
}

pub(crate) fn gradient_loss_backward<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
    upstream: T,
) -> Tensor<T> {
    let [n, c, h, w] = pred.dims4().expect("checked in forward");
    let p = pred.data();
    let t = target.data();
    let (mut nx, mut ny) = (0usize, 0usize);
    for plane in 0..n * c {
        let off = plane * h * w;
        for i in 0..h {
            for j in 0..w {
                let k = off + i * w + j;
                if j + 1 < w && valid(mask, k) && valid(mask, k + 1) {
                    nx += 1;
                }
                if i + 1 < h && valid(mask, k) && valid(mask, k + w) {
                    ny += 1;
                }
            }
        }
    }
    let up = upstream.as_f64();
    let scale_x = if nx > 0 { up / nx as f64 } else { 0.0 };
    let scale_y = if ny > 0 { up / ny as f64 } else { 0.0 };
    let mut g = vec![0.0f64; pred.len()];
    for plane in 0..n * c {
        let off = plane * h * w;
        for i in 0..h {
            for j in 0..w {
                let k = off + i * w + j;
                if j + 1 < w && valid(mask, k) && valid(mask, k + 1) {
                    let d = ((p[k + 1] - p[k]) - (t[k + 1] - t[k])).as_f64();
                    let s = scale_x * sign(d);
                    g[k + 1] += s;
                    g[k] -= s;
                }
                if i + 1 < h && valid(mask, k) && valid(mask, k + w) {
                    let d = ((p[k + w] - p[k]) - (t[k + w] - t[k])).as_f64();
                    let s = scale_y * sign(d);
                    g[k + w] += s;
                    g[k] -= s;
                }
            }
        }
    }
    Tensor::new(pred.shape(), g.into_iter().map(T::from_f64_lossy).collect()).expect("same shape")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn normal_positions(mask: Option<&[bool]>, dims: [usize; 4]) -> Vec<usize> {
    let [n, c, h, w] = dims;
    let mut out = Vec::new();
    for plane in 0..n * c {
        let off = plane * h * w;
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                let k = off + i * w + j;
                if valid(mask, k) && valid(mask, k + 1) && valid(mask, k + w) {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// Mean `1 - cos` between surface normals `(-dx, -dy, 1)` built from
/// forward differences of prediction and target.
pub fn normal_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<T> {
    ensure_same_shape(pred, target, "normal_loss")?;
    mask_ok(mask, pred.len())?;
    let dims = pred.dims4()?;
    let w = dims[3];
    let positions = normal_positions(mask, dims);
    if positions.is_empty() {
        return Ok(T::zero());
    }
    let p = pred.data();
    let t = target.data();
    let mut sum = 0.0;
    for &k in &positions {
        let (pgx, pgy) = ((p[k + 1] - p[k]).as_f64(), (p[k + w] - p[k]).as_f64());
        let (tgx, tgy) = ((t[k + 1] - t[k]).as_f64(), (t[k + w] - t[k]).as_f64());
        let np = (pgx * pgx + pgy * pgy + 1.0).sqrt();
        let nt = (tgx * tgx + tgy * tgy + 1.0).sqrt();
        sum += 1.0 - (pgx * tgx + pgy * tgy + 1.0) / (np * nt);
    }
    Ok(T::from_f64_lossy(sum / positions.len() as f64))
}

pub(crate) fn normal_loss_backward<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
    upstream: T,
) -> Tensor<T> {
    let dims = pred.dims4().expect("checked in forward");
    let w = dims[3];
    let positions = normal_positions(mask, dims);
    let mut g = vec![0.0f64; pred.len()];
    if !positions.is_empty() {
        let scale = upstream.as_f64() / positions.len() as f64;
        let p = pred.data();
        let t = target.data();
        for &k in &positions {
            let (pgx, pgy) = ((p[k + 1] - p[k]).as_f64(), (p[k + w] - p[k]).as_f64());
            let (tgx, tgy) = ((t[k + 1] - t[k]).as_f64(), (t[k + w] - t[k]).as_f64());
            let np2 = pgx * pgx + pgy * pgy + 1.0;
            let np = np2.sqrt();
            let nt = (tgx * tgx + tgy * tgy + 1.0).sqrt();
            let cos = (pgx * tgx + pgy * tgy + 1.0) / (np * nt);
            let d_gx = -(tgx / (np * nt) - cos * pgx / np2) * scale;
            let d_gy = -(tgy / (np * nt) - cos * pgy / np2) * scale;
            g[k + 1] += d_gx;
            g[k + w] += d_gy;
            g[k] -= d_gx + d_gy;
        }
    }
    Tensor::new(pred.shape(), g.into_iter().map(T::from_f64_lossy).collect()).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_losses_vanish() {
        let x = Tensor::from_fn(&[1, 1, 9, 9], |i| ((i * 37) % 11) as f64 * 0.1);
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        assert!((ssim(&x, &x, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gradient_loss(&x, &x, None).unwrap(), 0.0);
        assert!(normal_loss(&x, &x, None).unwrap().abs() < 1e-15);
    }

    #[test]
    fn bce_half_is_log2() {
        let p = Tensor::new(&[1], vec![0.5f64]).unwrap();
        let l = bce_loss(&p, &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let p = Tensor::new(&[2], vec![0.0f64, 1.0]).unwrap();
        let l = bce_loss(&p, &[1.0, 0.0]).unwrap();
        assert!(l.is_finite());
        assert!((l - (-(BCE_EPS.ln()))).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(ssim(&x, &x, &SsimConfig::default()).is_err());
    }

    #[test]
    fn mse_all_invalid_is_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(mse_masked(&x, &x, Some(&[false; 4])).is_err());
    }
}
