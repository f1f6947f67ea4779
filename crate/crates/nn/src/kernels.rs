//! Raw convolution and pooling kernels (forward and backward).
//!
//! Convolutions lower to GEMM through im2col. Every kernel walks samples
//! and groups in a fixed order so results are bitwise reproducible.

use crate::error::{NnError, Result};
use crate::tensor::{gemm_rm, Element, Tensor};

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &Geometry, x: &mut [T]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size + 2 * pad < k {
        None
    } else {
        Some((size + 2 * pad - k) / stride + 1)
    }
}

struct ConvPlan {
    n: usize,
    c: usize,
    k: usize,
    groups: usize,
    geo: Geometry,
}

fn plan_conv<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<ConvPlan> {
    let [n, c, h, wd] = x.dims4()?;
    let [k, cg, kh, kw] = w.dims4()?;
    let groups = spec.groups;
    let mismatch = || {
        NnError::Shape(format!(
            "conv2d: input {:?} incompatible with weight {:?} (stride {}, padding {}, groups {})",
            x.shape(),
            w.shape(),
            spec.stride,
            spec.padding,
            groups
        ))
    };
    if groups == 0 || c % groups != 0 || k % groups != 0 || cg != c / groups {
        return Err(mismatch());
    }
    let out_h = conv_out(h, kh, spec.stride, spec.padding).ok_or_else(mismatch)?;
    let out_w = conv_out(wd, kw, spec.stride, spec.padding).ok_or_else(mismatch)?;
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(NnError::Shape(format!(
                "conv2d: bias {:?} does not match weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
    }
    Ok(ConvPlan {
        n,
        c,
        k,
        groups,
        geo: Geometry {
            channels: cg,
            height: h,
            width: wd,
            kh,
            kw,
            stride: spec.stride,
            pad: spec.padding,
            out_h,
            out_w,
        },
    })
}

/// Cross-correlation of an NCHW input with a `(K, C/groups, kh, kw)` kernel.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let p = plan_conv(x, w, bias, spec)?;
    let g = &p.geo;
    let kg = p.k / p.groups;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.height * g.width;
    let mut out = Tensor::zeros(&[p.n, p.k, g.out_h, g.out_w]);
    let mut col = vec![T::zero(); rows * cols];
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for s in 0..p.n {
        for gi in 0..p.groups {
            let x_off = (s * p.c + gi * g.channels) * in_plane;
            im2col(&xd[x_off..x_off + g.channels * in_plane], g, &mut col);
            let o_off = (s * p.k + gi * kg) * cols;
            gemm_rm(
                kg,
                rows,
                cols,
                &wdat[gi * kg * rows..(gi + 1) * kg * rows],
                false,
                &col,
                false,
                &mut od[o_off..o_off + kg * cols],
                false,
            );
        }
        if let Some(b) = bias {
            for (ki, &bv) in b.data().iter().enumerate() {
                let o_off = (s * p.k + ki) * cols;
                for v in &mut od[o_off..o_off + cols] {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let p = plan_conv(x, w, None, spec)?;
    let g = &p.geo;
    let kg = p.k / p.groups;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.height * g.width;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[p.k]);
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    let xd = x.data();
    let wdat = w.data();
    let gd = grad_out.data();
    for s in 0..p.n {
        for gi in 0..p.groups {
            let x_off = (s * p.c + gi * g.channels) * in_plane;
            let o_off = (s * p.k + gi * kg) * cols;
            let dout = &gd[o_off..o_off + kg * cols];
            let wg = &wdat[gi * kg * rows..(gi + 1) * kg * rows];
            im2col(&xd[x_off..x_off + g.channels * in_plane], g, &mut col);
            gemm_rm(
                kg,
                cols,
                rows,
                dout,
                false,
                &col,
                true,
                &mut dw.data_mut()[gi * kg * rows..(gi + 1) * kg * rows],
                true,
            );
            gemm_rm(rows, kg, cols, wg, true, dout, false, &mut dcol, false);
            col2im(
                &dcol,
                g,
                &mut dx.data_mut()[x_off..x_off + g.channels * in_plane],
            );
        }
        for ki in 0..p.k {
            let o_off = (s * p.k + ki) * cols;
            let acc = gd[o_off..o_off + cols]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            db.data_mut()[ki] = db.data()[ki] + acc;
        }
    }
    Ok((dx, dw, db))
}

struct TransposePlan {
    n: usize,
    cin: usize,
    cout: usize,
    // Geometry of the matching forward convolution: output-sized "input"
    // planes reduced to the transposed conv's input size.
    geo: Geometry,
}

fn plan_transpose<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<TransposePlan> {
    let [n, cin, h, wd] = x.dims4()?;
    let [wcin, cout, kh, kw] = w.dims4()?;
    let mismatch = || {
        NnError::Shape(format!(
            "conv_transpose2d: input {:?} incompatible with weight {:?} (stride {stride}, padding {padding})",
            x.shape(),
            w.shape()
        ))
    };
    if wcin != cin || stride == 0 || h == 0 || wd == 0 {
        return Err(mismatch());
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (wd - 1) * stride + kw;
    if full_h <= 2 * padding || full_w <= 2 * padding {
        return Err(mismatch());
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(NnError::Shape(format!(
                "conv_transpose2d: bias {:?} does not match weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
    }
    Ok(TransposePlan {
        n,
        cin,
        cout,
        geo: Geometry {
            channels: cout,
            height: full_h - 2 * padding,
            width: full_w - 2 * padding,
            kh,
            kw,
            stride,
            pad: padding,
            out_h: h,
            out_w: wd,
        },
    })
}

/// Transposed convolution with a `(C_in, C_out, kh, kw)` kernel: the adjoint
/// of [`conv2d`] with the same stride and padding.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let p = plan_transpose(x, w, bias, stride, padding)?;
    let g = &p.geo;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let out_plane = g.height * g.width;
    let mut out = Tensor::zeros(&[p.n, p.cout, g.height, g.width]);
    let mut col = vec![T::zero(); rows * cols];
    let xd = x.data();
    for s in 0..p.n {
        let xs = &xd[s * p.cin * cols..(s + 1) * p.cin * cols];
        gemm_rm(rows, p.cin, cols, w.data(), true, xs, false, &mut col, false);
        let od = &mut out.data_mut()[s * p.cout * out_plane..(s + 1) * p.cout * out_plane];
        col2im(&col, g, od);
        if let Some(b) = bias {
            for (c, &bv) in b.data().iter().enumerate() {
                for v in &mut od[c * out_plane..(c + 1) * out_plane] {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let p = plan_transpose(x, w, None, stride, padding)?;
    let g = &p.geo;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let out_plane = g.height * g.width;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[p.cout]);
    let mut dcol = vec![T::zero(); rows * cols];
    let xd = x.data();
    let gd = grad_out.data();
    for s in 0..p.n {
        let go = &gd[s * p.cout * out_plane..(s + 1) * p.cout * out_plane];
        im2col(go, g, &mut dcol);
        let xs = &xd[s * p.cin * cols..(s + 1) * p.cin * cols];
        gemm_rm(
            p.cin,
            rows,
            cols,
            w.data(),
            false,
            &dcol,
            false,
            &mut dx.data_mut()[s * p.cin * cols..(s + 1) * p.cin * cols],
            false,
        );
        gemm_rm(p.cin, cols, rows, xs, false, &dcol, true, dw.data_mut(), true);
        for c in 0..p.cout {
            let acc = go[c * out_plane..(c + 1) * out_plane]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            db.data_mut()[c] = db.data()[c] + acc;
        }
    }
    Ok((dx, dw, db))
}

/// Non-overlapping max pooling (window = stride). Returns the pooled tensor
/// and, per output value, the flat index of the selected input element.
pub fn maxpool2d<T: Element>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if window == 0 || h < window || w < window {
        return Err(NnError::Shape(format!(
            "maxpool2d: window {window} does not fit input {:?}",
            x.shape()
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    let od = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * window + dy) * w + ox * window + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                od[o] = xd[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] = d[idx] + g;
    }
    dx
}
