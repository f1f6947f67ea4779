//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Parameter
//! leaves are copied in from a [`ParamStore`]; [`Graph::backward`] then
//! accumulates gradients back into that store.

use crate::error::{NnError, Result};
use crate::kernels::{self, Conv2dSpec};
use crate::loss::{self, SsimConfig};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{ensure_same_shape, Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, T)>),
    Mse {
        pred: Var,
        target: Tensor<T>,
        mask: Option<Vec<bool>>,
    },
    Bce {
        prob: Var,
        labels: Vec<T>,
        weights: Option<Vec<T>>,
    },
    Ssim {
        a: Var,
        target: Tensor<T>,
        cfg: SsimConfig,
        mask: Option<Vec<bool>>,
    },
    GradLoss {
        pred: Var,
        target: Tensor<T>,
        mask: Option<Vec<bool>>,
    },
    NormalLoss {
        pred: Var,
        target: Tensor<T>,
        mask: Option<Vec<bool>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable `ln(1 + e^x)`; linear beyond x = 20.
pub fn softplus_scalar<T: Element>(x: T) -> T {
    let twenty = T::from_f64_lossy(20.0);
    if x > twenty {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Records a parameter leaf holding a copy of the stored value.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = kernels::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(x), window)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus_scalar);
        self.push(out, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_same_shape(self.value(a), self.value(b), "mul")?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| NnError::Shape("concat of nothing".into()))?)
            .dims4()?;
        let mut channels = 0;
        for &p in parts {
            let [n, c, h, w] = self.value(p).dims4()?;
            if n != first[0] || h != first[2] || w != first[3] {
                return Err(NnError::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    self.value(p).shape(),
                    self.value(parts[0]).shape()
                )));
            }
            channels += c;
        }
        let [n, _, h, w] = first;
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for s in 0..n {
            for &p in parts {
                let c = self.value(p).shape()[1];
                data.extend_from_slice(&self.value(p).data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let out = Tensor::new(&[n, channels, h, w], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// `(N, C, H, W) -> (N, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let plane = h * w;
        let inv = T::one() / T::from_usize(plane).unwrap();
        let xd = self.value(x).data();
        let data = (0..n * c)
            .map(|i| xd[i * plane..(i + 1) * plane].iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let out = Tensor::new(&[n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    /// Dense layer: `x (N, F)`, `w (O, F)`, `b (O)` -> `(N, O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let (&[n, f], &[o, wf], &[bo]) = (xs.as_slice(), ws.as_slice(), bs.as_slice()) else {
            return Err(NnError::Shape(format!("linear: input {xs:?}, weight {ws:?}, bias {bs:?}")));
        };
        if f != wf || o != bo {
            return Err(NnError::Shape(format!("linear: input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let mut out = vec![T::zero(); n * o];
        for s in 0..n {
            out[s * o..(s + 1) * o].copy_from_slice(self.value(b).data());
        }
        crate::tensor::gemm_rm(
            n,
            f,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            true,
        );
        let out = Tensor::new(&[n, o], out)?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::from_usize(v.len().max(1)).unwrap());
        self.push(out, Op::Mean(x))
    }

    /// `sum_i c_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(NnError::Shape(format!("weighted_sum: non-scalar term {:?}", t.shape())));
            }
            total = total + c * t.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    pub fn mse(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Var> {
        let v = loss::mse_masked(self.value(pred), target, mask)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Mse {
                pred,
                target: target.clone(),
                mask: mask.map(<[bool]>::to_vec),
            },
        ))
    }

    pub fn bce(&mut self, prob: Var, labels: &[T], weights: Option<&[T]>) -> Result<Var> {
        let v = loss::bce_weighted(self.value(prob), labels, weights)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Bce {
                prob,
                labels: labels.to_vec(),
                weights: weights.map(<[T]>::to_vec),
            },
        ))
    }

    pub fn ssim(&mut self, a: Var, target: &Tensor<T>, cfg: SsimConfig, mask: Option<&[bool]>) -> Result<Var> {
        let v = loss::ssim_masked(self.value(a), target, &cfg, mask)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Ssim {
                a,
                target: target.clone(),
                cfg,
                mask: mask.map(<[bool]>::to_vec),
            },
        ))
    }

    pub fn gradient_loss(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Var> {
        let v = loss::gradient_loss(self.value(pred), target, mask)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::GradLoss {
                pred,
                target: target.clone(),
                mask: mask.map(<[bool]>::to_vec),
            },
        ))
    }

    pub fn normal_loss(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&[bool]>) -> Result<Var> {
        let v = loss::normal_loss(self.value(pred), target, mask)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::NormalLoss {
                pred,
                target: target.clone(),
                mask: mask.map(<[bool]>::to_vec),
            },
        ))
    }

    /// Reverse pass from a scalar node. Gradients of parameter leaves are
    /// added to the matching entries of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                let p = store.get_mut(*id);
                if p.grad.shape() != g.shape() {
                    return Err(NnError::State(format!(
                        "parameter `{}` changed shape since the forward pass",
                        p.name
                    )));
                }
                p.grad.add_assign(&g);
            }
        }
        store.mark_grads_ready();
        Ok(())
    }

    /// Gradients of `loss` with respect to every node (None when unreachable).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::State(
                "backward called before the forward pass recorded this variable".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv2d_backward(self.value(*x), self.value(*w), *spec, g)?;
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (dx, dw, db) =
                    kernels::conv_transpose2d_backward(self.value(*x), self.value(*w), *stride, *padding, g)?;
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, kernels::maxpool2d_backward(self.value(*x).shape(), argmax, g));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(*x, Tensor::new(xv.shape(), data)?);
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * sigmoid_scalar(v))
                    .collect();
                acc(*x, Tensor::new(xv.shape(), data)?);
            }
            Op::Sigmoid(x) => {
                let yv = &node.value;
                let data = yv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                acc(*x, Tensor::new(yv.shape(), data)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = g.data().iter().zip(bv.data()).map(|(&gv, &y)| gv * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                acc(*a, Tensor::new(av.shape(), da)?);
                acc(*b, Tensor::new(bv.shape(), db)?);
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = node.value.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    let mut data = Vec::with_capacity(n * c * plane);
                    for s in 0..n {
                        let start = (s * total + offset) * plane;
                        data.extend_from_slice(&g.data()[start..start + c * plane]);
                    }
                    acc(p, Tensor::new(self.value(p).shape(), data)?);
                    offset += c;
                }
            }
            Op::GlobalAvgPool(x) => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let plane = h * w;
                let inv = T::one() / T::from_usize(plane).unwrap();
                let mut data = Vec::with_capacity(n * c * plane);
                for &gv in g.data() {
                    data.extend(std::iter::repeat_n(gv * inv, plane));
                }
                acc(*x, Tensor::new(&[n, c, h, w], data)?);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, f) = (xv.shape()[0], xv.shape()[1]);
                let o = wv.shape()[0];
                let mut dx = vec![T::zero(); n * f];
                crate::tensor::gemm_rm(n, o, f, g.data(), false, wv.data(), false, &mut dx, false);
                let mut dw = vec![T::zero(); o * f];
                crate::tensor::gemm_rm(o, n, f, g.data(), true, xv.data(), false, &mut dw, false);
                let mut db = vec![T::zero(); o];
                for s in 0..n {
                    for (d, &gv) in db.iter_mut().zip(&g.data()[s * o..(s + 1) * o]) {
                        *d = *d + gv;
                    }
                }
                acc(*x, Tensor::new(&[n, f], dx)?);
                acc(*w, Tensor::new(&[o, f], dw)?);
                acc(*b, Tensor::new(&[o], db)?);
            }
            Op::Scale(x, s) => {
                let s = *s;
                acc(*x, g.map(|v| v * s));
            }
            Op::Sum(x) => {
                acc(*x, Tensor::full(self.value(*x).shape(), g.item()));
            }
            Op::Mean(x) => {
                let shape = self.value(*x).shape();
                let n = T::from_usize(self.value(*x).len().max(1)).unwrap();
                acc(*x, Tensor::full(shape, g.item() / n));
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    acc(v, Tensor::scalar(g.item() * c));
                }
            }
            Op::Mse { pred, target, mask } => {
                acc(
                    *pred,
                    loss::mse_backward(self.value(*pred), target, mask.as_deref(), g.item()),
                );
            }
            Op::Bce { prob, labels, weights } => {
                acc(
                    *prob,
                    loss::bce_backward(self.value(*prob), labels, weights.as_deref(), g.item()),
                );
            }
            Op::Ssim { a, target, cfg, mask } => {
                acc(
                    *a,
                    loss::ssim_backward(self.value(*a), target, cfg, mask.as_deref(), g.item()),
                );
            }
            Op::GradLoss { pred, target, mask } => {
                acc(
                    *pred,
                    loss::gradient_loss_backward(self.value(*pred), target, mask.as_deref(), g.item()),
                );
            }
            Op::NormalLoss { pred, target, mask } => {
                acc(
                    *pred,
                    loss::normal_loss_backward(self.value(*pred), target, mask.as_deref(), g.item()),
                );
            }
        }
        Ok(())
    }
}
