//! Finite-difference checks of every differentiable operation, in f64.

use eventdepth_nn::{
    finite_diff_check, Conv2dSpec, Graph, ParamStore, Result, SsimConfig, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES: usize = 20;
const TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts an arbitrary tensor node with fixed random weights so every
/// output element receives a distinct upstream gradient.
fn contract(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.input(random(g.value(y).shape(), &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn run<F>(label: &str, mut store: ParamStore<f64>, build: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let report = finite_diff_check(&mut store, build, STEP, TOL).unwrap();
    assert!(report.passed, "{label}: {:?}", report.params);
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..SHAPES {
        let groups = if case % 4 == 3 { 2 } else { 1 };
        let c = groups * rng.random_range(1..3);
        let k = groups * rng.random_range(1..3);
        let ks = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let h = rng.random_range(ks..7);
        let w = rng.random_range(ks..7);
        let n = rng.random_range(1..3);
        let spec = Conv2dSpec::new(stride, pad).with_groups(groups);
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[n, c, h, w], &mut rng)).unwrap();
        let wt = store.add("w", random(&[k, c / groups, ks, ks], &mut rng)).unwrap();
        let b = store.add("b", random(&[k], &mut rng)).unwrap();
        run(&format!("conv2d case {case}"), store, move |g, s| {
            let (xv, wv, bv) = (g.param(s, x), g.param(s, wt), g.param(s, b));
            let y = g.conv2d(xv, wv, Some(bv), spec)?;
            contract(g, y, case as u64)
        });
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..SHAPES {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let ks = rng.random_range(1..4);
        let stride = rng.random_range(1..3);
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let pad = if (h - 1) * stride + ks > 2 && (w - 1) * stride + ks > 2 { rng.random_range(0..2) } else { 0 };
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[1, cin, h, w], &mut rng)).unwrap();
        let wt = store.add("w", random(&[cin, cout, ks, ks], &mut rng)).unwrap();
        let b = store.add("b", random(&[cout], &mut rng)).unwrap();
        run(&format!("conv_transpose2d case {case}"), store, move |g, s| {
            let (xv, wv, bv) = (g.param(s, x), g.param(s, wt), g.param(s, b));
            let y = g.conv_transpose2d(xv, wv, Some(bv), stride, pad)?;
            contract(g, y, case as u64)
        });
    }
}

#[test]
fn maxpool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..SHAPES {
        let win = rng.random_range(1..4);
        let shape = [rng.random_range(1..3), rng.random_range(1..3), win * rng.random_range(1..4), win * rng.random_range(1..4)];
        let mut store = ParamStore::new();
        let x = store.add("x", random(&shape, &mut rng)).unwrap();
        run(&format!("maxpool case {case}"), store, move |g, s| {
            let xv = g.param(s, x);
            let y = g.maxpool2d(xv, win)?;
            contract(g, y, case as u64)
        });
    }
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..SHAPES {
        let shape = [1, rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
        for act in 0..3 {
            let mut store = ParamStore::new();
            let x = store.add("x", random(&shape, &mut rng).map(|v| v * 4.0)).unwrap();
            run(&format!("activation {act} case {case}"), store, move |g, s| {
                let xv = g.param(s, x);
                let y = match act {
                    0 => g.relu(xv),
                    1 => g.softplus(xv),
                    _ => g.sigmoid(xv),
                };
                contract(g, y, case as u64)
            });
        }
    }
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..SHAPES {
        let (n, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (c1, c2) = (rng.random_range(1..3), rng.random_range(1..3));
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[n, c1, h, w], &mut rng)).unwrap();
        let b = store.add("b", random(&[n, c2, h, w], &mut rng)).unwrap();
        let a2 = store.add("a2", random(&[n, c1, h, w], &mut rng)).unwrap();
        run(&format!("concat/add/mul/gap case {case}"), store, move |g, s| {
            let (av, bv, a2v) = (g.param(s, a), g.param(s, b), g.param(s, a2));
            let sum = g.add(av, a2v)?;
            let prod = g.mul(sum, a2v)?;
            let cat = g.concat_channels(&[prod, bv])?;
            let pooled = g.global_avg_pool(cat)?;
            let scaled = g.scale(pooled, 0.7);
            let m = g.mean(scaled);
            let t = contract(g, cat, case as u64)?;
            g.weighted_sum(&[(m, 2.0), (t, -0.5)])
        });
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..SHAPES {
        let (n, f, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[n, f], &mut rng)).unwrap();
        let w = store.add("w", random(&[o, f], &mut rng)).unwrap();
        let b = store.add("b", random(&[o], &mut rng)).unwrap();
        run(&format!("linear case {case}"), store, move |g, s| {
            let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.linear(xv, wv, bv)?;
            contract(g, y, case as u64)
        });
    }
}

fn random_mask(len: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut m: Vec<bool> = (0..len).map(|_| rng.random_range(0.0..1.0) < 0.85).collect();
    m[0] = true;
    m
}

#[test]
fn mse_and_bce_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..SHAPES {
        let shape = [rng.random_range(1..3), 1, rng.random_range(1..5), rng.random_range(1..5)];
        let target = random(&shape, &mut rng);
        let len: usize = shape.iter().product();
        let mask = random_mask(len, &mut rng);
        let mut store = ParamStore::new();
        let p = store.add("pred", random(&shape, &mut rng)).unwrap();
        run(&format!("mse case {case}"), store, move |g, s| {
            let pv = g.param(s, p);
            g.mse(pv, &target, Some(&mask))
        });

        let n = rng.random_range(1..9);
        let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut store = ParamStore::new();
        let logits = store.add("logits", random(&[n, 1], &mut rng).map(|v| v * 3.0)).unwrap();
        run(&format!("bce case {case}"), store, move |g, s| {
            let lv = g.param(s, logits);
            let prob = g.sigmoid(lv);
            g.bce(prob, &labels, Some(&weights))
        });
    }
}

#[test]
fn ssim_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for case in 0..SHAPES {
        let win = [3, 5, 7][case % 3];
        let shape = [1, rng.random_range(1..3), win + rng.random_range(0..4), win + rng.random_range(0..4)];
        let target = random(&shape, &mut rng);
        let len: usize = shape.iter().product();
        let mask = if case % 2 == 0 { None } else { Some(random_mask(len, &mut rng)) };
        let cfg = SsimConfig { window: win, range: 2.0 };
        let mut store = ParamStore::new();
        let p = store.add("pred", random(&shape, &mut rng)).unwrap();
        run(&format!("ssim case {case}"), store, move |g, s| {
            let pv = g.param(s, p);
            g.ssim(pv, &target, cfg, mask.as_deref())
        });
    }
}

#[test]
fn gradient_and_normal_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for case in 0..SHAPES {
        let shape = [rng.random_range(1..3), 1, rng.random_range(2..6), rng.random_range(2..6)];
        let target = random(&shape, &mut rng);
        let len: usize = shape.iter().product();
        let mask = random_mask(len, &mut rng);
        let mut store = ParamStore::new();
        let p = store.add("pred", random(&shape, &mut rng)).unwrap();
        let (t1, m1) = (target.clone(), mask.clone());
        run(&format!("gradient loss case {case}"), store.clone(), move |g, s| {
            let pv = g.param(s, p);
            g.gradient_loss(pv, &t1, Some(&m1))
        });
        run(&format!("normal loss case {case}"), store, move |g, s| {
            let pv = g.param(s, p);
            g.normal_loss(pv, &target, Some(&mask))
        });
    }
}

#[test]
fn forward_backward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::<f32>::new();
        let x = store.add("x", random(&[2, 3, 8, 8], &mut rng).cast()).unwrap();
        let w = store.add("w", random(&[4, 3, 3, 3], &mut rng).cast()).unwrap();
        let mut g = Graph::new();
        let (xv, wv) = (g.param(&store, x), g.param(&store, w));
        let y = g.conv2d(xv, wv, None, Conv2dSpec::new(1, 1)).unwrap();
        let r = g.relu(y);
        let l = g.sum(r);
        g.backward(l, &mut store).unwrap();
        (g.value(l).item(), store)
    };
    let (l1, s1) = build();
    let (l2, s2) = build();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(s1, s2);
}
