use eventdepth::depth_extrap::{
    baseline_exponential, baseline_linear, baseline_repeat, extrap_samples, resconv_forward, score_baseline,
    score_model, total_loss, train_extrapolator, Baseline, DepthFrame, ExtrapSample, ExtrapTrainConfig,
    ExtrapolatorConfig, ExtrapolatorModel, GapMode, LossWeights, SamplingConfig, VARIANTS,
};
use eventdepth::event_core::{EventVoxelGrid, Geometry, Micros};
use eventdepth::scene_sim::{generate_sequence, random_scene, SceneConfig, ScenarioConfig, Sequence};
use eventdepth_nn::{conv2d, relu, Conv2dSpec, SsimConfig, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn resconv_is_sum_of_two_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let (c, k) = (rng.random_range(1..5), rng.random_range(1..6));
        let x = random(&[2, c, 9, 7], &mut rng);
        let (w3, b3) = (random(&[k, c, 3, 3], &mut rng), random(&[k], &mut rng));
        let (w1, b1) = (random(&[k, c, 1, 1], &mut rng), random(&[k], &mut rng));
        let a = conv2d(&x, &w3, Some(&b3), Conv2dSpec::new(1, 1)).unwrap();
        let b = conv2d(&x, &w1, Some(&b1), Conv2dSpec::default()).unwrap();
        let sum = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();
        assert_eq!(resconv_forward(&x, &w3, &b3, Some((&w1, &b1))).unwrap(), relu(&sum));
        assert_eq!(resconv_forward(&x, &w3, &b3, None).unwrap(), relu(&a));
    }
}

#[test]
fn resconv_zero_and_identity_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 3, 5, 5], &mut rng);
    let z3 = Tensor::zeros(&[3, 3, 3, 3]);
    let z1 = Tensor::zeros(&[3, 3, 1, 1]);
    let zb = Tensor::zeros(&[3]);
    let out = resconv_forward(&x, &z3, &zb, Some((&z1, &zb))).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
    let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    assert_eq!(resconv_forward(&x, &z3, &zb, Some((&eye, &zb))).unwrap(), relu(&x));
}

fn small(variant: &str) -> ExtrapolatorConfig {
    ExtrapolatorConfig {
        channels: [4, 4, 8],
        bottleneck: 8,
        ..ExtrapolatorConfig::variant(variant).unwrap()
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, g: Geometry, bins: usize) -> (DepthFrame, EventVoxelGrid) {
    let prior = (0..g.pixels())
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.1..200.0) })
        .collect();
    let voxel = EventVoxelGrid {
        bins,
        geometry: g,
        values: (0..bins * g.pixels()).map(|_| rng.random_range(-50..50)).collect(),
    };
    (DepthFrame::new(g, prior, 0).unwrap(), voxel)
}

#[test]
fn every_variant_preserves_shape_and_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::new(16, 24);
    for variant in VARIANTS {
        let mut model = ExtrapolatorModel::new(g, small(variant), 4).unwrap();
        for p in model.params_mut().iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let (prior, voxel) = random_inputs(&mut rng, g, 5);
        let out = model.extrapolate(&prior, &voxel, 12_345).unwrap();
        assert_eq!(out.geometry, g);
        assert_eq!(out.timestamp, 12_345);
        assert!(out.values.iter().all(|v| v.is_finite() && *v >= 0.0), "{variant}");
    }
}

#[test]
fn geometry_mismatch_is_rejected() {
    let model = ExtrapolatorModel::new(Geometry::new(16, 16), small("full"), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (prior, voxel) = random_inputs(&mut rng, Geometry::new(8, 16), 5);
    assert!(model.extrapolate(&prior, &voxel, 1).is_err());
    let (prior, mut voxel) = random_inputs(&mut rng, Geometry::new(16, 16), 5);
    voxel.bins = 4;
    voxel.values.truncate(4 * 256);
    assert!(model.extrapolate(&prior, &voxel, 1).is_err());
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extrap.nlnn");
    let g = Geometry::new(16, 16);
    let mut model = ExtrapolatorModel::new(g, small("data_concat"), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params_mut().iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    model.save(&path).unwrap();
    let back = ExtrapolatorModel::load(&path).unwrap();
    let (prior, voxel) = random_inputs(&mut rng, g, 5);
    assert_eq!(
        model.extrapolate(&prior, &voxel, 9).unwrap(),
        back.extrapolate(&prior, &voxel, 9).unwrap()
    );
}

fn tensor(values: &[f64], h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(&[1, 1, h, w], values.to_vec()).unwrap()
}

#[test]
fn constant_pair_closed_form() {
    let (h, w) = (9, 9);
    for (a, b) in [(5.0, 3.0), (12.0, 12.5), (1.0, 40.0)] {
        let pred = tensor(&vec![a; h * w], h, w);
        let target = tensor(&vec![b; h * w], h, w);
        let cfg = SsimConfig { window: 7, range: 200.0 };
        let c2 = (a - b) * (a - b);

        // gradients and normals agree, so only the MSE survives once SSIM is off
        let no_ssim = LossWeights { ssim: 0.0, ..Default::default() };
        let l = total_loss(&pred, &target, &no_ssim, &cfg).unwrap();
        assert_eq!((l.grad, l.normal), (0.0, 0.0));
        assert!((l.total - c2).abs() < 1e-12);

        // with SSIM on, constant windows give (2ab + C1) / (a² + b² + C1)
        let c1 = (0.01 * 200.0f64).powi(2);
        let s = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let l = total_loss(&pred, &target, &LossWeights::default(), &cfg).unwrap();
        assert!((l.ssim - (1.0 - s) / 2.0).abs() < 1e-12);
        assert!((l.total - (c2 + (1.0 - s) / 2.0)).abs() < 1e-9);
    }
}

/// Every term written directly from its definition, all pixels valid.
fn reference_loss(p: &[f64], t: &[f64], h: usize, w: usize, weights: &LossWeights, cfg: &SsimConfig) -> f64 {
    let at = |v: &[f64], i: usize, j: usize| v[i * w + j];
    let n = (h * w) as f64;
    let mse = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let (mut gx, mut gy) = (0.0, 0.0);
    for i in 0..h {
        for j in 0..w - 1 {
            gx += ((at(p, i, j + 1) - at(p, i, j)) - (at(t, i, j + 1) - at(t, i, j))).abs();
        }
    }
    for i in 0..h - 1 {
        for j in 0..w {
            gy += ((at(p, i + 1, j) - at(p, i, j)) - (at(t, i + 1, j) - at(t, i, j))).abs();
        }
    }
    let grad = gx / (h * (w - 1)) as f64 + gy / ((h - 1) * w) as f64;
    let mut normal = 0.0;
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let np = [-(at(p, i, j + 1) - at(p, i, j)), -(at(p, i + 1, j) - at(p, i, j)), 1.0];
            let nt = [-(at(t, i, j + 1) - at(t, i, j)), -(at(t, i + 1, j) - at(t, i, j)), 1.0];
            let dot: f64 = np.iter().zip(&nt).map(|(a, b)| a * b).sum();
            let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            normal += 1.0 - dot / (norm(&np) * norm(&nt));
        }
    }
    normal /= ((h - 1) * (w - 1)) as f64;
    let (c1, c2) = ((0.01 * cfg.range).powi(2), (0.03 * cfg.range).powi(2));
    let k = cfg.window;
    let (mut ssim, mut count) = (0.0, 0);
    for i in 0..=h - k {
        for j in 0..=w - k {
            let cells: Vec<(f64, f64)> = (i..i + k)
                .flat_map(|r| (j..j + k).map(move |c| (r, c)))
                .map(|(r, c)| (at(p, r, c), at(t, r, c)))
                .collect();
            let m = cells.len() as f64;
            let mx = cells.iter().map(|c| c.0).sum::<f64>() / m;
            let my = cells.iter().map(|c| c.1).sum::<f64>() / m;
            let vx = cells.iter().map(|c| (c.0 - mx).powi(2)).sum::<f64>() / m;
            let vy = cells.iter().map(|c| (c.1 - my).powi(2)).sum::<f64>() / m;
            let cxy = cells.iter().map(|c| (c.0 - mx) * (c.1 - my)).sum::<f64>() / m;
            ssim += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    let ssim_term = (1.0 - ssim / count as f64) / 2.0;
    weights.depth * mse + weights.grad * grad + weights.normal * normal + weights.ssim * ssim_term
}

#[test]
fn total_loss_matches_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(7..13), rng.random_range(7..13));
        let t: Vec<f64> = (0..h * w).map(|_| rng.random_range(1.0..30.0)).collect();
        let p: Vec<f64> = t.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
        let cfg = SsimConfig { window: 7, range: 50.0 };
        let weights = LossWeights::default();
        let got = total_loss(&tensor(&p, h, w), &tensor(&t, h, w), &weights, &cfg).unwrap().total;
        let want = reference_loss(&p, &t, h, w, &weights, &cfg);
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn all_invalid_target_is_rejected() {
    let z = tensor(&[0.0; 81], 9, 9);
    assert!(total_loss(&z, &z, &LossWeights::default(), &SsimConfig::default()).is_err());
    let bad = LossWeights { grad: -1.0, ..Default::default() };
    let one = tensor(&[1.0; 81], 9, 9);
    assert!(total_loss(&one, &one, &bad, &SsimConfig::default()).is_err());
}

fn frame(values: Vec<f32>, t: Micros) -> DepthFrame {
    DepthFrame::new(Geometry::new(2, 3), values, t).unwrap()
}

#[test]
fn linear_ramp_examples() {
    // d(t) = 5 + 0.001 t with t in µs
    let d = |t: Micros| 5.0 + 0.001 * t as f32;
    let h: Vec<DepthFrame> = [0, 1000, 2000].iter().map(|&t| frame(vec![d(t); 6], t)).collect();
    let refs: Vec<&DepthFrame> = h.iter().collect();
    let t1 = 5000;
    let lin = baseline_linear(&refs, 3, t1).unwrap();
    assert!(lin.values.iter().all(|&v| (v - d(t1)).abs() < 1e-5));
    let rep = baseline_repeat(&h[2], t1);
    assert!(rep.values.iter().all(|&v| (d(t1) - v - 0.001 * 3000.0).abs() < 1e-5));
    assert_eq!(rep.values, h[2].values);
    assert_eq!(rep.timestamp, t1);
}

#[test]
fn geometric_sequence_example() {
    let h = [frame(vec![8.0; 6], 0), frame(vec![4.0; 6], 100)];
    let e = baseline_exponential(&[&h[0], &h[1]], 200).unwrap();
    assert!(e.values.iter().all(|&v| (v - 2.0).abs() < 1e-6));
}

proptest! {
    #[test]
    fn linear_exact_on_affine_depth(
        base in prop::collection::vec(2.0f32..100.0, 6),
        slope in prop::collection::vec(-1.0f32..1.0, 6),
        gap in 1_000u64..200_000,
        k in 2usize..6,
    ) {
        // slope in m/s, kept small enough that depth stays positive
        let at = |t: Micros| -> DepthFrame {
            let s = t as f32 * 1e-6;
            frame(base.iter().zip(&slope).map(|(b, m)| b + m * s).collect(), t)
        };
        let hist: Vec<DepthFrame> = (0..k as u64).map(|i| at(i * gap)).collect();
        let refs: Vec<&DepthFrame> = hist.iter().collect();
        let t1 = k as u64 * gap;
        let got = baseline_linear(&refs, k, t1).unwrap();
        for (g, w) in got.values.iter().zip(&at(t1).values) {
            prop_assert!((g - w).abs() <= 1e-5 * w.abs().max(1.0), "{} vs {}", g, w);
        }
    }

    #[test]
    fn total_loss_of_identical_pair_is_zero(seed in any::<u64>(), h in 7usize..12, w in 7usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.5..150.0)).collect();
        let l = total_loss(&tensor(&x, h, w), &tensor(&x, h, w), &LossWeights::default(), &SsimConfig { window: 7, range: 200.0 }).unwrap();
        prop_assert!(l.total.abs() < 1e-12, "{:?}", l);
    }

    #[test]
    fn repeat_is_identity_on_values(values in prop::collection::vec(0.0f32..200.0, 6), t in any::<u32>()) {
        let f = frame(values.clone(), 0);
        prop_assert_eq!(baseline_repeat(&f, t as Micros + 1).values, values);
    }
}

/// Prior and target identical, no events.
fn identity_samples(n: usize, g: Geometry, seed: u64) -> Vec<ExtrapSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (a, b, c) = (rng.random_range(2.0..30.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let values = (0..g.pixels())
                .map(|p| {
                    let (y, x) = ((p / g.width) as f32, (p % g.width) as f32);
                    (a + b * x + c * y).max(0.5)
                })
                .collect();
            let prior = DepthFrame::new(g, values, 0).unwrap();
            ExtrapSample {
                sequence: i,
                fps: 10.0,
                t0: 0,
                t1: 100_000,
                target: prior.clone().with_timestamp(100_000),
                history: Vec::new(),
                voxel: EventVoxelGrid {
                    bins: 5,
                    geometry: g,
                    values: vec![0; 5 * g.pixels()],
                },
                prior,
            }
        })
        .collect()
}

#[test]
fn degenerate_task_converges_to_identity() {
    let g = Geometry::new(16, 16);
    let train = identity_samples(48, g, 7);
    let val = identity_samples(8, g, 8);
    let model_cfg = ExtrapolatorConfig {
        residual_prior: false,
        max_range_m: 40.0,
        ..small("full")
    };
    let cfg = ExtrapTrainConfig {
        epochs: 120,
        batch_size: 4,
        lr: 5e-3,
        model: model_cfg,
        ..Default::default()
    };
    let (model, _) = train_extrapolator(&train, &val, &cfg).unwrap();
    let rmse = score_model(&model, &val, 8).unwrap().rmse;
    assert!(rmse < 0.05 * 40.0, "rmse {rmse}");

    // the default head starts at the prior and must stay there
    let cfg = ExtrapTrainConfig {
        epochs: 5,
        batch_size: 8,
        lr: 1e-3,
        model: small("full"),
        ..Default::default()
    };
    let (model, _) = train_extrapolator(&train, &val, &cfg).unwrap();
    let rmse = score_model(&model, &val, 8).unwrap().rmse;
    assert!(rmse < 0.05 * 200.0 && rmse < 0.5, "rmse {rmse}");
}

fn desk(seeds: std::ops::Range<u64>) -> Vec<Sequence> {
    let base = SceneConfig {
        height: 32,
        width: 32,
        focal_px: 24.0,
        duration_s: 2.0,
        ..Default::default()
    };
    seeds
        .map(|s| {
            let sc = random_scene(&base, &ScenarioConfig::default(), s).unwrap();
            generate_sequence(&sc.config, &sc.primitives, &sc.ego).unwrap()
        })
        .collect()
}

#[test]
fn sampling_protocol() {
    let seqs = desk(40..41);
    let cfg = SamplingConfig {
        mode: GapMode::Fixed { fps: 20.0 },
        stride_frames: 7,
        ..Default::default()
    };
    let samples = extrap_samples(&seqs[0], 0, &cfg).unwrap();
    assert!(!samples.is_empty());
    for s in &samples {
        assert_eq!(s.t1 - s.t0, 50_000);
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.history[1].timestamp, s.t0 - 50_000);
        let slice = seqs[0].events.slice(s.t0, s.t1).unwrap();
        assert_eq!(s.voxel.collapse().total(), slice.events.iter().map(|e| e.p.value() as i64).sum::<i64>());
        assert_eq!(seqs[0].depth_at(s.t1), Some(&s.target));
    }
    let again = extrap_samples(&seqs[0], 0, &cfg).unwrap();
    assert_eq!(samples, again);
    let bad = SamplingConfig {
        mode: GapMode::Adaptive { fps_set: vec![] },
        ..Default::default()
    };
    assert!(extrap_samples(&seqs[0], 0, &bad).is_err());
    let uneven = SamplingConfig {
        mode: GapMode::Fixed { fps: 3.0 },
        ..Default::default()
    };
    assert!(extrap_samples(&seqs[0], 0, &uneven).is_err());
}

#[test]
fn desk_training_lowers_loss_and_is_deterministic() {
    let seqs = desk(50..53);
    let samp = SamplingConfig {
        stride_frames: 10,
        ..Default::default()
    };
    let mut train = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        train.extend(extrap_samples(s, i, &samp).unwrap());
    }
    let cfg = ExtrapTrainConfig {
        epochs: 6,
        batch_size: 4,
        lr: 1e-4,
        seed: 3,
        model: small("full"),
        ..Default::default()
    };
    let (a, log) = train_extrapolator(&train, &[], &cfg).unwrap();
    let first = log.epochs.first().unwrap().train_loss;
    let last = log.final_loss().unwrap();
    assert!(last < first, "{first} -> {last}");
    let (b, log_b) = train_extrapolator(&train, &[], &cfg).unwrap();
    assert_eq!(log, log_b);
    let bytes = |m: &ExtrapolatorModel| {
        let mut v = Vec::new();
        eventdepth_nn::checkpoint::write_params(m.params(), &mut v).unwrap();
        v
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert!(score_baseline(Baseline::Repeat, &train).unwrap().rmse.is_finite());
    assert!(train_extrapolator(&[], &[], &cfg).is_err());
}
