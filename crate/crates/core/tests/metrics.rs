use eventdepth::depth_extrap::DepthFrame;
use eventdepth::event_core::Geometry;
use eventdepth::metrics::{aggregate, evaluate, to_csv, DepthMetrics, MetricsRow, CSV_HEADER};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel reference, written out term by term.
fn reference(pred: &[f32], target: &[f32]) -> [f64; 7] {
    let mut rows = Vec::new();
    for (&p, &t) in pred.iter().zip(target) {
        if t > 0.0 {
            rows.push((p as f64, t as f64));
        }
    }
    let n = rows.len() as f64;
    let rmse = (rows.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
    let log_rmse = (rows.iter().map(|(p, t)| (p.max(1e-3).ln() - t.ln()).powi(2)).sum::<f64>() / n).sqrt();
    let abs_rel = rows.iter().map(|(p, t)| (p - t).abs() / t).sum::<f64>() / n;
    let sq_rel = rows.iter().map(|(p, t)| (p - t).powi(2) / t).sum::<f64>() / n;
    let delta = |k: i32| {
        rows.iter()
            .filter(|(p, t)| {
                let p = p.max(1e-3);
                f64::max(p / t, t / p) < 1.25f64.powi(k)
            })
            .count() as f64
            / n
    };
    [rmse, log_rmse, abs_rel, sq_rel, delta(1), delta(2), delta(3)]
}

fn as_array(m: &DepthMetrics) -> [f64; 7] {
    [m.rmse, m.log_rmse, m.abs_rel, m.sq_rel, m.d1, m.d2, m.d3]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-12)
}

fn random_pair(rng: &mut ChaCha8Rng, g: Geometry) -> (DepthFrame, DepthFrame) {
    let target: Vec<f32> = (0..g.pixels())
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.5..80.0) })
        .collect();
    let mut pred: Vec<f32> = target.iter().map(|&t| (t.max(1.0) * rng.random_range(0.5..1.6)).max(0.0)).collect();
    pred[0] = 0.0;
    (
        DepthFrame::new(g, pred, 0).unwrap(),
        DepthFrame::new(g, target, 0).unwrap(),
    )
}

#[test]
fn matches_reference_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Geometry::new(8, 8);
    for _ in 0..500 {
        let (p, t) = random_pair(&mut rng, g);
        if t.valid_count() == 0 {
            continue;
        }
        let got = as_array(&evaluate(&p, &t).unwrap());
        let want = reference(&p.values, &t.values);
        for (a, b) in got.iter().zip(want) {
            assert!(close(*a, b, 1e-6), "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn four_versus_five_boundary() {
    let g = Geometry::new(1, 1);
    let m = evaluate(&DepthFrame::new(g, vec![5.0], 0).unwrap(), &DepthFrame::new(g, vec![4.0], 0).unwrap()).unwrap();
    assert_eq!((m.d1, m.d2, m.d3), (0.0, 1.0, 1.0));
    assert_eq!(m.abs_rel, 0.25);
    assert_eq!(m.rmse, 1.0);
}

#[test]
fn aggregate_equals_pooled_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = Geometry::new(8, 8);
    let pairs: Vec<_> = (0..6).map(|_| random_pair(&mut rng, g)).collect();
    let per: Vec<DepthMetrics> = pairs.iter().map(|(p, t)| evaluate(p, t).unwrap()).collect();
    let agg = aggregate(&per).unwrap();
    let pooled_p: Vec<f32> = pairs.iter().flat_map(|(p, _)| p.values.clone()).collect();
    let pooled_t: Vec<f32> = pairs.iter().flat_map(|(_, t)| t.values.clone()).collect();
    let want = reference(&pooled_p, &pooled_t);
    for (a, b) in as_array(&agg).iter().zip(want) {
        assert!(close(*a, b, 1e-9), "{a} vs {b}");
    }
    assert_eq!(agg.valid_px, per.iter().map(|m| m.valid_px).sum::<usize>());
}

#[test]
fn aggregate_of_one_and_of_twins() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (p, t) = random_pair(&mut rng, Geometry::new(8, 8));
    let m = evaluate(&p, &t).unwrap();
    let one = aggregate(&[m]).unwrap();
    let two = aggregate(&[m, m]).unwrap();
    for (a, b) in as_array(&one).iter().zip(as_array(&m)) {
        assert!(close(*a, b, 1e-12));
    }
    for (a, b) in as_array(&two).iter().zip(as_array(&m)) {
        assert!(close(*a, b, 1e-12));
    }
    assert!(aggregate(&[]).is_err());
}

#[test]
fn csv_rows() {
    let g = Geometry::new(2, 2);
    let f = DepthFrame::filled(g, 3.0, 0);
    let rows = vec![MetricsRow {
        method: "repeat".into(),
        fps: "adaptive".into(),
        metrics: evaluate(&f, &f).unwrap(),
    }];
    let csv = to_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(
        lines.next(),
        Some("repeat,adaptive,0.000000,0.000000,0.000000,0.000000,1.000000,1.000000,1.000000,4")
    );
}

fn frame_strategy() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f32..150.0, n),
            prop::collection::vec(0.01f32..150.0, n),
        )
    })
}

proptest! {
    #[test]
    fn identity_is_perfect(values in prop::collection::vec(0.01f32..200.0, 1..64)) {
        let g = Geometry::new(1, values.len());
        let f = DepthFrame::new(g, values, 0).unwrap();
        let m = evaluate(&f, &f).unwrap();
        prop_assert_eq!([m.rmse, m.log_rmse, m.abs_rel, m.sq_rel], [0.0; 4]);
        prop_assert_eq!(m.deltas(), [1.0; 3]);
    }

    #[test]
    fn deltas_monotone_and_symmetric((p, t) in frame_strategy()) {
        let g = Geometry::new(1, p.len());
        let pf = DepthFrame::new(g, p, 0).unwrap();
        let tf = DepthFrame::new(g, t, 0).unwrap();
        let a = evaluate(&pf, &tf).unwrap();
        let b = evaluate(&tf, &pf).unwrap();
        prop_assert!(a.d1 <= a.d2 && a.d2 <= a.d3);
        prop_assert_eq!(a.deltas(), b.deltas());
        prop_assert!(as_array(&a).iter().all(|v| v.is_finite()));
    }
}
