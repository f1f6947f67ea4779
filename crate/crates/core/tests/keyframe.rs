use eventdepth::event_core::{EventFrame, Geometry, Micros};
use eventdepth::keyframe::{
    evaluate_predictions, label_keyframe, train_detector, Confusion, DetectorConfig, DetectorModel, DetectorSample,
    DetectorTrainConfig, KeyframeRuleConfig, Rule,
};
use eventdepth::scene_sim::{PrimitiveState, SceneState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn state(t: Micros, speed: f64, objects: &[(f64, bool)]) -> SceneState {
    SceneState {
        t,
        ego_speed: speed,
        primitives: objects
            .iter()
            .enumerate()
            .map(|(index, &(distance_m, visible))| PrimitiveState {
                index,
                is_object: true,
                distance_m,
                visible,
            })
            .collect(),
    }
}

#[test]
fn truth_table_is_the_or_of_three_rules() {
    let rules = KeyframeRuleConfig::default();
    let mut cases = 0;
    for speed in [9.0, 10.0, 11.0] {
        for dist in [7.0, 8.0, 9.0] {
            for new in [true, false] {
                // object 0 at `dist` stays visible; object 1 far away appears when `new`
                let prev = state(0, speed, &[(dist, true), (60.0, false)]);
                let now = state(20_000, speed, &[(dist, true), (60.0, new)]);
                let l = label_keyframe(&prev, &now, &rules).unwrap();
                let want = speed > 10.0 || dist < 8.0 || new;
                assert_eq!(l.label, want, "speed {speed} dist {dist} new {new}");
                assert_eq!(l.rules.contains(&Rule::Speed), speed > 10.0);
                assert_eq!(l.rules.contains(&Rule::Proximity), dist < 8.0);
                assert_eq!(l.rules.contains(&Rule::NewObject), new);
                assert_eq!(l.label, !l.rules.is_empty());
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 18);
}

#[test]
fn paper_examples() {
    let rules = KeyframeRuleConfig::default();
    // 12 m/s, nearest object at 50 m: speed rule alone
    let l = label_keyframe(&state(0, 12.0, &[(50.0, true)]), &state(1, 12.0, &[(50.0, true)]), &rules).unwrap();
    assert_eq!(l.rules, vec![Rule::Speed]);
    // object enters the view
    let l = label_keyframe(&state(0, 0.0, &[(30.0, false)]), &state(1, 0.0, &[(30.0, true)]), &rules).unwrap();
    assert_eq!(l.rules, vec![Rule::NewObject]);
    let l = label_keyframe(&state(0, 0.0, &[]), &state(1, 0.0, &[]), &rules).unwrap();
    assert!(!l.label);
}

#[test]
fn disabled_new_object_rule_and_bad_thresholds() {
    let rules = KeyframeRuleConfig {
        new_object: false,
        ..Default::default()
    };
    let l = label_keyframe(&state(0, 0.0, &[(30.0, false)]), &state(1, 0.0, &[(30.0, true)]), &rules).unwrap();
    assert!(!l.label);
    let bad = KeyframeRuleConfig {
        speed_threshold: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn rules_are_monotone_in_thresholds(
        speed in 0.0f64..30.0,
        objs in prop::collection::vec((0.5f64..40.0, any::<bool>(), any::<bool>()), 0..5),
        s_lo in 0.5f64..20.0, s_drop in 0.0f64..10.0,
        d_lo in 0.5f64..20.0, d_raise in 0.0f64..10.0,
    ) {
        let prev = state(0, speed, &objs.iter().map(|&(d, v, _)| (d, v)).collect::<Vec<_>>());
        let now = state(10, speed, &objs.iter().map(|&(d, _, v)| (d, v)).collect::<Vec<_>>());
        let strict = KeyframeRuleConfig { speed_threshold: s_lo + s_drop, distance_threshold: d_lo, new_object: true };
        let loose = KeyframeRuleConfig { speed_threshold: s_lo, distance_threshold: d_lo + d_raise, new_object: true };
        let a = label_keyframe(&prev, &now, &strict).unwrap();
        let b = label_keyframe(&prev, &now, &loose).unwrap();
        prop_assert!(!a.label || b.label);
        prop_assert!(a.rules.iter().all(|r| b.rules.contains(r)));
    }
}

fn random_frame(rng: &mut ChaCha8Rng, g: Geometry, scale: i32) -> EventFrame {
    EventFrame {
        geometry: g,
        values: (0..g.pixels()).map(|_| rng.random_range(-scale..=scale)).collect(),
    }
}

#[test]
fn zero_head_outputs_one_half() {
    let g = Geometry::new(16, 16);
    let mut m = DetectorModel::new(g, DetectorConfig::default(), 1).unwrap();
    m.zero_head();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        assert_eq!(m.predict(&random_frame(&mut rng, g, 30)).unwrap(), 0.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_strictly_inside_unit_interval(seed in any::<u64>(), scale in 0i32..1000) {
        let g = Geometry::new(8, 16);
        let m = DetectorModel::new(g, DetectorConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = m.predict(&random_frame(&mut rng, g, scale)).unwrap();
        prop_assert!(p > 0.0 && p < 1.0, "{}", p);
    }

    #[test]
    fn f1_is_harmonic_mean_of_own_counts(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (p, l): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let c = Confusion::from_pairs(&p, &l).unwrap();
        let (pr, rc) = (c.precision(), c.recall());
        let want = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
        prop_assert!((c.f1() - want).abs() < 1e-15);
        prop_assert_eq!(c.total(), p.len());
    }
}

#[test]
fn geometry_mismatch_is_rejected() {
    let m = DetectorModel::new(Geometry::new(16, 16), DetectorConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(m.predict(&random_frame(&mut rng, Geometry::new(16, 8), 1)).is_err());
}

fn toy(n: usize, g: Geometry) -> Vec<DetectorSample> {
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let v = if label { 10 } else { 0 };
            DetectorSample::new(EventFrame { geometry: g, values: vec![v; g.pixels()] }, label)
        })
        .collect()
}

#[test]
fn separable_toy_trains_to_perfect_f1() {
    let g = Geometry::new(16, 16);
    let data = toy(64, g);
    let cfg = DetectorTrainConfig {
        epochs: 5,
        batch_size: 8,
        lr: 1e-3,
        ..Default::default()
    };
    let (_, log) = train_detector(&data, &data, &cfg).unwrap();
    assert_eq!(log.epochs.last().unwrap().val_metric, Some(1.0));
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let g = Geometry::new(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<DetectorSample> = (0..40)
        .map(|i| DetectorSample::new(random_frame(&mut rng, g, 3), i % 3 == 0))
        .collect();
    let cfg = DetectorTrainConfig {
        epochs: 3,
        batch_size: 16,
        seed: 9,
        ..Default::default()
    };
    let (a, la) = train_detector(&data, &[], &cfg).unwrap();
    let (b, lb) = train_detector(&data, &[], &cfg).unwrap();
    assert_eq!(la, lb);
    for (p, q) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
    let other = DetectorTrainConfig { seed: 10, ..cfg };
    let (c, _) = train_detector(&data, &[], &other).unwrap();
    assert!(a.params().iter().zip(c.params().iter()).any(|(p, q)| p.value != q.value));
}

#[test]
fn single_class_and_empty_sets_are_rejected() {
    let g = Geometry::new(8, 8);
    let all_pos: Vec<DetectorSample> = toy(10, g).into_iter().filter(|s| s.label).collect();
    assert!(train_detector(&all_pos, &[], &DetectorTrainConfig::default()).is_err());
    assert!(train_detector(&[], &[], &DetectorTrainConfig::default()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.nlnn");
    let g = Geometry::new(16, 16);
    let m = DetectorModel::new(g, DetectorConfig::default(), 4).unwrap();
    m.save(&path).unwrap();
    let back = DetectorModel::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random_frame(&mut rng, g, 5);
    assert_eq!(m.predict(&f).unwrap(), back.predict(&f).unwrap());
}

#[test]
fn confusion_matches_enumeration_for_random_model() {
    let g = Geometry::new(16, 16);
    let m = DetectorModel::new(g, DetectorConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<DetectorSample> = (0..200)
        .map(|_| DetectorSample::new(random_frame(&mut rng, g, 12), rng.random_bool(0.4)))
        .collect();
    let probs: Vec<f32> = samples.iter().map(|s| m.predict(&s.frame).unwrap()).collect();
    let eval = evaluate_predictions(&probs, &samples, 100_000).unwrap();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, s) in probs.iter().zip(&samples) {
        match (*p >= 0.5, s.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    assert_eq!(eval.confusion, Confusion { tp, fp, tn, fn_ });
}

#[test]
fn false_positive_gaps() {
    let g = Geometry::new(8, 8);
    let blank = EventFrame { geometry: g, values: vec![0; 64] };
    let at = |t: Micros, label: bool, rules: Vec<Rule>| DetectorSample {
        sequence: 0,
        window: (t / 20_000) as usize,
        t,
        frame: blank.clone(),
        label,
        rules,
    };
    let samples = vec![
        at(20_000, false, vec![]),
        at(40_000, true, vec![Rule::Speed]),
        at(80_000, false, vec![]),
        at(160_000, false, vec![]),
    ];
    let probs = [0.9, 0.9, 0.9, 0.9];
    let e = evaluate_predictions(&probs, &samples, 100_000).unwrap();
    // 20 ms: true positive at 40 ms. 80 ms: LiDAR at 100 ms. 160 ms: LiDAR at 200 ms.
    assert_eq!(e.fp_gaps_us, vec![20_000, 20_000, 40_000]);
    assert_eq!((e.precision, e.recall), (0.25, 1.0));
    let speed = e.per_rule.iter().find(|r| r.rule == Rule::Speed).unwrap();
    assert_eq!((speed.support, speed.recall), (1, 1.0));
    let prox = e.per_rule.iter().find(|r| r.rule == Rule::Proximity).unwrap();
    assert_eq!(prox.support, 0);
}
