use std::collections::HashMap;

use eventdepth::event_core::{
    build_event_frame, build_voxel_grid, read_events, write_events, Event, EventStream, Geometry, Micros, Polarity,
    EVENT_RECORD_BYTES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stream(rng: &mut ChaCha8Rng, geometry: Geometry, n: usize, span: Micros) -> EventStream {
    let mut ts: Vec<Micros> = (0..n).map(|_| rng.random_range(0..span)).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(
                t,
                rng.random_range(0..geometry.width) as u16,
                rng.random_range(0..geometry.height) as u16,
                p,
            )
        })
        .collect();
    EventStream::new(geometry, events).unwrap()
}

#[test]
fn slice_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_stream(&mut rng, Geometry::new(64, 64), 1_000_000, 10_000_000);
    for _ in 0..5 {
        let a = rng.random_range(0..9_000_000);
        let b = a + 1_000_000;
        let fast = s.slice(a, b).unwrap();
        let scan: Vec<Event> = s.events().iter().filter(|e| a <= e.t && e.t < b).copied().collect();
        assert_eq!(fast.events, scan.as_slice());
    }
}

#[test]
fn frame_matches_hash_map_accumulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Geometry::new(32, 32);
    let s = random_stream(&mut rng, g, 10_000, 50_000);
    let slice = s.slice(0, 50_000).unwrap();
    let frame = build_event_frame(&slice, g).unwrap();
    let mut acc: HashMap<(usize, usize), i32> = HashMap::new();
    for e in s.events() {
        *acc.entry((e.x as usize, e.y as usize)).or_default() += e.p.value();
    }
    for y in 0..g.height {
        for x in 0..g.width {
            assert_eq!(frame.at(x, y), acc.get(&(x, y)).copied().unwrap_or(0), "pixel ({x}, {y})");
        }
    }
}

#[test]
fn voxel_conserves_frame_on_random_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::new(20, 28);
    let s = random_stream(&mut rng, g, 20_000, 100_000);
    let slice = s.slice(12_345, 87_000).unwrap();
    let frame = build_event_frame(&slice, g).unwrap();
    let voxel = build_voxel_grid(&slice, 5, g).unwrap();
    assert_eq!(voxel.collapse(), frame);
}

#[test]
fn bin_assignment_matches_floor_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Geometry::new(8, 8);
    let s = random_stream(&mut rng, g, 2_000, 1_000);
    let (t0, t1, bins) = (100, 937, 7);
    let slice = s.slice(t0, t1).unwrap();
    let voxel = build_voxel_grid(&slice, bins, g).unwrap();
    let mut want = vec![0i32; bins * g.pixels()];
    for e in slice.events {
        let b = ((bins as u128 * (e.t - t0) as u128) / (t1 - t0) as u128) as usize;
        want[b * g.pixels() + e.y as usize * g.width + e.x as usize] += e.p.value();
    }
    assert_eq!(voxel.values, want);
}

#[test]
fn windows_partition_the_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_stream(&mut rng, Geometry::new(8, 8), 5_000, 1_000_000);
    let windows: Vec<_> = s.windows(20_000).unwrap().collect();
    let total: usize = windows.iter().map(|w| w.len()).sum();
    assert_eq!(total, s.len());
    for pair in windows.windows(2) {
        assert_eq!(pair[0].t_end, pair[1].t_start);
    }
    let flat: Vec<Event> = windows.iter().flat_map(|w| w.events.iter().copied()).collect();
    assert_eq!(flat, s.events());
}

#[test]
fn codec_round_trips_large_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_stream(&mut rng, Geometry::new(480, 640), 100_000, 5_000_000);
    let mut bytes = Vec::new();
    write_events(&s, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 16 + 100_000 * EVENT_RECORD_BYTES);
    let back = read_events(bytes.as_slice()).unwrap();
    assert_eq!(back, s);
    let mut again = Vec::new();
    write_events(&back, &mut again).unwrap();
    assert_eq!(again, bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conservation_for_any_bins(seed in any::<u64>(), n in 0usize..3000, bins in 1usize..12, h in 1usize..40, w in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::new(h, w);
        let s = random_stream(&mut rng, g, n, 10_000);
        let a = rng.random_range(0..5_000);
        let b = rng.random_range(a + 1..=10_000);
        let slice = s.slice(a, b).unwrap();
        let frame = build_event_frame(&slice, g).unwrap();
        let voxel = build_voxel_grid(&slice, bins, g).unwrap();
        prop_assert_eq!(voxel.collapse(), frame.clone());
        prop_assert_eq!(frame.total(), slice.events.iter().map(|e| e.p.value() as i64).sum::<i64>());
    }

    #[test]
    fn frame_bounded_by_event_count(seed in any::<u64>(), n in 0usize..2000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::new(6, 6);
        let s = random_stream(&mut rng, g, n, 1_000);
        let frame = build_event_frame(&s.slice(0, 1_000).unwrap(), g).unwrap();
        let mut counts = vec![0i32; g.pixels()];
        for e in s.events() {
            counts[e.y as usize * g.width + e.x as usize] += 1;
        }
        for (v, c) in frame.values.iter().zip(&counts) {
            prop_assert!(v.abs() <= *c);
        }
    }

    #[test]
    fn slicing_a_slice_by_its_bounds_is_idempotent(seed in any::<u64>(), n in 0usize..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stream(&mut rng, Geometry::new(4, 4), n, 1_000);
        let a = rng.random_range(0..999);
        let b = rng.random_range(a + 1..=1_000);
        let once = s.slice(a, b).unwrap();
        let twice = once.slice(a, b).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn window_partition_for_any_delta(seed in any::<u64>(), n in 0usize..1000, delta in 1u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stream(&mut rng, Geometry::new(4, 4), n, 20_000);
        let mut seen = 0;
        for w in s.windows(delta).unwrap() {
            prop_assert_eq!(w.t_end - w.t_start, delta);
            prop_assert!(w.events.iter().all(|e| w.t_start <= e.t && e.t < w.t_end));
            seen += w.len();
        }
        prop_assert_eq!(seen, s.len());
    }

    #[test]
    fn codec_identity(seed in any::<u64>(), n in 0usize..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stream(&mut rng, Geometry::new(9, 13), n, 1 << 40);
        let mut bytes = Vec::new();
        write_events(&s, &mut bytes).unwrap();
        prop_assert_eq!(read_events(bytes.as_slice()).unwrap(), s);
    }
}
