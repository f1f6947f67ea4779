//! Asynchronous event streams and their dense representations.
//!
//! Time is integer microseconds throughout. Slices are half-open
//! `[t_start, t_end)`, so consecutive windows partition a stream exactly.

mod codec;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use codec::{read_events, write_events, EVENT_MAGIC, EVENT_RECORD_BYTES};

/// Microsecond timestamp.
pub type Micros = u64;

/// Sensor raster size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }
}

/// Sign of a brightness change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn value(self) -> i32 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        self.value() as i8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: Micros,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: Micros, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Time-ordered events of one sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates ordering and coordinates.
    pub fn new(geometry: Geometry, events: Vec<Event>) -> Result<Self> {
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Data(format!(
                "events not time-sorted at index {}: {} after {}",
                i + 1,
                events[i + 1].t,
                events[i].t
            )));
        }
        if let Some(e) = events
            .iter()
            .find(|e| !geometry.contains(e.x as usize, e.y as usize))
        {
            return Err(Error::Geometry(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, geometry.height, geometry.width
            )));
        }
        Ok(Self { geometry, events })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_start <= t < t_end`, located by binary search.
    pub fn slice(&self, t_start: Micros, t_end: Micros) -> Result<EventSlice<'_>> {
        slice_events(&self.events, t_start, t_end)
    }

    /// Consecutive `delta`-wide windows starting at the first event and
    /// covering the last one.
    pub fn windows(&self, delta: Micros) -> Result<WindowIter<'_>> {
        let (start, end) = match (self.events.first(), self.events.last()) {
            (Some(f), Some(l)) => (f.t, l.t + 1),
            _ => (0, 0),
        };
        self.windows_between(start, end, delta)
    }

    /// Windows `[start + k delta, start + (k+1) delta)` until `end` is covered.
    pub fn windows_between(&self, start: Micros, end: Micros, delta: Micros) -> Result<WindowIter<'_>> {
        if delta == 0 {
            return Err(Error::Range("window width must be positive".into()));
        }
        Ok(WindowIter {
            events: &self.events,
            next_start: start,
            end,
            delta,
        })
    }
}

/// Contiguous view of a stream restricted to `[t_start, t_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventSlice<'a> {
    pub t_start: Micros,
    pub t_end: Micros,
    pub events: &'a [Event],
}

impl<'a> EventSlice<'a> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> Micros {
        self.t_end - self.t_start
    }

    pub fn slice(&self, t_start: Micros, t_end: Micros) -> Result<EventSlice<'a>> {
        slice_events(self.events, t_start, t_end)
    }
}

pub fn slice_events(events: &[Event], t_start: Micros, t_end: Micros) -> Result<EventSlice<'_>> {
    if t_end <= t_start {
        return Err(Error::Range(format!(
            "slice end {t_end} must exceed start {t_start}"
        )));
    }
    let lo = events.partition_point(|e| e.t < t_start);
    let hi = lo + events[lo..].partition_point(|e| e.t < t_end);
    Ok(EventSlice {
        t_start,
        t_end,
        events: &events[lo..hi],
    })
}

pub struct WindowIter<'a> {
    events: &'a [Event],
    next_start: Micros,
    end: Micros,
    delta: Micros,
}

impl<'a> Iterator for WindowIter<'a> {
    type Item = EventSlice<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_start >= self.end {
            return None;
        }
        let start = self.next_start;
        self.next_start += self.delta;
        Some(slice_events(self.events, start, start + self.delta).expect("delta > 0"))
    }
}

fn checked_deposit(values: &mut [i32], idx: usize, p: i32, geometry: Geometry) -> Result<()> {
    values[idx] = values[idx].checked_add(p).ok_or(Error::Overflow {
        x: idx % geometry.width,
        y: (idx / geometry.width) % geometry.height,
    })?;
    Ok(())
}

fn pixel_index(e: &Event, geometry: Geometry) -> Result<usize> {
    let (x, y) = (e.x as usize, e.y as usize);
    if !geometry.contains(x, y) {
        return Err(Error::Geometry(format!(
            "event at ({x}, {y}) outside {}x{} raster",
            geometry.height, geometry.width
        )));
    }
    Ok(y * geometry.width + x)
}

/// Per-pixel sum of polarities over a slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFrame {
    pub geometry: Geometry,
    pub values: Vec<i32>,
}

impl EventFrame {
    pub fn at(&self, x: usize, y: usize) -> i32 {
        self.values[y * self.geometry.width + x]
    }

    pub fn total(&self) -> i64 {
        self.values.iter().map(|&v| v as i64).sum()
    }

    /// Number of pixels with a non-zero net polarity.
    pub fn active_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

pub fn build_event_frame(slice: &EventSlice<'_>, geometry: Geometry) -> Result<EventFrame> {
    let mut values = vec![0i32; geometry.pixels()];
    for e in slice.events {
        let idx = pixel_index(e, geometry)?;
        checked_deposit(&mut values, idx, e.p.value(), geometry)?;
    }
    Ok(EventFrame { geometry, values })
}

/// `bins` temporal planes of polarity sums, stored bin-major (B x H x W).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventVoxelGrid {
    pub bins: usize,
    pub geometry: Geometry,
    pub values: Vec<i32>,
}

impl EventVoxelGrid {
    pub fn at(&self, bin: usize, x: usize, y: usize) -> i32 {
        self.values[(bin * self.geometry.height + y) * self.geometry.width + x]
    }

    /// Sums the bins back into a single frame.
    pub fn collapse(&self) -> EventFrame {
        let n = self.geometry.pixels();
        let mut values = vec![0i32; n];
        for b in 0..self.bins {
            for (v, &s) in values.iter_mut().zip(&self.values[b * n..(b + 1) * n]) {
                *v += s;
            }
        }
        EventFrame {
            geometry: self.geometry,
            values,
        }
    }
}

/// Temporal bin of an event: `floor(B (t - t_start) / (t_end - t_start))`,
/// clamped to `B - 1`.
pub fn bin_index(t: Micros, t_start: Micros, t_end: Micros, bins: usize) -> usize {
    let span = (t_end - t_start) as u128;
    let offset = t.saturating_sub(t_start) as u128;
    let b = (bins as u128 * offset / span) as usize;
    b.min(bins - 1)
}

pub fn build_voxel_grid(slice: &EventSlice<'_>, bins: usize, geometry: Geometry) -> Result<EventVoxelGrid> {
    if bins == 0 {
        return Err(Error::Range("voxel grid needs at least one bin".into()));
    }
    if slice.t_end <= slice.t_start {
        return Err(Error::Range("degenerate slice interval".into()));
    }
    let n = geometry.pixels();
    let mut values = vec![0i32; bins * n];
    for e in slice.events {
        let idx = pixel_index(e, geometry)?;
        let b = bin_index(e.t, slice.t_start, slice.t_end, bins);
        checked_deposit(&mut values, b * n + idx, e.p.value(), geometry)?;
    }
    Ok(EventVoxelGrid {
        bins,
        geometry,
        values,
    })
}

/// Straightforward hash-map accumulation, kept for cross-checking.
pub fn accumulate_by_pixel(events: &[Event]) -> HashMap<(u16, u16), i32> {
    let mut map = HashMap::new();
    for e in events {
        *map.entry((e.x, e.y)).or_insert(0) += e.p.value();
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: Micros, x: u16, y: u16, p: i8) -> Event {
        Event::new(t, x, y, Polarity::from_i8(p).unwrap())
    }

    #[test]
    fn empty_stream_slices_empty() {
        let s = EventStream::empty(Geometry::new(4, 4));
        assert!(s.slice(0, 100).unwrap().is_empty());
    }

    #[test]
    fn half_open_slice() {
        let s = EventStream::new(
            Geometry::new(4, 4),
            vec![ev(10, 0, 0, 1), ev(20, 1, 0, 1), ev(30, 2, 0, -1)],
        )
        .unwrap();
        let sl = s.slice(10, 30).unwrap();
        let ts: Vec<_> = sl.events.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![10, 20]);
    }

    #[test]
    fn invalid_interval_rejected() {
        let s = EventStream::empty(Geometry::new(4, 4));
        assert!(matches!(s.slice(5, 5), Err(Error::Range(_))));
        assert!(matches!(s.slice(6, 5), Err(Error::Range(_))));
    }

    #[test]
    fn unsorted_stream_rejected() {
        let r = EventStream::new(Geometry::new(4, 4), vec![ev(10, 0, 0, 1), ev(5, 0, 0, 1)]);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn cancellation_in_frame() {
        let events = [ev(1, 3, 4, 1), ev(2, 3, 4, -1)];
        let sl = slice_events(&events, 0, 10).unwrap();
        let f = build_event_frame(&sl, Geometry::new(8, 8)).unwrap();
        assert!(f.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn empty_slice_frame_is_zero() {
        let sl = slice_events(&[], 0, 10).unwrap();
        let f = build_event_frame(&sl, Geometry::new(3, 5)).unwrap();
        assert_eq!(f.values, vec![0; 15]);
    }

    #[test]
    fn out_of_bounds_is_geometry_error() {
        let events = [ev(1, 8, 0, 1)];
        let sl = slice_events(&events, 0, 10).unwrap();
        assert!(matches!(
            build_event_frame(&sl, Geometry::new(8, 8)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn midpoint_lands_in_bin_two() {
        assert_eq!(bin_index(1_000 + 10_000, 1_000, 21_000, 5), 2);
        assert_eq!(bin_index(21_000, 1_000, 21_000, 5), 4);
        assert_eq!(bin_index(1_000, 1_000, 21_000, 5), 0);
    }

    #[test]
    fn zero_bins_rejected() {
        let sl = slice_events(&[], 0, 10).unwrap();
        assert!(build_voxel_grid(&sl, 0, Geometry::new(2, 2)).is_err());
    }

    #[test]
    fn single_bin_equals_frame() {
        let events = [ev(1, 0, 0, 1), ev(3, 1, 1, -1), ev(7, 1, 1, -1), ev(9, 0, 1, 1)];
        let sl = slice_events(&events, 0, 10).unwrap();
        let g = Geometry::new(2, 2);
        let v = build_voxel_grid(&sl, 1, g).unwrap();
        assert_eq!(v.values, build_event_frame(&sl, g).unwrap().values);
    }

    #[test]
    fn window_counts() {
        let g = Geometry::new(2, 2);
        let make = |last: Micros| {
            EventStream::new(g, vec![ev(0, 0, 0, 1), ev(last, 1, 1, 1)]).unwrap()
        };
        assert_eq!(make(99_999).windows(20_000).unwrap().count(), 5);
        assert_eq!(make(49_999).windows(20_000).unwrap().count(), 3);
        assert!(make(10).windows(0).is_err());
    }

    #[test]
    fn overflow_is_error() {
        let mut values = vec![i32::MAX];
        let r = checked_deposit(&mut values, 0, 1, Geometry::new(1, 1));
        assert!(matches!(r, Err(Error::Overflow { x: 0, y: 0 })));
    }
}
