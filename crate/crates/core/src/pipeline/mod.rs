//! The adaptive sensing loop: LiDAR frames at a base rate, a keyframe
//! detector every window, and event-guided extrapolation on triggers.
//!
//! Scheduling runs in simulated time and is deterministic; stage latencies
//! are measured on the wall clock and kept apart in [`Measured`].

mod agents;
mod rate;

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use agents::{
    AlwaysTrigger, CnnDetector, CnnExtrapolator, DepthExtrapolator, GroundTruthCopy, KeyframeDetector, OncePerGap,
    RepeatExtrapolator, RuleOracle, WindowInfo,
};
pub use rate::{effective_frame_rate, percentiles, Percentiles, RateSummary};

use crate::depth_extrap::DepthFrame;
use crate::error::{Error, Result};
use crate::event_core::{build_event_frame, build_voxel_grid, slice_events, Event, EventFrame, Micros};
use crate::metrics::{evaluate, DepthMetrics};
use crate::scene_sim::Sequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub lidar_rate_hz: f64,
    pub window_us: Micros,
    pub bins: usize,
    /// Longest stretch without an emitted frame before a trigger is forced.
    pub max_window_us: Micros,
    /// Simulated extrapolation time; triggers inside it are coalesced.
    pub sim_extrap_latency_us: Micros,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lidar_rate_hz: 10.0,
            window_us: 20_000,
            bins: 5,
            max_window_us: 500_000,
            sim_extrap_latency_us: 15_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lidar_rate_hz > 0.0 && self.lidar_rate_hz.is_finite()) {
            return Err(Error::Config(format!("lidar_rate_hz = {} must be positive", self.lidar_rate_hz)));
        }
        let period = 1e6 / self.lidar_rate_hz;
        if (period - period.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "lidar_rate_hz = {} does not give a whole-microsecond period",
                self.lidar_rate_hz
            )));
        }
        if self.window_us == 0 || self.bins == 0 || self.max_window_us == 0 {
            return Err(Error::Config("window_us, bins and max_window_us must be positive".into()));
        }
        Ok(())
    }

    pub fn lidar_period_us(&self) -> Micros {
        (1e6 / self.lidar_rate_hz).round() as Micros
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Lidar,
    Extrapolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: Micros,
    pub source: FrameSource,
    /// Triggering window, for extrapolated frames.
    pub window: Option<usize>,
    /// Start of the voxel interval `[voxel_start, timestamp)`.
    pub voxel_start: Option<Micros>,
    pub event_count: Option<usize>,
    /// Against ground truth at the same timestamp, when the sequence has it.
    pub metrics: Option<DepthMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Window ends on a LiDAR frame; not classified.
    Lidar,
    Idle,
    Trigger,
    /// Wanted a trigger while the extrapolator was busy.
    Coalesced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub window: usize,
    pub t_start: Micros,
    pub t_end: Micros,
    pub score: Option<f64>,
    pub positive: bool,
    /// The max-window cap fired.
    pub forced: bool,
    /// Served a trigger coalesced in an earlier window.
    pub from_pending: bool,
    pub action: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLatency {
    pub timestamp: Micros,
    pub slicer_us: u64,
    pub detector_us: u64,
    pub extrapolator_us: u64,
}

impl FrameLatency {
    pub fn total_us(&self) -> u64 {
        self.slicer_us + self.detector_us + self.extrapolator_us
    }
}

/// Wall-clock fields; excluded from determinism comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub slicer: Percentiles,
    pub detector: Percentiles,
    pub extrapolator: Percentiles,
    pub frame_latencies: Vec<FrameLatency>,
    pub missed_deadlines: usize,
    pub wall_time_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub detector: String,
    pub extrapolator: String,
    pub frames: Vec<FrameRecord>,
    pub decisions: Vec<Decision>,
    pub trigger_count: usize,
    pub coalesced_count: usize,
    pub effective_rate: Option<RateSummary>,
    pub aggregate_metrics: Option<DepthMetrics>,
    pub measured: Measured,
}

impl PipelineReport {
    pub fn timestamps(&self) -> Vec<Micros> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// Per-frame metrics as CSV (frames without ground truth are omitted).
    pub fn frame_metrics_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("timestamp_us,source,rmse,log_rmse,abs_rel,sq_rel,d1,d2,d3,valid_px\n");
        for f in &self.frames {
            if let Some(m) = &f.metrics {
                let src = match f.source {
                    FrameSource::Lidar => "lidar",
                    FrameSource::Extrapolated => "extrapolated",
                };
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                    f.timestamp, src, m.rmse, m.log_rmse, m.abs_rel, m.sq_rel, m.d1, m.d2, m.d3, m.valid_px
                );
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub frames: Vec<DepthFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetFlag {
    pub timestamp: Micros,
    pub latency_us: u64,
    /// Gap to the previous emitted frame.
    pub budget_us: u64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub frames: Vec<BudgetFlag>,
    pub passed: bool,
}

/// Flags every extrapolated frame whose summed stage latency exceeds the
/// interval since the previous emitted frame.
pub fn latency_budget_check(report: &PipelineReport) -> BudgetReport {
    let ts = report.timestamps();
    let frames: Vec<BudgetFlag> = report
        .measured
        .frame_latencies
        .iter()
        .map(|l| {
            let i = ts.partition_point(|&t| t < l.timestamp);
            let budget_us = if i > 0 && i < ts.len() && ts[i] == l.timestamp {
                l.timestamp - ts[i - 1]
            } else {
                0
            };
            let latency_us = l.total_us();
            BudgetFlag {
                timestamp: l.timestamp,
                latency_us,
                budget_us,
                pass: latency_us <= budget_us,
            }
        })
        .collect();
    let passed = frames.iter().all(|f| f.pass);
    BudgetReport { frames, passed }
}

enum SlicerMsg {
    Lidar(DepthFrame),
    Window {
        info: WindowInfo,
        events: Vec<Event>,
        frame: Option<EventFrame>,
        slicer_us: u64,
    },
}

struct Job {
    window: usize,
    t1: Micros,
    slicer_us: u64,
    detector_us: u64,
}

enum DetectorMsg {
    Lidar(DepthFrame),
    Window { events: Vec<Event>, job: Option<Job> },
}

struct Emitted {
    record: FrameRecord,
    frame: DepthFrame,
    latency: Option<FrameLatency>,
    extrapolator_us: Option<u64>,
}

fn elapsed_us(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

/// Runs the three-stage loop over a sequence. LiDAR frames are the ground
/// truth at multiples of the LiDAR period; detector windows tile time from 0.
pub fn run_adaptive(
    sequence: &Sequence,
    config: &PipelineConfig,
    detector: &mut dyn KeyframeDetector,
    extrapolator: &mut dyn DepthExtrapolator,
) -> Result<PipelineRun> {
    config.validate()?;
    let geometry = sequence.config.geometry();
    for (what, g) in [("detector", detector.geometry()), ("extrapolator", extrapolator.geometry())] {
        if let Some(g) = g {
            if g != geometry {
                return Err(Error::Geometry(format!(
                    "{what} expects {}x{}, sequence is {}x{}",
                    g.height, g.width, geometry.height, geometry.width
                )));
            }
        }
    }
    if extrapolator.bins() != config.bins {
        return Err(Error::Config(format!(
            "extrapolator uses {} bins, pipeline configured for {}",
            extrapolator.bins(),
            config.bins
        )));
    }
    let Some(last) = sequence.depth.last().map(|f| f.timestamp) else {
        return Err(Error::Data("sequence has no depth frames".into()));
    };
    let period = config.lidar_period_us();
    let lidar_times: Vec<Micros> = (0..).map(|k| k * period).take_while(|&t| t <= last).collect();
    for &t in &lidar_times {
        if sequence.depth_at(t).is_none() {
            return Err(Error::Data(format!("sequence has no depth frame at LiDAR time {t} us")));
        }
    }

    let started = Instant::now();
    let (slice_tx, slice_rx) = sync_channel::<SlicerMsg>(1);
    let (det_tx, det_rx) = sync_channel::<DetectorMsg>(1);
    let detector_name = detector.name();
    let extrapolator_name = extrapolator.name();

    let (slicer_res, detector_res, extrap_res) = std::thread::scope(|s| {
        let slicer = s.spawn(|| slicer_stage(sequence, config, &lidar_times, last, slice_tx));
        let det = s.spawn(|| detector_stage(config, detector, slice_rx, det_tx));
        let ext = s.spawn(|| extrapolator_stage(sequence, config, extrapolator, det_rx));
        (
            slicer.join().expect("slicer stage panicked"),
            det.join().expect("detector stage panicked"),
            ext.join().expect("extrapolator stage panicked"),
        )
    });
    // an upstream error surfaces first; downstream stages then just see a closed channel
    let slicer_us = slicer_res?;
    let (decisions, detector_us) = detector_res?;
    let emitted = extrap_res?;

    let mut frames = Vec::with_capacity(emitted.len());
    let mut records = Vec::with_capacity(emitted.len());
    let mut latencies = Vec::new();
    let mut extrap_us = Vec::new();
    for e in emitted {
        frames.push(e.frame);
        records.push(e.record);
        latencies.extend(e.latency);
        extrap_us.extend(e.extrapolator_us);
    }
    let ts: Vec<Micros> = records.iter().map(|r| r.timestamp).collect();
    let effective_rate = if ts.len() >= 2 { Some(effective_frame_rate(&ts)?) } else { None };
    let scored: Vec<DepthMetrics> = records
        .iter()
        .filter(|r| r.source == FrameSource::Extrapolated)
        .filter_map(|r| r.metrics)
        .collect();
    let aggregate_metrics = if scored.is_empty() {
        None
    } else {
        Some(crate::metrics::aggregate(&scored)?)
    };
    let mut report = PipelineReport {
        config: config.clone(),
        detector: detector_name,
        extrapolator: extrapolator_name,
        trigger_count: decisions.iter().filter(|d| d.action == Action::Trigger).count(),
        coalesced_count: decisions.iter().filter(|d| d.action == Action::Coalesced).count(),
        frames: records,
        decisions,
        effective_rate,
        aggregate_metrics,
        measured: Measured {
            slicer: percentiles(&slicer_us),
            detector: percentiles(&detector_us),
            extrapolator: percentiles(&extrap_us),
            frame_latencies: latencies,
            missed_deadlines: 0,
            wall_time_us: elapsed_us(started),
        },
    };
    report.measured.missed_deadlines = latency_budget_check(&report).frames.iter().filter(|f| !f.pass).count();
    Ok(PipelineRun { report, frames })
}

fn slicer_stage(
    sequence: &Sequence,
    config: &PipelineConfig,
    lidar_times: &[Micros],
    last: Micros,
    tx: SyncSender<SlicerMsg>,
) -> Result<Vec<u64>> {
    let geometry = sequence.config.geometry();
    let events = sequence.events.events();
    let mut timings = Vec::new();
    let mut next_lidar = 0;
    let mut lidar_t = 0;
    let mut first_after_lidar = true;
    let mut index = 0;
    loop {
        let t_start = index as Micros * config.window_us;
        let t_end = t_start + config.window_us;
        // LiDAR frames strictly before this window's end go out first
        while next_lidar < lidar_times.len() && lidar_times[next_lidar] < t_end {
            lidar_t = lidar_times[next_lidar];
            let frame = sequence.depth_at(lidar_t).expect("checked by caller").clone();
            if tx.send(SlicerMsg::Lidar(frame)).is_err() {
                return Ok(timings);
            }
            next_lidar += 1;
            first_after_lidar = true;
        }
        if t_end > last {
            return Ok(timings);
        }
        let on_lidar = lidar_times.get(next_lidar) == Some(&t_end);
        let t = Instant::now();
        let slice = slice_events(events, t_start, t_end)?;
        let frame = if on_lidar {
            None
        } else {
            Some(build_event_frame(&slice, geometry)?)
        };
        let owned = slice.events.to_vec();
        let slicer_us = elapsed_us(t);
        if !on_lidar {
            timings.push(slicer_us);
        }
        let info = WindowInfo {
            index,
            t_start,
            t_end,
            lidar_t,
            first_after_lidar,
        };
        let msg = SlicerMsg::Window {
            info,
            events: owned,
            frame,
            slicer_us,
        };
        if tx.send(msg).is_err() {
            return Ok(timings);
        }
        first_after_lidar = false;
        index += 1;
    }
}

fn detector_stage(
    config: &PipelineConfig,
    detector: &mut dyn KeyframeDetector,
    rx: Receiver<SlicerMsg>,
    tx: SyncSender<DetectorMsg>,
) -> Result<(Vec<Decision>, Vec<u64>)> {
    let mut decisions = Vec::new();
    let mut timings = Vec::new();
    let mut busy_until: Micros = 0;
    let mut pending = false;
    let mut last_emit: Micros = 0;
    for msg in rx {
        let out = match msg {
            SlicerMsg::Lidar(frame) => {
                pending = false;
                last_emit = frame.timestamp;
                DetectorMsg::Lidar(frame)
            }
            SlicerMsg::Window {
                info,
                events,
                frame,
                slicer_us,
            } => {
                let Some(frame) = frame else {
                    decisions.push(Decision {
                        window: info.index,
                        t_start: info.t_start,
                        t_end: info.t_end,
                        score: None,
                        positive: false,
                        forced: false,
                        from_pending: false,
                        action: Action::Lidar,
                    });
                    if tx.send(DetectorMsg::Window { events, job: None }).is_err() {
                        break;
                    }
                    continue;
                };
                let t = Instant::now();
                let score = detector.score(&info, &frame)?;
                let detector_us = elapsed_us(t);
                timings.push(detector_us);
                let positive = agents::is_positive(score);
                let forced = info.t_end - last_emit >= config.max_window_us;
                let from_pending = pending && !positive && !forced;
                let action = if !(positive || forced || pending) {
                    Action::Idle
                } else if info.t_end >= busy_until {
                    busy_until = info.t_end + config.sim_extrap_latency_us;
                    pending = false;
                    last_emit = info.t_end;
                    Action::Trigger
                } else {
                    pending = true;
                    Action::Coalesced
                };
                decisions.push(Decision {
                    window: info.index,
                    t_start: info.t_start,
                    t_end: info.t_end,
                    score: Some(score),
                    positive,
                    forced,
                    from_pending: from_pending && action == Action::Trigger,
                    action,
                });
                let job = (action == Action::Trigger).then_some(Job {
                    window: info.index,
                    t1: info.t_end,
                    slicer_us,
                    detector_us,
                });
                DetectorMsg::Window { events, job }
            }
        };
        if tx.send(out).is_err() {
            break;
        }
    }
    Ok((decisions, timings))
}

fn extrapolator_stage(
    sequence: &Sequence,
    config: &PipelineConfig,
    extrapolator: &mut dyn DepthExtrapolator,
    rx: Receiver<DetectorMsg>,
) -> Result<Vec<Emitted>> {
    let geometry = sequence.config.geometry();
    let mut out = Vec::new();
    let mut prior: Option<DepthFrame> = None;
    let mut buffer: Vec<Event> = Vec::new();
    let score = |frame: &DepthFrame| -> Result<Option<DepthMetrics>> {
        match sequence.depth_at(frame.timestamp) {
            Some(gt) if gt.valid_count() > 0 => Ok(Some(evaluate(frame, gt)?)),
            _ => Ok(None),
        }
    };
    for msg in rx {
        match msg {
            DetectorMsg::Lidar(frame) => {
                buffer.clear();
                out.push(Emitted {
                    record: FrameRecord {
                        timestamp: frame.timestamp,
                        source: FrameSource::Lidar,
                        window: None,
                        voxel_start: None,
                        event_count: None,
                        metrics: score(&frame)?,
                    },
                    frame: frame.clone(),
                    latency: None,
                    extrapolator_us: None,
                });
                prior = Some(frame);
            }
            DetectorMsg::Window { events, job } => {
                let Some(p) = &prior else {
                    return Err(Error::State("window before the first LiDAR frame".into()));
                };
                let t_lidar = p.timestamp;
                buffer.extend(events.into_iter().filter(|e| e.t >= t_lidar));
                let Some(job) = job else { continue };
                let t = Instant::now();
                let slice = slice_events(&buffer, t_lidar, job.t1)?;
                let voxel = build_voxel_grid(&slice, config.bins, geometry)?;
                let frame = extrapolator.extrapolate(p, &voxel, job.t1)?;
                let extrapolator_us = elapsed_us(t);
                if frame.geometry != geometry || frame.timestamp != job.t1 {
                    return Err(Error::State(format!(
                        "extrapolator returned a {}x{} frame at {} for a {}x{} request at {}",
                        frame.geometry.height,
                        frame.geometry.width,
                        frame.timestamp,
                        geometry.height,
                        geometry.width,
                        job.t1
                    )));
                }
                out.push(Emitted {
                    record: FrameRecord {
                        timestamp: job.t1,
                        source: FrameSource::Extrapolated,
                        window: Some(job.window),
                        voxel_start: Some(t_lidar),
                        event_count: Some(slice.len()),
                        metrics: score(&frame)?,
                    },
                    frame,
                    latency: Some(FrameLatency {
                        timestamp: job.t1,
                        slicer_us: job.slicer_us,
                        detector_us: job.detector_us,
                        extrapolator_us,
                    }),
                    extrapolator_us: Some(extrapolator_us),
                });
            }
        }
    }
    Ok(out)
}
