//! Python bindings: scene simulation, event representations, baselines,
//! metrics and pipeline runs. Frames cross the boundary as flat row-major
//! lists.

use std::path::PathBuf;

use eventdepth::dataset;
use eventdepth::depth_extrap::{self, Baseline, DepthFrame, ExtrapolatorModel, GapMode, SamplingConfig};
use eventdepth::event_core::{self, Geometry, Micros};
use eventdepth::keyframe::{label_windows, DetectorModel, KeyframeRuleConfig};
use eventdepth::metrics;
use eventdepth::pipeline::{self, CnnDetector, CnnExtrapolator, PipelineConfig};
use eventdepth::scene_sim::{self, ScenarioConfig, SceneConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: eventdepth::Error) -> PyErr {
    use eventdepth::Error as E;
    match e {
        E::Io(io) => PyIOError::new_err(io.to_string()),
        E::Nn(_) | E::State(_) | E::Overflow { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for eventdepth::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A simulated sequence: events, 100 Hz depth and per-frame scene state.
#[pyclass(frozen, module = "eventdepth_py")]
struct Sequence {
    inner: scene_sim::Sequence,
}

#[pymethods]
impl Sequence {
    #[getter]
    fn height(&self) -> usize {
        self.inner.config.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.config.width
    }

    #[getter]
    fn duration_us(&self) -> Micros {
        self.inner.duration_us()
    }

    #[getter]
    fn num_events(&self) -> usize {
        self.inner.events.len()
    }

    #[getter]
    fn depth_timestamps(&self) -> Vec<Micros> {
        self.inner.depth.iter().map(|f| f.timestamp).collect()
    }

    /// Events in `[t_start, t_end)` as `(t, x, y, p)` tuples.
    #[pyo3(signature = (t_start=0, t_end=None))]
    fn events(&self, t_start: Micros, t_end: Option<Micros>) -> PyResult<Vec<(Micros, u16, u16, i8)>> {
        let end = t_end.unwrap_or(Micros::MAX);
        let s = self.inner.events.slice(t_start, end).py()?;
        Ok(s.events.iter().map(|e| (e.t, e.x, e.y, e.p.as_i8())).collect())
    }

    /// Depth frame `index` as `(timestamp, values)`, meters, 0 = invalid.
    fn depth(&self, index: usize) -> PyResult<(Micros, Vec<f32>)> {
        let f = self
            .inner
            .depth
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("depth index {index} out of range")))?;
        Ok((f.timestamp, f.values.clone()))
    }

    /// Polarity sum per pixel over `[t_start, t_end)`.
    fn event_frame(&self, t_start: Micros, t_end: Micros) -> PyResult<Vec<i32>> {
        let s = self.inner.events.slice(t_start, t_end).py()?;
        Ok(event_core::build_event_frame(&s, self.inner.config.geometry()).py()?.values)
    }

    /// `bins` polarity-sum planes over `[t_start, t_end)`, bin-major.
    fn voxel_grid(&self, t_start: Micros, t_end: Micros, bins: usize) -> PyResult<Vec<i32>> {
        let s = self.inner.events.slice(t_start, t_end).py()?;
        Ok(event_core::build_voxel_grid(&s, bins, self.inner.config.geometry()).py()?.values)
    }

    /// Rule labels for consecutive `window_us` windows.
    #[pyo3(signature = (window_us=20_000, speed_threshold=10.0, distance_threshold=8.0, new_object=true))]
    fn keyframe_labels(
        &self,
        window_us: Micros,
        speed_threshold: f64,
        distance_threshold: f64,
        new_object: bool,
    ) -> PyResult<Vec<bool>> {
        let rules = KeyframeRuleConfig {
            speed_threshold,
            distance_threshold,
            new_object,
        };
        Ok(label_windows(&self.inner, window_us, &rules).py()?.into_iter().map(|l| l.label).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataset::write_sequence(&path, &self.inner).py()?;
        Ok(())
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::read_sequence(&path).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence({}x{}, {} us, {} events, {} depth frames)",
            self.inner.config.height,
            self.inner.config.width,
            self.inner.duration_us(),
            self.inner.events.len(),
            self.inner.depth.len()
        )
    }
}

/// Simulates a random scene.
#[pyfunction]
#[pyo3(signature = (seed, height=32, width=32, focal_px=None, duration_s=2.0))]
fn simulate(seed: u64, height: usize, width: usize, focal_px: Option<f64>, duration_s: f64) -> PyResult<Sequence> {
    let cfg = SceneConfig {
        height,
        width,
        focal_px: focal_px.unwrap_or(0.75 * width as f64),
        duration_s,
        ..Default::default()
    };
    let sc = scene_sim::random_scene(&cfg, &ScenarioConfig::default(), seed).py()?;
    let inner = scene_sim::generate_sequence(&sc.config, &sc.primitives, &sc.ego).py()?;
    Ok(Sequence { inner })
}

/// Loads every sequence of a dataset written by `eventdepth gen`.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<Sequence>> {
    let (_, seqs) = dataset::load_dataset(&path).py()?;
    Ok(seqs.into_iter().map(|inner| Sequence { inner }).collect())
}

fn frame(values: Vec<f32>, height: usize, width: usize) -> PyResult<DepthFrame> {
    DepthFrame::new(Geometry::new(height, width), values, 0).py()
}

fn metrics_dict<'py>(py: Python<'py>, m: &metrics::DepthMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("rmse", m.rmse),
        ("log_rmse", m.log_rmse),
        ("abs_rel", m.abs_rel),
        ("sq_rel", m.sq_rel),
        ("d1", m.d1),
        ("d2", m.d2),
        ("d3", m.d3),
    ] {
        d.set_item(k, v)?;
    }
    d.set_item("valid_px", m.valid_px)?;
    Ok(d)
}

/// Depth metrics of `pred` against `target` (flat, row-major, 0 = invalid).
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    pred: Vec<f32>,
    target: Vec<f32>,
    height: usize,
    width: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::evaluate(&frame(pred, height, width)?, &frame(target, height, width)?).py()?;
    metrics_dict(py, &m)
}

/// Emitted frames per second for a sorted list of timestamps.
#[pyfunction]
fn effective_frame_rate(timestamps: Vec<Micros>) -> PyResult<f64> {
    Ok(pipeline::effective_frame_rate(&timestamps).py()?.mean_hz)
}

/// Baseline RMSE over `sequences` at a fixed rate, or adaptive when `fps`
/// is None. Keys: repeat, linear, exponential, plus `model` if given.
#[pyfunction]
#[pyo3(signature = (sequences, fps=None, stride_frames=10, seed=0, model=None))]
fn score_extrapolation<'py>(
    py: Python<'py>,
    sequences: Vec<PyRef<'py, Sequence>>,
    fps: Option<f64>,
    stride_frames: usize,
    seed: u64,
    model: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SamplingConfig {
        mode: match fps {
            Some(fps) => GapMode::Fixed { fps },
            None => GapMode::Adaptive {
                fps_set: depth_extrap::DEFAULT_FPS_SET.to_vec(),
            },
        },
        stride_frames,
        seed,
        ..Default::default()
    };
    let mut samples = Vec::new();
    for (i, s) in sequences.iter().enumerate() {
        samples.extend(depth_extrap::extrap_samples(&s.inner, i, &cfg).py()?);
    }
    if samples.is_empty() {
        return Err(PyValueError::new_err("no samples at this rate"));
    }
    let d = PyDict::new(py);
    for b in Baseline::ALL {
        d.set_item(b.name(), depth_extrap::score_baseline(b, &samples).py()?.rmse)?;
    }
    if let Some(path) = model {
        let m = ExtrapolatorModel::load(&path).py()?;
        d.set_item("model", depth_extrap::score_model(&m, &samples, 16).py()?.rmse)?;
    }
    Ok(d)
}

/// Runs the adaptive pipeline and returns the report as JSON text.
/// `detector` is "rule", "always", "once" or a checkpoint path;
/// `extrapolator` is "gt", "repeat" or a checkpoint path.
#[pyfunction]
#[pyo3(signature = (sequence, detector="rule", extrapolator="repeat", window_us=20_000, bins=5))]
fn run_pipeline(
    py: Python<'_>,
    sequence: &Sequence,
    detector: &str,
    extrapolator: &str,
    window_us: Micros,
    bins: usize,
) -> PyResult<String> {
    let seq = &sequence.inner;
    let cfg = PipelineConfig {
        window_us,
        bins,
        ..Default::default()
    };
    let mut det: Box<dyn pipeline::KeyframeDetector> = match detector {
        "rule" => Box::new(pipeline::RuleOracle::new(seq, window_us, &KeyframeRuleConfig::default()).py()?),
        "always" => Box::new(pipeline::AlwaysTrigger),
        "once" => Box::new(pipeline::OncePerGap),
        path => Box::new(CnnDetector(DetectorModel::load(path.as_ref()).py()?)),
    };
    let mut ext: Box<dyn pipeline::DepthExtrapolator> = match extrapolator {
        "gt" => Box::new(pipeline::GroundTruthCopy::new(seq, bins)),
        "repeat" => Box::new(pipeline::RepeatExtrapolator { bins }),
        path => Box::new(CnnExtrapolator(ExtrapolatorModel::load(path.as_ref()).py()?)),
    };
    let run = py
        .detach(|| pipeline::run_adaptive(seq, &cfg, det.as_mut(), ext.as_mut()))
        .py()?;
    serde_json::to_string(&run.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn eventdepth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Sequence>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(effective_frame_rate, m)?)?;
    m.add_function(wrap_pyfunction!(score_extrapolation, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
