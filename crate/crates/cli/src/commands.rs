use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use eventdepth::dataset::{self, label_entries, DatasetManifest, LabelEntry};
use eventdepth::depth_extrap::{
    extrap_samples, fit_extrapolator, predict_model, score, score_baseline, write_depth_stream, Baseline,
    ExtrapSample, ExtrapolatorModel, GapMode, SamplingConfig,
};
use eventdepth::event_core::Micros;
use eventdepth::keyframe::{detector_samples, eval_detector, fit_detector, DetectorEval, DetectorModel, DetectorSample};
use eventdepth::metrics::{to_csv, DepthMetrics, MetricsRow};
use eventdepth::pipeline::{
    latency_budget_check, run_adaptive, AlwaysTrigger, CnnDetector, CnnExtrapolator, DepthExtrapolator,
    GroundTruthCopy, KeyframeDetector, OncePerGap, RepeatExtrapolator, RuleOracle,
};
use eventdepth::scene_sim::Sequence;
use eventdepth::train_log::TrainLog;
use eventdepth_nn::checkpoint::write_optimizer;
use eventdepth_nn::{OptimizerState, ParamStore};
use serde::Serialize;

use crate::config::{LoadedConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub struct Ctx {
    pub loaded: LoadedConfig,
    pub out: PathBuf,
    pub threads: usize,
    pub quiet: bool,
}

impl Ctx {
    fn cfg(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> CliResult<&Path> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::io(format!("cannot create {}", self.out.display()), e))?;
        Ok(&self.out)
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn save_optimizer(path: &Path, state: &OptimizerState<f32>, params: &ParamStore<f32>) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    let mut w = BufWriter::new(f);
    write_optimizer(state, params, &mut w)?;
    w.flush().map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    Ok(())
}

/// Provenance block shared by every output manifest.
#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    config_text: Option<&'a str>,
    config: &'a RunConfig,
}

fn provenance<'a>(ctx: &'a Ctx, command: &'a str) -> Provenance<'a> {
    Provenance {
        command,
        config_text: ctx.loaded.text.as_deref(),
        config: ctx.cfg(),
    }
}

#[derive(Serialize)]
struct DatasetRef {
    seed: u64,
    sequences: Vec<String>,
}

fn dataset_ref(m: &DatasetManifest, range: std::ops::Range<usize>) -> DatasetRef {
    DatasetRef {
        seed: m.seed,
        sequences: m.sequences[range].iter().map(|s| s.name.clone()).collect(),
    }
}

fn load_data(path: &Path) -> CliResult<(DatasetManifest, Vec<Sequence>)> {
    let (m, seqs) = dataset::load_dataset(path)?;
    if seqs.is_empty() {
        return Err(CliError::Data(format!("dataset {} has no sequences", path.display())));
    }
    Ok((m, seqs))
}

fn split_point(n: usize, val: usize) -> CliResult<usize> {
    if val >= n {
        return Err(CliError::Data(format!(
            "dataset has {n} sequences; holding out {val} for validation leaves none to train on"
        )));
    }
    Ok(n - val)
}

// gen

pub fn gen(ctx: &Ctx, count: Option<usize>) -> CliResult<()> {
    let cfg = ctx.cfg();
    let count = count.unwrap_or(cfg.dataset.count);
    let out = ctx.out_dir()?;
    ctx.note(format!("generating {count} sequences into {}", out.display()));
    let m = dataset::generate_dataset(
        out,
        &cfg.scene,
        &cfg.scenario,
        count,
        cfg.base_seed(),
        ctx.loaded.text.clone(),
        ctx.threads,
    )?;
    let frames: usize = m.sequences.iter().map(|s| s.frames).sum();
    let events: usize = m.sequences.iter().map(|s| s.events).sum();
    ctx.note(format!("wrote {} sequences, {frames} depth frames, {events} events", m.sequences.len()));
    Ok(())
}

// train-keyframe

pub const DETECTOR_FILE: &str = "detector.nlnn";
pub const DETECTOR_OPTIM_FILE: &str = "detector.nlos";
pub const EXTRAPOLATOR_FILE: &str = "extrapolator.nlnn";
pub const EXTRAPOLATOR_OPTIM_FILE: &str = "extrapolator.nlos";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const LABELS_FILE: &str = "labels.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Serialize)]
struct LabelManifest<'a> {
    window_us: Micros,
    sequences: Vec<String>,
    entries: &'a [LabelEntry],
}

#[derive(Serialize)]
struct KeyframeReport<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    train: DatasetRef,
    val: DatasetRef,
    train_samples: usize,
    train_positives: usize,
    val_samples: usize,
    log: &'a TrainLog,
    eval: Option<DetectorEval>,
}

fn samples_for(seqs: &[Sequence], offset: usize, window: Micros, ctx: &Ctx) -> CliResult<Vec<DetectorSample>> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        out.extend(detector_samples(s, offset + i, window, &ctx.cfg().keyframe.rules)?);
    }
    Ok(out)
}

pub fn train_keyframe(ctx: &Ctx, data: &Path) -> CliResult<()> {
    let cfg = ctx.cfg();
    let (manifest, seqs) = load_data(data)?;
    let cut = split_point(seqs.len(), cfg.dataset.val_sequences)?;
    let window = cfg.keyframe.window_us;
    let train = samples_for(&seqs[..cut], 0, window, ctx)?;
    let val = samples_for(&seqs[cut..], cut, window, ctx)?;
    let positives = train.iter().filter(|s| s.label).count();
    ctx.note(format!(
        "detector: {} train windows ({positives} keyframes), {} val windows",
        train.len(),
        val.len()
    ));

    let (model, log, optim) = fit_detector(&train, &val, &cfg.keyframe.train)?;
    let eval = if val.is_empty() {
        None
    } else {
        Some(eval_detector(&model, &val, cfg.pipeline.lidar_period_us())?)
    };
    if let Some(e) = &eval {
        ctx.note(format!("val precision {:.3} recall {:.3} f1 {:.3}", e.precision, e.recall, e.f1));
    }

    let out = ctx.out_dir()?;
    model.save(&out.join(DETECTOR_FILE))?;
    save_optimizer(&out.join(DETECTOR_OPTIM_FILE), &optim, model.params())?;
    write_text(&out.join(TRAIN_LOG_FILE), &log.to_csv())?;
    let mut entries = label_entries(&train);
    entries.extend(label_entries(&val));
    write_json(
        &out.join(LABELS_FILE),
        &LabelManifest {
            window_us: window,
            sequences: manifest.sequences.iter().map(|s| s.name.clone()).collect(),
            entries: &entries,
        },
    )?;
    write_json(
        &out.join(REPORT_FILE),
        &KeyframeReport {
            provenance: provenance(ctx, "train-keyframe"),
            train: dataset_ref(&manifest, 0..cut),
            val: dataset_ref(&manifest, cut..seqs.len()),
            train_samples: train.len(),
            train_positives: positives,
            val_samples: val.len(),
            log: &log,
            eval,
        },
    )?;
    Ok(())
}

// train-extrap

#[derive(Serialize)]
struct ExtrapReport<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    train: DatasetRef,
    val: DatasetRef,
    train_samples: usize,
    val_samples: usize,
    log: &'a TrainLog,
    val_metrics: Vec<MetricsRow>,
}

fn extrap_set(seqs: &[Sequence], offset: usize, sampling: &SamplingConfig) -> CliResult<Vec<ExtrapSample>> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        out.extend(extrap_samples(s, offset + i, sampling)?);
    }
    Ok(out)
}

fn baseline_rows(samples: &[ExtrapSample], fps: &str) -> CliResult<Vec<MetricsRow>> {
    Baseline::ALL
        .iter()
        .map(|&b| {
            Ok(MetricsRow {
                method: b.name().into(),
                fps: fps.into(),
                metrics: score_baseline(b, samples)?,
            })
        })
        .collect()
}

pub fn train_extrap(ctx: &Ctx, data: &Path) -> CliResult<()> {
    let cfg = ctx.cfg();
    let (manifest, seqs) = load_data(data)?;
    let cut = split_point(seqs.len(), cfg.dataset.val_sequences)?;
    let sampling = &cfg.extrap.sampling;
    let train = extrap_set(&seqs[..cut], 0, sampling)?;
    let val = extrap_set(&seqs[cut..], cut, sampling)?;
    ctx.note(format!("extrapolator: {} train samples, {} val samples", train.len(), val.len()));

    let (model, log, optim) = fit_extrapolator(&train, &val, &cfg.extrap.train)?;
    let label = sampling.mode.label();
    let mut val_metrics = Vec::new();
    if !val.is_empty() {
        val_metrics = baseline_rows(&val, &label)?;
        let preds = predict_model(&model, &val, cfg.extrap.train.batch_size)?;
        val_metrics.push(MetricsRow {
            method: cfg.extrap.variant.clone().unwrap_or_else(|| "model".into()),
            fps: label,
            metrics: score(&preds, &val)?,
        });
        for r in &val_metrics {
            ctx.note(format!("val {:<12} rmse {:.4}", r.method, r.metrics.rmse));
        }
    }

    let out = ctx.out_dir()?;
    model.save(&out.join(EXTRAPOLATOR_FILE))?;
    save_optimizer(&out.join(EXTRAPOLATOR_OPTIM_FILE), &optim, model.params())?;
    write_text(&out.join(TRAIN_LOG_FILE), &log.to_csv())?;
    write_json(
        &out.join(REPORT_FILE),
        &ExtrapReport {
            provenance: provenance(ctx, "train-extrap"),
            train: dataset_ref(&manifest, 0..cut),
            val: dataset_ref(&manifest, cut..seqs.len()),
            train_samples: train.len(),
            val_samples: val.len(),
            log: &log,
            val_metrics,
        },
    )?;
    Ok(())
}

// eval

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.json";

/// A `NAME=PATH` or bare `PATH` model argument; bare paths are named by
/// their file stem.
pub fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(arg);
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.into());
            (name, p)
        }
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    dataset: DatasetRef,
    models: Vec<(String, String)>,
    settings: Vec<EvalSetting>,
    rows: &'a [MetricsRow],
}

#[derive(Serialize)]
struct EvalSetting {
    fps: String,
    samples: usize,
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub models: Vec<String>,
    pub fps: Option<Vec<f64>>,
    pub adaptive: bool,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    let cfg = ctx.cfg();
    let (fixed, adaptive) = match &args.fps {
        Some(list) => (list.clone(), args.adaptive),
        None if args.adaptive => (Vec::new(), true),
        None => (cfg.eval.fps.clone(), cfg.eval.adaptive),
    };
    if fixed.is_empty() && !adaptive {
        return Err(CliError::Config("no evaluation setting: the fps list is empty and adaptive is off".into()));
    }
    let mut modes: Vec<GapMode> = fixed.iter().map(|&fps| GapMode::Fixed { fps }).collect();
    if adaptive {
        modes.push(GapMode::Adaptive {
            fps_set: cfg.eval.fps_set.clone(),
        });
    }
    for m in &modes {
        SamplingConfig {
            mode: m.clone(),
            ..cfg.extrap.sampling.clone()
        }
        .validate()?;
    }

    let (manifest, seqs) = load_data(&args.data)?;
    let geometry = seqs[0].config.geometry();
    let mut models = Vec::new();
    for arg in &args.models {
        let (name, path) = parse_model_arg(arg);
        let model = ExtrapolatorModel::load(&path)?;
        if model.geometry() != geometry {
            let g = model.geometry();
            return Err(eventdepth::Error::Geometry(format!(
                "model {name} expects {}x{}, dataset is {}x{}",
                g.height, g.width, geometry.height, geometry.width
            ))
            .into());
        }
        if model.config().bins != cfg.extrap.sampling.bins {
            return Err(CliError::Config(format!(
                "model {name} uses {} voxel bins, extrap.sampling.bins = {}",
                model.config().bins,
                cfg.extrap.sampling.bins
            )));
        }
        models.push((name, path, model));
    }

    let mut rows = Vec::new();
    let mut settings = Vec::new();
    for mode in modes {
        let sampling = SamplingConfig {
            mode,
            ..cfg.extrap.sampling.clone()
        };
        let label = sampling.mode.label();
        let samples = extrap_set(&seqs, 0, &sampling)?;
        if samples.is_empty() {
            return Err(CliError::Data(format!("no evaluation samples at fps {label}")));
        }
        rows.extend(baseline_rows(&samples, &label)?);
        for (name, _, model) in &models {
            let preds = predict_model(model, &samples, cfg.eval.batch_size)?;
            rows.push(MetricsRow {
                method: name.clone(),
                fps: label.clone(),
                metrics: score(&preds, &samples)?,
            });
        }
        ctx.note(format!("fps {label}: {} samples", samples.len()));
        settings.push(EvalSetting {
            fps: label,
            samples: samples.len(),
        });
    }

    let out = ctx.out_dir()?;
    write_text(&out.join(METRICS_FILE), &to_csv(&rows))?;
    write_json(
        &out.join(EVAL_FILE),
        &EvalReport {
            provenance: provenance(ctx, "eval"),
            dataset: dataset_ref(&manifest, 0..seqs.len()),
            models: models
                .iter()
                .map(|(n, p, _)| (n.clone(), p.display().to_string()))
                .collect(),
            settings,
            rows: &rows,
        },
    )?;
    if !ctx.quiet {
        eprint!("{}", to_csv(&rows));
    }
    Ok(())
}

// run

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const FRAMES_CSV_FILE: &str = "frames.csv";
pub const FRAMES_DEPTH_FILE: &str = "frames.eldr";

pub struct RunArgs {
    pub data: PathBuf,
    pub sequence: usize,
    pub detector: String,
    pub extrapolator: String,
}

fn make_detector(spec: &str, seq: &Sequence, cfg: &RunConfig) -> CliResult<Box<dyn KeyframeDetector>> {
    Ok(match spec {
        "rule" => Box::new(RuleOracle::new(seq, cfg.pipeline.window_us, &cfg.keyframe.rules)?),
        "always" => Box::new(AlwaysTrigger),
        "once" => Box::new(OncePerGap),
        path => Box::new(CnnDetector(DetectorModel::load(Path::new(path))?)),
    })
}

fn make_extrapolator(spec: &str, seq: &Sequence, cfg: &RunConfig) -> CliResult<Box<dyn DepthExtrapolator>> {
    let bins = cfg.pipeline.bins;
    Ok(match spec {
        "gt" => Box::new(GroundTruthCopy::new(seq, bins)),
        "repeat" => Box::new(RepeatExtrapolator { bins }),
        path => Box::new(CnnExtrapolator(ExtrapolatorModel::load(Path::new(path))?)),
    })
}

pub fn run(ctx: &Ctx, args: &RunArgs) -> CliResult<()> {
    let cfg = ctx.cfg();
    let manifest = dataset::read_manifest(&args.data)?;
    let Some(entry) = manifest.sequences.get(args.sequence) else {
        return Err(CliError::Data(format!(
            "sequence index {} out of range; dataset has {}",
            args.sequence,
            manifest.sequences.len()
        )));
    };
    let seq = dataset::read_sequence(&dataset::sequence_dir(&args.data, entry))?;
    let mut detector = make_detector(&args.detector, &seq, cfg)?;
    let mut extrapolator = make_extrapolator(&args.extrapolator, &seq, cfg)?;
    let result = run_adaptive(&seq, &cfg.pipeline, detector.as_mut(), extrapolator.as_mut())?;
    let report = &result.report;
    let budget = latency_budget_check(report);

    let mut json = serde_json::to_value(report)?;
    json["measured"]["budget"] = serde_json::to_value(&budget)?;
    let doc = serde_json::json!({
        "command": "run",
        "config_text": ctx.loaded.text,
        "sequence": entry.name,
        "report": json,
    });

    let out = ctx.out_dir()?;
    write_json(&out.join(RUN_REPORT_FILE), &doc)?;
    write_text(&out.join(FRAMES_CSV_FILE), &report.frame_metrics_csv())?;
    let path = out.join(FRAMES_DEPTH_FILE);
    let f = File::create(&path).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    let mut w = BufWriter::new(f);
    write_depth_stream(&result.frames, 1.0, &mut w)?;
    w.flush().map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;

    let rate = report.effective_rate.as_ref().map(|r| r.mean_hz).unwrap_or(0.0);
    let rmse = report.aggregate_metrics.map(|m: DepthMetrics| m.rmse);
    ctx.note(format!(
        "{}: {} frames, {} triggers, {} coalesced, {rate:.2} Hz effective, rmse {}",
        entry.name,
        report.frames.len(),
        report.trigger_count,
        report.coalesced_count,
        rmse.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into())
    ));
    ctx.note(format!(
        "latency p95: detector {} us, extrapolator {} us; budget {}",
        report.measured.detector.p95_us,
        report.measured.extrapolator.p95_us,
        if budget.passed { "met" } else { "missed" }
    ));
    Ok(())
}
