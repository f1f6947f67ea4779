//! Human-readable dumps of the binary formats, chosen by magic.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use eventdepth::checkpoint::arch_path;
use eventdepth::depth_extrap::{read_depth_stream, DEPTH_MAGIC};
use eventdepth::event_core::{read_events, EVENT_MAGIC};
use eventdepth_nn::checkpoint::{read_optimizer, read_params, OPTIM_MAGIC, PARAMS_MAGIC};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    let f = File::open(path).map_err(|e| CliError::io(format!("cannot open {}", path.display()), e))?;
    Ok(BufReader::new(f))
}

pub fn inspect(path: &Path, limit: usize) -> CliResult<String> {
    let mut magic = [0u8; 4];
    open(path)?
        .read_exact(&mut magic)
        .map_err(|_| CliError::Data(format!("{}: shorter than a format magic", path.display())))?;
    let mut s = String::new();
    let _ = writeln!(s, "{}", path.display());
    if &magic == EVENT_MAGIC {
        events(&mut s, path, limit)?;
    } else if &magic == DEPTH_MAGIC {
        depth(&mut s, path, limit)?;
    } else if &magic == PARAMS_MAGIC {
        params(&mut s, path, limit)?;
    } else if &magic == OPTIM_MAGIC {
        optimizer(&mut s, path, limit)?;
    } else {
        return Err(CliError::Data(format!(
            "{}: unknown magic {:?}",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    Ok(s)
}

fn events(s: &mut String, path: &Path, limit: usize) -> CliResult<()> {
    let stream = read_events(open(path)?)?;
    let g = stream.geometry();
    let ev = stream.events();
    let pos = ev.iter().filter(|e| e.p.value() > 0).count();
    let _ = writeln!(s, "format: EVT1 event stream");
    let _ = writeln!(s, "geometry: {}x{} (HxW)", g.height, g.width);
    let _ = writeln!(s, "events: {} ({} positive, {} negative)", ev.len(), pos, ev.len() - pos);
    if let (Some(a), Some(b)) = (ev.first(), ev.last()) {
        let _ = writeln!(s, "time: {} .. {} us", a.t, b.t);
    }
    for e in ev.iter().take(limit) {
        let _ = writeln!(s, "  t={:<10} x={:<4} y={:<4} p={:+}", e.t, e.x, e.y, e.p.value());
    }
    if ev.len() > limit {
        let _ = writeln!(s, "  ... {} more", ev.len() - limit);
    }
    Ok(())
}

fn depth(s: &mut String, path: &Path, limit: usize) -> CliResult<()> {
    let frames = read_depth_stream(open(path)?)?;
    let _ = writeln!(s, "format: ELDR depth frames");
    let _ = writeln!(s, "frames: {}", frames.len());
    if let (Some(a), Some(b)) = (frames.first(), frames.last()) {
        let _ = writeln!(s, "geometry: {}x{} (HxW)", a.geometry.height, a.geometry.width);
        let _ = writeln!(s, "time: {} .. {} us", a.timestamp, b.timestamp);
    }
    for f in frames.iter().take(limit) {
        let valid: Vec<f32> = f.values.iter().copied().filter(|&v| v > 0.0).collect();
        let (lo, hi) = valid
            .iter()
            .fold((f32::INFINITY, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mean = valid.iter().map(|&v| v as f64).sum::<f64>() / valid.len().max(1) as f64;
        if valid.is_empty() {
            let _ = writeln!(s, "  t={:<10} valid=0", f.timestamp);
        } else {
            let _ = writeln!(
                s,
                "  t={:<10} valid={:<6} min={lo:.3} max={hi:.3} mean={mean:.3} m",
                f.timestamp,
                valid.len()
            );
        }
    }
    if frames.len() > limit {
        let _ = writeln!(s, "  ... {} more", frames.len() - limit);
    }
    Ok(())
}

fn params(s: &mut String, path: &Path, limit: usize) -> CliResult<()> {
    let store = read_params(open(path)?)?;
    let _ = writeln!(s, "format: NLNN parameters");
    let _ = writeln!(s, "tensors: {}, values: {}", store.len(), store.num_values());
    for p in store.iter().take(limit) {
        let d = p.value.data();
        let rms = (d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / d.len().max(1) as f64).sqrt();
        let _ = writeln!(s, "  {:<28} {:?} rms={rms:.4e}", p.name, p.value.shape());
    }
    if store.len() > limit {
        let _ = writeln!(s, "  ... {} more", store.len() - limit);
    }
    let arch = arch_path(path);
    if let Ok(text) = std::fs::read_to_string(&arch) {
        let _ = writeln!(s, "architecture ({}):", arch.display());
        s.push_str(&text);
    }
    Ok(())
}

fn optimizer(s: &mut String, path: &Path, limit: usize) -> CliResult<()> {
    let (state, names) = read_optimizer(open(path)?)?;
    let _ = writeln!(s, "format: NLOS optimizer state (NAdam)");
    let _ = writeln!(s, "step: {}", state.step);
    let _ = writeln!(s, "lr: {:e} (base {:e})", state.lr, state.base_lr);
    match state.schedule {
        Some(c) => {
            let _ = writeln!(s, "schedule: cosine over {} epochs to {:e}", c.total_epochs, c.lr_min);
        }
        None => {
            let _ = writeln!(s, "schedule: constant");
        }
    }
    let _ = writeln!(s, "moments: {} tensors", names.len());
    for (n, m) in names.iter().zip(&state.first_moments).take(limit) {
        let _ = writeln!(s, "  {:<28} {:?}", n, m.shape());
    }
    if names.len() > limit {
        let _ = writeln!(s, "  ... {} more", names.len() - limit);
    }
    Ok(())
}
