//! On-disk datasets: one directory per sequence plus a top-level manifest.
//!
//! ```text
//! <root>/manifest.json
//! <root>/seq_0000/sequence.json   scene config, primitives, ego path, file names
//! <root>/seq_0000/events.evt      EVT1 stream
//! <root>/seq_0000/depth.eldr      ELDR frames back to back
//! <root>/seq_0000/states.json     per-frame scene states
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth_extrap::{read_depth_stream, write_depth_stream};
use crate::error::{Error, Result};
use crate::event_core::{read_events, write_events, Micros};
use crate::keyframe::{DetectorSample, Rule};
use crate::scene_sim::{
    generate_sequence, random_scene, Primitive, SceneConfig, SceneState, ScenarioConfig, Sequence, Trajectory,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SEQUENCE_FILE: &str = "sequence.json";
pub const EVENTS_FILE: &str = "events.evt";
pub const DEPTH_FILE: &str = "depth.eldr";
pub const STATES_FILE: &str = "states.json";
pub const DATASET_FORMAT: &str = "eventdepth-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceFiles {
    pub events: String,
    pub depth: String,
    pub states: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub config: SceneConfig,
    pub primitives: Vec<Primitive>,
    pub ego: Trajectory,
    pub files: SequenceFiles,
    pub frames: usize,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    pub seed: u64,
    pub frames: usize,
    pub events: usize,
    pub duration_us: Micros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    /// The run's config file, verbatim.
    pub config_text: Option<String>,
    pub scene: SceneConfig,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub sequences: Vec<SequenceEntry>,
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

/// Seed of the `index`-th sequence of a dataset.
pub fn sequence_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:04}")
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<SequenceManifest> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let files = SequenceFiles {
        events: EVENTS_FILE.into(),
        depth: DEPTH_FILE.into(),
        states: STATES_FILE.into(),
    };
    let create = |name: &str| -> Result<BufWriter<fs::File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(fs::File::create(&p).map_err(|e| io_err(&p, e))?))
    };
    let mut w = create(&files.events)?;
    write_events(&seq.events, &mut w)?;
    w.flush()?;
    let mut w = create(&files.depth)?;
    write_depth_stream(&seq.depth, 1.0, &mut w)?;
    w.flush()?;
    write_json(&dir.join(&files.states), &seq.states)?;
    let manifest = SequenceManifest {
        config: seq.config.clone(),
        primitives: seq.primitives.clone(),
        ego: seq.ego.clone(),
        files,
        frames: seq.depth.len(),
        events: seq.events.len(),
    };
    write_json(&dir.join(SEQUENCE_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let m: SequenceManifest = read_json(&dir.join(SEQUENCE_FILE))?;
    m.config.validate()?;
    let open = |name: &str| -> Result<BufReader<fs::File>> {
        let p = dir.join(name);
        Ok(BufReader::new(fs::File::open(&p).map_err(|e| io_err(&p, e))?))
    };
    let events = read_events(open(&m.files.events)?)?;
    let depth = read_depth_stream(open(&m.files.depth)?)?;
    let states: Vec<SceneState> = read_json(&dir.join(&m.files.states))?;
    let g = m.config.geometry();
    if events.geometry() != g || depth.iter().any(|d| d.geometry != g) {
        return Err(Error::Data(format!("{}: file geometry does not match the manifest", dir.display())));
    }
    if depth.len() != m.frames || states.len() != m.frames || events.len() != m.events {
        return Err(Error::Data(format!(
            "{}: manifest lists {} frames / {} events, files hold {} depth, {} states, {} events",
            dir.display(),
            m.frames,
            m.events,
            depth.len(),
            states.len(),
            events.len()
        )));
    }
    Ok(Sequence {
        config: m.config,
        primitives: m.primitives,
        ego: m.ego,
        depth,
        events,
        states,
    })
}

/// Generates `count` random sequences under `root`, `threads` at a time.
/// Output is independent of `threads`.
pub fn generate_dataset(
    root: &Path,
    scene: &SceneConfig,
    scenario: &ScenarioConfig,
    count: usize,
    seed: u64,
    config_text: Option<String>,
    threads: usize,
) -> Result<DatasetManifest> {
    scene.validate()?;
    scenario.validate()?;
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let threads = threads.max(1);
    let one = |i: usize| -> Result<SequenceEntry> {
        let s = sequence_seed(seed, i);
        let sc = random_scene(scene, scenario, s)?;
        let seq = generate_sequence(&sc.config, &sc.primitives, &sc.ego)?;
        let name = sequence_name(i);
        let m = write_sequence(&root.join(&name), &seq)?;
        Ok(SequenceEntry {
            name,
            seed: s,
            frames: m.frames,
            events: m.events,
            duration_us: seq.duration_us(),
        })
    };
    let mut slots: Vec<Option<Result<SequenceEntry>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(count.div_ceil(threads).max(1)).enumerate() {
            let one = &one;
            let base = w * count.div_ceil(threads).max(1);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(one(base + k));
                }
            });
        }
    });
    let sequences = slots
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config_text,
        scene: scene.clone(),
        scenario: scenario.clone(),
        seed,
        sequences,
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("no dataset manifest at {}", path.display())));
    }
    let m: DatasetManifest = read_json(&path)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Data(format!("{}: unknown format {:?}", path.display(), m.format)));
    }
    Ok(m)
}

pub fn sequence_dir(root: &Path, entry: &SequenceEntry) -> PathBuf {
    root.join(&entry.name)
}

/// All sequences of a dataset, in manifest order.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<Sequence>)> {
    let m = read_manifest(root)?;
    let seqs = m
        .sequences
        .iter()
        .map(|e| read_sequence(&sequence_dir(root, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, seqs))
}

/// One line of a labeled keyframe dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub sequence: usize,
    pub window: usize,
    pub t_end: Micros,
    pub label: bool,
    pub rules: Vec<String>,
}

pub fn label_entries(samples: &[DetectorSample]) -> Vec<LabelEntry> {
    samples
        .iter()
        .map(|s| LabelEntry {
            sequence: s.sequence,
            window: s.window,
            t_end: s.t,
            label: s.label,
            rules: s.rules.iter().map(|r: &Rule| r.name().to_string()).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            height: 16,
            width: 16,
            focal_px: 12.0,
            duration_s: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = random_scene(&small(), &ScenarioConfig::default(), 5).unwrap();
        let seq = generate_sequence(&sc.config, &sc.primitives, &sc.ego).unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        assert_eq!(read_sequence(dir.path()).unwrap(), seq);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sc = ScenarioConfig::default();
        let ma = generate_dataset(a.path(), &small(), &sc, 3, 9, None, 1).unwrap();
        let mb = generate_dataset(b.path(), &small(), &sc, 3, 9, None, 3).unwrap();
        assert_eq!(ma, mb);
        for e in &ma.sequences {
            for f in [SEQUENCE_FILE, EVENTS_FILE, DEPTH_FILE, STATES_FILE] {
                let x = fs::read(a.path().join(&e.name).join(f)).unwrap();
                let y = fs::read(b.path().join(&e.name).join(f)).unwrap();
                assert_eq!(x, y, "{}/{f}", e.name);
            }
        }
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(dir.path(), &small(), &ScenarioConfig::default(), 0, 1, None, 2).unwrap();
        assert!(m.sequences.is_empty());
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Data(_))));
    }
}
