//! Model files: an `NLNN` parameter file plus a JSON architecture sidecar
//! (`<file>.arch.json`) carrying the descriptor needed to rebuild the graph.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use eventdepth_nn::checkpoint::{read_params, write_params};
use eventdepth_nn::ParamStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn arch_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".arch.json");
    PathBuf::from(s)
}

pub fn save<A: Serialize>(path: &Path, arch: &A, params: &ParamStore<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    let mut json = serde_json::to_string_pretty(arch)?;
    json.push('\n');
    std::fs::write(arch_path(path), json)?;
    Ok(())
}

pub fn load<A: DeserializeOwned>(path: &Path) -> Result<(A, ParamStore<f32>)> {
    let params = read_params(BufReader::new(File::open(path)?))?;
    let apath = arch_path(path);
    let text = std::fs::read_to_string(&apath)
        .map_err(|e| Error::Data(format!("architecture file {}: {e}", apath.display())))?;
    Ok((serde_json::from_str(&text)?, params))
}

/// Checks that `params` holds exactly the expected names and shapes.
pub fn check_params(params: &ParamStore<f32>, expected: &[(String, Vec<usize>)]) -> Result<()> {
    if params.len() != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} parameters, architecture needs {}",
            params.len(),
            expected.len()
        )));
    }
    for (p, (name, shape)) in params.iter().zip(expected) {
        if &p.name != name || p.value.shape() != shape.as_slice() {
            return Err(Error::Data(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                p.name,
                p.value.shape(),
                name,
                shape
            )));
        }
    }
    Ok(())
}
