//! Binary checkpoint formats (all integers little-endian).
//!
//! Parameters (`NLNN`):
//! ```text
//! "NLNN" | u32 version | u32 param count |
//!   per param: u32 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 values[prod(dims)]
//! ```
//! Optimizer state (`NLOS`):
//! ```text
//! "NLOS" | u32 version | u64 step | f64 base lr | f64 lr | u8 has schedule |
//!   u32 total epochs | f64 lr min | f64 momentum product | u32 param count |
//!   per param: u32 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 m[..] | f32 v[..]
//! ```

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::optim::{CosineSchedule, OptimizerState};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &[u8; 4] = b"NLNN";
pub const OPTIM_MAGIC: &[u8; 4] = b"NLOS";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn err(&self, message: impl Into<String>) -> NnError {
        NnError::Format {
            offset: self.offset,
            message: message.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.err("truncated record"),
            _ => NnError::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != expected {
            self.offset -= 4;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 16 {
            return Err(self.err(format!("implausible name length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(|_| self.err("truncated name"))?;
        self.offset += len as u64;
        String::from_utf8(buf).map_err(|_| self.err("parameter name is not UTF-8"))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(self.err(format!("rank {rank} outside 1..=4")));
        }
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn values(&mut self, n: usize) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32()).collect()
    }
}

fn write_name_dims<W: Write>(w: &mut W, name: &str, dims: &[usize]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_params<W: Write>(store: &ParamStore<f32>, mut w: W) -> Result<()> {
    w.write_all(PARAMS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        write_name_dims(&mut w, &p.name, p.value.shape())?;
        write_values(&mut w, p.value.data())?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: R) -> Result<ParamStore<f32>> {
    let mut r = Reader { inner: r, offset: 0 };
    r.magic(PARAMS_MAGIC)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.offset;
        let name = r.name()?;
        let dims = r.dims()?;
        let values = r.values(dims.iter().product())?;
        let t = Tensor::new(&dims, values)?;
        store.add(name, t).map_err(|e| NnError::Format {
            offset: at,
            message: e.to_string(),
        })?;
    }
    Ok(store)
}

pub fn write_optimizer<W: Write>(
    state: &OptimizerState<f32>,
    params: &ParamStore<f32>,
    mut w: W,
) -> Result<()> {
    if state.first_moments.len() != params.len() {
        return Err(NnError::State("optimizer state does not match parameter store".into()));
    }
    w.write_all(OPTIM_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&state.step.to_le_bytes())?;
    w.write_all(&state.base_lr.to_le_bytes())?;
    w.write_all(&state.lr.to_le_bytes())?;
    let (has, total, lr_min) = match state.schedule {
        Some(s) => (1u8, s.total_epochs, s.lr_min),
        None => (0u8, 0, 0.0),
    };
    w.write_all(&[has])?;
    w.write_all(&total.to_le_bytes())?;
    w.write_all(&lr_min.to_le_bytes())?;
    w.write_all(&state.mu_product.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for ((p, m), v) in params.iter().zip(&state.first_moments).zip(&state.second_moments) {
        write_name_dims(&mut w, &p.name, m.shape())?;
        write_values(&mut w, m.data())?;
        write_values(&mut w, v.data())?;
    }
    Ok(())
}

/// Reads optimizer state; returns it with the parameter names in file order.
pub fn read_optimizer<R: Read>(r: R) -> Result<(OptimizerState<f32>, Vec<String>)> {
    let mut r = Reader { inner: r, offset: 0 };
    r.magic(OPTIM_MAGIC)?;
    let step = r.u64()?;
    let base_lr = r.f64()?;
    let lr = r.f64()?;
    let has = r.u8()?;
    let total_epochs = r.u32()?;
    let lr_min = r.f64()?;
    let mu_product = r.f64()?;
    let count = r.u32()?;
    let mut names = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for _ in 0..count {
        names.push(r.name()?);
        let dims = r.dims()?;
        let n = dims.iter().product();
        first.push(Tensor::new(&dims, r.values(n)?)?);
        second.push(Tensor::new(&dims, r.values(n)?)?);
    }
    Ok((
        OptimizerState {
            step,
            base_lr,
            lr,
            schedule: (has != 0).then_some(CosineSchedule { total_epochs, lr_min }),
            mu_product,
            first_moments: first,
            second_moments: second,
        },
        names,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{NAdam, NAdamConfig};

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.conv.w", Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0)).unwrap();
        s.add("enc.conv.b", Tensor::from_fn(&[2], |i| i as f32)).unwrap();
        s
    }

    #[test]
    fn params_round_trip() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NLNN");
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn optimizer_round_trip() {
        let s = sample_store();
        let opt = NAdam::new(NAdamConfig::default(), &s).with_schedule(CosineSchedule {
            total_epochs: 50,
            lr_min: 0.0,
        });
        let mut buf = Vec::new();
        write_optimizer(opt.state(), &s, &mut buf).unwrap();
        let (state, names) = read_optimizer(buf.as_slice()).unwrap();
        assert_eq!(&state, opt.state());
        assert_eq!(names, vec!["enc.conv.w", "enc.conv.b"]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_params(bad.as_slice()), Err(NnError::Format { offset: 0, .. })));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_params(cut), Err(NnError::Format { .. })));
    }
}
