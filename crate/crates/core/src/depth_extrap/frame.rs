use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::event_core::{Geometry, Micros};

/// Metric z-depth raster. Zero marks an invalid (no-return) pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub geometry: Geometry,
    pub values: Vec<f32>,
    pub timestamp: Micros,
}

impl DepthFrame {
    pub fn new(geometry: Geometry, values: Vec<f32>, timestamp: Micros) -> Result<Self> {
        if values.len() != geometry.pixels() {
            return Err(Error::Geometry(format!(
                "{} depth values for a {}x{} frame",
                values.len(),
                geometry.height,
                geometry.width
            )));
        }
        Ok(Self {
            geometry,
            values,
            timestamp,
        })
    }

    pub fn filled(geometry: Geometry, value: f32, timestamp: Micros) -> Self {
        Self {
            geometry,
            values: vec![value; geometry.pixels()],
            timestamp,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.geometry.width + x]
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn with_timestamp(mut self, t: Micros) -> Self {
        self.timestamp = t;
        self
    }

    /// Checks `values ⊂ {0} ∪ (0, max_range]`.
    pub fn validate(&self, max_range: f32) -> Result<()> {
        match self
            .values
            .iter()
            .position(|&v| !(v == 0.0 || (v > 0.0 && v <= max_range)))
        {
            Some(i) => Err(Error::Data(format!(
                "depth {} at pixel {i} outside {{0}} ∪ (0, {max_range}]",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn ensure_same_geometry(&self, other: &DepthFrame) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::Geometry(format!(
                "depth frames {}x{} and {}x{} differ",
                self.geometry.height, self.geometry.width, other.geometry.height, other.geometry.width
            )));
        }
        Ok(())
    }
}

pub const DEPTH_MAGIC: &[u8; 4] = b"ELDR";
pub const DEPTH_HEADER_BYTES: usize = 20;

/// `"ELDR" | u16 H | u16 W | u64 t_us | f32 scale | H*W f32 row-major`.
/// Stored values are in units of `scale` meters; 0 stays invalid.
pub fn write_depth<W: Write>(frame: &DepthFrame, scale: f32, mut w: W) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("depth scale {scale} must be positive")));
    }
    let to_u16 = |v: usize| u16::try_from(v).map_err(|_| Error::Geometry(format!("dimension {v} exceeds u16")));
    let mut buf = Vec::with_capacity(DEPTH_HEADER_BYTES + 4 * frame.values.len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&to_u16(frame.geometry.height)?.to_le_bytes());
    buf.extend_from_slice(&to_u16(frame.geometry.width)?.to_le_bytes());
    buf.extend_from_slice(&frame.timestamp.to_le_bytes());
    buf.extend_from_slice(&scale.to_le_bytes());
    for &v in &frame.values {
        buf.extend_from_slice(&(v / scale).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_depth<R: Read>(mut r: R) -> Result<DepthFrame> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (frame, used) = parse_depth(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Parse {
            offset: used as u64,
            message: format!("{} trailing bytes after depth frame", bytes.len() - used),
        });
    }
    Ok(frame)
}

/// Frames written back to back, as in a sequence's depth file.
pub fn write_depth_stream<W: Write>(frames: &[DepthFrame], scale: f32, mut w: W) -> Result<()> {
    for f in frames {
        write_depth(f, scale, &mut w)?;
    }
    Ok(())
}

pub fn read_depth_stream<R: Read>(mut r: R) -> Result<Vec<DepthFrame>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut frames = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (f, used) = parse_depth(&bytes[at..], at)?;
        frames.push(f);
        at += used;
    }
    Ok(frames)
}

/// One frame from the front of `bytes`; offsets in errors are shifted by `base`.
fn parse_depth(bytes: &[u8], base: usize) -> Result<(DepthFrame, usize)> {
    let perr = |offset: usize, m: String| Error::Parse {
        offset: (base + offset) as u64,
        message: m,
    };
    if bytes.len() < DEPTH_HEADER_BYTES {
        return Err(perr(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != DEPTH_MAGIC {
        return Err(perr(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let timestamp = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let scale = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(perr(16, format!("depth scale {scale} must be positive")));
    }
    let need = DEPTH_HEADER_BYTES + 4 * h * w;
    if bytes.len() < need {
        let body = bytes.len() - DEPTH_HEADER_BYTES;
        return Err(perr(
            DEPTH_HEADER_BYTES + (body / 4) * 4,
            format!("expected {} depth values, found {} bytes", h * w, body),
        ));
    }
    let mut values = Vec::with_capacity(h * w);
    for (i, c) in bytes[DEPTH_HEADER_BYTES..need].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap()) * scale;
        if !(v.is_finite() && v >= 0.0) {
            return Err(perr(DEPTH_HEADER_BYTES + 4 * i, format!("invalid depth value {v}")));
        }
        values.push(v);
    }
    Ok((DepthFrame::new(Geometry::new(h, w), values, timestamp)?, need))
}
