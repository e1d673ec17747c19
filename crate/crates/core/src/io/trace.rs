//! Trace file layout: header, kind byte (0 features, 1 encoder frames),
//! `u32` vocab size, `u32` frame count, `u32` frame dim, `f64` frame duration
//! in ms, then `count * dim` f32 values frame by frame.

use std::path::Path;

use super::{put_f32s, put_header, put_len, Reader};
use crate::error::{Error, Result};
use crate::model::{EncFrame, ModelWeights};

pub const TRACE_MAGIC: &[u8; 8] = b"RNNTTRCE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// Raw feature frames; the model's encoder runs on them.
    Features,
    /// Precomputed encoder outputs fed straight to the decoder.
    Encoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub kind: TraceKind,
    pub vocab_size: usize,
    pub frame_duration_ms: f64,
    pub dim: usize,
    pub frames: Vec<Vec<f32>>,
}

impl TraceFile {
    pub fn encoded(vocab_size: usize, frame_duration_ms: f64, frames: &[EncFrame]) -> Result<Self> {
        let dim = frames.first().map_or(0, |f| f.vec.len());
        let t = TraceFile {
            kind: TraceKind::Encoded,
            vocab_size,
            frame_duration_ms,
            dim,
            frames: frames.iter().map(|f| f.vec.clone()).collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty("trace frames"));
        }
        if !(self.frame_duration_ms.is_finite() && self.frame_duration_ms > 0.0) {
            return Err(Error::Config(format!("bad frame duration {}", self.frame_duration_ms)));
        }
        if let Some(i) = self.frames.iter().position(|f| f.len() != self.dim) {
            return Err(Error::contract(format!("trace frame {i} has wrong dimension")));
        }
        Ok(())
    }

    /// Checks that the trace fits `model`.
    pub fn check_model(&self, model: &ModelWeights) -> Result<()> {
        let c = &model.config;
        let want = match self.kind {
            TraceKind::Features => c.feat_dim,
            TraceKind::Encoded => c.join_dim,
        };
        if self.dim != want {
            return Err(Error::Config(format!(
                "trace dim {} does not match model dim {want}",
                self.dim
            )));
        }
        if self.vocab_size != c.vocab_size {
            return Err(Error::Config(format!(
                "trace vocab {} does not match model vocab {}",
                self.vocab_size, c.vocab_size
            )));
        }
        Ok(())
    }

    pub fn enc_frames(&self) -> Result<Vec<EncFrame>> {
        if self.kind != TraceKind::Encoded {
            return Err(Error::Config("trace holds features, not encoder frames".into()));
        }
        Ok(self
            .frames
            .iter()
            .enumerate()
            .map(|(t, v)| EncFrame { t, vec: v.clone() })
            .collect())
    }
}

pub fn write_trace(trace: &TraceFile) -> Result<Vec<u8>> {
    trace.validate()?;
    let mut out = Vec::with_capacity(33 + 4 * trace.dim * trace.frames.len());
    put_header(&mut out, TRACE_MAGIC);
    out.push(match trace.kind {
        TraceKind::Features => 0,
        TraceKind::Encoded => 1,
    });
    put_len(&mut out, trace.vocab_size)?;
    put_len(&mut out, trace.frames.len())?;
    put_len(&mut out, trace.dim)?;
    out.extend_from_slice(&trace.frame_duration_ms.to_le_bytes());
    for f in &trace.frames {
        put_f32s(&mut out, f);
    }
    Ok(out)
}

pub fn read_trace(buf: &[u8]) -> Result<TraceFile> {
    let mut r = Reader::new(buf);
    r.magic(TRACE_MAGIC)?;
    let at = r.offset();
    let kind = match r.u8("trace kind")? {
        0 => TraceKind::Features,
        1 => TraceKind::Encoded,
        k => return Err(Error::parse(at, format!("unknown trace kind {k}"))),
    };
    let vocab_size = r.u32("vocab size")? as usize;
    let at = r.offset();
    let count = r.u32("frame count")? as usize;
    let dim = r.u32("frame dim")? as usize;
    if count == 0 || dim == 0 {
        return Err(Error::parse(at, "trace must have at least one frame of positive dimension"));
    }
    let at = r.offset();
    let frame_duration_ms = r.f64("frame duration")?;
    if !(frame_duration_ms.is_finite() && frame_duration_ms > 0.0) {
        return Err(Error::parse(at, format!("bad frame duration {frame_duration_ms}")));
    }
    let body = count.checked_mul(dim).and_then(|n| n.checked_mul(4));
    let remaining = buf.len() as u64 - r.offset();
    if body.is_none_or(|b| b as u64 != remaining) {
        return Err(r.error(format!(
            "body is {remaining} bytes, header says {count} frames of dim {dim}"
        )));
    }
    let frames = (0..count)
        .map(|_| r.f32_vec(dim, "frame"))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(TraceFile {
        kind,
        vocab_size,
        frame_duration_ms,
        dim,
        frames,
    })
}

pub fn save_trace(trace: &TraceFile, path: &Path) -> Result<()> {
    std::fs::write(path, write_trace(trace)?)?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<TraceFile> {
    read_trace(&std::fs::read(path)?)
}
