//! Binary model and trace files, and the JSON stats report.
//!
//! Binary files are little-endian. Every file starts with an 8-byte magic
//! string and a `u32` version.

mod model_file;
mod report;
mod trace;

pub use model_file::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use report::{
    AggregateStats, ConfigEcho, StatsReport, UtteranceReport, REPORT_SCHEMA, REPORT_SCHEMA_VERSION,
};
pub use trace::{load_trace, read_trace, save_trace, write_trace, TraceFile, TraceKind, TRACE_MAGIC};

use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

/// Cursor over a byte slice that reports failures with their byte offset.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.offset(), msg)
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    /// A `u32` count bounded by what the remaining bytes could possibly hold.
    pub(crate) fn count(&mut self, what: &str, elem_size: usize) -> Result<usize> {
        let at = self.offset();
        let n = self.u32(what)? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(Error::parse(at, format!("{what} {n} exceeds remaining file size")));
        }
        Ok(n)
    }

    pub(crate) fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let at = self.offset();
        let raw = self.bytes(n.checked_mul(4).ok_or_else(|| self.error("length overflow"))?, what)?;
        let v: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::parse(at + 4 * i as u64, format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    pub(crate) fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        let got = self.bytes(8, "magic")?;
        if got != want {
            return Err(Error::parse(0, format!("bad magic {:?}", String::from_utf8_lossy(got))));
        }
        let at = self.offset();
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::parse(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::contract(format!("length {n} does not fit in u32")))?;
    put_u32(out, v);
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(4 * v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) fn put_header(out: &mut Vec<u8>, magic: &[u8; 8]) {
    out.extend_from_slice(magic);
    put_u32(out, FORMAT_VERSION);
}
