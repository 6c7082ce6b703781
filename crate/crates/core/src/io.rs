//! `PFE1` embedding files.
//!
//! ```text
//! header : b"PFE1" | version u16 | flags u16 | D u32 | N u32     (little-endian)
//! record : label_len u16 | label UTF-8 | D × f32 mu | [D × f32 sigma_sq]
//! ```
//! Flag bit 0 marks the presence of variances. A zero-length label loads as
//! an unlabelled embedding. Values are 32-bit on disk and 64-bit in memory.

use std::path::Path;

use crate::embedding::GaussianEmbedding;
use crate::error::{PfeError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PFE1";
pub const EMBEDDING_FORMAT_VERSION: u16 = 1;
pub const FLAG_HAS_VARIANCES: u16 = 1;
/// Variance assigned to every dimension when a file carries no variances.
pub const DEFAULT_VARIANCE: f64 = 1.0;

const HEADER_LEN: usize = 16;

pub fn encode_embeddings(list: &[GaussianEmbedding], with_variances: bool) -> Result<Vec<u8>> {
    let d = list.first().map(|e| e.dim()).unwrap_or(0);
    if let Some(e) = list.iter().find(|e| e.dim() != d) {
        return Err(PfeError::Dimension {
            expected: d,
            found: e.dim(),
        });
    }
    let n = u32::try_from(list.len()).map_err(|_| PfeError::validation("too many records"))?;
    let d32 = u32::try_from(d).map_err(|_| PfeError::validation("dimension too large"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + list.len() * (2 + 8 * d));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_FORMAT_VERSION.to_le_bytes());
    let flags = if with_variances { FLAG_HAS_VARIANCES } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for e in list {
        let label = e.label().unwrap_or("").as_bytes();
        let len = u16::try_from(label.len())
            .map_err(|_| PfeError::validation("label longer than 65535 bytes"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(label);
        for m in e.mu() {
            out.extend_from_slice(&(*m as f32).to_le_bytes());
        }
        if with_variances {
            for s in e.sigma_sq() {
                out.extend_from_slice(&(*s as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PfeError::parse(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_embeddings(buf: &[u8]) -> Result<Vec<GaussianEmbedding>> {
    if buf.is_empty() {
        return Err(PfeError::parse(0, "empty file"));
    }
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != EMBEDDING_MAGIC {
        return Err(PfeError::parse(0, "bad magic, expected PFE1"));
    }
    let version = c.u16("version")?;
    if version != EMBEDDING_FORMAT_VERSION {
        return Err(PfeError::parse(4, format!("unsupported format version {version}")));
    }
    let flags = c.u16("flags")?;
    let has_var = flags & FLAG_HAS_VARIANCES != 0;
    let d = c.u32("dimension")? as usize;
    let n = c.u32("record count")? as usize;
    if n > 0 && d == 0 {
        return Err(PfeError::parse(8, "records declared with zero dimension"));
    }
    if !has_var && n > 0 {
        log::warn!("file has no variances; using sigma_sq = {DEFAULT_VARIANCE} on every dimension");
    }
    // every record needs at least its label length and means
    if n.saturating_mul(2 + 4 * d) > buf.len() - c.pos {
        return Err(PfeError::parse(
            c.pos,
            format!("record count mismatch: {n} records cannot fit in {} bytes", buf.len() - c.pos),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let start = c.pos;
        let len = c.u16("label length")? as usize;
        let label = std::str::from_utf8(c.take(len, "label")?)
            .map_err(|_| PfeError::parse(start + 2, "label is not UTF-8"))?
            .to_string();
        let mu = c.f32s(d, "mean")?;
        let var = if has_var {
            c.f32s(d, "variances")?
        } else {
            vec![DEFAULT_VARIANCE; d]
        };
        let e = GaussianEmbedding::new_clamped(mu, var)
            .map_err(|e| PfeError::parse(start, format!("record {r}: {e}")))?;
        out.push(if label.is_empty() { e } else { e.with_label(label) });
    }
    if c.pos != buf.len() {
        return Err(PfeError::parse(
            c.pos,
            format!("record count mismatch: {} trailing bytes after {n} records", buf.len() - c.pos),
        ));
    }
    Ok(out)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<GaussianEmbedding>> {
    decode_embeddings(&std::fs::read(path)?)
}

/// Writes with variances (flag bit 0 set).
pub fn write_embeddings(path: impl AsRef<Path>, list: &[GaussianEmbedding]) -> Result<()> {
    std::fs::write(path, encode_embeddings(list, true)?)?;
    Ok(())
}

/// Writes means only (flag bit 0 clear).
pub fn write_point_embeddings(path: impl AsRef<Path>, list: &[GaussianEmbedding]) -> Result<()> {
    std::fs::write(path, encode_embeddings(list, false)?)?;
    Ok(())
}
