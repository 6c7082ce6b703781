//! Binary head checkpoint.
//!
//! Layout (little-endian): magic `PFEH`, format version `u16`, `Din`, `H`, `D`
//! as `u32`, then `w1, b1, gamma1, beta1, w2, b2, gamma2, beta2` as `f64`, then
//! the running statistics `mean1, var1, mean2, var2` as `f64`.

use std::path::Path;

use super::head::{HeadMode, ParamTensor, UncertaintyHead};
use crate::error::{PfeError, Result};

pub const HEAD_MAGIC: &[u8; 4] = b"PFEH";
pub const HEAD_FORMAT_VERSION: u16 = 1;

pub fn encode_head(head: &UncertaintyHead) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 8 * (head.param_count() + 2 * head.hidden + 2));
    out.extend_from_slice(HEAD_MAGIC);
    out.extend_from_slice(&HEAD_FORMAT_VERSION.to_le_bytes());
    for d in [head.din, head.hidden, head.dout] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let mut put = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for t in ParamTensor::ORDER {
        put(head.tensor(t));
    }
    put(&head.running_mean1);
    put(&head.running_var1);
    put(&[head.running_mean2, head.running_var2]);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PfeError::parse(self.pos, format!("truncated while reading {what}")));
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

    fn f64s(&mut self, dst: &mut [f64], what: &str) -> Result<()> {
        for d in dst.iter_mut() {
            *d = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        }
        Ok(())
    }
}

/// Decodes a checkpoint; the returned head is in inference mode.
pub fn decode_head(buf: &[u8]) -> Result<UncertaintyHead> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != HEAD_MAGIC {
        return Err(PfeError::parse(0, "bad magic, expected PFEH"));
    }
    let version = r.u16("version")?;
    if version != HEAD_FORMAT_VERSION {
        return Err(PfeError::parse(4, format!("unsupported head format version {version}")));
    }
    let din = r.u32("Din")? as usize;
    let hidden = r.u32("H")? as usize;
    let dout = r.u32("D")? as usize;
    let floats = hidden
        .checked_mul(din)
        .zip(dout.checked_mul(hidden))
        .and_then(|(a, b)| a.checked_add(b))
        .and_then(|x| x.checked_add(5 * hidden + dout + 4));
    match floats.and_then(|f| f.checked_mul(8)) {
        Some(bytes) if bytes <= buf.len() - r.pos => {}
        _ => return Err(PfeError::parse(r.pos, "truncated: declared dimensions exceed payload")),
    }
    let mut head = UncertaintyHead::init(din, hidden, dout, 0)
        .map_err(|_| PfeError::parse(6, "head dimensions must be >= 1"))?;
    for t in ParamTensor::ORDER {
        r.f64s(head.tensor_mut(t), t.name())?;
    }
    r.f64s(&mut head.running_mean1, "running_mean1")?;
    r.f64s(&mut head.running_var1, "running_var1")?;
    let mut tail = [0.0; 2];
    r.f64s(&mut tail, "bn2 running statistics")?;
    head.running_mean2 = tail[0];
    head.running_var2 = tail[1];
    if r.pos != buf.len() {
        return Err(PfeError::parse(r.pos, "trailing bytes after checkpoint"));
    }
    head.mode = HeadMode::Inference;
    Ok(head)
}

pub fn save_head(path: impl AsRef<Path>, head: &UncertaintyHead) -> Result<()> {
    std::fs::write(path, encode_head(head))?;
    Ok(())
}

pub fn load_head(path: impl AsRef<Path>) -> Result<UncertaintyHead> {
    decode_head(&std::fs::read(path)?)
}
