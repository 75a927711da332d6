//! Binary checkpoint of a trained template bank.
//!
//! Layout (little-endian): the magic `CDC1`, then M, C, d and p as u64,
//! then the d x p projection (row-major), the C x d anchors and the M x p
//! template parameters as f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::FeatureVector;
use crate::template::TemplateBank;

pub const MAGIC: &[u8; 4] = b"CDC1";

pub fn to_bytes(bank: &TemplateBank) -> Vec<u8> {
    let (m, c, d, p) = (bank.templates(), bank.classes(), bank.dim(), bank.params());
    let mut out = Vec::with_capacity(4 + 32 + 8 * (d * p + c * d + m * p));
    out.extend_from_slice(MAGIC);
    for n in [m, c, d, p] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    let reals = bank
        .projection()
        .iter()
        .chain(bank.anchors().iter().flat_map(|a| a.iter()))
        .chain(bank.theta().iter().flatten());
    for x in reals {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Reader<'_> {
    fn take8(&mut self) -> Result<[u8; 8]> {
        let chunk = self
            .bytes
            .get(self.offset..self.offset + 8)
            .ok_or(Error::TruncatedFile {
                offset: self.offset,
            })?;
        self.offset += 8;
        Ok(chunk.try_into().expect("8-byte slice"))
    }

    fn count(&mut self) -> Result<usize> {
        let n = u64::from_le_bytes(self.take8()?);
        usize::try_from(n).map_err(|_| Error::CheckpointMismatch(format!("count {n} too large")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.take8()?)))
            .collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<TemplateBank> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            offset: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, offset: 4 };
    let (m, c, d, p) = (r.count()?, r.count()?, r.count()?, r.count()?);
    let expected = d
        .checked_mul(p)
        .zip(c.checked_mul(d))
        .zip(m.checked_mul(p))
        .and_then(|((dp, cd), mp)| dp.checked_add(cd)?.checked_add(mp))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::CheckpointMismatch("shape overflows".into()))?;
    if bytes.len() - r.offset < expected {
        return Err(Error::TruncatedFile {
            offset: bytes.len(),
        });
    }
    if bytes.len() - r.offset > expected {
        return Err(Error::CheckpointMismatch(format!(
            "{} trailing bytes",
            bytes.len() - r.offset - expected
        )));
    }
    let projection = r.reals(d * p)?;
    let anchors = (0..c)
        .map(|_| r.reals(d).map(FeatureVector::new))
        .collect::<Result<Vec<_>>>()?;
    let theta = (0..m).map(|_| r.reals(p)).collect::<Result<Vec<_>>>()?;
    TemplateBank::from_parts(anchors, projection, theta)
}

pub fn write_checkpoint(bank: &TemplateBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(bank)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TemplateBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
