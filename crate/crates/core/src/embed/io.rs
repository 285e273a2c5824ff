use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Embedding;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"MFEB";
pub const EMBEDDING_VERSION: u32 = 1;

/// Stored vectors are f32, so the norm check on read is loose.
const STORED_NORM_TOL: f64 = 1e-3;

fn check_uniform(set: &[Embedding]) -> Result<usize> {
    let dim = set.first().map_or(0, Embedding::dim);
    if let Some(e) = set.iter().find(|e| e.dim() != dim) {
        return Err(Error::Validation(format!(
            "mixed embedding widths: {dim} and {}",
            e.dim()
        )));
    }
    Ok(dim)
}

fn from_stored(raw: Vec<f64>, identity: u32, source: u64, masked: bool, what: &str) -> Result<Embedding> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= STORED_NORM_TOL) {
        return Err(Error::Validation(format!(
            "{what}: stored embedding norm {norm} is not 1"
        )));
    }
    if (norm - 1.0).abs() <= 1e-12 {
        return Embedding::new(raw, identity, source, masked);
    }
    Embedding::normalized(raw, identity, source, masked)
}

/// Little-endian binary: header `MFEB`, version u32, dim u32, count u64,
/// then per record identity u32, source u64, masked u8 and dim f32s.
pub fn write_embeddings<W: Write>(mut w: W, set: &[Embedding]) -> Result<()> {
    let dim = check_uniform(set)?;
    let mut buf = Vec::with_capacity(20 + set.len() * (13 + 4 * dim));
    buf.extend_from_slice(&EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for e in set {
        buf.extend_from_slice(&e.identity.to_le_bytes());
        buf.extend_from_slice(&e.source.to_le_bytes());
        buf.push(e.masked as u8);
        for v in e.vector() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<embeddings>", e))
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Vec<Embedding>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<embeddings>", e))?;
    let bad = |m: &str| Error::Validation(format!("embedding file: {m}"));
    if buf.len() < 20 || buf[..4] != EMBEDDING_MAGIC {
        return Err(bad("missing MFEB header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let count = u64_at(12) as usize;
    let rec = 13 + 4 * dim;
    if buf.len() != 20 + count.saturating_mul(rec) {
        return Err(bad(&format!(
            "length {} does not match {count} records of width {dim}",
            buf.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let o = 20 + i * rec;
        let identity = u32_at(o);
        let source = u64_at(o + 4);
        let masked = match buf[o + 12] {
            0 => false,
            1 => true,
            b => return Err(bad(&format!("record {i}: masked flag {b}"))),
        };
        let raw = (0..dim)
            .map(|k| {
                let p = o + 13 + 4 * k;
                f32::from_le_bytes(buf[p..p + 4].try_into().unwrap()) as f64
            })
            .collect();
        out.push(from_stored(raw, identity, source, masked, &format!("record {i}"))?);
    }
    Ok(out)
}

/// CSV with header `identity,source,masked,v0,...`.
pub fn write_embeddings_csv(path: &Path, set: &[Embedding]) -> Result<()> {
    let dim = check_uniform(set)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["identity".to_string(), "source".into(), "masked".into()];
    header.extend((0..dim).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for e in set {
        let mut row = vec![e.identity.to_string(), e.source.to_string(), e.masked.to_string()];
        row.extend(e.vector().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<Embedding>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse_err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: m,
        };
        if rec.len() < 4 {
            return Err(parse_err("expected identity, source, masked and a vector".into()));
        }
        let identity = field(0).parse().map_err(|e| parse_err(format!("identity: {e}")))?;
        let source = field(1).parse().map_err(|e| parse_err(format!("source: {e}")))?;
        let masked = field(2).parse().map_err(|e| parse_err(format!("masked: {e}")))?;
        let raw = (3..rec.len())
            .map(|k| field(k).parse::<f64>().map_err(|e| parse_err(format!("v{}: {e}", k - 3))))
            .collect::<Result<Vec<_>>>()?;
        out.push(from_stored(raw, identity, source, masked, &format!("line {line}"))?);
    }
    check_uniform(&out)?;
    Ok(out)
}
