//! Importance persistence: a CSV for people and a binary twin that reloads
//! bit-exactly.
//!
//! CSV layout: `# meta <json>` comment line, then a header
//! `class,w0,…,w{K-1}` and one row per class.
//!
//! Binary layout: `CHIPIMP 1\n`, `<json meta>\n`, `u32 C`, `u32 K`, then
//! `C·K` little-endian `f64`, row-major.

use std::fs;
use std::path::Path;

use super::{ImportanceMatrix, ImportanceMeta};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const IMP_MAGIC: &[u8] = b"CHIPIMP 1\n";

pub fn encode_csv(w: &ImportanceMatrix) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("# meta ");
    out.push_str(&serde_json::to_string(&w.meta).expect("meta serializes"));
    out.push('\n');
    out.push_str("class");
    for k in 0..w.channels() {
        out.push_str(&format!(",w{k}"));
    }
    out.push('\n');
    for (c, row) in w.rows.iter().enumerate() {
        out.push_str(&c.to_string());
        for v in row {
            // shortest representation that parses back to the same f64
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_importance_csv(w: &ImportanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_csv(w))
}

pub fn read_importance_csv(path: impl AsRef<Path>) -> Result<ImportanceMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let meta_line = lines.next().ok_or_else(|| Error::format(0, "empty importance file"))?;
    let meta_json = meta_line
        .trim_end()
        .strip_prefix("# meta ")
        .ok_or_else(|| Error::format(0, "missing '# meta' line"))?;
    let meta: ImportanceMeta =
        serde_json::from_str(meta_json).map_err(|e| Error::format(7, format!("bad meta: {e}")))?;
    offset += meta_line.len() as u64;

    let header = lines
        .next()
        .ok_or_else(|| Error::format(offset, "missing column header"))?;
    let channels = header.trim_end().split(',').count().saturating_sub(1);
    offset += header.len() as u64;

    let mut rows = Vec::new();
    for line in lines {
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            offset += line.len() as u64;
            continue;
        }
        let mut fields = trimmed.split(',');
        let class: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::format(offset, "bad class id"))?;
        if class != rows.len() {
            return Err(Error::format(
                offset,
                format!("expected class {}, found {class}", rows.len()),
            ));
        }
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(offset, format!("bad value: {e}")))?;
        if row.len() != channels {
            return Err(Error::format(
                offset,
                format!("row has {} values, expected {channels}", row.len()),
            ));
        }
        rows.push(row);
        offset += line.len() as u64;
    }
    Ok(ImportanceMatrix {
        site: meta.site,
        rows,
        meta,
    })
}

pub fn encode_bin(w: &ImportanceMatrix) -> Vec<u8> {
    let mut out = IMP_MAGIC.to_vec();
    out.extend_from_slice(serde_json::to_string(&w.meta).expect("meta serializes").as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(w.classes() as u32).to_le_bytes());
    out.extend_from_slice(&(w.channels() as u32).to_le_bytes());
    for row in &w.rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_importance_bin(w: &ImportanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_bin(w))
}

pub fn decode_bin(bytes: &[u8]) -> Result<ImportanceMatrix> {
    if !bytes.starts_with(IMP_MAGIC) {
        return Err(Error::format(0, "missing CHIPIMP magic"));
    }
    let start = IMP_MAGIC.len();
    let nl = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(start as u64, "unterminated meta line"))?;
    let meta: ImportanceMeta = serde_json::from_slice(&bytes[start..start + nl])
        .map_err(|e| Error::format(start as u64, format!("bad meta: {e}")))?;
    let mut pos = start + nl + 1;
    let read_u32 = |pos: usize| -> Result<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::format(pos as u64, "truncated dimensions"))
    };
    let classes = read_u32(pos)? as usize;
    let channels = read_u32(pos + 4)? as usize;
    pos += 8;
    let need = classes * channels * 8;
    if bytes.len() != pos + need {
        return Err(Error::format(
            bytes.len().min(pos + need) as u64,
            format!("expected {need} bytes of weights, found {}", bytes.len() - pos),
        ));
    }
    let rows = bytes[pos..]
        .chunks_exact(channels.max(1) * 8)
        .take(classes)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect()
        })
        .collect();
    Ok(ImportanceMatrix {
        site: meta.site,
        rows,
        meta,
    })
}

pub fn read_importance_bin(path: impl AsRef<Path>) -> Result<ImportanceMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bin(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImportanceMatrix {
        let mut w = ImportanceMatrix::from_rows(2, vec![vec![0.1, 0.0, -3.25e-9], vec![1.0 / 3.0, 7.0, 0.0]]);
        w.meta.net_hash = "abc".into();
        w
    }

    #[test]
    fn binary_twin_is_bit_exact() {
        let w = sample();
        let back = decode_bin(&encode_bin(&w)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn csv_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let w = sample();
        write_importance_csv(&w, &path).unwrap();
        let back = read_importance_csv(&path).unwrap();
        assert_eq!(back.rows, w.rows);
        assert_eq!(back.meta.net_hash, "abc");
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let bytes = encode_bin(&sample());
        let err = decode_bin(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
