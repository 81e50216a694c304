//! Dataset file: `CHIPDATA 1\n`, one JSON header line, then `S·N`
//! fixed-width little-endian records:
//! `u32 image_id | ceil(K/8) gate bytes | K×f32 z | C×f32 f | C×f32 g`.

use std::fs;
use std::path::Path;

use super::{DatasetHeader, PerturbedDataset, PerturbedRecord};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::net::{GateVector, NetworkSpec};

pub const DATA_MAGIC: &[u8] = b"CHIPDATA 1\n";

pub(crate) fn encode(ds: &PerturbedDataset) -> Result<Vec<u8>> {
    let h = &ds.header;
    if ds.records.len() != h.record_count() {
        return Err(Error::invalid(format!(
            "dataset has {} records, header declares {}",
            ds.records.len(),
            h.record_count()
        )));
    }
    let json = serde_json::to_vec(h).expect("header serializes");
    let mut out = Vec::with_capacity(DATA_MAGIC.len() + json.len() + 1 + h.record_count() * h.record_size());
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for r in &ds.records {
        if r.pooled.len() != h.channels || r.base_pred.len() != h.classes || r.pert_pred.len() != h.classes {
            return Err(Error::invalid("record dimensions disagree with header"));
        }
        out.extend_from_slice(&r.image_id.to_le_bytes());
        out.extend_from_slice(&r.gate.pack());
        for v in r.pooled.iter().chain(&r.base_pred).chain(&r.pert_pred) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<PerturbedDataset> {
    if !bytes.starts_with(DATA_MAGIC) {
        return Err(Error::format(0, "missing CHIPDATA magic"));
    }
    let start = DATA_MAGIC.len();
    let nl = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(start as u64, "unterminated header line"))?;
    let header: DatasetHeader = serde_json::from_slice(&bytes[start..start + nl])
        .map_err(|e| Error::format(start as u64, format!("malformed header: {e}")))?;
    let body = start + nl + 1;
    let size = header.record_size();
    let expected = body + size * header.record_count();
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes, file has {}", bytes.len()),
        ));
    }

    let gate_bytes = header.channels.div_ceil(8);
    let f32s = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    let mut records = Vec::with_capacity(header.record_count());
    for (i, rec) in bytes[body..].chunks_exact(size).enumerate() {
        let offset = (body + i * size) as u64;
        let image_id = u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]);
        if image_id as usize != i / header.draws.max(1) {
            return Err(Error::format(offset, format!("record {i} has image id {image_id}")));
        }
        let gate = GateVector::unpack(header.site, header.channels, &rec[4..4 + gate_bytes])
            .map_err(|e| Error::format(offset + 4, e.to_string()))?;
        let mut at = 4 + gate_bytes;
        let pooled = f32s(&rec[at..at + 4 * header.channels]);
        at += 4 * header.channels;
        let base_pred = f32s(&rec[at..at + 4 * header.classes]);
        at += 4 * header.classes;
        let pert_pred = f32s(&rec[at..at + 4 * header.classes]);
        records.push(PerturbedRecord {
            image_id,
            gate,
            pooled,
            base_pred,
            pert_pred,
        });
    }
    Ok(PerturbedDataset { header, records })
}

pub fn write_dataset(ds: &PerturbedDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(ds)?)
}

/// Reads a dataset and checks it was generated from `net`.
pub fn read_dataset(path: impl AsRef<Path>, net: &NetworkSpec) -> Result<PerturbedDataset> {
    let ds = read_dataset_unchecked(path)?;
    let expected = net.content_hash();
    if ds.header.net_hash != expected {
        return Err(Error::StaleDataset {
            expected,
            found: ds.header.net_hash,
        });
    }
    Ok(ds)
}

pub fn read_dataset_unchecked(path: impl AsRef<Path>) -> Result<PerturbedDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl PerturbedDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }
}
