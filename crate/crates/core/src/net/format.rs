//! Model file: `CHIPNET 1\n`, one line of JSON header, `\n`, then every
//! weight blob as little-endian `f32`, row-major, in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8] = b"CHIPNET 1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input: [usize; 3],
    layers: Vec<LayerHeader>,
    blob_bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerHeader {
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        out_channels: usize,
        blobs: Vec<BlobHeader>,
    },
    Relu,
    Maxpool {
        size: usize,
        stride: usize,
    },
    Gap,
    Dense {
        out_dim: usize,
        blobs: Vec<BlobHeader>,
    },
    Softmax,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobHeader {
    shape: Vec<usize>,
    bytes: u64,
}

fn blob_header(t: &Tensor) -> BlobHeader {
    BlobHeader {
        shape: t.shape().to_vec(),
        bytes: 4 * t.len() as u64,
    }
}

pub(crate) fn to_bytes(net: &NetworkSpec) -> Vec<u8> {
    let mut blob_bytes = 0u64;
    let layers = net
        .layers()
        .iter()
        .map(|layer| {
            let blobs: Vec<BlobHeader> = layer.blobs().into_iter().map(blob_header).collect();
            blob_bytes += blobs.iter().map(|b| b.bytes).sum::<u64>();
            match layer {
                Layer::Conv {
                    kernel,
                    stride,
                    padding,
                    out_channels,
                    ..
                } => LayerHeader::Conv {
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    out_channels: *out_channels,
                    blobs,
                },
                Layer::Relu => LayerHeader::Relu,
                Layer::MaxPool { size, stride } => LayerHeader::Maxpool {
                    size: *size,
                    stride: *stride,
                },
                Layer::GlobalAvgPool => LayerHeader::Gap,
                Layer::Dense { out_dim, .. } => LayerHeader::Dense {
                    out_dim: *out_dim,
                    blobs,
                },
                Layer::Softmax => LayerHeader::Softmax,
            }
        })
        .collect();
    let header = Header {
        input: net.input_shape(),
        layers,
        blob_bytes,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(MODEL_MAGIC.len() + json.len() + 1 + blob_bytes as usize);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for layer in net.layers() {
        for blob in layer.blobs() {
            for v in blob.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<NetworkSpec> {
    if !bytes.starts_with(MODEL_MAGIC) {
        return Err(Error::format(0, "missing CHIPNET magic"));
    }
    let header_start = MODEL_MAGIC.len();
    let newline = bytes[header_start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(header_start as u64, "unterminated header line"))?;
    let header_bytes = &bytes[header_start..header_start + newline];
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| {
        let offset = header_start as u64 + line_col_offset(header_bytes, e.line(), e.column());
        Error::format(offset, format!("malformed header: {e}"))
    })?;

    let mut reader = BlobReader {
        bytes,
        pos: header_start + newline + 1,
    };
    let blob_start = reader.pos;
    let declared_end = blob_start as u64 + header.blob_bytes;
    if (bytes.len() as u64) < declared_end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated weights: header declares {} blob bytes", header.blob_bytes),
        ));
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, lh) in header.layers.into_iter().enumerate() {
        let layer = match lh {
            LayerHeader::Conv {
                kernel,
                stride,
                padding,
                out_channels,
                blobs,
            } => {
                let start = reader.pos as u64;
                let [weight, bias] = reader.take_pair(i, blobs)?;
                if weight.shape().first() != Some(&out_channels) || bias.shape() != [out_channels] {
                    return Err(Error::format(
                        start,
                        format!(
                            "layer {i}: out_channels {out_channels} disagrees with blob shapes {:?}/{:?}",
                            weight.shape(),
                            bias.shape()
                        ),
                    ));
                }
                Layer::Conv {
                    kernel,
                    stride,
                    padding,
                    out_channels,
                    weight,
                    bias,
                }
            }
            LayerHeader::Relu => Layer::Relu,
            LayerHeader::Maxpool { size, stride } => Layer::MaxPool { size, stride },
            LayerHeader::Gap => Layer::GlobalAvgPool,
            LayerHeader::Dense { out_dim, blobs } => {
                let start = reader.pos as u64;
                let [weight, bias] = reader.take_pair(i, blobs)?;
                if weight.shape().first() != Some(&out_dim) || bias.shape() != [out_dim] {
                    return Err(Error::format(
                        start,
                        format!(
                            "layer {i}: out_dim {out_dim} disagrees with blob shapes {:?}/{:?}",
                            weight.shape(),
                            bias.shape()
                        ),
                    ));
                }
                Layer::Dense { out_dim, weight, bias }
            }
            LayerHeader::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    if reader.pos as u64 != declared_end {
        return Err(Error::format(
            reader.pos as u64,
            format!(
                "blob sizes sum to {} bytes, header declares {}",
                reader.pos - blob_start,
                header.blob_bytes
            ),
        ));
    }
    if reader.pos != bytes.len() {
        return Err(Error::format(reader.pos as u64, "trailing bytes after weights"));
    }
    NetworkSpec::new(header.input, layers).map_err(|e| Error::format(blob_start as u64, e.to_string()))
}

fn line_col_offset(bytes: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    offset as u64
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BlobReader<'_> {
    fn take_pair(&mut self, layer: usize, blobs: Vec<BlobHeader>) -> Result<[Tensor; 2]> {
        if blobs.len() != 2 {
            return Err(Error::format(
                self.pos as u64,
                format!("layer {layer}: expected weight and bias blobs, got {}", blobs.len()),
            ));
        }
        let mut it = blobs.into_iter();
        let w = self.take(layer, it.next().unwrap())?;
        let b = self.take(layer, it.next().unwrap())?;
        Ok([w, b])
    }

    fn take(&mut self, layer: usize, blob: BlobHeader) -> Result<Tensor> {
        let count: usize = blob.shape.iter().product();
        if blob.shape.is_empty() || count == 0 || blob.bytes != 4 * count as u64 {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "layer {layer}: blob shape {:?} does not match byte length {}",
                    blob.shape, blob.bytes
                ),
            ));
        }
        let end = self.pos + 4 * count;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("layer {layer}: truncated blob"),
            ));
        }
        let data: Vec<f32> = self.bytes[self.pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                (self.pos + 4 * bad) as u64,
                format!("layer {layer}: non-finite weight"),
            ));
        }
        let offset = self.pos;
        self.pos = end;
        Tensor::new(blob.shape, data).map_err(|e| Error::format(offset as u64, e.to_string()))
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn save_network(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &to_bytes(net))
}

impl NetworkSpec {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        from_bytes(bytes)
    }
}
