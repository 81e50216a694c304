//! Feed-forward CNN inference with channel gates.
//!
//! A [`NetworkSpec`] is an ordered list of [`Layer`]s over a channels-last
//! input. Every convolution owns one gate site. The gate multiplies the
//! block output channel-wise by a binary mask: it is applied after the
//! convolution's ReLU when one immediately follows, otherwise directly to
//! the convolution output. Since `relu(d * x) == d * relu(x)` for binary `d`
//! the two placements propagate identically; tapping after the ReLU makes
//! pooled activations and saliency maps non-negative feature responses.

mod format;
mod forward;

pub use format::{load_network, save_network, MODEL_MAGIC};
pub use forward::{ForwardResult, Retain};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Square-kernel convolution. `weight` is `[out, kernel, kernel, in]`,
    /// `bias` is `[out]`.
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        out_channels: usize,
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// Fully connected layer over the flattened input. `weight` is
    /// `[out, in]`, `bias` is `[out]`.
    Dense {
        out_dim: usize,
        weight: Tensor,
        bias: Tensor,
    },
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub(crate) fn blobs(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::invalid(format!("layer {index} ({}): {msg}", self.kind())));
        match self {
            Layer::Conv {
                kernel,
                stride,
                padding,
                out_channels,
                weight,
                bias,
            } => {
                let [h, w, c] = input[..] else {
                    return bad(format!("needs a rank-3 input, got {input:?}"));
                };
                if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                    return bad("kernel, stride and out_channels must be positive".into());
                }
                if weight.shape() != [*out_channels, *kernel, *kernel, c] {
                    return bad(format!(
                        "weight shape {:?} != [{out_channels}, {kernel}, {kernel}, {c}]",
                        weight.shape()
                    ));
                }
                if bias.shape() != [*out_channels] {
                    return bad(format!("bias shape {:?} != [{out_channels}]", bias.shape()));
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return bad(format!("kernel {kernel} larger than padded input {input:?}"));
                }
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                Ok(vec![oh, ow, *out_channels])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { size, stride } => {
                let [h, w, c] = input[..] else {
                    return bad(format!("needs a rank-3 input, got {input:?}"));
                };
                if *size == 0 || *stride == 0 || *size > h || *size > w {
                    return bad(format!("window {size}/{stride} does not fit {input:?}"));
                }
                Ok(vec![(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
            Layer::GlobalAvgPool => {
                let [_, _, c] = input[..] else {
                    return bad(format!("needs a rank-3 input, got {input:?}"));
                };
                Ok(vec![c])
            }
            Layer::Dense { out_dim, weight, bias } => {
                let fan_in: usize = input.iter().product();
                if *out_dim == 0 {
                    return bad("out_dim must be positive".into());
                }
                if weight.shape() != [*out_dim, fan_in] {
                    return bad(format!("weight shape {:?} != [{out_dim}, {fan_in}]", weight.shape()));
                }
                if bias.shape() != [*out_dim] {
                    return bad(format!("bias shape {:?} != [{out_dim}]", bias.shape()));
                }
                Ok(vec![*out_dim])
            }
            Layer::Softmax => {
                if input.len() != 1 {
                    return bad(format!("needs a vector input, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Where a gate sits in the layer sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSite {
    /// Index of the convolution that owns the gate.
    pub conv_layer: usize,
    /// Index of the layer whose output is gated (the conv, or its ReLU).
    pub tap_layer: usize,
    /// Channel count `K`.
    pub channels: usize,
    /// Spatial size of the gated feature map.
    pub height: usize,
    pub width: usize,
}

/// Immutable description of a frozen network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    gate_sites: Vec<GateSite>,
    taps: Vec<Option<usize>>,
}

impl NetworkSpec {
    /// Validates shape composition, weight finiteness and the trailing
    /// softmax, and derives one gate site per convolution.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "input shape {input_shape:?} has a zero dimension"
            )));
        }
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::invalid("network must end with a softmax layer"));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            for blob in layer.blobs() {
                if !blob.is_finite() {
                    return Err(Error::invalid(format!("layer {i} has non-finite weights")));
                }
            }
            current = layer.output_shape(i, &current)?;
            shapes.push(current.clone());
        }

        let mut gate_sites = Vec::new();
        let mut taps = vec![None; layers.len()];
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Conv { out_channels, .. } = layer {
                let tap = if matches!(layers.get(i + 1), Some(Layer::Relu)) {
                    i + 1
                } else {
                    i
                };
                let shape = &shapes[tap];
                taps[tap] = Some(gate_sites.len());
                gate_sites.push(GateSite {
                    conv_layer: i,
                    tap_layer: tap,
                    channels: *out_channels,
                    height: shape[0],
                    width: shape[1],
                });
            }
        }

        Ok(Self {
            input_shape,
            layers,
            shapes,
            gate_sites,
            taps,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape of layer `i`.
    pub fn layer_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn gate_sites(&self) -> &[GateSite] {
        &self.gate_sites
    }

    pub fn gate_site(&self, site: usize) -> Result<&GateSite> {
        self.gate_sites.get(site).ok_or_else(|| {
            Error::invalid(format!(
                "gate site {site} out of range ({} sites)",
                self.gate_sites.len()
            ))
        })
    }

    /// Index of the first and last gate sites (first and last convolution).
    pub fn first_last_sites(&self) -> Option<(usize, usize)> {
        if self.gate_sites.is_empty() {
            None
        } else {
            Some((0, self.gate_sites.len() - 1))
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    /// Hex SHA-256 of the canonical serialized model.
    pub fn content_hash(&self) -> String {
        let bytes = format::to_bytes(self);
        hex::encode(Sha256::digest(&bytes))
    }

    pub(crate) fn tap_site(&self, layer: usize) -> Option<usize> {
        self.taps[layer]
    }
}

/// Binary on/off mask over the channels of one gate site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GateVector {
    site: usize,
    bits: Vec<bool>,
}

impl GateVector {
    /// Rejects empty and all-off masks.
    pub fn new(site: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("gate vector has no channels"));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::invalid("gate vector must keep at least one channel open"));
        }
        Ok(Self { site, bits })
    }

    pub fn all_open(site: usize, channels: usize) -> Result<Self> {
        Self::new(site, vec![true; channels])
    }

    /// All channels open except those listed.
    pub fn blocking(site: usize, channels: usize, blocked: &[usize]) -> Result<Self> {
        let mut bits = vec![true; channels];
        for &k in blocked {
            *bits
                .get_mut(k)
                .ok_or_else(|| Error::invalid(format!("channel {k} out of range ({channels})")))? = false;
        }
        Self::new(site, bits)
    }

    pub fn from_u8(site: usize, bits: &[u8]) -> Result<Self> {
        Self::new(site, bits.iter().map(|&b| b != 0).collect())
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn open_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn closed_count(&self) -> usize {
        self.bits.len() - self.open_count()
    }

    pub fn is_all_open(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Little-endian bit packing, `ceil(K/8)` bytes.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (k, &b) in self.bits.iter().enumerate() {
            if b {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn unpack(site: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels.div_ceil(8) {
            return Err(Error::invalid("packed gate has the wrong length"));
        }
        let bits = (0..channels).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect();
        Self::new(site, bits)
    }
}
