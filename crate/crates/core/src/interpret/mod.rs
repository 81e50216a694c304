//! Class-discriminative saliency maps from channel importance.

mod render;
mod stats;

pub use render::{encode_pgm, overlay_png, write_pgm, write_png_overlay};
pub use stats::{importance_stats, OverlapReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetworkSpec, Retain};
use crate::tensor::Tensor;

/// Min/max of the clamped, upsampled map before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub raw_min: f64,
    pub raw_max: f64,
    /// Set when the map was constant; values are then all zero.
    pub degenerate: bool,
}

/// Signed weighted channel sum at the gate site's resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f32>,
    pub class_id: usize,
    /// Gate site the map was computed at; `None` for combined maps.
    pub layer: Option<usize>,
    pub norm: Normalization,
    /// Unclamped map at layer resolution, when computed from activations.
    pub signed: Option<LayerMap>,
}

impl SaliencyMap {
    /// Builds a map from arbitrary non-negative values, min-max normalizing them.
    pub fn from_raw(height: usize, width: usize, raw: &[f64], class_id: usize) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::invalid("map size does not match its dimensions"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("map contains non-finite values"));
        }
        let (values, norm) = normalize(raw);
        Ok(Self {
            height,
            width,
            values,
            class_id,
            layer: None,
            norm,
            signed: None,
        })
    }

    /// Wraps values that are already in `[0, 1]` without renormalizing.
    pub fn from_normalized(height: usize, width: usize, values: Vec<f32>, class_id: usize) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::invalid("map size does not match its dimensions"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("normalized map values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
            class_id,
            layer: None,
            norm: Normalization {
                raw_min: 0.0,
                raw_max: 1.0,
                degenerate: false,
            },
            signed: None,
        })
    }

    /// The clamped, upsampled map before normalization.
    pub fn denormalized(&self) -> Vec<f64> {
        let span = self.norm.raw_max - self.norm.raw_min;
        self.values
            .iter()
            .map(|&v| {
                if self.norm.degenerate {
                    self.norm.raw_min
                } else {
                    self.norm.raw_min + v as f64 * span
                }
            })
            .collect()
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// Min-max normalization; constant input maps to zeros with the flag set.
pub(crate) fn normalize(raw: &[f64]) -> (Vec<f32>, Normalization) {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span > 0.0 {
        let values = raw.iter().map(|&v| ((v - min) / span) as f32).collect();
        (
            values,
            Normalization {
                raw_min: min,
                raw_max: max,
                degenerate: false,
            },
        )
    } else {
        (
            vec![0.0; raw.len()],
            Normalization {
                raw_min: min,
                raw_max: max,
                degenerate: true,
            },
        )
    }
}

/// Bilinear resampling with half-pixel centres (edges clamped).
pub fn upsample_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let taps = |d: usize, s: usize, n: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| taps(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = taps(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Weighted channel sum `Σ_k w_k A_k` of a feature map, in `f64`.
pub fn weighted_channel_sum(activation: &Tensor, weights: &[f64]) -> Result<LayerMap> {
    let (h, w, k) = activation.hwc()?;
    if weights.len() != k {
        return Err(Error::invalid(format!(
            "importance row has {} entries, layer has {k} channels",
            weights.len()
        )));
    }
    let values = activation
        .data()
        .chunks_exact(k)
        .map(|px| px.iter().zip(weights).map(|(&a, &w)| a as f64 * w).sum())
        .collect();
    Ok(LayerMap {
        height: h,
        width: w,
        values,
    })
}

/// CHIP map from an already computed feature map.
pub fn chip_map_from_activation(
    activation: &Tensor,
    weights: &[f64],
    site: usize,
    class_id: usize,
    out_height: usize,
    out_width: usize,
) -> Result<SaliencyMap> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("importance row contains non-finite values"));
    }
    let signed = weighted_channel_sum(activation, weights)?;
    let clamped: Vec<f64> = signed.values.iter().map(|&v| v.max(0.0)).collect();
    let up = upsample_bilinear(&clamped, signed.height, signed.width, out_height, out_width);
    let (values, norm) = normalize(&up);
    Ok(SaliencyMap {
        height: out_height,
        width: out_width,
        values,
        class_id,
        layer: Some(site),
        norm,
        signed: Some(signed),
    })
}

/// Saliency of `class_id` at a gate site: weighted channel sum of the
/// unperturbed activations, negatives clamped, bilinearly upsampled to the
/// input resolution and min-max normalized.
pub fn chip_map(
    net: &NetworkSpec,
    image: &Tensor,
    weights: &[f64],
    site: usize,
    class_id: usize,
) -> Result<SaliencyMap> {
    net.gate_site(site)?;
    let fwd = net.forward(image, None, Retain::GateSites)?;
    let act = fwd.site_activation(net, site)?;
    let [h, w, _] = net.input_shape();
    chip_map_from_activation(act, weights, site, class_id, h, w)
}

/// Pointwise product of two normalized maps of the same class, renormalized.
pub fn refined_chip(first: &SaliencyMap, last: &SaliencyMap) -> Result<SaliencyMap> {
    if first.class_id != last.class_id {
        return Err(Error::invalid(format!(
            "refined map needs one class, got {} and {}",
            first.class_id, last.class_id
        )));
    }
    if (first.height, first.width) != (last.height, last.width) {
        return Err(Error::invalid("refined map inputs differ in resolution"));
    }
    let product: Vec<f64> = first
        .values
        .iter()
        .zip(&last.values)
        .map(|(&a, &b)| (a * b) as f64)
        .collect();
    let (values, norm) = normalize(&product);
    Ok(SaliencyMap {
        height: first.height,
        width: first.width,
        values,
        class_id: first.class_id,
        layer: None,
        norm,
        signed: None,
    })
}


/// Which saliency construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    Chip { site: usize },
    Refined { first: usize, last: usize },
}

fn importance_for(
    importances: &[crate::solver::ImportanceMatrix],
    site: usize,
) -> Result<&crate::solver::ImportanceMatrix> {
    importances
        .iter()
        .find(|w| w.site == site)
        .ok_or_else(|| Error::invalid(format!("no importance matrix for gate site {site}")))
}

/// Saliency of `class_id` for one image with a single forward pass.
pub fn saliency(
    net: &NetworkSpec,
    image: &Tensor,
    class_id: usize,
    importances: &[crate::solver::ImportanceMatrix],
    kind: MapKind,
) -> Result<SaliencyMap> {
    let fwd = net.forward(image, None, Retain::GateSites)?;
    let [h, w, _] = net.input_shape();
    let single = |site: usize| -> Result<SaliencyMap> {
        let row = importance_for(importances, site)?.row(class_id)?;
        chip_map_from_activation(fwd.site_activation(net, site)?, row, site, class_id, h, w)
    };
    match kind {
        MapKind::Chip { site } => single(site),
        MapKind::Refined { first, last } => refined_chip(&single(first)?, &single(last)?),
    }
}
