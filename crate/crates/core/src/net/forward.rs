use super::{GateVector, Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which intermediate activations a forward pass keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retain {
    #[default]
    Nothing,
    /// Post-gate feature maps at every gate site.
    GateSites,
    /// Output of every layer.
    AllLayers,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Class probabilities.
    pub prediction: Vec<f32>,
    /// Global average pooling of every gate site's post-gate feature map.
    pub pooled: Vec<Vec<f32>>,
    /// Per-layer outputs, populated according to [`Retain`].
    pub activations: Vec<Option<Tensor>>,
    /// Index of the first layer whose output was computed by this pass.
    start_layer: usize,
}

impl ForwardResult {
    pub fn argmax(&self) -> usize {
        argmax(&self.prediction)
    }

    /// Retained post-gate feature map of a gate site.
    pub fn site_activation(&self, net: &NetworkSpec, site: usize) -> Result<&Tensor> {
        let tap = net.gate_site(site)?.tap_layer;
        self.activations[tap]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("activation of gate site {site} was not retained")))
    }

    pub fn start_layer(&self) -> usize {
        self.start_layer
    }
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl NetworkSpec {
    /// Runs the network on a channels-last image, optionally gating one site.
    ///
    /// An all-open gate skips the multiply, so the result is bit-identical to
    /// the ungated pass.
    pub fn forward(&self, image: &Tensor, gates: Option<&GateVector>, retain: Retain) -> Result<ForwardResult> {
        if image.shape() != self.input_shape() {
            return Err(Error::invalid(format!(
                "image shape {:?} != network input {:?}",
                image.shape(),
                self.input_shape()
            )));
        }
        if !image.is_finite() {
            return Err(Error::invalid("image contains non-finite values"));
        }
        self.run_from(0, image.clone(), gates, retain)
    }

    /// Continues propagation from the output of layer `after` (which must
    /// have shape `layer_shape(after)`). Gating and pooling apply only to
    /// layers strictly after `after`; pooled entries of earlier sites are
    /// left empty.
    pub fn forward_from(
        &self,
        after: usize,
        activation: &Tensor,
        gates: Option<&GateVector>,
        retain: Retain,
    ) -> Result<ForwardResult> {
        if after >= self.layers().len() {
            return Err(Error::invalid(format!("layer {after} out of range")));
        }
        if activation.shape() != self.layer_shape(after) {
            return Err(Error::invalid(format!(
                "activation shape {:?} != layer {after} output {:?}",
                activation.shape(),
                self.layer_shape(after)
            )));
        }
        if !activation.is_finite() {
            return Err(Error::invalid("activation contains non-finite values"));
        }
        self.run_from(after + 1, activation.clone(), gates, retain)
    }

    fn run_from(
        &self,
        start: usize,
        mut x: Tensor,
        gates: Option<&GateVector>,
        retain: Retain,
    ) -> Result<ForwardResult> {
        if let Some(g) = gates {
            let site = self.gate_site(g.site())?;
            if g.len() != site.channels {
                return Err(Error::invalid(format!(
                    "gate has {} bits, site {} has {} channels",
                    g.len(),
                    g.site(),
                    site.channels
                )));
            }
        }
        let layers = self.layers();
        let mut pooled = vec![Vec::new(); self.gate_sites().len()];
        let mut activations = vec![None; layers.len()];

        for (i, layer) in layers.iter().enumerate().skip(start) {
            x = apply_layer(layer, &x)?;
            let site = self.tap_site(i);
            if let Some(site) = site {
                if let Some(g) = gates.filter(|g| g.site() == site && !g.is_all_open()) {
                    apply_gate(&mut x, g.bits());
                }
                pooled[site] = global_avg_pool(&x);
            }
            let keep = match retain {
                Retain::Nothing => false,
                Retain::GateSites => site.is_some(),
                Retain::AllLayers => true,
            };
            if keep {
                activations[i] = Some(x.clone());
            }
        }

        if !x.is_finite() {
            return Err(Error::Numerical("network output is not finite".into()));
        }
        Ok(ForwardResult {
            prediction: x.into_data(),
            pooled,
            activations,
            start_layer: start,
        })
    }
}

fn apply_layer(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    Ok(match layer {
        Layer::Conv {
            kernel,
            stride,
            padding,
            out_channels,
            weight,
            bias,
        } => conv2d(x, weight, bias, *kernel, *stride, *padding, *out_channels)?,
        Layer::Relu => {
            let mut y = x.clone();
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            y
        }
        Layer::MaxPool { size, stride } => max_pool(x, *size, *stride)?,
        Layer::GlobalAvgPool => {
            let z = global_avg_pool(x);
            let n = z.len();
            Tensor::new(vec![n], z)?
        }
        Layer::Dense { out_dim, weight, bias } => dense(x, weight, bias, *out_dim)?,
        Layer::Softmax => {
            let p = softmax(x.data());
            Tensor::new(vec![p.len()], p)?
        }
    })
}

fn apply_gate(x: &mut Tensor, bits: &[bool]) {
    let k = bits.len();
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if !bits[i % k] {
            *v = 0.0;
        }
    }
}

fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_c: usize,
) -> Result<Tensor> {
    let (h, w, in_c) = x.hwc()?;
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0f32; oh * ow * out_c];
    let mut acc = vec![0f64; out_c];

    for oy in 0..oh {
        for ox in 0..ow {
            for (a, &b) in acc.iter_mut().zip(bd) {
                *a = b as f64;
            }
            for ky in 0..kernel {
                let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..kernel {
                    let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&v| v < w) else {
                        continue;
                    };
                    let xs = &xd[(iy * w + ix) * in_c..][..in_c];
                    for (oc, a) in acc.iter_mut().enumerate() {
                        let ws = &wd[((oc * kernel + ky) * kernel + kx) * in_c..][..in_c];
                        let mut s = 0f64;
                        for (&wv, &xv) in ws.iter().zip(xs) {
                            s += wv as f64 * xv as f64;
                        }
                        *a += s;
                    }
                }
            }
            let dst = &mut out[(oy * ow + ox) * out_c..][..out_c];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    Tensor::new(vec![oh, ow, out_c], out)
}

fn max_pool(x: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let xd = x.data();
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..size {
                for kx in 0..size {
                    let src = &xd[((oy * stride + ky) * w + ox * stride + kx) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        if s > *d {
                            *d = s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Spatial mean per channel, accumulated in `f64`.
pub(crate) fn global_avg_pool(x: &Tensor) -> Vec<f32> {
    let shape = x.shape();
    let c = *shape.last().unwrap_or(&1);
    let positions = x.len() / c;
    let mut sums = vec![0f64; c];
    for px in x.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    sums.iter().map(|&s| (s / positions as f64) as f32).collect()
}

fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor, out_dim: usize) -> Result<Tensor> {
    let xd = x.data();
    let n = xd.len();
    let out = (0..out_dim)
        .map(|o| {
            let row = &weight.data()[o * n..][..n];
            let mut s = bias.data()[o] as f64;
            for (&wv, &xv) in row.iter().zip(xd) {
                s += wv as f64 * xv as f64;
            }
            s as f32
        })
        .collect();
    Tensor::new(vec![out_dim], out)
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / total) as f32).collect()
}
