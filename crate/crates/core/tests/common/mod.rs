//! Shared helpers for integration tests: random networks and independently
//! coded reference implementations.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use chip::localize::{BBox, Component, Mask};
use chip::{GateVector, Layer, NetworkSpec, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_image(rng: &mut impl Rng, shape: [usize; 3]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn conv(rng: &mut impl Rng, in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
    Layer::Conv {
        kernel,
        stride,
        padding,
        out_channels: out_c,
        weight: random_tensor(rng, vec![out_c, kernel, kernel, in_c], 0.6),
        bias: random_tensor(rng, vec![out_c], 0.2),
    }
}

pub fn dense(rng: &mut impl Rng, fan_in: usize, out: usize) -> Layer {
    Layer::Dense {
        out_dim: out,
        weight: random_tensor(rng, vec![out, fan_in], 0.8),
        bias: random_tensor(rng, vec![out], 0.2),
    }
}

/// A random small CNN: 1–3 convolutions with optional ReLU and max-pool,
/// then either GAP or flattening, a dense layer and softmax.
pub fn random_net(rng: &mut impl Rng) -> NetworkSpec {
    loop {
        let h = rng.random_range(4..=9);
        let w = rng.random_range(4..=9);
        let c = rng.random_range(1..=3);
        let mut layers = Vec::new();
        let (mut ch, mut cw, mut cc) = (h, w, c);
        let convs = rng.random_range(1..=3);
        let mut ok = true;
        for _ in 0..convs {
            let k = rng.random_range(1..=3);
            let s = rng.random_range(1..=2);
            let p = rng.random_range(0..=1);
            let oc = rng.random_range(1..=5);
            if ch + 2 * p < k || cw + 2 * p < k {
                ok = false;
                break;
            }
            layers.push(conv(rng, cc, oc, k, s, p));
            ch = (ch + 2 * p - k) / s + 1;
            cw = (cw + 2 * p - k) / s + 1;
            cc = oc;
            if rng.random_bool(0.7) {
                layers.push(Layer::Relu);
            }
            if ch >= 2 && cw >= 2 && rng.random_bool(0.3) {
                let s = rng.random_range(1..=2);
                layers.push(Layer::MaxPool { size: 2, stride: s });
                ch = (ch - 2) / s + 1;
                cw = (cw - 2) / s + 1;
            }
        }
        if !ok {
            continue;
        }
        let classes = rng.random_range(2..=4);
        if rng.random_bool(0.7) {
            layers.push(Layer::GlobalAvgPool);
            layers.push(dense(rng, cc, classes));
        } else {
            layers.push(dense(rng, ch * cw * cc, classes));
        }
        layers.push(Layer::Softmax);
        if let Ok(net) = NetworkSpec::new([h, w, c], layers) {
            return net;
        }
    }
}

/// Channels-first f64 feature map.
#[derive(Clone, Debug)]
pub struct Fmap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<Vec<Vec<f64>>>,
}

impl Fmap {
    pub fn from_tensor(t: &Tensor) -> Self {
        let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut v = vec![vec![vec![0.0; w]; h]; c];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    v[k][y][x] = t.data()[(y * w + x) * c + k] as f64;
                }
            }
        }
        Self { c, h, w, v }
    }

    fn flatten_hwc(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                for k in 0..self.c {
                    out.push(self.v[k][y][x]);
                }
            }
        }
        out
    }
}

fn weight_at(t: &Tensor, o: usize, ky: usize, kx: usize, i: usize) -> f64 {
    let s = t.shape();
    t.data()[((o * s[1] + ky) * s[2] + kx) * s[3] + i] as f64
}

/// Per-output-pixel convolution written from the definition.
pub fn naive_conv(x: &Fmap, weight: &Tensor, bias: &Tensor, k: usize, stride: usize, pad: usize) -> Fmap {
    let oc = weight.shape()[0];
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut v = vec![vec![vec![0.0; ow]; oh]; oc];
    for (o, plane) in v.iter_mut().enumerate() {
        for (oy, row) in plane.iter_mut().enumerate() {
            for (ox, out) in row.iter_mut().enumerate() {
                let mut s = bias.data()[o] as f64;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                            continue;
                        }
                        for i in 0..x.c {
                            s += weight_at(weight, o, ky, kx, i) * x.v[i][iy as usize][ix as usize];
                        }
                    }
                }
                *out = s;
            }
        }
    }
    Fmap { c: oc, h: oh, w: ow, v }
}

pub struct NaiveResult {
    pub prediction: Vec<f64>,
    /// Pooled post-gate activations per gate site.
    pub pooled: Vec<Vec<f64>>,
    /// Post-gate feature map per gate site.
    pub taps: Vec<Fmap>,
}

/// Reference forward pass in f64 with the gate applied to a conv's output
/// after its ReLU (when one follows).
pub fn naive_forward(net: &NetworkSpec, image: &Tensor, gate: Option<&GateVector>) -> NaiveResult {
    enum Val {
        Map(Fmap),
        Vec(Vec<f64>),
    }
    let layers = net.layers();
    let mut cur = Val::Map(Fmap::from_tensor(image));
    let mut site = 0usize;
    let mut pending: Option<usize> = None;
    let mut pooled = Vec::new();
    let mut taps = Vec::new();

    let gate_and_pool = |m: &mut Fmap, s: usize, pooled: &mut Vec<Vec<f64>>, taps: &mut Vec<Fmap>| {
        if let Some(g) = gate {
            if g.site() == s {
                for k in 0..m.c {
                    if !g.bits()[k] {
                        for row in &mut m.v[k] {
                            row.iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                }
            }
        }
        pooled.push(
            (0..m.c)
                .map(|k| m.v[k].iter().flatten().sum::<f64>() / (m.h * m.w) as f64)
                .collect(),
        );
        taps.push(m.clone());
    };

    for (i, layer) in layers.iter().enumerate() {
        cur = match (layer, cur) {
            (
                Layer::Conv {
                    kernel,
                    stride,
                    padding,
                    weight,
                    bias,
                    ..
                },
                Val::Map(x),
            ) => {
                let mut y = naive_conv(&x, weight, bias, *kernel, *stride, *padding);
                if matches!(layers.get(i + 1), Some(Layer::Relu)) {
                    pending = Some(site);
                } else {
                    gate_and_pool(&mut y, site, &mut pooled, &mut taps);
                }
                site += 1;
                Val::Map(y)
            }
            (Layer::Relu, Val::Map(mut x)) => {
                x.v.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
                if let Some(s) = pending.take() {
                    gate_and_pool(&mut x, s, &mut pooled, &mut taps);
                }
                Val::Map(x)
            }
            (Layer::Relu, Val::Vec(v)) => Val::Vec(v.into_iter().map(|a| a.max(0.0)).collect()),
            (Layer::MaxPool { size, stride }, Val::Map(x)) => {
                let oh = (x.h - size) / stride + 1;
                let ow = (x.w - size) / stride + 1;
                let v = (0..x.c)
                    .map(|k| {
                        (0..oh)
                            .map(|oy| {
                                (0..ow)
                                    .map(|ox| {
                                        let mut m = f64::NEG_INFINITY;
                                        for dy in 0..*size {
                                            for dx in 0..*size {
                                                m = m.max(x.v[k][oy * stride + dy][ox * stride + dx]);
                                            }
                                        }
                                        m
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Val::Map(Fmap {
                    c: x.c,
                    h: oh,
                    w: ow,
                    v,
                })
            }
            (Layer::GlobalAvgPool, Val::Map(x)) => Val::Vec(
                (0..x.c)
                    .map(|k| x.v[k].iter().flatten().sum::<f64>() / (x.h * x.w) as f64)
                    .collect(),
            ),
            (Layer::Dense { out_dim, weight, bias }, input) => {
                let flat = match input {
                    Val::Map(m) => m.flatten_hwc(),
                    Val::Vec(v) => v,
                };
                let n = flat.len();
                Val::Vec(
                    (0..*out_dim)
                        .map(|o| {
                            bias.data()[o] as f64
                                + (0..n).map(|j| weight.data()[o * n + j] as f64 * flat[j]).sum::<f64>()
                        })
                        .collect(),
                )
            }
            (Layer::Softmax, Val::Vec(v)) => {
                let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Val::Vec(e.into_iter().map(|a| a / s).collect())
            }
            _ => panic!("layer {i} received an unexpected input"),
        };
    }
    let Val::Vec(prediction) = cur else {
        panic!("network did not end in a vector")
    };
    NaiveResult {
        prediction,
        pooled,
        taps,
    }
}

/// Closed-form weighted least squares via an SVD pseudo-inverse of the
/// square-root-weighted system.
pub fn wls(design: &DMatrix<f64>, targets: &DVector<f64>, weights: &DVector<f64>) -> DVector<f64> {
    let sw = weights.map(f64::sqrt);
    let a = DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| sw[i] * design[(i, j)]);
    let b = targets.component_mul(&sw);
    a.svd(true, true).solve(&b, 1e-14).unwrap()
}

/// ISTA on `½ Σ a_i (w·z_i − g_i)² + λ‖w‖₁`, step 1/L with L the largest
/// eigenvalue of the weighted Gram matrix, run until the iterate moves by
/// less than `tol`.
pub fn prox_grad(
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
    tol: f64,
) -> DVector<f64> {
    let k = design.ncols();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..design.nrows() {
        let z = design.row(i).transpose();
        gram += &z * z.transpose() * weights[i];
        rhs += &z * (weights[i] * targets[i]);
    }
    let l = gram.symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / l;
    let mut w = DVector::<f64>::zeros(k);
    // FISTA momentum for speed; the fixed point is the ISTA one
    let mut y = w.clone();
    let mut t = 1.0f64;
    for _ in 0..5_000_000 {
        let grad = &gram * &y - &rhs;
        let next = (&y - grad * step).map(|v| v.signum() * (v.abs() - lambda * step).max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved = (&next - &w).amax();
        y = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        t = t_next;
        if moved < tol {
            // restart-free check: a plain proximal step must also be stationary
            let g = &gram * &w - &rhs;
            let plain = (&w - g * step).map(|v| v.signum() * (v.abs() - lambda * step).max(0.0));
            if (&plain - &w).amax() < tol {
                break;
            }
            y = w.clone();
            t = 1.0;
        }
    }
    w
}

/// 8-connected flood fill from every unvisited pixel; returns the components
/// in discovery order (row-major by first pixel).
pub fn flood_fill_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut stack = vec![(x, y)];
            seen[y * w + x] = true;
            let mut comp = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                comp.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            comp.sort_by_key(|&(x, y)| (y, x));
            comps.push(comp);
        }
    }
    comps
}

pub fn sorted_pixels(c: &Component) -> Vec<(usize, usize)> {
    let mut p = c.pixels.clone();
    p.sort_by_key(|&(x, y)| (y, x));
    p
}

/// IoU by counting pixels of the two boxes on a grid.
pub fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x1.max(b.x1) + 1;
    let h = a.y1.max(b.y1) + 1;
    let inside = |bx: &BBox, x: usize, y: usize| x >= bx.x0 && x <= bx.x1 && y >= bx.y0 && y <= bx.y1;
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    inter as f64 / union as f64
}

/// Relative difference helper for `f32` prediction comparisons.
pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

/// Bilinear sample of a row-major grid at output pixel `(oy, ox)` with
/// half-pixel centres, written out coordinate by coordinate.
pub fn bilinear_at(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize, oy: usize, ox: usize) -> f64 {
    let sy = ((oy as f64 + 0.5) * (sh as f64 / dh as f64) - 0.5)
        .max(0.0)
        .min((sh - 1) as f64);
    let sx = ((ox as f64 + 0.5) * (sw as f64 / dw as f64) - 0.5)
        .max(0.0)
        .min((sw - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |y: usize, x: usize| src[y * sw + x];
    (1.0 - ty) * (1.0 - tx) * at(y0, x0)
        + (1.0 - ty) * tx * at(y0, x1)
        + ty * (1.0 - tx) * at(y1, x0)
        + ty * tx * at(y1, x1)
}

/// Reference saliency: weighted sum, clamp, resample, min-max scale.
pub fn oracle_map(act: &Tensor, weights: &[f64], dh: usize, dw: usize) -> Vec<f64> {
    let (h, w, k) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    let mut layer = vec![0.0; h * w];
    for (p, v) in layer.iter_mut().enumerate() {
        for c in 0..k {
            *v += act.data()[p * k + c] as f64 * weights[c];
        }
        *v = v.max(0.0);
    }
    let up: Vec<f64> = (0..dh * dw)
        .map(|i| bilinear_at(&layer, h, w, dh, dw, i / dw, i % dw))
        .collect();
    let lo = up.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        up.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; up.len()]
    }
}
