//! Deterministic synthetic-shapes images with exact ground-truth boxes.
//!
//! Three classes: square, disk, triangle. Each image is a single bright
//! filled shape on a dark noisy background, plus a few thin line segments
//! of clutter that never touch the shape's box. The generator is keyed by
//! `(seed, index)`, so any prefix of a set is reproducible on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::localize::BBox;
use crate::tensor::Tensor;

pub const SHAPE_CLASSES: [&str; 3] = ["square", "disk", "triangle"];

#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub image: Tensor,
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy)]
pub struct ShapesConfig {
    pub size: usize,
    pub min_extent: usize,
    pub max_extent: usize,
    pub noise: f32,
    /// Line segments of background clutter per image.
    pub clutter: usize,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            size: 32,
            min_extent: 10,
            max_extent: 18,
            noise: 0.06,
            clutter: 3,
        }
    }
}

/// Sample `index` of the set keyed by `seed`; its class is `index % 3`.
pub fn shape_sample(cfg: &ShapesConfig, seed: u64, index: u64) -> ShapeSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let class_id = (index % 3) as usize;
    let n = cfg.size;
    let extent = rng.random_range(cfg.min_extent..=cfg.max_extent.min(n));
    let x0 = rng.random_range(0..=n - extent);
    let y0 = rng.random_range(0..=n - extent);

    let mut mask = vec![false; n * n];
    let e = extent as f32;
    for y in y0..y0 + extent {
        for x in x0..x0 + extent {
            // pixel centre relative to the shape's bounding square
            let u = x as f32 - x0 as f32 + 0.5;
            let v = y as f32 - y0 as f32 + 0.5;
            let inside = match class_id {
                0 => true,
                1 => {
                    let r = e / 2.0;
                    (u - r).powi(2) + (v - r).powi(2) <= r * r
                }
                _ => {
                    // apex at top centre, base along the bottom row
                    let half = 0.5 * e * (v / e);
                    (u - e / 2.0).abs() <= half
                }
            };
            mask[y * n + x] = inside;
        }
    }

    let clutter = clutter_mask(&mut rng, cfg, x0, y0, extent);

    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.3));
    let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let line: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let mut data = vec![0f32; n * n * 3];
    for (p, &m) in mask.iter().enumerate() {
        let base = if m {
            fg
        } else if clutter[p] {
            line
        } else {
            bg
        };
        for ch in 0..3 {
            let jitter = rng.random_range(-cfg.noise..=cfg.noise);
            data[p * 3 + ch] = (base[ch] + jitter).clamp(0.0, 1.0);
        }
    }

    let bbox = BBox::from_mask(&mask, n, n).expect("shape covers at least one pixel");
    ShapeSample {
        image: Tensor::new(vec![n, n, 3], data).expect("consistent shape"),
        class_id,
        bbox,
    }
}

/// One-pixel-wide segments (horizontal, vertical or diagonal) kept at least
/// two pixels away from the shape's bounding square.
fn clutter_mask(rng: &mut ChaCha8Rng, cfg: &ShapesConfig, x0: usize, y0: usize, extent: usize) -> Vec<bool> {
    let n = cfg.size as i64;
    let mut mask = vec![false; cfg.size * cfg.size];
    let (bx0, by0) = (x0 as i64 - 2, y0 as i64 - 2);
    let (bx1, by1) = (x0 as i64 + extent as i64 + 1, y0 as i64 + extent as i64 + 1);
    for _ in 0..cfg.clutter {
        for _attempt in 0..50 {
            let len = rng.random_range(5..=10i64);
            let (dx, dy) = [(1, 0), (0, 1), (1, 1), (1, -1)][rng.random_range(0..4)];
            let sx = rng.random_range(0..n);
            let sy = rng.random_range(0..n);
            let pts: Vec<(i64, i64)> = (0..len).map(|t| (sx + dx * t, sy + dy * t)).collect();
            let ok = pts.iter().all(|&(x, y)| {
                (0..n).contains(&x) && (0..n).contains(&y) && !(x >= bx0 && x <= bx1 && y >= by0 && y <= by1)
            });
            if ok {
                for (x, y) in pts {
                    mask[(y * n + x) as usize] = true;
                }
                break;
            }
        }
    }
    mask
}

pub fn shape_set(cfg: &ShapesConfig, seed: u64, count: usize) -> Vec<ShapeSample> {
    (0..count as u64).map(|i| shape_sample(cfg, seed, i)).collect()
}
