//! Weak localization: binarize a saliency map, keep the largest 8-connected
//! component, box it, and score boxes by intersection-over-union.

mod eval;

pub use crate::interpret::MapKind;
pub use eval::{evaluate, evaluate_maps, EvalConfig, EvalReport, GroundTruth, ImageResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::SaliencyMap;

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::invalid(format!("box ({x0},{y0},{x1},{y1}) is inverted")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1 < width && self.y1 < height
    }

    /// Tight box around the set pixels of a row-major mask.
    pub fn from_mask(mask: &[bool], width: usize, height: usize) -> Option<Self> {
        let mut b: Option<BBox> = None;
        for y in 0..height {
            for x in 0..width {
                if mask[y * width + x] {
                    b = Some(match b {
                        None => BBox {
                            x0: x,
                            y0: y,
                            x1: x,
                            y1: y,
                        },
                        Some(b) => BBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        b
    }
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// Pixels of one connected component as `(x, y)`, in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// `values >= frac * max(values)`; a map whose maximum is zero gives an
/// empty mask.
pub fn binarize(map: &SaliencyMap, frac: f64) -> Result<Mask> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(format!("threshold fraction {frac} not in (0, 1)")));
    }
    let max = map.max_value() as f64;
    let bits = if max > 0.0 {
        let cut = frac * max;
        map.values.iter().map(|&v| v as f64 >= cut).collect()
    } else {
        vec![false; map.values.len()]
    };
    Ok(Mask {
        width: map.width,
        height: map.height,
        bits,
    })
}

/// Largest 8-connected component. Two-pass union-find labeling; among
/// equal sizes the component whose first pixel comes first in row-major
/// order wins.
pub fn largest_component(mask: &Mask) -> Component {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0usize; w * h];
    let mut parent: Vec<usize> = vec![0];

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for y in 0..h {
        for x in 0..w {
            if !mask.bits[y * w + x] {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut neigh = [0usize; 4];
            let mut n = 0;
            if x > 0 && labels[y * w + x - 1] != 0 {
                neigh[n] = labels[y * w + x - 1];
                n += 1;
            }
            if y > 0 {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let l = labels[(y - 1) * w + nx];
                    if l != 0 {
                        neigh[n] = l;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                let l = parent.len();
                parent.push(l);
                labels[y * w + x] = l;
            } else {
                let mut root = find(&mut parent, neigh[0]);
                for &l in &neigh[1..n] {
                    let r = find(&mut parent, l);
                    if r != root {
                        let (lo, hi) = if r < root { (r, root) } else { (root, r) };
                        parent[hi] = lo;
                        root = lo;
                    }
                }
                labels[y * w + x] = root;
            }
        }
    }

    let mut sizes = vec![0usize; parent.len()];
    let mut first_seen = vec![usize::MAX; parent.len()];
    for (i, l) in labels.iter_mut().enumerate() {
        if *l != 0 {
            *l = find(&mut parent, *l);
            sizes[*l] += 1;
            first_seen[*l] = first_seen[*l].min(i);
        }
    }
    let best = (1..parent.len())
        .filter(|&l| sizes[l] > 0)
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(first_seen[b].cmp(&first_seen[a])));
    let Some(best) = best else {
        return Component::default();
    };
    Component {
        pixels: labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == best)
            .map(|(i, _)| (i % w, i / w))
            .collect(),
    }
}

/// Tight box over a component; `None` signals no detection.
pub fn bbox_of(component: &Component) -> Option<BBox> {
    let mut it = component.pixels.iter();
    let &(x, y) = it.next()?;
    let mut b = BBox {
        x0: x,
        y0: y,
        x1: x,
        y1: y,
    };
    for &(x, y) in it {
        b.x0 = b.x0.min(x);
        b.x1 = b.x1.max(x);
        b.y0 = b.y0.min(y);
        b.y1 = b.y1.max(y);
    }
    Some(b)
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    let inter = if ix0 <= ix1 && iy0 <= iy1 {
        (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    } else {
        0
    };
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Box predicted from a map at one threshold fraction.
pub fn localize_map(map: &SaliencyMap, frac: f64) -> Result<(Option<BBox>, usize)> {
    let comp = largest_component(&binarize(map, frac)?);
    Ok((bbox_of(&comp), comp.len()))
}

/// `0.05, 0.10, …, 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// IoU between a binary mask and the pixels of a box.
pub fn mask_iou(mask: &Mask, b: &BBox) -> f64 {
    let mut inter = 0;
    let mut on = 0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                on += 1;
                if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 {
                    inter += 1;
                }
            }
        }
    }
    inter as f64 / (on + b.area() - inter) as f64
}

fn grid_search_by(
    items: &[(&SaliencyMap, BBox)],
    grid: &[f64],
    score: impl Fn(&SaliencyMap, f64, &BBox) -> Result<f64>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("threshold search needs at least one map"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &frac in &sorted {
        let mut total = 0.0;
        for (map, gt) in items {
            total += score(map, frac, gt)?;
        }
        let mean = total / items.len() as f64;
        if best.is_none_or(|(_, m)| mean > m) {
            best = Some((frac, mean));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}

/// Grid fraction maximizing mean box IoU over `(map, ground truth)` pairs;
/// a missing detection scores 0 and ties go to the smallest fraction.
pub fn grid_search_threshold(items: &[(&SaliencyMap, BBox)], grid: &[f64]) -> Result<f64> {
    grid_search_by(items, grid, |map, frac, gt| {
        Ok(localize_map(map, frac)?.0.map_or(0.0, |b| iou(&b, gt)))
    })
}

/// Grid fraction maximizing mean [`mask_iou`] of the binarized maps.
pub fn grid_search_mask_threshold(items: &[(&SaliencyMap, BBox)], grid: &[f64]) -> Result<f64> {
    grid_search_by(items, grid, |map, frac, gt| Ok(mask_iou(&binarize(map, frac)?, gt)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Mask {
        let height = rows.len();
        let width = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        Mask { width, height, bits }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 9, 9).unwrap();
        let b = BBox::new(5, 5, 14, 14).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-15);
        let c = BBox::new(20, 20, 21, 21).unwrap();
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn bbox_examples() {
        let single = Component { pixels: vec![(2, 3)] };
        assert_eq!(
            bbox_of(&single),
            Some(BBox {
                x0: 2,
                y0: 3,
                x1: 2,
                y1: 3
            })
        );
        let mut l = Component::default();
        for y in 1..=5 {
            l.pixels.push((2, y));
        }
        for x in 3..=7 {
            l.pixels.push((x, 5));
        }
        assert_eq!(
            bbox_of(&l),
            Some(BBox {
                x0: 2,
                y0: 1,
                x1: 7,
                y1: 5
            })
        );
        assert_eq!(bbox_of(&Component::default()), None);
    }

    #[test]
    fn picks_larger_blob_and_uses_diagonals() {
        let m = mask_from(&[
            "#.....", //
            ".#...#", //
            "..#..#", //
            "...#..", //
            "#.....",
        ]);
        let c = largest_component(&m);
        assert_eq!(c.len(), 4);
        assert_eq!(c.pixels[0], (0, 0));
        let m = mask_from(&["##..#", "##..#", "....#"]);
        assert_eq!(largest_component(&m).pixels[0], (0, 0));
    }

    #[test]
    fn u_shape_merges_labels() {
        let m = mask_from(&["#...#", "#...#", "#####"]);
        assert_eq!(largest_component(&m).len(), 9);
    }

    #[test]
    fn empty_mask_gives_empty_component() {
        let m = mask_from(&["...", "..."]);
        assert!(largest_component(&m).is_empty());
    }

    #[test]
    fn binarize_rules() {
        let map = SaliencyMap::from_normalized(1, 3, vec![0.2, 1.0, 0.6], 0).unwrap();
        let m = binarize(&map, 0.999).unwrap();
        assert_eq!(m.bits, vec![false, true, false]);
        let flat = SaliencyMap::from_normalized(1, 3, vec![0.4; 3], 0).unwrap();
        assert_eq!(binarize(&flat, 0.5).unwrap().count(), 3);
        let zero = SaliencyMap::from_normalized(1, 3, vec![0.0; 3], 0).unwrap();
        assert!(binarize(&zero, 0.5).unwrap().is_empty());
        assert!(binarize(&map, 0.0).is_err());
        assert!(binarize(&map, 1.0).is_err());
    }

    #[test]
    fn grid_singleton_and_ties() {
        let map = SaliencyMap::from_normalized(2, 2, vec![1.0; 4], 0).unwrap();
        let gt = BBox::new(0, 0, 1, 1).unwrap();
        assert_eq!(grid_search_threshold(&[(&map, gt)], &[0.7]).unwrap(), 0.7);
        assert_eq!(grid_search_threshold(&[(&map, gt)], &[0.9, 0.3, 0.5]).unwrap(), 0.3);
    }
}
