mod common;

use chip::localize::{
    bbox_of, binarize, default_grid, evaluate, evaluate_maps, grid_search_mask_threshold, grid_search_threshold, iou,
    largest_component, localize_map, mask_iou, Component, EvalConfig, GroundTruth, Mask,
};
use chip::net::load_network;
use chip::solver::ImportanceMatrix;
use chip::{BBox, ImageSet, SaliencyMap};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn map_from(h: usize, w: usize, values: Vec<f32>) -> SaliencyMap {
    SaliencyMap::from_normalized(h, w, values, 0).unwrap()
}

fn bbox(x0: usize, y0: usize, x1: usize, y1: usize) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

#[test]
fn binarize_matches_direct_comparison() {
    let mut r = rng(31);
    for _ in 0..200 {
        let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
        let values: Vec<f32> = (0..h * w).map(|_| r.random_range(0.0..1.0)).collect();
        let frac = r.random_range(0.01..0.99);
        let max = values.iter().copied().fold(0.0f32, f32::max) as f64;
        let mask = binarize(&map_from(h, w, values.clone()), frac).unwrap();
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(mask.bits[i], v as f64 >= frac * max);
        }
    }
}

#[test]
fn threshold_near_one_keeps_only_the_peak() {
    let mut values = vec![0.3f32; 25];
    values[17] = 1.0;
    values[3] = 0.999;
    let mask = binarize(&map_from(5, 5, values), 0.9995).unwrap();
    assert_eq!(mask.count(), 1);
    assert!(mask.bits[17]);
}

#[test]
fn constant_map_binarizes_to_full_mask() {
    let mask = binarize(&map_from(4, 6, vec![0.6; 24]), 0.5).unwrap();
    assert_eq!(mask.count(), 24);
    let empty = binarize(&map_from(4, 6, vec![0.0; 24]), 0.5).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn binarize_rejects_fractions_outside_open_interval() {
    let map = map_from(1, 1, vec![1.0]);
    for frac in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(binarize(&map, frac).is_err());
    }
}

fn random_mask(r: &mut impl Rng, w: usize, h: usize, p: f64) -> Mask {
    Mask {
        width: w,
        height: h,
        bits: (0..w * h).map(|_| r.random_bool(p)).collect(),
    }
}

fn oracle_largest(mask: &Mask) -> Vec<(usize, usize)> {
    let mut best: Vec<(usize, usize)> = Vec::new();
    for c in flood_fill_components(mask) {
        if c.len() > best.len() {
            best = c;
        }
    }
    best
}

#[test]
fn largest_component_matches_flood_fill_on_large_masks() {
    let mut r = rng(32);
    for _ in 0..40 {
        let p = r.random_range(0.2..0.6);
        let mask = random_mask(&mut r, 64, 64, p);
        assert_eq!(sorted_pixels(&largest_component(&mask)), oracle_largest(&mask));
    }
}

#[test]
fn larger_blob_wins() {
    let mut bits = vec![false; 20 * 10];
    for (x, y) in [(1, 1), (2, 1), (1, 2)] {
        bits[y * 20 + x] = true;
    }
    for i in 0..10 {
        bits[6 * 20 + 5 + i] = true;
    }
    let mask = Mask {
        width: 20,
        height: 10,
        bits,
    };
    let c = largest_component(&mask);
    assert_eq!(c.len(), 10);
    assert_eq!(bbox_of(&c), Some(bbox(5, 6, 14, 6)));
}

#[test]
fn equal_components_tie_to_earliest_pixel() {
    let mut bits = vec![false; 8 * 4];
    for (x, y) in [(6, 0), (7, 0), (0, 3), (1, 3)] {
        bits[y * 8 + x] = true;
    }
    let c = largest_component(&Mask {
        width: 8,
        height: 4,
        bits,
    });
    assert_eq!(sorted_pixels(&c), vec![(6, 0), (7, 0)]);
}

#[test]
fn bbox_of_l_shape() {
    let mut c = Component::default();
    for y in 1..=5 {
        c.pixels.push((2, y));
    }
    for x in 3..=7 {
        c.pixels.push((x, 5));
    }
    assert_eq!(bbox_of(&c), Some(bbox(2, 1, 7, 5)));
    assert_eq!(bbox_of(&Component::default()), None);
}

#[test]
fn bbox_of_matches_min_max_oracle() {
    let mut r = rng(33);
    for _ in 0..200 {
        let n = r.random_range(1..40);
        let pixels: Vec<(usize, usize)> = (0..n).map(|_| (r.random_range(0..50), r.random_range(0..50))).collect();
        let want = bbox(
            pixels.iter().map(|p| p.0).min().unwrap(),
            pixels.iter().map(|p| p.1).min().unwrap(),
            pixels.iter().map(|p| p.0).max().unwrap(),
            pixels.iter().map(|p| p.1).max().unwrap(),
        );
        assert_eq!(bbox_of(&Component { pixels }), Some(want));
    }
}

#[test]
fn iou_of_offset_squares() {
    let (a, b) = (bbox(0, 0, 9, 9), bbox(5, 5, 14, 14));
    assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-15);
    assert_eq!(iou(&a, &b), pixel_iou(&a, &b));
}

#[test]
fn iou_matches_pixel_count_oracle() {
    let mut r = rng(34);
    for _ in 0..500 {
        let mut rb = || {
            let (x0, y0) = (r.random_range(0..20), r.random_range(0..20));
            bbox(x0, y0, r.random_range(x0..20), r.random_range(y0..20))
        };
        let (a, b) = (rb(), rb());
        assert!((iou(&a, &b) - pixel_iou(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn mask_iou_matches_pixel_count_oracle() {
    let mut r = rng(35);
    for _ in 0..200 {
        let mask = random_mask(&mut r, 12, 9, 0.3);
        let (x0, y0) = (r.random_range(0..12), r.random_range(0..9));
        let b = bbox(x0, y0, r.random_range(x0..12), r.random_range(y0..9));
        let (mut inter, mut union) = (0, 0);
        for y in 0..9 {
            for x in 0..12 {
                let inside = x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1;
                inter += (mask.get(x, y) && inside) as usize;
                union += (mask.get(x, y) || inside) as usize;
            }
        }
        assert_eq!(mask_iou(&mask, &b), inter as f64 / union as f64);
    }
}

/// 10×10 map: object pixels in a 4×4 block valued in `[0.4, 1]` with minimum
/// exactly 0.4, background at 0.375.
fn planted_map() -> (SaliencyMap, BBox) {
    let mut values = vec![0.375f32; 100];
    let object = bbox(3, 2, 6, 5);
    for y in 2..=5 {
        for x in 3..=6 {
            values[y * 10 + x] = 0.4 + 0.04 * ((x + y) % 16) as f32;
        }
    }
    values[2 * 10 + 3] = 0.4;
    values[5 * 10 + 6] = 1.0;
    (map_from(10, 10, values), object)
}

#[test]
fn grid_search_finds_planted_threshold() {
    let (map, gt) = planted_map();
    let t = grid_search_threshold(&[(&map, gt)], &default_grid()).unwrap();
    assert_eq!(t, 0.4);
    assert_eq!(localize_map(&map, t).unwrap().0, Some(gt));
}

#[test]
fn grid_search_ties_go_to_smallest_fraction() {
    let mut values = vec![0.0f32; 16];
    values[5] = 1.0;
    let map = map_from(4, 4, values);
    let gt = bbox(1, 1, 1, 1);
    assert_eq!(grid_search_threshold(&[(&map, gt)], &[0.7, 0.2, 0.5]).unwrap(), 0.2);
    assert_eq!(
        grid_search_mask_threshold(&[(&map, gt)], &[0.7, 0.2, 0.5]).unwrap(),
        0.2
    );
    assert_eq!(grid_search_threshold(&[(&map, gt)], &[0.35]).unwrap(), 0.35);
    assert!(grid_search_threshold(&[(&map, gt)], &[]).is_err());
    assert!(grid_search_threshold(&[], &[0.5]).is_err());
}

#[test]
fn evaluation_scores_perfect_and_empty_maps() {
    let (map, gt) = planted_map();
    let (_, res) = evaluate_maps(&[(0, &map, gt)], &EvalConfig::chip(0)).unwrap();
    assert_eq!(res[0].iou, 1.0);
    let empty = map_from(10, 10, vec![0.0; 100]);
    let cfg = EvalConfig {
        threshold: Some(0.5),
        ..EvalConfig::chip(0)
    };
    let (t, res) = evaluate_maps(&[(0, &empty, gt)], &cfg).unwrap();
    assert_eq!(t, 0.5);
    assert_eq!(res[0].predicted, None);
    assert_eq!(res[0].iou, 0.0);
}

#[test]
fn evaluate_report_is_deterministic_and_checks_ground_truth() {
    let net = load_network(fixture("shapes_net.chipnet")).unwrap();
    let images = ImageSet::load_dir(fixture("shapes8"), None).unwrap();
    let gt: Vec<GroundTruth> =
        serde_json::from_slice(&std::fs::read(fixture("shapes8/ground_truth.json")).unwrap()).unwrap();
    let (first, last) = net.first_last_sites().unwrap();
    let mut r = rng(36);
    let imps: Vec<ImportanceMatrix> = [first, last]
        .iter()
        .map(|&s| {
            let k = net.gate_site(s).unwrap().channels;
            let rows = (0..net.num_classes())
                .map(|_| (0..k).map(|_| r.random_range(0.0..1.0)).collect())
                .collect();
            ImportanceMatrix::from_rows(s, rows)
        })
        .collect();
    let cfg = EvalConfig::chip(last);
    let a = evaluate(&net, &images, &gt, &imps, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| evaluate(&net, &images, &gt, &imps, &cfg).unwrap());
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert_eq!(a.evaluated, images.len());

    let mut bad = gt.clone();
    bad[0].image_id = images.len();
    assert!(evaluate(&net, &images, &bad, &imps, &cfg).is_err());
    let partial = &gt[..3];
    let report = evaluate(&net, &images, partial, &imps, &cfg).unwrap();
    assert_eq!(report.skipped_missing_ground_truth, images.len() - 3);
}

fn box_strategy() -> impl Strategy<Value = BBox> {
    (0usize..30, 0usize..30, 0usize..15, 0usize..15).prop_map(|(x, y, w, h)| bbox(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn binarize_is_monotone_in_fraction(values in prop::collection::vec(0.0f32..=1.0, 36), lo in 0.01f64..0.98, step in 0.0f64..0.5) {
        let hi = (lo + step).min(0.99);
        let map = map_from(6, 6, values);
        let (a, b) = (binarize(&map, lo).unwrap(), binarize(&map, hi).unwrap());
        for i in 0..36 {
            prop_assert!(!b.bits[i] || a.bits[i]);
        }
    }

    #[test]
    fn bbox_grows_with_the_component(pixels in prop::collection::vec((0usize..40, 0usize..40), 1..30), extra in (0usize..40, 0usize..40)) {
        let small = bbox_of(&Component { pixels: pixels.clone() }).unwrap();
        let mut more = pixels;
        more.push(extra);
        let big = bbox_of(&Component { pixels: more }).unwrap();
        prop_assert!(big.contains(&small));
    }
}
