//! Weak localization on the synthetic shapes: perturb, learn, explain,
//! search a binarization threshold and score boxes by IoU.
//!
//! ```bash
//! cargo run --release -p chip --example localization_eval -- [images]
//! ```

use chip::localize::{evaluate, EvalConfig, GroundTruth};
use chip::net::load_network;
use chip::shapes::{shape_set, ShapesConfig};
use chip::{build_dataset, solve_all, ImageSet, MapKind, SolverConfig};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let count: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, count);
    let images = ImageSet::from_tensors(samples.iter().map(|s| s.image.clone()).collect());
    let gt: Vec<GroundTruth> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| GroundTruth {
            image_id: i,
            class_id: s.class_id,
            bbox: s.bbox,
        })
        .collect();

    let (first, last) = net.first_last_sites().expect("network has convolutions");
    let mut importances = Vec::new();
    for site in [first, last] {
        let ds = build_dataset(&net, &images, site, 100, 7)?;
        importances.push(solve_all(&ds, &SolverConfig::default())?);
    }

    for kind in [
        MapKind::Chip { site: last },
        MapKind::Chip { site: first },
        MapKind::Refined { first, last },
    ] {
        let cfg = EvalConfig {
            map: kind,
            ..EvalConfig::chip(last)
        };
        let r = evaluate(&net, &images, &gt, &importances, &cfg)?;
        println!(
            "{kind:?}: threshold {:.2}, mean IoU {:.3}, IoU>=0.5 on {:.0}%, no detection {}",
            r.threshold,
            r.mean_iou,
            100.0 * r.fraction_iou_at_least_half,
            r.no_detection
        );
    }
    Ok(())
}
