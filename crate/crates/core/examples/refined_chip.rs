//! Refined CHIP: the product of the first- and last-layer maps keeps the
//! sharp edges of the first layer only where the last layer sees the object.
//!
//! ```bash
//! cargo run --release -p chip --example refined_chip -- [out-dir]
//! ```

use std::path::PathBuf;

use chip::interpret::{saliency, write_pgm};
use chip::io::save_ppm;
use chip::localize::{binarize, mask_iou};
use chip::net::load_network;
use chip::shapes::{shape_set, ShapesConfig};
use chip::{build_dataset, solve_all, ImageSet, MapKind, SolverConfig};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "chip-refined".into()).into();
    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, 40);
    let images = ImageSet::from_tensors(samples.iter().map(|s| s.image.clone()).collect());
    let (first, last) = net.first_last_sites().expect("network has convolutions");

    let mut importances = Vec::new();
    for site in [first, last] {
        let ds = build_dataset(&net, &images, site, 100, 7)?;
        importances.push(solve_all(&ds, &SolverConfig::default())?);
    }

    for (i, s) in samples.iter().take(6).enumerate() {
        let kinds = [
            ("first", MapKind::Chip { site: first }),
            ("last", MapKind::Chip { site: last }),
            ("refined", MapKind::Refined { first, last }),
        ];
        let mut line = format!("image {i}:");
        for (name, kind) in kinds {
            let map = saliency(&net, &s.image, s.class_id, &importances, kind)?;
            write_pgm(&map, out.join(format!("img{i}_{name}.pgm")))?;
            let score = mask_iou(&binarize(&map, 0.1)?, &s.bbox);
            line += &format!("  {name} mask IoU {score:.3}");
        }
        save_ppm(&s.image, out.join(format!("img{i}.ppm")))?;
        println!("{line}");
    }
    println!("maps written to {}", out.display());
    Ok(())
}
