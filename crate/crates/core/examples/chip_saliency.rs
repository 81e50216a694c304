//! CHIP saliency maps at every gate site for a few shapes images, written
//! as grayscale PGM and colour overlays.
//!
//! ```bash
//! cargo run --release -p chip --example chip_saliency -- [out-dir]
//! ```

use std::path::PathBuf;

use chip::interpret::{write_pgm, write_png_overlay};
use chip::net::load_network;
use chip::shapes::{shape_set, ShapesConfig, SHAPE_CLASSES};
use chip::{build_dataset, chip_map, solve_all, ImageSet, SolverConfig};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "chip-maps".into()).into();
    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, 30);
    let images = ImageSet::from_tensors(samples.iter().map(|s| s.image.clone()).collect());

    for site in 0..net.gate_sites().len() {
        let ds = build_dataset(&net, &images, site, 100, 7)?;
        let w = solve_all(&ds, &SolverConfig::default())?;
        for (i, s) in samples.iter().take(4).enumerate() {
            let map = chip_map(&net, &s.image, w.row(s.class_id)?, site, s.class_id)?;
            let stem = out.join(format!("site{site}_img{i}_{}", SHAPE_CLASSES[s.class_id]));
            write_pgm(&map, stem.with_extension("pgm"))?;
            write_png_overlay(&map, &s.image, stem.with_extension("png"))?;
            println!(
                "site {site} image {i}: raw range [{:.3}, {:.3}]{}",
                map.norm.raw_min,
                map.norm.raw_max,
                if map.norm.degenerate { " (degenerate)" } else { "" }
            );
        }
    }
    println!("maps written to {}", out.display());
    Ok(())
}
