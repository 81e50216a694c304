//! Which channels matter for which class: sparsity and cross-class overlap
//! of the learned importance.
//!
//! ```bash
//! cargo run --release -p chip --example channel_overlap
//! ```

use chip::interpret::importance_stats;
use chip::net::load_network;
use chip::shapes::{shape_set, ShapesConfig, SHAPE_CLASSES};
use chip::{build_dataset, solve_all, ImageSet, SolverConfig};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, 60);
    let images = ImageSet::from_tensors(samples.into_iter().map(|s| s.image).collect());
    let (_, site) = net.first_last_sites().expect("network has convolutions");
    let ds = build_dataset(&net, &images, site, 100, 7)?;
    let w = solve_all(&ds, &SolverConfig::default())?;

    let report = importance_stats(&w, &[0, 1, 2], 3, 0.1)?;
    for (i, name) in SHAPE_CLASSES.iter().enumerate() {
        println!(
            "{name:>8}: {} of {} channels nonzero, top-3 {:?}, above 10% of max {:?}",
            report.nonzero[i],
            w.channels(),
            report.top_channels[i],
            report.above_threshold[i]
        );
    }
    println!(
        "\ntop-3 overlap\n{:>10}{:>10}{:>10}{:>10}",
        "", SHAPE_CLASSES[0], SHAPE_CLASSES[1], SHAPE_CLASSES[2]
    );
    for (i, row) in report.top_overlap.iter().enumerate() {
        println!("{:>10}{:>10}{:>10}{:>10}", SHAPE_CLASSES[i], row[0], row[1], row[2]);
    }
    Ok(())
}
