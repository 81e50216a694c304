//! Fits sparse per-class channel importance with ADMM and sweeps λ.
//!
//! ```bash
//! cargo run --release -p chip --example learn_importance
//! ```

use chip::net::load_network;
use chip::shapes::{shape_set, ShapesConfig, SHAPE_CLASSES};
use chip::{build_dataset, solve_all, ImageSet, SolverConfig};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, 30);
    let images = ImageSet::from_tensors(samples.into_iter().map(|s| s.image).collect());
    let (_, site) = net.first_last_sites().expect("network has convolutions");
    let ds = build_dataset(&net, &images, site, 100, 7)?;

    let w = solve_all(&ds, &SolverConfig::default())?;
    for (c, name) in SHAPE_CLASSES.iter().enumerate() {
        let d = &w.meta.classes[c];
        let row: Vec<String> = w.rows[c]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| format!("{k}:{v:.2}"))
            .collect();
        println!(
            "{name:>8}: {} iterations, λ={:.3e}, nonzero {}",
            d.iterations,
            d.lambda,
            row.join(" ")
        );
    }

    println!("\nλ multiplier -> nonzero channels per class");
    for m in [1.0, 3.0, 10.0, 30.0] {
        let ws = solve_all(&ds, &SolverConfig::default().scale_lambda(m))?;
        println!("  x{m:<4} {:?}", ws.nonzero_counts());
    }
    Ok(())
}
