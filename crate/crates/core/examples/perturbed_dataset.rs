//! Builds a perturbed dataset for the last convolution of the shapes network,
//! writes it to disk and reads it back.
//!
//! ```bash
//! cargo run --release -p chip --example perturbed_dataset -- [images] [draws]
//! ```

use chip::net::load_network;
use chip::perturb::{read_dataset, write_dataset};
use chip::shapes::{shape_set, ShapesConfig};
use chip::{build_dataset, ImageSet};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    let draws: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let net = load_network(NET)?;
    let samples = shape_set(&ShapesConfig::default(), 2024, count);
    let images = ImageSet::from_tensors(samples.into_iter().map(|s| s.image).collect());
    let (_, site) = net.first_last_sites().expect("network has convolutions");

    let ds = build_dataset(&net, &images, site, draws, 7)?;
    let h = &ds.header;
    println!(
        "{} records: {} images x {} draws, K={} C={}, {} bytes per record",
        ds.records.len(),
        h.images,
        h.draws,
        h.channels,
        h.classes,
        h.record_size()
    );

    let r = ds.record(0, 0).expect("record exists");
    println!(
        "image 0 draw 0: {} of {} channels open, f = {:?}, g = {:?}",
        r.gate.open_count(),
        r.gate.len(),
        r.base_pred,
        r.pert_pred
    );
    let open: Vec<usize> = ds.records.iter().map(|r| r.gate.open_count()).collect();
    println!(
        "mean open channels {:.2}",
        open.iter().sum::<usize>() as f64 / open.len() as f64
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shapes.chipdata");
    write_dataset(&ds, &path)?;
    let back = read_dataset(&path, &net)?;
    assert_eq!(back, ds);
    println!("round trip through {} bytes ok", std::fs::metadata(&path)?.len());
    Ok(())
}
