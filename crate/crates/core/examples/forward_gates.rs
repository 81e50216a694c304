//! Loads the shipped shapes network, runs one image with and without a
//! channel gate and shows how closing channels moves the class probabilities.
//!
//! ```bash
//! cargo run -p chip --example forward_gates
//! ```

use chip::net::load_network;
use chip::shapes::{shape_sample, ShapesConfig, SHAPE_CLASSES};
use chip::{GateVector, Retain};

const NET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/shapes_net.chipnet");

fn main() -> anyhow::Result<()> {
    let net = load_network(NET)?;
    println!(
        "network {} ({} gate sites)",
        &net.content_hash()[..12],
        net.gate_sites().len()
    );
    for (i, s) in net.gate_sites().iter().enumerate() {
        println!(
            "  site {i}: layer {} {}x{}x{}",
            s.conv_layer, s.height, s.width, s.channels
        );
    }

    let sample = shape_sample(&ShapesConfig::default(), 2024, 1);
    let base = net.forward(&sample.image, None, Retain::GateSites)?;
    let class = base.argmax();
    println!(
        "\ntrue class {}, predicted {} p={:.4}",
        SHAPE_CLASSES[sample.class_id], SHAPE_CLASSES[class], base.prediction[class]
    );

    let (_, last) = net.first_last_sites().expect("network has convolutions");
    let k = net.gate_site(last)?.channels;
    let pooled = &base.pooled[last];
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| pooled[b].total_cmp(&pooled[a]));
    println!("strongest pooled channels at site {last}: {:?}", &order[..5]);

    let open = GateVector::all_open(last, k)?;
    let same = net.forward(&sample.image, Some(&open), Retain::Nothing)?;
    assert_eq!(same.prediction, base.prediction);
    println!("all-open gate reproduces the ungated prediction bit for bit");

    for n in [1, 3, 8, 16] {
        let gate = GateVector::blocking(last, k, &order[..n])?;
        let out = net.forward(&sample.image, Some(&gate), Retain::Nothing)?;
        println!(
            "blocking the {n:>2} strongest channels: p({}) = {:.4}",
            SHAPE_CLASSES[class], out.prediction[class]
        );
    }
    Ok(())
}
