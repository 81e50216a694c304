//! Writes a synthetic-shapes image set as PPM files plus `ground_truth.json`.
//!
//! ```bash
//! cargo run -p chip --example synthetic_shapes -- <out-dir> [count] [seed]
//! ```

use std::path::PathBuf;

use anyhow::Context;
use chip::io::save_ppm;
use chip::localize::GroundTruth;
use chip::shapes::{shape_set, ShapesConfig, SHAPE_CLASSES};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args
        .next()
        .context("usage: synthetic_shapes <out-dir> [count] [seed]")?
        .into();
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);

    std::fs::create_dir_all(&out)?;
    let samples = shape_set(&ShapesConfig::default(), seed, count);
    let mut gt = Vec::with_capacity(count);
    for (i, s) in samples.iter().enumerate() {
        save_ppm(&s.image, out.join(format!("{i:05}.ppm")))?;
        gt.push(GroundTruth {
            image_id: i,
            class_id: s.class_id,
            bbox: s.bbox,
        });
    }
    std::fs::write(out.join("ground_truth.json"), serde_json::to_vec_pretty(&gt)?)?;

    let per_class: Vec<usize> = (0..3)
        .map(|c| samples.iter().filter(|s| s.class_id == c).count())
        .collect();
    for (name, n) in SHAPE_CLASSES.iter().zip(per_class) {
        println!("{name:>8}: {n}");
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}
