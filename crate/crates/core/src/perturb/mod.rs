//! Perturbed dataset generation for one gate site.
//!
//! Gate `n` is drawn from a counter-based ChaCha stream keyed by
//! `(seed, n)`; every image is fed through the same `N` gated networks, so
//! the dataset is a pure function of `(net, images, site, N, seed)` no
//! matter how the work is scheduled.

mod format;

pub use format::{read_dataset, read_dataset_unchecked, write_dataset, DATA_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ImageSet;
use crate::net::{GateVector, NetworkSpec, Retain};
use crate::tensor::Tensor;

/// Reproducible generator of random gate vectors for one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSampler {
    pub site: usize,
    pub channels: usize,
    pub seed: u64,
}

impl GateSampler {
    pub fn new(site: usize, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("gate sampler needs at least one channel"));
        }
        Ok(Self { site, channels, seed })
    }

    /// Draws the number of open channels uniformly from `1..=K`, then a
    /// uniformly random subset of that size.
    pub fn sample_gate(&self, draw_index: u64) -> GateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(draw_index);
        let k = self.channels;
        let open = rng.random_range(1..=k);
        let mut order: Vec<usize> = (0..k).collect();
        // partial Fisher-Yates: the first `open` slots are a uniform subset
        for i in 0..open {
            let j = rng.random_range(i..k);
            order.swap(i, j);
        }
        let mut bits = vec![false; k];
        for &c in &order[..open] {
            bits[c] = true;
        }
        GateVector::new(self.site, bits).expect("at least one channel is open")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedRecord {
    pub image_id: u32,
    pub gate: GateVector,
    /// Global average pooling of the gated site, length `K`.
    pub pooled: Vec<f32>,
    /// Unperturbed prediction `f(X_s)`.
    pub base_pred: Vec<f32>,
    /// Perturbed prediction `g(X_s, d_n)`.
    pub pert_pred: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub net_hash: String,
    pub site: usize,
    pub channels: usize,
    pub classes: usize,
    pub images: usize,
    pub draws: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl DatasetHeader {
    /// Bytes per record: id, packed gate, pooled, base and perturbed predictions.
    pub fn record_size(&self) -> usize {
        4 + self.channels.div_ceil(8) + 4 * self.channels + 8 * self.classes
    }

    pub fn record_count(&self) -> usize {
        self.images * self.draws
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedDataset {
    pub header: DatasetHeader,
    /// Sorted by `(image_id, draw)`.
    pub records: Vec<PerturbedRecord>,
}

impl PerturbedDataset {
    pub fn record(&self, image_id: usize, draw: usize) -> Option<&PerturbedRecord> {
        self.records.get(image_id * self.header.draws + draw)
    }
}

/// Forward passes of one image under a list of gates at `site`, reusing the
/// activations below the gated layer.
pub struct GatedRunner<'a> {
    net: &'a NetworkSpec,
    tap: usize,
    image: &'a Tensor,
    prefix: Option<Tensor>,
    base: Vec<f32>,
}

impl<'a> GatedRunner<'a> {
    pub fn new(net: &'a NetworkSpec, site: usize, image: &'a Tensor) -> Result<Self> {
        let tap = net.gate_site(site)?.tap_layer;
        let full = net.forward(image, None, Retain::AllLayers)?;
        let prefix = if tap == 0 {
            None
        } else {
            full.activations[tap - 1].clone()
        };
        Ok(Self {
            net,
            tap,
            image,
            prefix,
            base: full.prediction,
        })
    }

    pub fn base_prediction(&self) -> &[f32] {
        &self.base
    }

    /// `(pooled at the gated site, prediction)`.
    pub fn run(&self, gate: &GateVector) -> Result<(Vec<f32>, Vec<f32>)> {
        let site = gate.site();
        let out = match &self.prefix {
            Some(act) => self.net.forward_from(self.tap - 1, act, Some(gate), Retain::Nothing)?,
            None => self.net.forward(self.image, Some(gate), Retain::Nothing)?,
        };
        let mut pooled = out.pooled;
        Ok((std::mem::take(&mut pooled[site]), out.prediction))
    }
}

/// One unperturbed pass plus `draws` gated passes per image.
pub fn build_dataset(
    net: &NetworkSpec,
    images: &ImageSet,
    site: usize,
    draws: usize,
    seed: u64,
) -> Result<PerturbedDataset> {
    let gs = net.gate_site(site)?;
    if draws == 0 {
        return Err(Error::invalid("draws per image must be at least 1"));
    }
    if images.is_empty() {
        return Err(Error::invalid("image set is empty"));
    }
    let sampler = GateSampler::new(site, gs.channels, seed)?;
    let gates: Vec<GateVector> = (0..draws as u64).map(|n| sampler.sample_gate(n)).collect();
    build_with_gates(net, images, site, &gates, seed)
}

/// Same as [`build_dataset`] with caller-provided gates (shared by all images).
pub fn build_with_gates(
    net: &NetworkSpec,
    images: &ImageSet,
    site: usize,
    gates: &[GateVector],
    seed: u64,
) -> Result<PerturbedDataset> {
    let gs = *net.gate_site(site)?;
    if let Some(bad) = gates.iter().find(|g| g.site() != site || g.len() != gs.channels) {
        return Err(Error::invalid(format!(
            "gate for site {} with {} bits does not match site {site} ({} channels)",
            bad.site(),
            bad.len(),
            gs.channels
        )));
    }
    let per_image: Vec<Result<Vec<PerturbedRecord>>> = images
        .images
        .par_iter()
        .enumerate()
        .map(|(s, image)| {
            let attach = |e: Error| Error::Image {
                image_id: s,
                source: Box::new(e),
            };
            let runner = GatedRunner::new(net, site, image).map_err(attach)?;
            gates
                .iter()
                .map(|gate| {
                    let (pooled, pert_pred) = runner.run(gate).map_err(attach)?;
                    Ok(PerturbedRecord {
                        image_id: s as u32,
                        gate: gate.clone(),
                        pooled,
                        base_pred: runner.base_prediction().to_vec(),
                        pert_pred,
                    })
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(images.len() * gates.len());
    for r in per_image {
        records.extend(r?);
    }
    Ok(PerturbedDataset {
        header: DatasetHeader {
            net_hash: net.content_hash(),
            site,
            channels: gs.channels,
            classes: net.num_classes(),
            images: images.len(),
            draws: gates.len(),
            seed,
            provenance: None,
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_gate_is_open() {
        let s = GateSampler::new(0, 1, 99).unwrap();
        for n in 0..20 {
            assert_eq!(s.sample_gate(n).bits(), &[true]);
        }
    }

    #[test]
    fn sampling_is_a_function_of_seed_and_index() {
        let s = GateSampler::new(1, 13, 5).unwrap();
        assert_eq!(s.sample_gate(17), s.sample_gate(17));
        let other = GateSampler::new(1, 13, 6).unwrap();
        let differs = (0..20).any(|n| s.sample_gate(n) != other.sample_gate(n));
        assert!(differs);
    }

    #[test]
    fn record_size_formula() {
        let h = DatasetHeader {
            net_hash: String::new(),
            site: 0,
            channels: 9,
            classes: 3,
            images: 2,
            draws: 5,
            seed: 0,
            provenance: None,
        };
        assert_eq!(h.record_size(), 4 + 2 + 36 + 24);
        assert_eq!(h.record_count(), 10);
    }
}
