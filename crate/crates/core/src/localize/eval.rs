use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_grid, grid_search_threshold, iou, localize_map, BBox};
use crate::error::{Error, Result};
use crate::interpret::{saliency, MapKind, SaliencyMap};
use crate::io::ImageSet;
use crate::net::NetworkSpec;
use crate::solver::ImportanceMatrix;

/// One ground-truth annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: usize,
    pub class_id: usize,
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BBox,
}

mod box_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        [b.x0, b.y0, b.x1, b.y1].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let [x0, y0, x1, y1] = <[usize; 4]>::deserialize(d)?;
        BBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub map: MapKind,
    pub grid: Vec<f64>,
    /// Skip the search and use this fraction.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl EvalConfig {
    pub fn chip(site: usize) -> Self {
        Self {
            map: MapKind::Chip { site },
            grid: default_grid(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub image_id: usize,
    pub class_id: usize,
    pub ground_truth: [usize; 4],
    /// `None` when the binarized map is empty.
    pub predicted: Option<[usize; 4]>,
    pub component_pixels: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub threshold: f64,
    pub evaluated: usize,
    pub skipped_missing_ground_truth: usize,
    pub no_detection: usize,
    pub mean_iou: f64,
    pub fraction_iou_at_least_half: f64,
    pub images: Vec<ImageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

fn corners(b: &BBox) -> [usize; 4] {
    [b.x0, b.y0, b.x1, b.y1]
}

/// Scores precomputed maps against their boxes at a searched (or fixed) threshold.
pub fn evaluate_maps(maps: &[(usize, &SaliencyMap, BBox)], cfg: &EvalConfig) -> Result<(f64, Vec<ImageResult>)> {
    let items: Vec<(&SaliencyMap, BBox)> = maps.iter().map(|(_, m, b)| (*m, *b)).collect();
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => grid_search_threshold(&items, &cfg.grid)?,
    };
    let results = maps
        .iter()
        .map(|(id, map, gt)| {
            let (pred, pixels) = localize_map(map, threshold)?;
            Ok(ImageResult {
                image_id: *id,
                class_id: map.class_id,
                ground_truth: corners(gt),
                predicted: pred.as_ref().map(corners),
                component_pixels: pixels,
                iou: pred.map_or(0.0, |p| iou(&p, gt)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((threshold, results))
}

/// Full localization pipeline over an annotated image set: saliency of the
/// annotated class, grid-searched threshold, largest component, box, IoU.
pub fn evaluate(
    net: &NetworkSpec,
    images: &ImageSet,
    ground_truth: &[GroundTruth],
    importances: &[ImportanceMatrix],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut by_image: BTreeMap<usize, GroundTruth> = BTreeMap::new();
    for gt in ground_truth {
        if gt.image_id >= images.len() {
            return Err(Error::invalid(format!(
                "ground truth references image {} but only {} images are loaded",
                gt.image_id,
                images.len()
            )));
        }
        if by_image.insert(gt.image_id, *gt).is_some() {
            log::warn!("image {}: several boxes, keeping the last", gt.image_id);
        }
    }
    let skipped = images.len() - by_image.len();
    if skipped > 0 {
        log::warn!("{skipped} images have no ground truth and are skipped");
    }
    if by_image.is_empty() {
        return Err(Error::invalid("no image has ground truth"));
    }

    let annotated: Vec<GroundTruth> = by_image.into_values().collect();
    let maps: Vec<SaliencyMap> = annotated
        .par_iter()
        .map(|gt| {
            saliency(net, &images.images[gt.image_id], gt.class_id, importances, cfg.map).map_err(|e| Error::Image {
                image_id: gt.image_id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let triples: Vec<(usize, &SaliencyMap, BBox)> = annotated
        .iter()
        .zip(&maps)
        .map(|(gt, m)| (gt.image_id, m, gt.bbox))
        .collect();
    let (threshold, results) = evaluate_maps(&triples, cfg)?;
    Ok(summarize(cfg.clone(), threshold, skipped, results))
}

pub(crate) fn summarize(config: EvalConfig, threshold: f64, skipped: usize, images: Vec<ImageResult>) -> EvalReport {
    let n = images.len();
    let mean_iou = images.iter().map(|r| r.iou).sum::<f64>() / n.max(1) as f64;
    let hits = images.iter().filter(|r| r.iou >= 0.5).count();
    EvalReport {
        config,
        threshold,
        evaluated: n,
        skipped_missing_ground_truth: skipped,
        no_detection: images.iter().filter(|r| r.predicted.is_none()).count(),
        mean_iou,
        fraction_iou_at_least_half: hits as f64 / n.max(1) as f64,
        images,
        provenance: None,
    }
}
