use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::ImportanceMatrix;

/// Channel-importance sparsity and cross-class overlap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub classes: Vec<usize>,
    pub top_k: usize,
    pub rel_threshold: f64,
    /// Nonzero entries per listed class.
    pub nonzero: Vec<usize>,
    /// The `top_k` highest-importance channels per class, best first.
    pub top_channels: Vec<Vec<usize>>,
    /// Channels above `rel_threshold * max` per class, ascending.
    pub above_threshold: Vec<Vec<usize>>,
    /// `top_overlap[i][j]` = |top(i) ∩ top(j)|.
    pub top_overlap: Vec<Vec<usize>>,
    /// `threshold_overlap[i][j]` = |above(i) ∩ above(j)|.
    pub threshold_overlap: Vec<Vec<usize>>,
}

pub fn importance_stats(
    importance: &ImportanceMatrix,
    classes: &[usize],
    top_k: usize,
    rel_threshold: f64,
) -> Result<OverlapReport> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::invalid(format!("rel_threshold {rel_threshold} not in (0, 1)")));
    }
    let mut nonzero = Vec::new();
    let mut top_channels = Vec::new();
    let mut above_threshold = Vec::new();
    for &c in classes {
        let row = importance
            .rows
            .get(c)
            .ok_or_else(|| Error::invalid(format!("class {c} out of range ({})", importance.rows.len())))?;
        nonzero.push(row.iter().filter(|&&v| v != 0.0).count());

        let mut order: Vec<usize> = (0..row.len()).collect();
        // descending importance, ties to the lower channel index
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order.truncate(top_k);
        top_channels.push(order);

        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let above = if max > 0.0 {
            (0..row.len()).filter(|&k| row[k] > rel_threshold * max).collect()
        } else {
            Vec::new()
        };
        above_threshold.push(above);
    }

    let overlap = |sets: &[Vec<usize>]| -> Vec<Vec<usize>> {
        sets.iter()
            .map(|a| {
                sets.iter()
                    .map(|b| a.iter().filter(|k| b.contains(k)).count())
                    .collect()
            })
            .collect()
    };
    Ok(OverlapReport {
        classes: classes.to_vec(),
        top_k,
        rel_threshold,
        nonzero,
        top_overlap: overlap(&top_channels),
        threshold_overlap: overlap(&above_threshold),
        top_channels,
        above_threshold,
    })
}
