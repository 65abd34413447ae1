//! Scoring of detection and separation against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assign::StrainAssignment;
use crate::error::{DemixError, Result};
use crate::hypothesis::Call;
use crate::math::chi2_survival_1df;

/// Per-sample detection record of an evaluation panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub true_label: Call,
    pub true_proportions: Vec<f64>,
    pub lr_statistic: f64,
    pub call: Call,
    /// Present exactly when the sample was called mixed.
    pub estimated_proportions: Option<Vec<f64>>,
}

/// Read-assignment confusion counts: rows are true strains, columns are
/// assigned strains. Only variant-bearing (assigned) reads are counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.n()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Root mean square error between true and estimated major proportions.
pub fn rmse(true_props: &[f64], est_props: &[f64]) -> Result<f64> {
    if true_props.is_empty() || true_props.len() != est_props.len() {
        return Err(DemixError::InvalidInput(format!(
            "rmse needs equal nonempty inputs, got {} and {}",
            true_props.len(),
            est_props.len()
        )));
    }
    let mean_sq = true_props
        .iter()
        .zip(est_props.iter())
        .map(|(t, e)| (t - e) * (t - e))
        .sum::<f64>()
        / true_props.len() as f64;
    Ok(mean_sq.sqrt())
}

/// ROC curve and area under it, treating `Mixed` as the positive class.
///
/// Thresholds sweep the distinct scores from high to low; tied scores form a
/// single threshold. The area is the trapezoidal rule over the curve.
pub fn roc_auc(scores: &[f64], labels: &[Call]) -> Result<(Vec<(f64, f64)>, f64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(DemixError::InvalidInput(
            "scores and labels must be equal-length and nonempty".into(),
        ));
    }
    let positives = labels.iter().filter(|&&l| l == Call::Mixed).count() as f64;
    let negatives = labels.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Err(DemixError::InvalidInput(
            "ROC needs both a mixed and a pure sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut curve = vec![(0.0, 0.0)];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                Call::Mixed => tp += 1.0,
                Call::Pure => fp += 1.0,
            }
            i += 1;
        }
        curve.push((fp / negatives, tp / positives));
    }
    let auc = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok((curve, auc))
}

/// Count assigned reads by (true strain, assigned strain). Unassigned reads
/// are excluded; an assigned read without provenance is an error.
pub fn confusion_matrix(
    assignments: &[StrainAssignment],
    provenance: &BTreeMap<String, usize>,
) -> Result<ConfusionMatrix> {
    let mut n = provenance.values().map(|&s| s + 1).max().unwrap_or(0);
    for a in assignments {
        if let Some(s) = a.strain {
            n = n.max(s + 1);
        }
    }
    let mut counts = vec![vec![0u64; n]; n];
    for a in assignments {
        let Some(assigned) = a.strain else { continue };
        let true_strain = provenance.get(&a.read_id).copied().ok_or_else(|| {
            DemixError::InvalidInput(format!(
                "assigned read {} has no provenance entry",
                a.read_id
            ))
        })?;
        counts[true_strain][assigned] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Number of listed positions where the consensus disagrees with the true
/// genome.
pub fn consensus_mismatches(
    consensus: &[u8],
    true_genome: &[u8],
    snp_positions: &[usize],
) -> Result<usize> {
    if consensus.len() != true_genome.len() {
        return Err(DemixError::InvalidInput(format!(
            "consensus length {} does not match genome length {}",
            consensus.len(),
            true_genome.len()
        )));
    }
    Ok(snp_positions
        .iter()
        .filter(|&&p| consensus[p] != true_genome[p])
        .count())
}

/// One cell of the alpha-calibration grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGridCell {
    pub snp_distance: usize,
    pub major_proportion: f64,
    /// Smallest significance level that detects the mixed sample while every
    /// pure sample at the same distance stays pure; 1.0 when infeasible.
    pub min_alpha: f64,
}

/// Smallest alpha detecting a mixed sample with statistic `lr_mixed` while
/// keeping all `pure_lrs` below the threshold. The detection threshold is
/// the upper chi-squared(1) quantile, so the minimum detecting alpha is the
/// survival probability of the statistic; feasibility requires the mixed
/// statistic to exceed every pure one.
pub fn min_detecting_alpha(lr_mixed: f64, pure_lrs: &[f64]) -> f64 {
    if lr_mixed <= 0.0 {
        return 1.0;
    }
    let alpha = chi2_survival_1df(lr_mixed);
    let pure_bound = pure_lrs
        .iter()
        .map(|&lr| chi2_survival_1df(lr))
        .fold(f64::INFINITY, f64::min);
    if alpha < pure_bound {
        alpha
    } else {
        1.0
    }
}

/// Build the calibration grid from per-sample (distance, proportion, lr)
/// triples of mixed samples and (distance, lr) pairs of pure samples.
pub fn alpha_calibration_grid(
    mixed: &[(usize, f64, f64)],
    pure: &[(usize, f64)],
) -> Vec<AlphaGridCell> {
    let mut by_distance: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(dist, lr) in pure {
        by_distance.entry(dist).or_default().push(lr);
    }
    let mut cells: Vec<AlphaGridCell> = mixed
        .iter()
        .map(|&(snp_distance, major_proportion, lr)| {
            let pure_lrs = by_distance
                .get(&snp_distance)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            AlphaGridCell {
                snp_distance,
                major_proportion,
                min_alpha: min_detecting_alpha(lr, pure_lrs),
            }
        })
        .collect();
    cells.sort_by(|a, b| {
        a.snp_distance
            .cmp(&b.snp_distance)
            .then(a.major_proportion.partial_cmp(&b.major_proportion).unwrap())
    });
    cells
}

/// Count adjacent grid pairs satisfying the expected monotonicity:
/// min alpha non-increasing in SNP distance at fixed proportion and
/// non-decreasing in major proportion at fixed distance. Returns
/// (satisfied, total).
pub fn grid_monotonicity(cells: &[AlphaGridCell]) -> (usize, usize) {
    let mut satisfied = 0;
    let mut total = 0;
    let mut distances: Vec<usize> = cells.iter().map(|c| c.snp_distance).collect();
    distances.sort_unstable();
    distances.dedup();
    let mut proportions: Vec<f64> = cells.iter().map(|c| c.major_proportion).collect();
    proportions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    proportions.dedup();
    let lookup = |d: usize, p: f64| -> Option<f64> {
        cells
            .iter()
            .find(|c| c.snp_distance == d && (c.major_proportion - p).abs() < 1e-9)
            .map(|c| c.min_alpha)
    };
    for &p in &proportions {
        for w in distances.windows(2) {
            if let (Some(a0), Some(a1)) = (lookup(w[0], p), lookup(w[1], p)) {
                total += 1;
                if a1 <= a0 + 1e-12 {
                    satisfied += 1;
                }
            }
        }
    }
    for &d in &distances {
        for w in proportions.windows(2) {
            if let (Some(a0), Some(a1)) = (lookup(d, w[0]), lookup(d, w[1])) {
                total += 1;
                if a1 >= a0 - 1e-12 {
                    satisfied += 1;
                }
            }
        }
    }
    (satisfied, total)
}
