//! Clustering evaluation: accuracy under optimal matching, normalized
//! mutual information, adjusted Rand index, and the silhouette score.
//!
//! ACC, NMI and ARI are supervised (they need ground truth); the
//! silhouette is unsupervised. All are invariant to relabeling.

use crate::error::{Error, Result};
use crate::model::{compact_labels, FeatureMatrix, HardLabels};

/// K_pred × K_true co-occurrence counts with marginals.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    k_pred: usize,
    k_true: usize,
    counts: Vec<usize>,
    row_marginals: Vec<usize>,
    col_marginals: Vec<usize>,
    n: usize,
}

impl ContingencyTable {
    pub fn from_labels(pred: &HardLabels, truth: &HardLabels) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "ContingencyTable labels",
                expected: truth.len(),
                got: pred.len(),
            });
        }
        if pred.is_empty() {
            return Err(Error::domain("labels must be non-empty"));
        }
        let (pred, _) = compact_labels(pred);
        let (truth, _) = compact_labels(truth);
        let k_pred = pred.distinct();
        let k_true = truth.distinct();
        let mut counts = vec![0usize; k_pred * k_true];
        for (&p, &t) in pred.z.iter().zip(&truth.z) {
            counts[p * k_true + t] += 1;
        }
        let mut row_marginals = vec![0usize; k_pred];
        let mut col_marginals = vec![0usize; k_true];
        for p in 0..k_pred {
            for t in 0..k_true {
                row_marginals[p] += counts[p * k_true + t];
                col_marginals[t] += counts[p * k_true + t];
            }
        }
        Ok(ContingencyTable {
            k_pred,
            k_true,
            counts,
            row_marginals,
            col_marginals,
            n: pred.len(),
        })
    }

    pub fn count(&self, p: usize, t: usize) -> usize {
        self.counts[p * self.k_true + t]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Minimum-cost perfect assignment on a square cost matrix.
///
/// Shortest-augmenting-path formulation with row/column potentials, O(n³).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::domain("hungarian requires a non-empty matrix"));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                context: "hungarian row",
                expected: n,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("hungarian requires finite costs"));
        }
    }

    // 1-indexed potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Clustering accuracy: the best one-to-one label matching, found by the
/// Hungarian algorithm on the negated contingency table (zero-padded to
/// square when the cluster counts differ).
pub fn clustering_accuracy(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, truth)?;
    let side = table.k_pred.max(table.k_true);
    let mut cost = vec![vec![0.0; side]; side];
    for p in 0..table.k_pred {
        for t in 0..table.k_true {
            cost[p][t] = -(table.count(p, t) as f64);
        }
    }
    let assignment = hungarian(&cost)?;
    let mut matched = 0usize;
    for (p, &t) in assignment.iter().enumerate() {
        if p < table.k_pred && t < table.k_true {
            matched += table.count(p, t);
        }
    }
    Ok(matched as f64 / table.n as f64)
}

/// Normalized mutual information, 2·I(y;z)/(H(y)+H(z)), in nats.
///
/// When both partitions are the trivial single cluster the 0/0 case
/// resolves to 1.0 (identical partitions).
pub fn nmi(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, truth)?;
    let n = table.n as f64;
    let entropy = |marginals: &[usize]| -> f64 {
        marginals
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&table.row_marginals);
    let h_true = entropy(&table.col_marginals);
    if h_pred + h_true == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for p in 0..table.k_pred {
        for t in 0..table.k_true {
            let c = table.count(p, t);
            if c > 0 {
                let joint = c as f64 / n;
                mi += joint
                    * (joint / (table.row_marginals[p] as f64 / n
                        * (table.col_marginals[t] as f64 / n)))
                        .ln();
            }
        }
    }
    Ok((2.0 * mi / (h_pred + h_true)).clamp(0.0, 1.0))
}

fn choose2(c: usize) -> u128 {
    let c = c as u128;
    c * c.saturating_sub(1) / 2
}

/// Adjusted Rand index via the pair-counting formula over the contingency
/// table. Binomial sums are exact integers; only the final ratio is float.
pub fn ari(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, truth)?;
    if table.n < 2 {
        return Err(Error::domain("ari requires at least two points"));
    }
    let index: u128 = table.counts.iter().map(|&c| choose2(c)).sum();
    let sum_a: u128 = table.row_marginals.iter().map(|&c| choose2(c)).sum();
    let sum_b: u128 = table.col_marginals.iter().map(|&c| choose2(c)).sum();
    let total = choose2(table.n);
    let expected = sum_a as f64 * sum_b as f64 / total as f64;
    let max_index = 0.5 * (sum_a as f64 + sum_b as f64);
    if max_index == expected {
        // Both partitions degenerate in the same way; by convention 1.
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / (max_index - expected))
}

/// Mean silhouette score with Euclidean distance; s(i) = 0 for points in
/// singleton clusters. Requires at least two clusters.
pub fn silhouette(data: &FeatureMatrix, labels: &HardLabels) -> Result<f64> {
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "silhouette labels",
            expected: data.n(),
            got: labels.len(),
        });
    }
    let (labels, _) = compact_labels(labels);
    let k = labels.distinct();
    if k < 2 {
        return Err(Error::domain("silhouette requires at least 2 clusters"));
    }
    let counts = labels.counts(k);
    let n = data.n();
    let mut total = 0.0;
    let mut dist_sums = vec![0.0f64; k];
    for i in 0..n {
        let own = labels.z[i];
        if counts[own] == 1 {
            continue; // s(i) = 0
        }
        dist_sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = data.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = data.row(j);
            let dist = xi
                .iter()
                .zip(xj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sums[labels.z[j]] += dist;
        }
        let a = dist_sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| dist_sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}
