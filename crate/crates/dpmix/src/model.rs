//! Domain types shared by all inference modules.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::SpdMatrix;

/// N points in R^d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::domain("FeatureMatrix requires n >= 1 and d >= 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                context: "FeatureMatrix::new",
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(FeatureMatrix { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::domain("FeatureMatrix requires at least one row"));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "FeatureMatrix::from_rows",
                    expected: d,
                    got: rows[i].len(),
                });
            }
            data.extend_from_slice(row);
        }
        FeatureMatrix::new(n, d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-coordinate mean over all rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for acc in &mut m {
            *acc /= self.n as f64;
        }
        m
    }

    /// Standard deviation of the flattened entries (population form).
    pub fn pooled_std(&self) -> f64 {
        let len = self.data.len() as f64;
        let mean: f64 = self.data.iter().sum::<f64>() / len;
        let var: f64 = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
        var.sqrt()
    }

    /// New matrix keeping only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: indices.len(),
            d: self.d,
            data,
        }
    }
}

/// Hard cluster assignments, with optional subcluster labels in {0,1}.
#[derive(Debug, Clone, PartialEq)]
pub struct HardLabels {
    pub z: Vec<usize>,
    pub sub: Option<Vec<u8>>,
}

impl HardLabels {
    pub fn new(z: Vec<usize>) -> Self {
        HardLabels { z, sub: None }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Number of distinct cluster values present.
    pub fn distinct(&self) -> usize {
        let mut values: Vec<usize> = self.z.clone();
        values.sort_unstable();
        values.dedup();
        values.len()
    }

    /// Per-cluster point counts, assuming labels already occupy 0..k.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0usize; k];
        for &zi in &self.z {
            counts[zi] += 1;
        }
        counts
    }

    /// Indices of the points assigned to cluster `k`.
    pub fn members_of(&self, k: usize) -> Vec<usize> {
        (0..self.z.len()).filter(|&i| self.z[i] == k).collect()
    }
}

/// Relabels clusters onto a contiguous {0..K'-1} range, mapping distinct
/// values in sorted order. Returns the old-to-new map.
pub fn compact_labels(labels: &HardLabels) -> (HardLabels, BTreeMap<usize, usize>) {
    let mut distinct: Vec<usize> = labels.z.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let map: BTreeMap<usize, usize> = distinct
        .into_iter()
        .enumerate()
        .map(|(new, old)| (old, new))
        .collect();
    let z = labels.z.iter().map(|old| map[old]).collect();
    (
        HardLabels {
            z,
            sub: labels.sub.clone(),
        },
        map,
    )
}

/// N×K row-stochastic soft assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    r: Vec<f64>,
}

impl Responsibilities {
    pub fn new(n: usize, k: usize, r: Vec<f64>) -> Result<Self> {
        if r.len() != n * k {
            return Err(Error::DimensionMismatch {
                context: "Responsibilities::new",
                expected: n * k,
                got: r.len(),
            });
        }
        for (i, row) in r.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "responsibility row {i} sums to {sum}, not 1"
                )));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::domain(format!(
                    "responsibility row {i} has entries outside [0,1]"
                )));
            }
        }
        Ok(Responsibilities { n, k, r })
    }

    /// One-hot responsibilities from hard labels.
    pub fn from_hard(labels: &HardLabels, k: usize) -> Responsibilities {
        let n = labels.len();
        let mut r = vec![0.0; n * k];
        for (i, &zi) in labels.z.iter().enumerate() {
            r[i * k + zi] = 1.0;
        }
        Responsibilities { n, k, r }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.r[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.r.chunks_exact(self.k)
    }

    /// Column k as per-point weights.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.r[i * self.k + k]).collect()
    }

    /// New responsibilities keeping only the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Responsibilities {
        let mut r = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            r.extend_from_slice(self.row(i));
        }
        Responsibilities {
            n: indices.len(),
            k: self.k,
            r,
        }
    }

    /// Arg-max cluster per row; ties resolve to the lowest index.
    pub fn argmax_labels(&self) -> HardLabels {
        let z = self
            .rows()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        HardLabels { z, sub: None }
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.rows().all(|row| {
            let sum: f64 = row.iter().sum();
            (sum - 1.0).abs() <= tol && row.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
        })
    }
}

/// NIW prior hyperparameters plus the DP concentration.
#[derive(Debug, Clone)]
pub struct NIWHyper {
    pub m: Vec<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub psi: SpdMatrix,
    pub alpha: f64,
}

impl NIWHyper {
    pub fn new(m: Vec<f64>, kappa: f64, nu: f64, psi: SpdMatrix, alpha: f64) -> Result<Self> {
        let d = m.len();
        if psi.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "NIWHyper psi",
                expected: d,
                got: psi.dim(),
            });
        }
        if !(kappa > 0.0) {
            return Err(Error::domain("NIW kappa must be positive"));
        }
        if !(nu > d as f64 - 1.0) {
            return Err(Error::domain(format!(
                "NIW nu must exceed d-1 = {}, got {nu}",
                d as f64 - 1.0
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::domain("DP alpha must be positive"));
        }
        Ok(NIWHyper {
            m,
            kappa,
            nu,
            psi,
            alpha,
        })
    }

    pub fn d(&self) -> usize {
        self.m.len()
    }
}

/// One Gaussian mixture component.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub mu: Vec<f64>,
    pub sigma: SpdMatrix,
    pub pi: f64,
}

/// The two learned subcomponents of a cluster; weights sum to 1.
#[derive(Debug, Clone)]
pub struct SubclusterPair {
    pub comps: [GaussianComponent; 2],
}

impl SubclusterPair {
    pub fn weights(&self) -> [f64; 2] {
        [self.comps[0].pi, self.comps[1].pi]
    }
}

/// Full mixture state: K clusters, each with its subcluster pair.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub clusters: Vec<GaussianComponent>,
    pub subclusters: Vec<SubclusterPair>,
}

impl MixtureState {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Rescales cluster weights to sum to exactly one.
    pub fn normalize_weights(&mut self) {
        let total: f64 = self.clusters.iter().map(|c| c.pi).sum();
        if total > 0.0 {
            for c in &mut self.clusters {
                c.pi /= total;
            }
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::domain("MixtureState requires k >= 1"));
        }
        if self.subclusters.len() != self.clusters.len() {
            return Err(Error::DimensionMismatch {
                context: "MixtureState subclusters",
                expected: self.clusters.len(),
                got: self.subclusters.len(),
            });
        }
        let total: f64 = self.clusters.iter().map(|c| c.pi).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("cluster weights sum to {total}")));
        }
        for (k, pair) in self.subclusters.iter().enumerate() {
            let s = pair.comps[0].pi + pair.comps[1].pi;
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "subcluster weights of cluster {k} sum to {s}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_labels_examples() {
        let (out, map) = compact_labels(&HardLabels::new(vec![0, 2, 2, 5]));
        assert_eq!(out.z, vec![0, 1, 1, 2]);
        assert_eq!(map[&0], 0);
        assert_eq!(map[&2], 1);
        assert_eq!(map[&5], 2);

        let (out, map) = compact_labels(&HardLabels::new(vec![0, 0, 0]));
        assert_eq!(out.z, vec![0, 0, 0]);
        assert_eq!(map.len(), 1);

        // Value-order compaction: distinct {1,3} maps 1->0, 3->1.
        let (out, _) = compact_labels(&HardLabels::new(vec![3, 1, 3, 1]));
        assert_eq!(out.z, vec![1, 0, 1, 0]);
    }

    #[test]
    fn compact_labels_is_idempotent() {
        let labels = HardLabels::new(vec![7, 2, 7, 9, 2, 0]);
        let (once, _) = compact_labels(&labels);
        let (twice, map) = compact_labels(&once);
        assert_eq!(once, twice);
        assert!(map.iter().all(|(old, new)| old == new));
    }

    #[test]
    fn feature_matrix_validation() {
        assert!(FeatureMatrix::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = FeatureMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.mean(), vec![2.0, 3.0]);
    }

    #[test]
    fn responsibilities_validation_and_argmax() {
        assert!(Responsibilities::new(1, 2, vec![0.6, 0.6]).is_err());
        let r = Responsibilities::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        assert_eq!(r.argmax_labels().z, vec![1, 0]);
        assert_eq!(r.column(1), vec![0.75, 0.0]);
    }

    #[test]
    fn one_hot_from_hard_labels() {
        let r = Responsibilities::from_hard(&HardLabels::new(vec![1, 0]), 3);
        assert_eq!(r.row(0), &[0.0, 1.0, 0.0]);
        assert!(r.is_row_stochastic(1e-12));
    }

    #[test]
    fn niw_hyper_validation() {
        let psi = SpdMatrix::identity(2);
        assert!(NIWHyper::new(vec![0.0, 0.0], 1e-4, 4.0, psi.clone(), 10.0).is_ok());
        assert!(NIWHyper::new(vec![0.0, 0.0], 0.0, 4.0, psi.clone(), 10.0).is_err());
        assert!(NIWHyper::new(vec![0.0, 0.0], 1.0, 0.5, psi.clone(), 10.0).is_err());
        assert!(NIWHyper::new(vec![0.0, 0.0], 1.0, 4.0, psi, 0.0).is_err());
    }
}
