//! Dataset ingestion, synthetic mixture generation, imbalance
//! subsampling, and run-artifact serialization.
//!
//! CSV is the single ingestion format. All file writes go through a
//! write-temp-then-rename path so interrupted runs never leave corrupt
//! artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, GaussianComponent, HardLabels};
use crate::numerics::{cholesky_logdet, SpdMatrix};

/// Reads an N×d feature matrix from a CSV file. A single non-numeric
/// first line is treated as a header and skipped. NaN/Inf cells, ragged
/// rows, and empty files are rejected with row/column diagnostics.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let mut parsed = Vec::with_capacity(cells.len());
        let mut bad_cell: Option<(usize, String)> = None;
        for (col, cell) in cells.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                Ok(v) => {
                    bad_cell = Some((col, format!("non-finite value {v}")));
                    break;
                }
                Err(_) => {
                    bad_cell = Some((col, format!("non-numeric cell '{cell}'")));
                    break;
                }
            }
        }
        if let Some((col, msg)) = bad_cell {
            // A non-numeric first line is an auto-detected header.
            if lineno == 0 && rows.is_empty() && msg.starts_with("non-numeric") {
                continue;
            }
            return Err(Error::data(
                &display,
                format!("{msg} at line {}, column {}", lineno + 1, col + 1),
            ));
        }
        if let Some(w) = width {
            if parsed.len() != w {
                return Err(Error::data(
                    &display,
                    format!(
                        "ragged row at line {}: {} cells, expected {w}",
                        lineno + 1,
                        parsed.len()
                    ),
                ));
            }
        } else {
            width = Some(parsed.len());
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::data(&display, "no data rows"));
    }
    FeatureMatrix::from_rows(&rows)
}

/// Reads a single-column label file (one non-negative integer per line).
pub fn read_labels(path: &Path) -> Result<HardLabels> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut z = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: usize = trimmed.parse().map_err(|_| {
            Error::data(
                &display,
                format!("non-integer label '{trimmed}' at line {}", lineno + 1),
            )
        })?;
        z.push(v);
    }
    if z.is_empty() {
        return Err(Error::data(&display, "no labels"));
    }
    Ok(HardLabels::new(z))
}

/// Ground truth returned by the synthetic generator.
#[derive(Debug, Clone)]
pub struct GeneratedMixture {
    pub data: FeatureMatrix,
    pub labels: HardLabels,
    pub components: Vec<GaussianComponent>,
}

/// Samples a synthetic Gaussian mixture: random SPD covariances with
/// condition number ≤ 10, means placed by rejection so that every pair is
/// at least `separation` mean-stddevs apart, points drawn per `weights`
/// (uniform when omitted). Deterministic per seed.
pub fn generate_gmm(
    k: usize,
    n: usize,
    d: usize,
    separation: f64,
    weights: Option<&[f64]>,
    seed: u64,
) -> Result<GeneratedMixture> {
    if k == 0 || n == 0 || d == 0 {
        return Err(Error::domain("generate_gmm requires k, n, d >= 1"));
    }
    if let Some(w) = weights {
        if w.len() != k {
            return Err(Error::DimensionMismatch {
                context: "generate_gmm weights",
                expected: k,
                got: w.len(),
            });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || w.iter().any(|&v| v <= 0.0) {
            return Err(Error::domain("weights must be positive and sum to 1"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Covariances first; their average scale calibrates the separation.
    let sigmas: Vec<SpdMatrix> = (0..k).map(|_| random_spd_cov(d, &mut rng)).collect();
    let mean_std = sigmas
        .iter()
        .map(|s| (s.trace() / d as f64).sqrt())
        .sum::<f64>()
        / k as f64;
    let min_dist = separation * mean_std;
    let radius = 0.75 * min_dist * (k as f64).powf(1.0 / d as f64).max(1.0);

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rejections = 0usize;
    while means.len() < k {
        let candidate: Vec<f64> = (0..d)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * radius)
            .collect();
        let ok = means.iter().all(|m| {
            let dist: f64 = m
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist >= min_dist
        });
        if ok {
            means.push(candidate);
        } else {
            rejections += 1;
            if rejections > 10_000 {
                return Err(Error::domain(format!(
                    "mean placement infeasible after {rejections} rejections \
                     (k={k}, separation={separation})"
                )));
            }
        }
    }

    let uniform = vec![1.0 / k as f64; k];
    let w = weights.unwrap_or(&uniform);
    let cum: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let factors: Vec<_> = sigmas
        .iter()
        .map(|s| cholesky_logdet(s).expect("constructed SPD"))
        .collect();

    let mut rows = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let comp = cum.partition_point(|&c| c < u).min(k - 1);
        let noise: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let mut x = means[comp].clone();
        for i in 0..d {
            for j in 0..=i {
                x[i] += factors[comp].get(i, j) * noise[j];
            }
        }
        rows.push(x);
        z.push(comp);
    }
    let components = (0..k)
        .map(|c| GaussianComponent {
            mu: means[c].clone(),
            sigma: sigmas[c].clone(),
            pi: w[c],
        })
        .collect();
    Ok(GeneratedMixture {
        data: FeatureMatrix::from_rows(&rows)?,
        labels: HardLabels::new(z),
        components,
    })
}

/// Random SPD matrix with eigenvalues in [0.5, 2.0] (condition ≤ 4) in a
/// random orthonormal frame, so generated classes are anisotropic.
fn random_spd_cov(d: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
    let eigen: Vec<f64> = (0..d).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
    // Gram-Schmidt on random Gaussian vectors gives the frame.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    let mut entries = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for (l, &lam) in eigen.iter().enumerate() {
                s += basis[l][i] * lam * basis[l][j];
            }
            entries[i * d + j] = s;
        }
    }
    SpdMatrix::from_symmetrized(d, &entries).expect("finite by construction")
}

/// Result of an imbalance subsampling pass.
#[derive(Debug, Clone)]
pub struct Subsampled {
    pub data: FeatureMatrix,
    pub labels: HardLabels,
    /// Per-class retention proportions actually used.
    pub proportions: Vec<f64>,
    /// Row indices of the original matrix that were kept, in order.
    pub kept: Vec<usize>,
}

/// Undersamples classes to the given per-class proportions (class c keeps
/// round(p_c·N_c) members, drawn uniformly without replacement). When
/// `proportions` is `None`, a histogram drawn from a flat Dirichlet over
/// the K-class simplex sets the target class mix instead.
pub fn imbalance_subsample(
    data: &FeatureMatrix,
    labels: &HardLabels,
    proportions: Option<&[f64]>,
    seed: u64,
) -> Result<Subsampled> {
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "imbalance_subsample labels",
            expected: data.n(),
            got: labels.len(),
        });
    }
    let (compact, _) = crate::model::compact_labels(labels);
    let k = compact.distinct();
    let counts = compact.counts(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let props: Vec<f64> = match proportions {
        Some(p) => {
            if p.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "imbalance_subsample proportions",
                    expected: k,
                    got: p.len(),
                });
            }
            if p.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(Error::domain("proportions must lie in (0, 1]"));
            }
            p.to_vec()
        }
        None => {
            // Flat Dirichlet draw h, then the largest subsample whose class
            // mix matches h: M = min_c N_c/h_c, keep round(h_c·M) of class c.
            let exp: Vec<f64> = (0..k)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = exp.iter().sum();
            let h: Vec<f64> = exp.iter().map(|e| e / total).collect();
            let m = (0..k)
                .map(|c| counts[c] as f64 / h[c])
                .fold(f64::INFINITY, f64::min);
            (0..k).map(|c| (h[c] * m) / counts[c] as f64).collect()
        }
    };

    let mut kept = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..compact.len()).filter(|&i| compact.z[i] == c).collect();
        let keep_n = (props[c] * members.len() as f64).round() as usize;
        let keep_n = keep_n.min(members.len());
        if keep_n == 0 {
            return Err(Error::domain(format!(
                "class {c} would retain zero members (proportion {})",
                props[c]
            )));
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        kept.extend_from_slice(&shuffled[..keep_n]);
    }
    kept.sort_unstable();
    let sub_labels: Vec<usize> = kept.iter().map(|&i| compact.z[i]).collect();
    Ok(Subsampled {
        data: data.select_rows(&kept),
        labels: HardLabels::new(sub_labels),
        proportions: props,
        kept,
    })
}

/// Supervised/unsupervised metric values of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub silhouette: Option<f64>,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            acc: None,
            nmi: None,
            ari: None,
            silhouette: None,
        }
    }
}

/// One epoch's row in the run history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub k: usize,
    pub cluster_loss: f64,
    pub sub_loss: f64,
    pub splits_accepted: usize,
    pub merges_accepted: usize,
}

/// Everything a finished run persists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub seed: u64,
    pub epochs: usize,
    pub k_trajectory: Vec<usize>,
    pub per_epoch: Vec<EpochRow>,
    pub final_labels: Vec<usize>,
    /// Per cluster: weight, mean, then the covariance rows.
    pub final_params: Vec<ClusterParams>,
    pub metrics: MetricsReport,
    pub wall_clock_sec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterParams {
    pub pi: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl ClusterParams {
    pub fn from_component(c: &GaussianComponent) -> Self {
        let d = c.mu.len();
        ClusterParams {
            pi: c.pi,
            mu: c.mu.clone(),
            sigma: (0..d)
                .map(|i| (0..d).map(|j| c.sigma.get(i, j)).collect())
                .collect(),
        }
    }
}

/// Summary document written as `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    final_k: usize,
    k_trajectory: Vec<usize>,
    acc: Option<f64>,
    nmi: Option<f64>,
    ari: Option<f64>,
    silhouette: Option<f64>,
    config: serde_json::Value,
    seed: u64,
    epochs: usize,
    wall_clock_sec: f64,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|source| Error::Io {
            path: tmp.display().to_string(),
            source,
        })?;
        f.write_all(bytes).map_err(|source| Error::Io {
            path: tmp.display().to_string(),
            source,
        })?;
    }
    fs::rename(&tmp, path).map_err(|source| Error::Io {
        path: display,
        source,
    })
}

/// Writes labels as CSV (one integer per line).
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for z in labels {
        out.push_str(&z.to_string());
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Writes one real value per line (e.g. an optimization trace).
pub fn write_float_column(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Writes a feature matrix as CSV.
pub fn write_features(path: &Path, data: &FeatureMatrix) -> Result<()> {
    let mut out = String::new();
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Persists a run: `labels.csv`, `summary.json`, and one parameter CSV per
/// cluster under `params/` (first line the weight, second the mean, then
/// the covariance rows).
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_labels(&dir.join("labels.csv"), &record.final_labels)?;

    let summary = Summary {
        final_k: record
            .k_trajectory
            .last()
            .copied()
            .unwrap_or(record.final_params.len()),
        k_trajectory: record.k_trajectory.clone(),
        acc: record.metrics.acc,
        nmi: record.metrics.nmi,
        ari: record.metrics.ari,
        silhouette: record.metrics.silhouette,
        config: record.config.clone(),
        seed: record.seed,
        epochs: record.epochs,
        wall_clock_sec: record.wall_clock_sec,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    atomic_write(&dir.join("summary.json"), json.as_bytes())?;

    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|source| Error::Io {
        path: params_dir.display().to_string(),
        source,
    })?;
    for (k, p) in record.final_params.iter().enumerate() {
        let mut out = String::new();
        out.push_str(&format!("{}\n", p.pi));
        let mu: Vec<String> = p.mu.iter().map(|v| format!("{v}")).collect();
        out.push_str(&mu.join(","));
        out.push('\n');
        for row in &p.sigma {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        atomic_write(&params_dir.join(format!("cluster_{k:03}.csv")), out.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_logpdf;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dpmix-data-test-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn read_features_basic_and_header() {
        let dir = tmpdir("read");
        let p = dir.join("plain.csv");
        fs::write(&p, "1,2\n3,4\n5,6\n").unwrap();
        let m = read_features(&p).unwrap();
        assert_eq!((m.n(), m.d()), (3, 2));
        assert_eq!(m.row(2), &[5.0, 6.0]);

        let p = dir.join("header.csv");
        fs::write(&p, "f0,f1\n1,2\n3,4\n").unwrap();
        let m = read_features(&p).unwrap();
        assert_eq!((m.n(), m.d()), (2, 2));
    }

    #[test]
    fn read_features_rejects_bad_input() {
        let dir = tmpdir("bad");
        let p = dir.join("nan.csv");
        fs::write(&p, "1,2\n3,nan\n").unwrap();
        let err = read_features(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "diagnostic missing row: {err}");

        let p = dir.join("ragged.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_features(&p).is_err());

        let p = dir.join("empty.csv");
        fs::write(&p, "").unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn generate_gmm_deterministic_and_labeled() {
        let a = generate_gmm(3, 200, 2, 6.0, None, 9).unwrap();
        let b = generate_gmm(3, 200, 2, 6.0, None, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.labels, b.labels);

        let single = generate_gmm(1, 10, 2, 4.0, None, 0).unwrap();
        assert!(single.labels.z.iter().all(|&z| z == 0));
    }

    #[test]
    fn generate_gmm_respects_separation() {
        let g = generate_gmm(10, 100, 2, 8.0, None, 4).unwrap();
        let mean_std = g
            .components
            .iter()
            .map(|c| (c.sigma.trace() / 2.0).sqrt())
            .sum::<f64>()
            / 10.0;
        for i in 0..10 {
            for j in (i + 1)..10 {
                let dist: f64 = g.components[i]
                    .mu
                    .iter()
                    .zip(&g.components[j].mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    dist >= 8.0 * mean_std,
                    "means {i},{j} too close: {dist} < {}",
                    8.0 * mean_std
                );
            }
        }
    }

    #[test]
    fn generate_gmm_labels_dominate_likelihood() {
        // At separation 8, each point's own component should dominate its
        // likelihood for ≥ 99% of points.
        let g = generate_gmm(5, 2000, 2, 8.0, None, 11).unwrap();
        let mut dominated = 0usize;
        for (i, row) in g.data.rows().enumerate() {
            let own = g.labels.z[i];
            let own_ll =
                gaussian_logpdf(row, &g.components[own].mu, &g.components[own].sigma).unwrap();
            let best = (0..5)
                .map(|c| {
                    gaussian_logpdf(row, &g.components[c].mu, &g.components[c].sigma).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if own_ll >= best {
                dominated += 1;
            }
        }
        assert!(dominated as f64 >= 0.99 * 2000.0, "only {dominated}/2000");
    }

    #[test]
    fn generate_gmm_weighted_sampling() {
        let w = [0.7, 0.2, 0.1];
        let g = generate_gmm(3, 5000, 2, 6.0, Some(&w), 13).unwrap();
        let counts = g.labels.counts(3);
        for (c, &expected) in w.iter().enumerate() {
            let frac = counts[c] as f64 / 5000.0;
            assert!(
                (frac - expected).abs() < 0.03,
                "class {c}: {frac} vs {expected}"
            );
        }
    }

    #[test]
    fn generate_gmm_infeasible_placement_errors() {
        // Thousands of 1-d components pack the placement box past the
        // rejection budget.
        assert!(generate_gmm(3000, 5, 1, 20.0, None, 0).is_err());
    }

    #[test]
    fn imbalance_identity_and_halving() {
        let g = generate_gmm(2, 200, 2, 6.0, None, 17).unwrap();
        let full = imbalance_subsample(&g.data, &g.labels, Some(&[1.0, 1.0]), 3).unwrap();
        assert_eq!(full.data, g.data);
        assert_eq!(full.labels, g.labels);

        let counts = g.labels.counts(2);
        let half = imbalance_subsample(&g.data, &g.labels, Some(&[1.0, 0.5]), 3).unwrap();
        let sub_counts = half.labels.counts(2);
        assert_eq!(sub_counts[0], counts[0]);
        assert_eq!(sub_counts[1], (counts[1] as f64 * 0.5).round() as usize);
    }

    #[test]
    fn imbalance_never_fabricates_points() {
        let g = generate_gmm(3, 300, 2, 6.0, None, 19).unwrap();
        let sub = imbalance_subsample(&g.data, &g.labels, Some(&[0.5, 0.7, 0.9]), 5).unwrap();
        for (local, &orig) in sub.kept.iter().enumerate() {
            assert_eq!(sub.data.row(local), g.data.row(orig));
            assert_eq!(sub.labels.z[local], g.labels.z[orig]);
        }
    }

    #[test]
    fn imbalance_dirichlet_mode_reproducible() {
        let g = generate_gmm(4, 400, 2, 6.0, None, 23).unwrap();
        let a = imbalance_subsample(&g.data, &g.labels, None, 7).unwrap();
        let b = imbalance_subsample(&g.data, &g.labels, None, 7).unwrap();
        assert_eq!(a.kept, b.kept);
        assert_eq!(a.proportions, b.proportions);
        // Histogram consistency: kept counts match the drawn proportions.
        let counts = g.labels.counts(4);
        let sub_counts = a.labels.counts(4);
        let total: usize = sub_counts.iter().sum();
        assert_eq!(a.data.n(), total);
        for c in 0..4 {
            let expected = (a.proportions[c] * counts[c] as f64).round() as usize;
            assert_eq!(sub_counts[c], expected.min(counts[c]));
        }
    }

    #[test]
    fn run_record_round_trip() {
        let dir = tmpdir("run");
        let record = RunRecord {
            config: serde_json::json!({"init_k": 1, "alpha": 10.0}),
            seed: 42,
            epochs: 3,
            k_trajectory: vec![1, 1, 2],
            per_epoch: vec![],
            final_labels: vec![0, 1, 1, 0],
            final_params: vec![
                ClusterParams {
                    pi: 0.5,
                    mu: vec![0.0, 1.0],
                    sigma: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                ClusterParams {
                    pi: 0.5,
                    mu: vec![3.0, 4.0],
                    sigma: vec![vec![2.0, 0.1], vec![0.1, 2.0]],
                },
            ],
            metrics: MetricsReport {
                acc: Some(1.0),
                nmi: Some(1.0),
                ari: Some(1.0),
                silhouette: None,
            },
            wall_clock_sec: 0.25,
        };
        write_run(&record, &dir).unwrap();

        let labels = read_labels(&dir.join("labels.csv")).unwrap();
        assert_eq!(labels.z, record.final_labels);

        let text = fs::read_to_string(dir.join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["final_k"], 2);
        assert_eq!(parsed["k_trajectory"], serde_json::json!([1, 1, 2]));
        assert_eq!(parsed["silhouette"], serde_json::Value::Null);
        assert_eq!(parsed["seed"], 42);
        assert!(dir.join("params/cluster_000.csv").exists());
        assert!(dir.join("params/cluster_001.csv").exists());
    }

    #[test]
    fn summaries_byte_identical_modulo_wall_clock() {
        let dir_a = tmpdir("det-a");
        let dir_b = tmpdir("det-b");
        let mk = |wall: f64| RunRecord {
            config: serde_json::json!({"seed": 1}),
            seed: 1,
            epochs: 1,
            k_trajectory: vec![2],
            per_epoch: vec![],
            final_labels: vec![0, 1],
            final_params: vec![],
            metrics: MetricsReport::empty(),
            wall_clock_sec: wall,
        };
        write_run(&mk(0.5), &dir_a).unwrap();
        write_run(&mk(0.9), &dir_b).unwrap();
        let a = fs::read_to_string(dir_a.join("summary.json")).unwrap();
        let b = fs::read_to_string(dir_b.join("summary.json")).unwrap();
        let strip = |s: &str| -> String {
            s.lines()
                .filter(|l| !l.contains("wall_clock_sec"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_ne!(a, b);
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(
            fs::read(dir_a.join("labels.csv")).unwrap(),
            fs::read(dir_b.join("labels.csv")).unwrap()
        );
    }
}
