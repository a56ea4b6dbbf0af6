//! Conjugate Normal-Inverse-Wishart algebra.
//!
//! Posterior hyperparameter updates, the marginal data log-likelihood of a
//! point set, weighted sufficient statistics, and weighted MAP parameter
//! estimates. These four operations carry all the Bayesian content of the
//! engine; split/merge acceptance and the M-step are thin layers on top.

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, GaussianComponent, NIWHyper};
use crate::numerics::{cholesky_logdet, multivariate_log_gamma, SpdMatrix};

/// Weighted zeroth/first/second moments of a point set.
///
/// Hard-assigned sets use weights in {0,1}; the soft M-step uses the
/// clustering net's responsibilities.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    d: usize,
    nw: f64,
    sum_x: Vec<f64>,
    sum_xxt: Vec<f64>,
}

impl SufficientStats {
    pub fn zero(d: usize) -> Self {
        SufficientStats {
            d,
            nw: 0.0,
            sum_x: vec![0.0; d],
            sum_xxt: vec![0.0; d * d],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Weighted count Σ w_i.
    pub fn count(&self) -> f64 {
        self.nw
    }

    pub fn sum_x(&self) -> &[f64] {
        &self.sum_x
    }

    pub fn sum_xxt(&self) -> &[f64] {
        &self.sum_xxt
    }

    /// Weighted mean; zero vector for empty stats.
    pub fn mean(&self) -> Vec<f64> {
        if self.nw == 0.0 {
            return vec![0.0; self.d];
        }
        self.sum_x.iter().map(|v| v / self.nw).collect()
    }

    pub fn add_point(&mut self, x: &[f64], w: f64) {
        debug_assert_eq!(x.len(), self.d);
        self.nw += w;
        for i in 0..self.d {
            self.sum_x[i] += w * x[i];
            for j in 0..self.d {
                self.sum_xxt[i * self.d + j] += w * x[i] * x[j];
            }
        }
    }

    /// Field-wise sum; the stats of a union of disjoint point sets.
    pub fn merged(&self, other: &SufficientStats) -> SufficientStats {
        debug_assert_eq!(self.d, other.d);
        SufficientStats {
            d: self.d,
            nw: self.nw + other.nw,
            sum_x: self
                .sum_x
                .iter()
                .zip(&other.sum_x)
                .map(|(a, b)| a + b)
                .collect(),
            sum_xxt: self
                .sum_xxt
                .iter()
                .zip(&other.sum_xxt)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Accumulates weighted sufficient statistics over all rows.
///
/// Summation order is fixed (row order), so results are deterministic.
pub fn accumulate_stats(points: &FeatureMatrix, weights: &[f64]) -> Result<SufficientStats> {
    if weights.len() != points.n() {
        return Err(Error::DimensionMismatch {
            context: "accumulate_stats weights",
            expected: points.n(),
            got: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
        return Err(Error::domain(format!("invalid weight {w}")));
    }
    let mut stats = SufficientStats::zero(points.d());
    for (row, &w) in points.rows().zip(weights) {
        if w != 0.0 {
            stats.add_point(row, w);
        }
    }
    Ok(stats)
}

/// Hard-assignment stats over a subset of rows (unit weights).
///
/// Accumulation runs in sorted row order, so any permutation of the same
/// index set produces bit-identical stats (and hence identical marginals).
pub fn hard_stats(points: &FeatureMatrix, indices: &[usize]) -> SufficientStats {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut stats = SufficientStats::zero(points.d());
    for &i in &sorted {
        stats.add_point(points.row(i), 1.0);
    }
    stats
}

/// Posterior NIW hyperparameters (κ*, m*, ν*, Ψ*).
#[derive(Debug, Clone)]
pub struct NIWPosterior {
    pub kappa_star: f64,
    pub m_star: Vec<f64>,
    pub nu_star: f64,
    pub psi_star: SpdMatrix,
}

impl NIWPosterior {
    /// Reinterprets the posterior as a prior for further conditioning.
    pub fn as_prior(&self, alpha: f64) -> NIWHyper {
        NIWHyper {
            m: self.m_star.clone(),
            kappa: self.kappa_star,
            nu: self.nu_star,
            psi: self.psi_star.clone(),
            alpha,
        }
    }
}

/// Closed-form NIW posterior update:
///
///   κ* = κ + N,  m* = (κm + Σx)/κ*,  ν* = ν + N,
///   Ψ* = (1/ν*)[νΨ + κ m mᵀ + Σ x xᵀ − κ* m* m*ᵀ]
///
/// with N the weighted count for soft assignments. Ψ* is symmetrized and,
/// if its Cholesky fails, repaired with escalating diagonal jitter
/// (1e-6·trace/d, three ×10 escalations) before erroring out.
pub fn niw_posterior(prior: &NIWHyper, stats: &SufficientStats) -> Result<NIWPosterior> {
    let d = prior.d();
    if stats.d() != d {
        return Err(Error::DimensionMismatch {
            context: "niw_posterior stats",
            expected: d,
            got: stats.d(),
        });
    }
    let kappa_star = prior.kappa + stats.count();
    let nu_star = prior.nu + stats.count();
    let mut m_star = vec![0.0; d];
    for i in 0..d {
        m_star[i] = (prior.kappa * prior.m[i] + stats.sum_x()[i]) / kappa_star;
    }
    let mut raw = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            raw[i * d + j] = (prior.nu * prior.psi.get(i, j)
                + prior.kappa * prior.m[i] * prior.m[j]
                + stats.sum_xxt()[i * d + j]
                - kappa_star * m_star[i] * m_star[j])
                / nu_star;
        }
    }
    let psi_star = repair_spd(d, raw)?;
    Ok(NIWPosterior {
        kappa_star,
        m_star,
        nu_star,
        psi_star,
    })
}

/// Symmetrize, then add escalating diagonal jitter until the Cholesky
/// succeeds. Gives up after three escalations.
fn repair_spd(d: usize, raw: Vec<f64>) -> Result<SpdMatrix> {
    let candidate = SpdMatrix::from_symmetrized(d, &raw)?;
    if cholesky_logdet(&candidate).is_ok() {
        return Ok(candidate);
    }
    let base = 1e-6 * (candidate.trace().abs().max(1e-12)) / d as f64;
    let mut jitter = base;
    for _ in 0..3 {
        let repaired = candidate.with_diagonal_jitter(jitter);
        if cholesky_logdet(&repaired).is_ok() {
            return Ok(repaired);
        }
        jitter *= 10.0;
    }
    Err(Error::domain(
        "posterior scatter not repairable to positive definite",
    ))
}

/// Log marginal likelihood of a hard-assigned point set under the prior:
///
///   ln f = −(nd/2)·ln π + lnΓ_d(ν*/2) − lnΓ_d(ν/2)
///        + (ν/2)·ln|νΨ| − (ν*/2)·ln|ν*Ψ*| + (d/2)·ln(κ/κ*)
pub fn log_marginal(stats: &SufficientStats, prior: &NIWHyper) -> Result<f64> {
    let d = prior.d();
    let n = stats.count();
    debug_assert!(
        (n - n.round()).abs() < 1e-9,
        "log_marginal expects an integer point count, got {n}"
    );
    if n == 0.0 {
        return Ok(0.0);
    }
    let post = niw_posterior(prior, stats)?;
    let logdet_prior = cholesky_logdet(&prior.psi.scaled(prior.nu))?.logdet();
    let logdet_post = cholesky_logdet(&post.psi_star.scaled(post.nu_star))?.logdet();
    Ok(
        -(n * d as f64 / 2.0) * std::f64::consts::PI.ln()
            + multivariate_log_gamma(d, post.nu_star / 2.0)?
            - multivariate_log_gamma(d, prior.nu / 2.0)?
            + (prior.nu / 2.0) * logdet_prior
            - (post.nu_star / 2.0) * logdet_post
            + (d as f64 / 2.0) * (prior.kappa.ln() - post.kappa_star.ln()),
    )
}

/// Weighted MAP parameter estimate:
///
///   μ̂ = m*,  Σ̂ = ν*Ψ*/(ν* + d + 1),  π̂ = N_w / total_n.
///
/// With empty stats this degrades to the prior mode. The returned weight is
/// the raw proportion; the caller renormalizes the full weight vector.
pub fn weighted_map_estimate(
    stats: &SufficientStats,
    prior: &NIWHyper,
    total_n: usize,
) -> Result<GaussianComponent> {
    let d = prior.d();
    let post = niw_posterior(prior, stats)?;
    let denom = post.nu_star + d as f64 + 1.0;
    let sigma = post.psi_star.scaled(post.nu_star / denom);
    // Guard against a scatter that went degenerate under the division.
    let sigma = if cholesky_logdet(&sigma).is_ok() {
        sigma
    } else {
        repair_spd(d, sigma.entries().to_vec())?
    };
    Ok(GaussianComponent {
        mu: post.m_star,
        sigma,
        pi: stats.count() / total_n as f64,
    })
}
