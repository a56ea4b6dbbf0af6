//! The fixed-K training cycle.
//!
//! E-step target computation, the net-driven M-step, subcluster
//! maintenance, K-means initialization, and a pure-EM oracle mode that the
//! amortized trainer is tested against.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    FeatureMatrix, GaussianComponent, HardLabels, MixtureState, NIWHyper, Responsibilities,
    SubclusterPair,
};
use crate::neural::{init_net, AssignNet};
use crate::niw::{accumulate_stats, weighted_map_estimate};
use crate::numerics::{cholesky_logdet, log_sum_exp, multivariate_log_gamma};

/// Weight floor for an empty subcluster side.
const SUBWEIGHT_FLOOR: f64 = 1e-12;

/// The clustering net plus one two-unit subcluster net per cluster.
#[derive(Debug, Clone)]
pub struct Nets {
    pub cluster: AssignNet,
    pub sub: Vec<AssignNet>,
}

impl Nets {
    pub fn k(&self) -> usize {
        self.cluster.k_out()
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub cluster_loss: f64,
    pub sub_loss: f64,
    pub k: usize,
    pub hard_counts: Vec<usize>,
}

/// Minibatch and learning-rate settings for one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochConfig {
    pub batch: usize,
    pub lr_cluster: f64,
    pub lr_sub: f64,
}

/// Exact E-step responsibilities under the current mixture parameters,
/// computed in log space with a per-row log-sum-exp.
///
/// Returns the responsibilities and the number of degenerate rows (rows
/// whose every component log-density was -inf and fell back to uniform).
pub fn e_step_targets_counting(
    data: &FeatureMatrix,
    state: &MixtureState,
) -> Result<(Responsibilities, usize)> {
    let k = state.k();
    let n = data.n();
    let mut factors = Vec::with_capacity(k);
    for comp in &state.clusters {
        factors.push((comp.pi.ln(), comp.mu.clone(), cholesky_logdet(&comp.sigma)?));
    }
    let mut out = vec![0.0; n * k];
    let mut logits = vec![0.0; k];
    let mut degenerate = 0usize;
    for (i, row) in data.rows().enumerate() {
        for (c, (log_pi, mu, factor)) in factors.iter().enumerate() {
            logits[c] = log_pi + factor.gaussian_logpdf(row, mu);
        }
        let lse = log_sum_exp(&logits);
        let slot = &mut out[i * k..(i + 1) * k];
        if lse.is_finite() {
            for (s, &l) in slot.iter_mut().zip(&logits) {
                *s = (l - lse).exp();
            }
            // Renormalize away the last bits of rounding.
            let sum: f64 = slot.iter().sum();
            for s in slot.iter_mut() {
                *s /= sum;
            }
        } else {
            degenerate += 1;
            slot.fill(1.0 / k as f64);
        }
    }
    let resp = Responsibilities::new(n, k, out)?;
    debug_assert!(resp.is_row_stochastic(1e-9));
    Ok((resp, degenerate))
}

/// [`e_step_targets_counting`] without the degeneracy count.
pub fn e_step_targets(data: &FeatureMatrix, state: &MixtureState) -> Result<Responsibilities> {
    Ok(e_step_targets_counting(data, state)?.0)
}

/// Bayesian M-step over soft assignments: per-cluster weighted MAP
/// estimates, with the weight vector normalized across clusters.
pub fn m_step(
    data: &FeatureMatrix,
    r: &Responsibilities,
    prior: &NIWHyper,
) -> Result<Vec<GaussianComponent>> {
    let k = r.k();
    let n = data.n();
    let mut clusters = Vec::with_capacity(k);
    for c in 0..k {
        let stats = accumulate_stats(data, &r.column(c))?;
        clusters.push(weighted_map_estimate(&stats, prior, n)?);
    }
    let total: f64 = clusters.iter().map(|c| c.pi).sum();
    if total > 0.0 {
        for c in &mut clusters {
            c.pi /= total;
        }
    }
    Ok(clusters)
}

/// Weighted MAP estimates for one cluster's subcluster pair. The pair
/// weights are normalized to sum to one, flooring an empty side at 1e-12.
pub fn subcluster_m_step(
    data_k: &FeatureMatrix,
    r_sub: &Responsibilities,
    prior: &NIWHyper,
) -> Result<SubclusterPair> {
    if r_sub.k() != 2 {
        return Err(Error::DimensionMismatch {
            context: "subcluster_m_step responsibilities",
            expected: 2,
            got: r_sub.k(),
        });
    }
    let n_k = data_k.n();
    let mut comps = Vec::with_capacity(2);
    for j in 0..2 {
        let stats = accumulate_stats(data_k, &r_sub.column(j))?;
        comps.push(weighted_map_estimate(&stats, prior, n_k)?);
    }
    let total = comps[0].pi + comps[1].pi;
    let w0 = if total > 0.0 { comps[0].pi / total } else { 0.5 };
    let w0 = w0.clamp(SUBWEIGHT_FLOOR, 1.0 - SUBWEIGHT_FLOOR);
    comps[0].pi = w0;
    comps[1].pi = 1.0 - w0;
    let mut it = comps.into_iter();
    Ok(SubclusterPair {
        comps: [it.next().unwrap(), it.next().unwrap()],
    })
}

/// Restarts run per `kmeans` call; the lowest-cost solution wins.
const KMEANS_RESTARTS: u64 = 5;

/// Lloyd's algorithm with k-means++ seeding; deterministic per seed.
/// Several seeded restarts are scored by within-cluster cost and the best
/// kept. An emptied cluster is re-seeded to the point farthest from its
/// assigned centroid.
pub fn kmeans(data: &FeatureMatrix, k: usize, seed: u64, iters: usize) -> Result<HardLabels> {
    let mut best: Option<(f64, HardLabels)> = None;
    for i in 0..KMEANS_RESTARTS {
        let restart_seed = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (cost, labels) = kmeans_single(data, k, restart_seed, iters)?;
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn kmeans_single(
    data: &FeatureMatrix,
    k: usize,
    seed: u64,
    iters: usize,
) -> Result<(f64, HardLabels)> {
    let n = data.n();
    let d = data.d();
    if k == 0 || k > n {
        return Err(Error::domain(format!(
            "kmeans requires 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: D²-weighted selection of successive centers.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.row(rng.random_range(0..n)).to_vec());
    let mut d2 = vec![0.0f64; n];
    while centers.len() < k {
        let mut total = 0.0;
        for (i, row) in data.rows().enumerate() {
            let dist = centers
                .iter()
                .map(|c| squared_distance(row, c))
                .fold(f64::INFINITY, f64::min);
            d2[i] = dist;
            total += dist;
        }
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass at the chosen centers; any point works.
            rng.random_range(0..n)
        };
        centers.push(data.row(next).to_vec());
    }

    let mut labels = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, row) in data.rows().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dist = squared_distance(row, center);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (i, row) in data.rows().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums[labels[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its current centroid.
                let mut far = 0usize;
                let mut far_d = -1.0;
                for (i, row) in data.rows().enumerate() {
                    let dist = squared_distance(row, &centers[labels[i]]);
                    if dist > far_d {
                        far_d = dist;
                        far = i;
                    }
                }
                centers[c] = data.row(far).to_vec();
                changed = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centers[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let cost: f64 = data
        .rows()
        .zip(&labels)
        .map(|(row, &z)| squared_distance(row, &centers[z]))
        .sum();
    Ok((cost, HardLabels::new(labels)))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Candidate 2-means restarts evaluated per subcluster bootstrap.
const BOOTSTRAP_CANDIDATES: u64 = 4;

/// Initial subcluster structure for a new cluster: hard 2-means over its
/// members, weighted MAP per side. Runs several seeded 2-means restarts
/// and keeps the partition with the highest split Hastings ratio —
/// restarts land in different local optima, and a cut through real
/// structure scores far above a balanced halving. Returns the pair plus
/// per-member subcluster labels; fewer than two members puts all mass on
/// side 0.
pub fn bootstrap_subclusters(
    data: &FeatureMatrix,
    members: &[usize],
    prior: &NIWHyper,
    seed: u64,
) -> Result<(SubclusterPair, Vec<u8>)> {
    let data_k = data.select_rows(members);
    let assignments: Vec<u8> = if members.len() >= 2 {
        let mut best: Option<(f64, Vec<u8>)> = None;
        for i in 0..BOOTSTRAP_CANDIDATES {
            let restart_seed = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let km = kmeans(&data_k, 2, restart_seed, 50)?;
            let z: Vec<u8> = km.z.iter().map(|&z| z as u8).collect();
            let side0: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 0).collect();
            let side1: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 1).collect();
            if side0.is_empty() || side1.is_empty() {
                continue;
            }
            let s0 = crate::niw::hard_stats(&data_k, &side0);
            let s1 = crate::niw::hard_stats(&data_k, &side1);
            let score =
                crate::split_merge::log_hastings_split(&s0.merged(&s1), &s0, &s1, prior)?;
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, z));
            }
        }
        match best {
            Some((_, z)) => z,
            None => vec![0; members.len()],
        }
    } else {
        vec![0; members.len()]
    };
    let mut one_hot = vec![0.0; members.len() * 2];
    for (i, &s) in assignments.iter().enumerate() {
        one_hot[i * 2 + s as usize] = 1.0;
    }
    let r = Responsibilities::new(members.len(), 2, one_hot)?;
    let pair = subcluster_m_step(&data_k, &r, prior)?;
    Ok((pair, assignments))
}

/// Mean per-point KL at which a net counts as aligned with its targets.
pub const ALIGN_TOL: f64 = 0.05;
/// Sweep cap for [`align_net_to_targets`].
pub const ALIGN_SWEEPS: usize = 100;

/// Sweeps of KL training against fixed targets, until the mean per-point
/// KL drops below `tol` or `max_sweeps` is hit. Used to align a net with
/// a structure decided elsewhere (K-means bootstrap, accepted surgery)
/// before the regular loop's soft M-steps run on the net's own output —
/// an unaligned net's output would wash that structure out.
#[allow(clippy::too_many_arguments)]
pub fn align_net_to_targets(
    net: &mut AssignNet,
    data: &FeatureMatrix,
    targets: &Responsibilities,
    lr: f64,
    batch: usize,
    max_sweeps: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.n()).collect();
    for _ in 0..max_sweeps {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch.max(1)) {
            let b = data.select_rows(chunk);
            let t = targets.select_rows(chunk);
            let (loss, grads) = net.kl_cluster_loss_grad(&b, &t)?;
            net.adam_step(&grads, lr);
            total += loss;
        }
        if total / data.n() as f64 <= tol {
            break;
        }
    }
    Ok(())
}

/// Builds a complete fresh subcluster assembly for one cluster: 2-means
/// bootstrap parameters, per-member subcluster labels, and a new net
/// pretrained to reproduce the bootstrap partition (an unaligned net's
/// first epochs can saturate one softmax side and freeze there).
pub fn rebuild_subcluster(
    data: &FeatureMatrix,
    members: &[usize],
    prior: &NIWHyper,
    hidden: usize,
    lr_sub: f64,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(SubclusterPair, AssignNet, Vec<u8>)> {
    let net_seed = rng.random::<u64>();
    let kmeans_seed = rng.random::<u64>();
    let (pair, assignments) = bootstrap_subclusters(data, members, prior, kmeans_seed)?;
    let mut net = init_net(data.d(), hidden, 2, net_seed);
    net.zero_output_layer();
    if !members.is_empty() {
        let data_k = data.select_rows(members);
        let mut one_hot = vec![0.0; members.len() * 2];
        for (i, &s) in assignments.iter().enumerate() {
            one_hot[i * 2 + s as usize] = 1.0;
        }
        let targets = Responsibilities::new(members.len(), 2, one_hot)?;
        align_net_to_targets(
            &mut net,
            &data_k,
            &targets,
            lr_sub,
            batch,
            ALIGN_SWEEPS,
            ALIGN_TOL,
            rng,
        )?;
    }
    Ok((pair, net, assignments))
}

/// One full training epoch at fixed K:
/// 1. E-step targets from the previous epoch's parameters,
/// 2. one minibatch sweep of the clustering net on the KL loss,
/// 3. full-data forward pass, hard labels by arg-max,
/// 4. per-cluster subcluster-net sweep on the isotropic loss,
/// 5. weighted MAP M-steps from the nets' responsibilities.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch_fixed_k(
    data: &FeatureMatrix,
    state: &mut MixtureState,
    nets: &mut Nets,
    labels: &mut HardLabels,
    prior: &NIWHyper,
    cfg: &EpochConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochReport> {
    let n = data.n();
    let k = state.k();
    if nets.k() != k || nets.sub.len() != k {
        return Err(Error::DimensionMismatch {
            context: "train_epoch_fixed_k nets",
            expected: k,
            got: nets.k(),
        });
    }

    // (1) Targets are held fixed through the epoch's minibatch passes.
    let targets = e_step_targets(data, state)?;

    // (2) Clustering-net sweep.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cluster_loss = 0.0;
    for chunk in order.chunks(cfg.batch.max(1)) {
        let batch = data.select_rows(chunk);
        let target = targets.select_rows(chunk);
        let (loss, grads) = nets.cluster.kl_cluster_loss_grad(&batch, &target)?;
        nets.cluster.adam_step(&grads, cfg.lr_cluster);
        cluster_loss += loss;
    }

    // (3) Full-data responsibilities and hard labels.
    let r = nets.cluster.forward(data)?;
    debug_assert!(r.is_row_stochastic(1e-9));
    labels.z = r.argmax_labels().z;
    let mut sub_labels = labels.sub.take().unwrap_or_else(|| vec![0u8; n]);

    // (4) Subcluster nets: each sees only its cluster's hard members.
    let mut sub_loss = 0.0;
    for c in 0..k {
        let members = labels.members_of(c);
        if members.is_empty() {
            // Emptied cluster: subcluster pair falls back to the prior
            // mode; the cluster itself is retained and may merge away.
            let mode =
                weighted_map_estimate(&crate::niw::SufficientStats::zero(data.d()), prior, n)?;
            let mut c0 = mode.clone();
            let mut c1 = mode;
            c0.pi = 0.5;
            c1.pi = 0.5;
            state.subclusters[c] = SubclusterPair { comps: [c0, c1] };
            continue;
        }
        let data_k = data.select_rows(&members);
        let means = [
            state.subclusters[c].comps[0].mu.clone(),
            state.subclusters[c].comps[1].mu.clone(),
        ];

        let mut member_order: Vec<usize> = (0..members.len()).collect();
        member_order.shuffle(rng);
        for chunk in member_order.chunks(cfg.batch.max(1)) {
            let batch = data_k.select_rows(chunk);
            let (loss, grads) = nets.sub[c]
                .isotropic_subcluster_loss_grad(&batch, [&means[0], &means[1]])?;
            nets.sub[c].adam_step(&grads, cfg.lr_sub);
            sub_loss += loss;
        }

        let r_sub = nets.sub[c].forward(&data_k)?;
        let mut side_counts = [0usize; 2];
        for (local, &global) in members.iter().enumerate() {
            let row = r_sub.row(local);
            let side = usize::from(row[1] > row[0]);
            side_counts[side] += 1;
            sub_labels[global] = side as u8;
        }
        if members.len() >= 2 && side_counts.contains(&0) {
            // Degenerate one-sided subclustering cannot recover through the
            // isotropic loss (its gradient vanishes once the softmax
            // saturates); rebuild the pair from a fresh 2-means bootstrap.
            let (pair, net, assignments) = rebuild_subcluster(
                data,
                &members,
                prior,
                nets.sub[c].hidden(),
                cfg.lr_sub,
                cfg.batch,
                rng,
            )?;
            state.subclusters[c] = pair;
            nets.sub[c] = net;
            for (&global, &s) in members.iter().zip(&assignments) {
                sub_labels[global] = s;
            }
        } else {
            state.subclusters[c] = subcluster_m_step(&data_k, &r_sub, prior)?;
        }
    }
    labels.sub = Some(sub_labels);

    // (5) Cluster parameters from the net's soft assignments.
    state.clusters = m_step(data, &r, prior)?;
    state.normalize_weights();
    debug_assert!(state.check_invariants().is_ok());

    let hard_counts = labels.counts(k);
    debug_assert_eq!(hard_counts.iter().sum::<usize>(), n);
    Ok(EpochReport {
        epoch,
        cluster_loss,
        sub_loss,
        k,
        hard_counts,
    })
}

/// Unnormalized log posterior maximized by the weighted MAP M-step:
/// mixture log-likelihood plus, per cluster, the inverse-Wishart log-density
/// of Σ_k (scale νΨ) and the κ-weighted Mahalanobis penalty on μ_k. The
/// Σ-dependent normalizer of the mean factor is folded out so that the
/// weighted MAP update is this objective's exact argmax.
pub fn log_posterior(data: &FeatureMatrix, state: &MixtureState, prior: &NIWHyper) -> Result<f64> {
    let d = prior.d() as f64;
    let k = state.k();
    let mut factors = Vec::with_capacity(k);
    for comp in &state.clusters {
        factors.push((comp.pi.ln(), cholesky_logdet(&comp.sigma)?));
    }
    let mut loglik = 0.0;
    let mut logits = vec![0.0; k];
    for row in data.rows() {
        for (c, comp) in state.clusters.iter().enumerate() {
            let (log_pi, factor) = &factors[c];
            logits[c] = log_pi + factor.gaussian_logpdf(row, &comp.mu);
        }
        loglik += log_sum_exp(&logits);
    }

    let scale = prior.psi.scaled(prior.nu);
    let logdet_scale = cholesky_logdet(&scale)?.logdet();
    let dim = prior.d();
    let mut prior_term = 0.0;
    for (c, comp) in state.clusters.iter().enumerate() {
        let factor = &factors[c].1;
        // tr(S Σ⁻¹) via columns of Σ⁻¹.
        let mut trace = 0.0;
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            let col = factor.solve(&e);
            for i in 0..dim {
                trace += scale.get(i, j) * col[i];
            }
        }
        let log_iw = (prior.nu / 2.0) * logdet_scale
            - (prior.nu * d / 2.0) * 2.0f64.ln()
            - multivariate_log_gamma(dim, prior.nu / 2.0)?
            - ((prior.nu + d + 1.0) / 2.0) * factor.logdet()
            - 0.5 * trace;
        let mean_penalty = -0.5 * prior.kappa * factor.quad_form(&comp.mu, &prior.m);
        prior_term += log_iw + mean_penalty;
    }
    Ok(loglik + prior_term)
}

/// Classical Bayesian EM at fixed K: alternate exact E-step targets with
/// the weighted MAP M-step (r := r^E). Returns the final state, arg-max
/// labels, and the per-iteration log-posterior trace.
pub fn em_oracle(
    data: &FeatureMatrix,
    k: usize,
    prior: &NIWHyper,
    epochs: usize,
    seed: u64,
) -> Result<(MixtureState, HardLabels, Vec<f64>)> {
    let init = kmeans(data, k, seed, 100)?;
    let r0 = Responsibilities::from_hard(&init, k);
    let clusters = m_step(data, &r0, prior)?;
    let mut state = MixtureState {
        subclusters: mirror_subclusters(&clusters),
        clusters,
    };
    state.normalize_weights();

    let mut trace = Vec::with_capacity(epochs);
    trace.push(log_posterior(data, &state, prior)?);
    for _ in 0..epochs {
        let r = e_step_targets(data, &state)?;
        state.clusters = m_step(data, &r, prior)?;
        state.normalize_weights();
        state.subclusters = mirror_subclusters(&state.clusters);
        let f = log_posterior(data, &state, prior)?;
        let done = {
            let prev = *trace.last().unwrap();
            (f - prev).abs() <= 1e-12 * (1.0 + prev.abs())
        };
        trace.push(f);
        if done {
            break;
        }
    }
    let labels = e_step_targets(data, &state)?.argmax_labels();
    Ok((state, labels, trace))
}

/// Placeholder subcluster pairs for states that never split (oracle mode).
fn mirror_subclusters(clusters: &[GaussianComponent]) -> Vec<SubclusterPair> {
    clusters
        .iter()
        .map(|c| {
            let mut a = c.clone();
            let mut b = c.clone();
            a.pi = 0.5;
            b.pi = 0.5;
            SubclusterPair { comps: [a, b] }
        })
        .collect()
}
