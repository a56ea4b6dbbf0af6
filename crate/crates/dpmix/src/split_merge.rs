//! Split and merge moves with Hastings-ratio acceptance.
//!
//! Splits promote a cluster's learned subclusters to full clusters; merges
//! fuse a cluster with one of its nearest neighbors. Acceptance compares
//! marginal likelihoods of the involved point sets under the NIW prior.
//! Accepted moves trigger coordinated surgery on the mixture state, the
//! labels, and the clustering net's output layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::em::{align_net_to_targets, rebuild_subcluster, EpochConfig, Nets, ALIGN_SWEEPS, ALIGN_TOL};
use crate::error::{Error, Result};
use crate::model::{
    FeatureMatrix, GaussianComponent, HardLabels, MixtureState, NIWHyper, Responsibilities,
    SubclusterPair,
};
use crate::neural::init_net;
use crate::niw::{hard_stats, log_marginal, weighted_map_estimate, SufficientStats};
use crate::numerics::log_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Split,
    Merge,
}

/// One proposal's outcome; `accepted == (rng_draw < min(1, exp(log_h)))`.
#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub kind: ProposalKind,
    pub clusters: Vec<usize>,
    pub log_h: f64,
    pub accepted: bool,
    pub rng_draw: f64,
}

/// Log Hastings ratio for splitting a cluster into its two subclusters:
///
///   ln H_s = ln α + lnΓ(N₁) + ln f(X₁) + lnΓ(N₂) + ln f(X₂)
///          − lnΓ(N) − ln f(X)
///
/// where f is the NIW marginal likelihood. Both subcluster counts must be
/// at least one (the Gamma function has a pole at zero).
pub fn log_hastings_split(
    stats_k: &SufficientStats,
    stats_1: &SufficientStats,
    stats_2: &SufficientStats,
    prior: &NIWHyper,
) -> Result<f64> {
    let (n1, n2, nk) = (stats_1.count(), stats_2.count(), stats_k.count());
    if n1 < 1.0 || n2 < 1.0 {
        return Err(Error::domain(format!(
            "split Hastings ratio undefined for empty subcluster (N1={n1}, N2={n2})"
        )));
    }
    debug_assert!(
        (nk - n1 - n2).abs() < 1e-9,
        "subcluster counts must partition the cluster"
    );
    Ok(prior.alpha.ln()
        + log_gamma(n1)?
        + log_marginal(stats_1, prior)?
        + log_gamma(n2)?
        + log_marginal(stats_2, prior)?
        - log_gamma(nk)?
        - log_marginal(stats_k, prior)?)
}

/// Log Hastings ratio for merging two clusters, H_m = 1/H_s: the exact
/// negation of the split ratio evaluated on the union.
pub fn log_hastings_merge(
    stats_a: &SufficientStats,
    stats_b: &SufficientStats,
    prior: &NIWHyper,
) -> Result<f64> {
    if stats_a.count() < 1.0 || stats_b.count() < 1.0 {
        return Err(Error::domain("merge Hastings ratio requires nonempty clusters"));
    }
    let merged = stats_a.merged(stats_b);
    Ok(-log_hastings_split(&merged, stats_a, stats_b, prior)?)
}

fn accept(log_h: f64, draw: f64) -> bool {
    draw < log_h.exp().min(1.0)
}

/// Proposes splitting every cluster into its two subclusters.
///
/// All Hastings ratios are evaluated against the pre-round state, so the
/// decisions are independent; accepted splits are then applied in
/// ascending cluster order. A split keeps child 1 at the parent's index
/// and appends child 2, duplicating the parent's output unit, retiring its
/// subcluster net, and relabeling members by their subcluster labels.
/// Proposals with an empty subcluster are skipped (logged as rejected).
pub fn propose_splits(
    data: &FeatureMatrix,
    labels: &mut HardLabels,
    state: &mut MixtureState,
    nets: &mut Nets,
    prior: &NIWHyper,
    cfg: &EpochConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ProposalOutcome>> {
    let k_pre = state.k();
    let sub = labels
        .sub
        .clone()
        .ok_or_else(|| Error::domain("propose_splits requires subcluster labels"))?;

    struct Pending {
        parent: usize,
        members_keep: Vec<usize>,
        members_move: Vec<usize>,
    }

    let mut outcomes = Vec::with_capacity(k_pre);
    let mut pending = Vec::new();
    for k in 0..k_pre {
        let members = labels.members_of(k);
        let (side0, side1): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&i| sub[i] == 0);
        if side0.is_empty() || side1.is_empty() {
            outcomes.push(ProposalOutcome {
                kind: ProposalKind::Split,
                clusters: vec![k],
                log_h: f64::NEG_INFINITY,
                accepted: false,
                rng_draw: 0.0,
            });
            continue;
        }
        let s0 = hard_stats(data, &side0);
        let s1 = hard_stats(data, &side1);
        let sk = s0.merged(&s1);
        let log_h = log_hastings_split(&sk, &s0, &s1, prior)?;
        let draw: f64 = rng.random();
        let accepted = accept(log_h, draw);
        outcomes.push(ProposalOutcome {
            kind: ProposalKind::Split,
            clusters: vec![k],
            log_h,
            accepted,
            rng_draw: draw,
        });
        if accepted {
            pending.push(Pending {
                parent: k,
                members_keep: side0,
                members_move: side1,
            });
        }
    }

    let mut sub_labels = sub;
    for p in &pending {
        let parent = p.parent;
        let pair = state.subclusters[parent].clone();
        let parent_pi = state.clusters[parent].pi;
        // pi2 as the complement keeps child weights summing to the
        // parent's weight exactly.
        let pi1 = parent_pi * pair.comps[0].pi;
        let pi2 = parent_pi - pi1;
        let new_index = state.clusters.len();

        state.clusters[parent] = GaussianComponent {
            mu: pair.comps[0].mu.clone(),
            sigma: pair.comps[0].sigma.clone(),
            pi: pi1,
        };
        state.clusters.push(GaussianComponent {
            mu: pair.comps[1].mu.clone(),
            sigma: pair.comps[1].sigma.clone(),
            pi: pi2,
        });
        for &i in &p.members_move {
            labels.z[i] = new_index;
        }

        nets.cluster.duplicate_output_unit(parent, 0.0, rng)?;
        let width = nets.sub[parent].hidden();
        let (pair_a, net_a, z_a) = rebuild_subcluster(
            data,
            &p.members_keep,
            prior,
            width,
            cfg.lr_sub,
            cfg.batch,
            rng,
        )?;
        nets.sub[parent] = net_a;
        state.subclusters[parent] = pair_a;
        for (&i, &s) in p.members_keep.iter().zip(&z_a) {
            sub_labels[i] = s;
        }
        let (pair_b, net_b, z_b) = rebuild_subcluster(
            data,
            &p.members_move,
            prior,
            width,
            cfg.lr_sub,
            cfg.batch,
            rng,
        )?;
        nets.sub.push(net_b);
        state.subclusters.push(pair_b);
        for (&i, &s) in p.members_move.iter().zip(&z_b) {
            sub_labels[i] = s;
        }
    }
    labels.sub = Some(sub_labels);
    if !pending.is_empty() {
        state.normalize_weights();
    }
    debug_assert!(state.check_invariants().is_ok());
    Ok(outcomes)
}

/// Proposes merging clusters with their nearest neighbors.
///
/// Clusters are scanned in ascending index order; each unconsumed cluster
/// tries its three nearest neighbors (centroid distance, pre-round state)
/// in increasing-distance order. The first accepted merge consumes both
/// clusters for the round, so no cluster takes part in two merges. The
/// merged cluster keeps the lower index's output unit; its parameters come
/// from the weighted MAP over the union, its weight is the pair's sum, and
/// its new subcluster structure is the two pre-merge clusters (with a
/// freshly initialized subcluster net).
pub fn propose_merges(
    data: &FeatureMatrix,
    labels: &mut HardLabels,
    state: &mut MixtureState,
    nets: &mut Nets,
    prior: &NIWHyper,
    cfg: &EpochConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ProposalOutcome>> {
    let k_pre = state.k();
    let mut outcomes = Vec::new();
    if k_pre < 2 {
        return Ok(outcomes);
    }
    let members: Vec<Vec<usize>> = (0..k_pre).map(|k| labels.members_of(k)).collect();
    let stats: Vec<SufficientStats> = members.iter().map(|m| hard_stats(data, m)).collect();

    let mut consumed = vec![false; k_pre];
    let mut pending: Vec<(usize, usize)> = Vec::new();
    for a in 0..k_pre {
        if consumed[a] {
            continue;
        }
        let mut neighbors: Vec<(f64, usize)> = (0..k_pre)
            .filter(|&b| b != a)
            .map(|b| {
                let dist: f64 = state.clusters[a]
                    .mu
                    .iter()
                    .zip(&state.clusters[b].mu)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (dist, b)
            })
            .collect();
        neighbors.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        neighbors.truncate(3);
        for (_, b) in neighbors {
            if consumed[b] {
                continue;
            }
            // An empty side has no marginal-likelihood ratio (Γ(0) pole);
            // absorbing it into its neighbor moves no points, so that
            // cleanup merge is accepted for free.
            let log_h = if members[a].is_empty() || members[b].is_empty() {
                f64::INFINITY
            } else {
                log_hastings_merge(&stats[a], &stats[b], prior)?
            };
            let draw: f64 = rng.random();
            let accepted = accept(log_h, draw);
            outcomes.push(ProposalOutcome {
                kind: ProposalKind::Merge,
                clusters: vec![a, b],
                log_h,
                accepted,
                rng_draw: draw,
            });
            if accepted {
                consumed[a] = true;
                consumed[b] = true;
                pending.push((a, b));
                break;
            }
        }
    }

    if pending.is_empty() {
        return Ok(outcomes);
    }

    let n = data.n();
    let mut sub_labels = labels.sub.clone().unwrap_or_else(|| vec![0u8; n]);
    for &(a, b) in &pending {
        let (lo, hi) = (a.min(b), a.max(b));
        let union = stats[a].merged(&stats[b]);
        let estimate = weighted_map_estimate(&union, prior, n)?;
        let pi = state.clusters[a].pi + state.clusters[b].pi;
        state.clusters[lo] = GaussianComponent {
            mu: estimate.mu,
            sigma: estimate.sigma,
            pi,
        };

        // The pre-merge clusters become the merged cluster's subclusters,
        // keeping a cheap path to a future re-split.
        let mut comp_lo = weighted_map_estimate(&stats[lo], prior, n)?;
        let mut comp_hi = weighted_map_estimate(&stats[hi], prior, n)?;
        let n_lo = stats[lo].count();
        let n_hi = stats[hi].count();
        let w_lo = if n_lo + n_hi > 0.0 {
            (n_lo / (n_lo + n_hi)).clamp(1e-12, 1.0 - 1e-12)
        } else {
            0.5
        };
        comp_lo.pi = w_lo;
        comp_hi.pi = 1.0 - w_lo;
        state.subclusters[lo] = SubclusterPair {
            comps: [comp_lo, comp_hi],
        };
        for &i in &members[lo] {
            sub_labels[i] = 0;
        }
        for &i in &members[hi] {
            sub_labels[i] = 1;
            labels.z[i] = lo;
        }
        // The fresh subcluster net starts out reproducing the pre-merge
        // membership, matching the pair parameters set above.
        let width = nets.sub[lo].hidden();
        let seed = rng.random::<u64>();
        let mut fresh = init_net(data.d(), width, 2, seed);
        fresh.zero_output_layer();
        let union_members: Vec<usize> = members[lo]
            .iter()
            .chain(members[hi].iter())
            .copied()
            .collect();
        if !union_members.is_empty() {
            let data_u = data.select_rows(&union_members);
            let mut one_hot = vec![0.0; union_members.len() * 2];
            for (row, &i) in union_members.iter().enumerate() {
                one_hot[row * 2 + usize::from(sub_labels[i])] = 1.0;
            }
            let targets = Responsibilities::new(union_members.len(), 2, one_hot)?;
            align_net_to_targets(
                &mut fresh,
                &data_u,
                &targets,
                cfg.lr_sub,
                cfg.batch,
                ALIGN_SWEEPS,
                ALIGN_TOL,
                rng,
            )?;
        }
        nets.sub[lo] = fresh;
    }

    // Delete the higher-index halves in descending order so that earlier
    // removals cannot shift later ones.
    let mut removed: Vec<usize> = pending.iter().map(|&(a, b)| a.max(b)).collect();
    removed.sort_unstable_by(|x, y| y.cmp(x));
    for &hi in &removed {
        nets.cluster.remove_output_unit(hi)?;
        nets.sub.remove(hi);
        state.clusters.remove(hi);
        state.subclusters.remove(hi);
    }
    // Remap surviving labels onto the compacted index range.
    removed.sort_unstable();
    for z in labels.z.iter_mut() {
        let shift = removed.partition_point(|&r| r < *z);
        debug_assert!(removed.binary_search(z).is_err());
        *z -= shift;
    }
    labels.sub = Some(sub_labels);
    state.normalize_weights();
    debug_assert!(state.check_invariants().is_ok());
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{kmeans, subcluster_m_step};
    use crate::model::Responsibilities;
    use crate::numerics::SpdMatrix;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior_1d(psi: f64, alpha: f64) -> NIWHyper {
        NIWHyper::new(vec![0.0], 1e-4, 3.0, SpdMatrix::from_diagonal(&[psi]), alpha).unwrap()
    }

    fn test_cfg() -> EpochConfig {
        EpochConfig {
            batch: 32,
            lr_cluster: 5e-4,
            lr_sub: 5e-3,
        }
    }

    #[test]
    fn split_ratio_rejects_empty_subcluster() {
        let data = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let prior = prior_1d(0.005, 10.0);
        let full = hard_stats(&data, &[0, 1]);
        let empty = SufficientStats::zero(1);
        assert!(log_hastings_split(&full, &empty, &full, &prior).is_err());
        assert!(log_hastings_merge(&empty, &full, &prior).is_err());
    }

    #[test]
    fn split_favored_for_separated_pairs() {
        // Two tight pairs at ±5 under a weak prior: splitting wins.
        let data = FeatureMatrix::new(4, 1, vec![-5.0, -5.1, 5.0, 5.1]).unwrap();
        let prior = prior_1d(0.005, 10.0);
        let s1 = hard_stats(&data, &[0, 1]);
        let s2 = hard_stats(&data, &[2, 3]);
        let sk = s1.merged(&s2);
        let log_h = log_hastings_split(&sk, &s1, &s2, &prior).unwrap();
        assert!(log_h > 0.0, "expected split favored, log_h = {log_h}");
    }

    #[test]
    fn split_disfavored_for_single_blob() {
        // The same four points squeezed near zero, with Ψ matched to the
        // data scale: splitting loses.
        let data = FeatureMatrix::new(4, 1, vec![-0.05, -0.051, 0.05, 0.051]).unwrap();
        let prior = prior_1d(0.0025, 10.0);
        let s1 = hard_stats(&data, &[0, 1]);
        let s2 = hard_stats(&data, &[2, 3]);
        let sk = s1.merged(&s2);
        let log_h = log_hastings_split(&sk, &s1, &s2, &prior).unwrap();
        assert!(log_h < 0.0, "expected split disfavored, log_h = {log_h}");
    }

    #[test]
    fn merge_reciprocity_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.random_range(1..=3);
            let n_a = rng.random_range(1..=10);
            let n_b = rng.random_range(1..=10);
            let rows: Vec<Vec<f64>> = (0..n_a + n_b)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect())
                .collect();
            let data = FeatureMatrix::from_rows(&rows).unwrap();
            let prior = NIWHyper::new(
                vec![0.0; d],
                1e-3,
                d as f64 + 2.0,
                SpdMatrix::scaled_identity(d, 0.1),
                5.0,
            )
            .unwrap();
            let idx_a: Vec<usize> = (0..n_a).collect();
            let idx_b: Vec<usize> = (n_a..n_a + n_b).collect();
            let sa = hard_stats(&data, &idx_a);
            let sb = hard_stats(&data, &idx_b);
            let merge = log_hastings_merge(&sa, &sb, &prior).unwrap();
            let split = log_hastings_split(&sa.merged(&sb), &sa, &sb, &prior).unwrap();
            assert_eq!(merge + split, 0.0, "reciprocity must be exact");
        }
    }

    #[test]
    fn merge_sign_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Overlapping same-mean clusters: merge favored.
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                vec![g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = prior_1d(1.0, 10.0);
        let sa = hard_stats(&data, &(0..40).collect::<Vec<_>>());
        let sb = hard_stats(&data, &(40..80).collect::<Vec<_>>());
        assert!(log_hastings_merge(&sa, &sb, &prior).unwrap() > 0.0);

        // Two blobs 20σ apart: merge strongly disfavored.
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                let center = if i < 40 { 0.0 } else { 20.0 };
                vec![center + g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let sa = hard_stats(&data, &(0..40).collect::<Vec<_>>());
        let sb = hard_stats(&data, &(40..80).collect::<Vec<_>>());
        assert!(log_hastings_merge(&sa, &sb, &prior).unwrap() < 0.0);
    }

    /// Bimodal two-cluster fixture with subcluster labels from 2-means.
    fn bimodal_fixture(
        rng: &mut ChaCha8Rng,
    ) -> (FeatureMatrix, HardLabels, MixtureState, Nets, NIWHyper) {
        let mut rows = Vec::new();
        for center in [-6.0f64, 6.0] {
            for _ in 0..60 {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                rows.push(vec![center + 0.5 * g]);
            }
        }
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = NIWHyper::new(
            data.mean(),
            1e-4,
            3.0,
            SpdMatrix::from_diagonal(&[0.005]),
            10.0,
        )
        .unwrap();

        // One cluster holding everything; subclusters = the two blobs.
        let km = kmeans(&data, 2, 9, 100).unwrap();
        let z = vec![0usize; data.n()];
        let sub: Vec<u8> = km.z.iter().map(|&v| v as u8).collect();
        let labels = HardLabels {
            z,
            sub: Some(sub.clone()),
        };
        let one_hot: Vec<f64> = sub
            .iter()
            .flat_map(|&s| {
                if s == 0 {
                    [1.0, 0.0]
                } else {
                    [0.0, 1.0]
                }
            })
            .collect();
        let r = Responsibilities::new(data.n(), 2, one_hot).unwrap();
        let pair = subcluster_m_step(&data, &r, &prior).unwrap();
        let all: Vec<usize> = (0..data.n()).collect();
        let mut cluster = weighted_map_estimate(&hard_stats(&data, &all), &prior, data.n()).unwrap();
        cluster.pi = 1.0;
        let state = MixtureState {
            clusters: vec![cluster],
            subclusters: vec![pair],
        };
        let nets = Nets {
            cluster: init_net(1, 10, 1, 0),
            sub: vec![init_net(1, 10, 2, 1)],
        };
        (data, labels, state, nets, prior)
    }

    #[test]
    fn forced_accept_split_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (data, mut labels, mut state, mut nets, prior) = bimodal_fixture(&mut rng);
        let outcomes =
            propose_splits(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut rng).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert!(outcomes[0].log_h > 0.0, "bimodal split must be favored");
        assert!(outcomes[0].accepted);

        assert_eq!(state.k(), 2);
        assert_eq!(nets.cluster.k_out(), 2);
        assert_eq!(nets.sub.len(), 2);
        let pi_sum: f64 = state.clusters.iter().map(|c| c.pi).sum();
        assert_relative_eq!(pi_sum, 1.0, epsilon = 1e-9);
        // Children inherit the subcluster means: near ±6.
        let mut mus: Vec<f64> = state.clusters.iter().map(|c| c.mu[0]).collect();
        mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((mus[0] + 6.0).abs() < 0.2, "child mean {}", mus[0]);
        assert!((mus[1] - 6.0).abs() < 0.2, "child mean {}", mus[1]);
        // Labels partition across the two children.
        let counts = labels.counts(2);
        assert_eq!(counts.iter().sum::<usize>(), data.n());
        assert!(counts.iter().all(|&c| c == 60));
    }

    #[test]
    fn split_weight_handoff_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (data, mut labels, mut state, mut nets, prior) = bimodal_fixture(&mut rng);
        state.clusters[0].pi = 1.0;
        let w0 = state.subclusters[0].comps[0].pi;
        let parent_pi = state.clusters[0].pi;
        propose_splits(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut rng).unwrap();
        assert_eq!(state.k(), 2);
        // Child weights sum to the parent's weight exactly.
        assert_eq!(state.clusters[0].pi + state.clusters[1].pi, parent_pi);
        assert_eq!(state.clusters[0].pi, parent_pi * w0);
    }

    #[test]
    fn rejected_split_leaves_state_unchanged() {
        // A genuinely unimodal cluster: log_h < 0, so a near-one draw
        // rejects and nothing changes.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                vec![g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = NIWHyper::new(
            data.mean(),
            1e-4,
            3.0,
            SpdMatrix::from_diagonal(&[1.0]),
            10.0,
        )
        .unwrap();
        let km = kmeans(&data, 2, 3, 100).unwrap();
        let mut labels = HardLabels {
            z: vec![0; data.n()],
            sub: Some(km.z.iter().map(|&v| v as u8).collect()),
        };
        let all: Vec<usize> = (0..data.n()).collect();
        let mut cluster =
            weighted_map_estimate(&hard_stats(&data, &all), &prior, data.n()).unwrap();
        cluster.pi = 1.0;
        let pair = {
            let one_hot: Vec<f64> = labels
                .sub
                .as_ref()
                .unwrap()
                .iter()
                .flat_map(|&s| if s == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect();
            let r = Responsibilities::new(data.n(), 2, one_hot).unwrap();
            subcluster_m_step(&data, &r, &prior).unwrap()
        };
        let mut state = MixtureState {
            clusters: vec![cluster],
            subclusters: vec![pair],
        };
        let mut nets = Nets {
            cluster: init_net(1, 10, 1, 0),
            sub: vec![init_net(1, 10, 2, 1)],
        };
        let z_before = labels.z.clone();
        let w2_before = nets.cluster.params().2.to_vec();

        let outcomes =
            propose_splits(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut rng).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert!(outcomes[0].log_h < 0.0);
        assert!(!outcomes[0].accepted, "draw {} should reject", outcomes[0].rng_draw);
        assert_eq!(state.k(), 1);
        assert_eq!(labels.z, z_before);
        assert_eq!(nets.cluster.params().2, &w2_before[..]);
    }

    /// Two-cluster state over the given data with labels from 2-means.
    fn two_cluster_fixture(
        data: FeatureMatrix,
        prior: &NIWHyper,
    ) -> (HardLabels, MixtureState, Nets) {
        let km = kmeans(&data, 2, 17, 100).unwrap();
        let mut labels = km.clone();
        labels.sub = Some(vec![0; data.n()]);
        let m0 = labels.members_of(0);
        let m1 = labels.members_of(1);
        let n = data.n();
        let mut c0 = weighted_map_estimate(&hard_stats(&data, &m0), prior, n).unwrap();
        let mut c1 = weighted_map_estimate(&hard_stats(&data, &m1), prior, n).unwrap();
        c0.pi = m0.len() as f64 / n as f64;
        c1.pi = 1.0 - c0.pi;
        let mk_pair = |c: &GaussianComponent| {
            let mut a = c.clone();
            let mut b = c.clone();
            a.pi = 0.5;
            b.pi = 0.5;
            SubclusterPair { comps: [a, b] }
        };
        let state = MixtureState {
            subclusters: vec![mk_pair(&c0), mk_pair(&c1)],
            clusters: vec![c0, c1],
        };
        let nets = Nets {
            cluster: init_net(data.d(), 10, 2, 0),
            sub: vec![init_net(data.d(), 10, 2, 1), init_net(data.d(), 10, 2, 2)],
        };
        (labels, state, nets)
    }

    #[test]
    fn overlapping_clusters_merge_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                vec![g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = prior_1d(1.0, 10.0);
        let (mut labels, mut state, mut nets) = two_cluster_fixture(data.clone(), &prior);

        let outcomes =
            propose_merges(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut rng).unwrap();
        assert!(outcomes[0].log_h > 0.0, "overlap should favor merging");
        assert!(outcomes[0].accepted);
        assert_eq!(state.k(), 1);
        assert_eq!(nets.cluster.k_out(), 1);
        assert_eq!(nets.sub.len(), 1);
        assert!(labels.z.iter().all(|&z| z == 0));
        assert_relative_eq!(state.clusters[0].pi, 1.0, epsilon = 1e-12);
        // The merged cluster's subclusters echo the pre-merge pair.
        let w = state.subclusters[0].weights();
        assert_relative_eq!(w[0] + w[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn separated_clusters_rarely_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                let center = if i % 2 == 0 { 0.0 } else { 40.0 };
                vec![center + g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = prior_1d(1.0, 10.0);
        let mut rejections = 0;
        for trial in 0..100 {
            let (mut labels, mut state, mut nets) = two_cluster_fixture(data.clone(), &prior);
            let z_before = labels.z.clone();
            let mut trial_rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let outcomes =
                propose_merges(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut trial_rng)
                    .unwrap();
            if !outcomes.iter().any(|o| o.accepted) {
                rejections += 1;
                // A fully rejected round is an identity transformation.
                assert_eq!(state.k(), 2);
                assert_eq!(nets.cluster.k_out(), 2);
                assert_eq!(labels.z, z_before);
            }
        }
        assert!(rejections >= 99, "only {rejections}/100 rejected");
    }

    #[test]
    fn merge_round_never_collapses_three_clusters() {
        // Three overlapping clusters a~b~c: after one round at most one
        // merge may involve each cluster.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                vec![g]
            })
            .collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let prior = prior_1d(1.0, 10.0);
        let km = kmeans(&data, 3, 31, 100).unwrap();
        let mut labels = km.clone();
        labels.sub = Some(vec![0; data.n()]);
        let n = data.n();
        let mut clusters = Vec::new();
        for c in 0..3 {
            let m = labels.members_of(c);
            let mut comp = weighted_map_estimate(&hard_stats(&data, &m), &prior, n).unwrap();
            comp.pi = m.len() as f64 / n as f64;
            clusters.push(comp);
        }
        let subclusters = clusters
            .iter()
            .map(|c| {
                let mut a = c.clone();
                let mut b = c.clone();
                a.pi = 0.5;
                b.pi = 0.5;
                SubclusterPair { comps: [a, b] }
            })
            .collect();
        let mut state = MixtureState {
            clusters,
            subclusters,
        };
        let mut nets = Nets {
            cluster: init_net(1, 10, 3, 0),
            sub: (0..3).map(|s| init_net(1, 10, 2, s)).collect(),
        };
        let outcomes =
            propose_merges(&data, &mut labels, &mut state, &mut nets, &prior, &test_cfg(), &mut rng).unwrap();

        // Every cluster index appears in at most one accepted merge.
        let mut seen = std::collections::HashSet::new();
        for o in outcomes.iter().filter(|o| o.accepted) {
            for &c in &o.clusters {
                assert!(seen.insert(c), "cluster {c} merged twice in one round");
            }
        }
        assert!(state.k() >= 2, "three-way collapse happened");
        // Partition property: labels still cover 0..K contiguously.
        let (compacted, _) = crate::model::compact_labels(&labels);
        assert_eq!(compacted.z, labels.z);
        assert_eq!(labels.counts(state.k()).iter().sum::<usize>(), n);
    }
}
