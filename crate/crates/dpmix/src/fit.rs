//! The full nonparametric training loop.
//!
//! [`Trainer`] owns the epoch schedule: K-means initialization, fixed-K
//! epochs, alternating split/merge rounds after a warmup, and the
//! zero-acceptance patience stop. Both the CLI and the browser demo drive
//! a `Trainer`; it is deterministic per seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterParams, EpochRow, MetricsReport, RunRecord};
use crate::em::{
    align_net_to_targets, e_step_targets, m_step, rebuild_subcluster, train_epoch_fixed_k,
    EpochConfig, Nets, ALIGN_SWEEPS, ALIGN_TOL,
};
use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, HardLabels, MixtureState, NIWHyper, Responsibilities};
use crate::neural::init_net;
use crate::numerics::SpdMatrix;
use crate::split_merge::{propose_merges, propose_splits, ProposalOutcome};

/// How the prior scatter Ψ is built from `psi_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiMode {
    /// Ψ = I · psi_scale
    IdentityScale,
    /// Ψ = I · std(X) · psi_scale, with std over the flattened entries
    DataStdScale,
}

impl std::str::FromStr for PsiMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity-scale" => Ok(PsiMode::IdentityScale),
            "data-std-scale" => Ok(PsiMode::DataStdScale),
            other => Err(Error::Config(format!(
                "unknown psi-mode '{other}' (expected identity-scale or data-std-scale)"
            ))),
        }
    }
}

/// Training configuration. Defaults follow the published recipe: hidden
/// width 50, batch 128, learning rates 5e-4/5e-3, α=10, κ=1e-4, ν=d+2,
/// Ψ=I·0.005, prior mean at the data mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub init_k: usize,
    pub hidden: usize,
    pub batch: usize,
    pub lr_cluster: f64,
    pub lr_sub: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// Degrees of freedom; resolved to d+2 when `None`.
    pub nu: Option<f64>,
    pub psi_scale: f64,
    pub psi_mode: PsiMode,
    pub epochs_max: usize,
    pub split_every: usize,
    pub merge_every: usize,
    pub warmup: usize,
    /// Consecutive zero-acceptance proposal rounds before stopping.
    pub patience: usize,
    pub seed: u64,
    pub enable_splits: bool,
    pub enable_merges: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            init_k: 1,
            hidden: 50,
            batch: 128,
            lr_cluster: 5e-4,
            lr_sub: 5e-3,
            alpha: 10.0,
            kappa: 1e-4,
            nu: None,
            psi_scale: 0.005,
            psi_mode: PsiMode::IdentityScale,
            epochs_max: 500,
            split_every: 10,
            merge_every: 10,
            warmup: 5,
            patience: 5,
            seed: 0,
            enable_splits: true,
            enable_merges: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_k == 0 {
            return Err(Error::Config("init_k must be at least 1".into()));
        }
        if self.hidden == 0 || self.batch == 0 {
            return Err(Error::Config("hidden and batch must be positive".into()));
        }
        for (name, v) in [
            ("lr_cluster", self.lr_cluster),
            ("lr_sub", self.lr_sub),
            ("alpha", self.alpha),
            ("kappa", self.kappa),
            ("psi_scale", self.psi_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.split_every == 0 || self.merge_every == 0 {
            return Err(Error::Config("split_every and merge_every must be positive".into()));
        }
        Ok(())
    }

    /// Builds the NIW prior for a dataset: m at the data mean, ν = d+2
    /// unless overridden, Ψ per `psi_mode`.
    pub fn prior_for(&self, data: &FeatureMatrix) -> Result<NIWHyper> {
        let d = data.d();
        let nu = self.nu.unwrap_or(d as f64 + 2.0);
        let scale = match self.psi_mode {
            PsiMode::IdentityScale => self.psi_scale,
            PsiMode::DataStdScale => self.psi_scale * data.pooled_std(),
        };
        if !(scale > 0.0) {
            return Err(Error::Config(format!("derived psi scale {scale} not positive")));
        }
        NIWHyper::new(
            data.mean(),
            self.kappa,
            nu,
            SpdMatrix::scaled_identity(d, scale),
            self.alpha,
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// What a proposal round did, if one ran this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundKind {
    None,
    Splits,
    Merges,
}

/// Driver for one full fit. Create with [`Trainer::new`], call
/// [`Trainer::step_epoch`] until [`Trainer::is_done`] (or use
/// [`Trainer::run_to_completion`]), then [`Trainer::into_record`].
pub struct Trainer {
    data: FeatureMatrix,
    config: FitConfig,
    prior: NIWHyper,
    state: MixtureState,
    nets: Nets,
    labels: HardLabels,
    rng: ChaCha8Rng,
    epoch: usize,
    k_trajectory: Vec<usize>,
    per_epoch: Vec<EpochRow>,
    quiet_rounds: usize,
    stopped: bool,
}

impl Trainer {
    pub fn new(data: FeatureMatrix, config: FitConfig) -> Result<Self> {
        config.validate()?;
        if config.init_k > data.n() {
            return Err(Error::Config(format!(
                "init_k {} exceeds the number of points {}",
                config.init_k,
                data.n()
            )));
        }
        let prior = config.prior_for(&data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        // K-means initialization for clusters, 2-means per cluster for
        // subclusters; parameters by hard weighted MAP.
        let kmeans_seed = rng.random::<u64>();
        let init = crate::em::kmeans(&data, config.init_k, kmeans_seed, 100)?;
        let one_hot = Responsibilities::from_hard(&init, config.init_k);
        let clusters = m_step(&data, &one_hot, &prior)?;
        let mut labels = init;
        let mut sub_labels = vec![0u8; data.n()];
        let mut subclusters = Vec::with_capacity(config.init_k);
        let mut sub_nets = Vec::with_capacity(config.init_k);
        for c in 0..config.init_k {
            let members = labels.members_of(c);
            let (pair, net, z_sub) = rebuild_subcluster(
                &data,
                &members,
                &prior,
                config.hidden,
                config.lr_sub,
                config.batch,
                &mut rng,
            )?;
            for (&i, &s) in members.iter().zip(&z_sub) {
                sub_labels[i] = s;
            }
            subclusters.push(pair);
            sub_nets.push(net);
        }
        labels.sub = Some(sub_labels);
        let mut state = MixtureState {
            clusters,
            subclusters,
        };
        state.normalize_weights();

        let cluster_seed = rng.random::<u64>();
        let mut cluster_net = init_net(data.d(), config.hidden, config.init_k, cluster_seed);
        // Start from the uniform output so the K-means alignment below
        // cannot stall on confidently-wrong assignments.
        cluster_net.zero_output_layer();
        let nets = Nets {
            cluster: cluster_net,
            sub: sub_nets,
        };

        let mut trainer = Trainer {
            data,
            config,
            prior,
            state,
            nets,
            labels,
            rng,
            epoch: 0,
            k_trajectory: Vec::new(),
            per_epoch: Vec::new(),
            quiet_rounds: 0,
            stopped: false,
        };
        // Align the freshly initialized net with the K-means structure so
        // the first soft M-step does not wash it out.
        trainer.align_cluster_net()?;
        Ok(trainer)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn k(&self) -> usize {
        self.state.k()
    }

    pub fn data(&self) -> &FeatureMatrix {
        &self.data
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    pub fn labels(&self) -> &HardLabels {
        &self.labels
    }

    pub fn k_trajectory(&self) -> &[usize] {
        &self.k_trajectory
    }

    pub fn per_epoch(&self) -> &[EpochRow] {
        &self.per_epoch
    }

    pub fn is_done(&self) -> bool {
        self.stopped || self.epoch >= self.config.epochs_max
    }

    /// Which proposal round, if any, runs at the end of the given epoch.
    /// Splits win when a schedule collision puts both on one epoch.
    fn scheduled_round(&self, epoch: usize) -> RoundKind {
        if epoch < self.config.warmup {
            return RoundKind::None;
        }
        if self.config.enable_splits && epoch.is_multiple_of(self.config.split_every) {
            return RoundKind::Splits;
        }
        let offset = self.config.merge_every / 2;
        if self.config.enable_merges && epoch % self.config.merge_every == offset {
            return RoundKind::Merges;
        }
        RoundKind::None
    }

    /// Runs one training epoch plus any scheduled proposal round, and
    /// appends the epoch's history row.
    pub fn step_epoch(&mut self) -> Result<EpochRow> {
        if self.is_done() {
            return Err(Error::Config("training already finished".into()));
        }
        let epoch_cfg = EpochConfig {
            batch: self.config.batch,
            lr_cluster: self.config.lr_cluster,
            lr_sub: self.config.lr_sub,
        };
        let report = train_epoch_fixed_k(
            &self.data,
            &mut self.state,
            &mut self.nets,
            &mut self.labels,
            &self.prior,
            &epoch_cfg,
            self.epoch,
            &mut self.rng,
        )?;

        let mut splits_accepted = 0;
        let mut merges_accepted = 0;
        match self.scheduled_round(self.epoch) {
            RoundKind::Splits => {
                let outcomes = propose_splits(
                    &self.data,
                    &mut self.labels,
                    &mut self.state,
                    &mut self.nets,
                    &self.prior,
                    &epoch_cfg,
                    &mut self.rng,
                )?;
                splits_accepted = count_accepted(&outcomes);
                if !outcomes.is_empty() {
                    self.note_round(splits_accepted);
                }
                if splits_accepted > 0 {
                    self.align_cluster_net()?;
                }
                // Rejected proposals freeze otherwise: the aligned net and
                // its subcluster pair are a fixed point, so the same cut
                // would be offered forever. A rebuild explores new cuts.
                let rejected: Vec<usize> = outcomes
                    .iter()
                    .filter(|o| !o.accepted)
                    .map(|o| o.clusters[0])
                    .collect();
                self.rebuild_rejected(&rejected)?;
            }
            RoundKind::Merges => {
                let outcomes = propose_merges(
                    &self.data,
                    &mut self.labels,
                    &mut self.state,
                    &mut self.nets,
                    &self.prior,
                    &epoch_cfg,
                    &mut self.rng,
                )?;
                merges_accepted = count_accepted(&outcomes);
                // A round that proposed nothing (e.g. merges at K=1) says
                // nothing about convergence and does not count as quiet.
                if !outcomes.is_empty() {
                    self.note_round(merges_accepted);
                }
                if merges_accepted > 0 {
                    self.align_cluster_net()?;
                }
            }
            RoundKind::None => {}
        }

        let row = EpochRow {
            epoch: self.epoch,
            k: self.state.k(),
            cluster_loss: report.cluster_loss,
            sub_loss: report.sub_loss,
            splits_accepted,
            merges_accepted,
        };
        self.k_trajectory.push(self.state.k());
        self.per_epoch.push(row.clone());
        self.epoch += 1;
        Ok(row)
    }

    fn note_round(&mut self, accepted: usize) {
        if accepted == 0 {
            self.quiet_rounds += 1;
            if self.quiet_rounds >= self.config.patience {
                self.stopped = true;
            }
        } else {
            self.quiet_rounds = 0;
        }
    }

    /// Fresh subcluster assemblies for clusters whose split proposal was
    /// rejected this round. Indices stay valid: splits only append.
    fn rebuild_rejected(&mut self, clusters: &[usize]) -> Result<()> {
        for &c in clusters {
            let members = self.labels.members_of(c);
            if members.len() < 2 {
                continue;
            }
            let (pair, net, assignments) = rebuild_subcluster(
                &self.data,
                &members,
                &self.prior,
                self.config.hidden,
                self.config.lr_sub,
                self.config.batch,
                &mut self.rng,
            )?;
            self.state.subclusters[c] = pair;
            self.nets.sub[c] = net;
            let sub = self.labels.sub.as_mut().expect("subcluster labels exist");
            for (&i, &s) in members.iter().zip(&assignments) {
                sub[i] = s;
            }
        }
        Ok(())
    }

    /// Extra clustering-net sweeps against the current parameters' E-step
    /// targets. Runs after initialization and after accepted surgery, so
    /// the net reflects the new structure before the next soft M-step can
    /// erase it (freshly duplicated twin units start indistinguishable).
    fn align_cluster_net(&mut self) -> Result<()> {
        let targets = e_step_targets(&self.data, &self.state)?;
        align_net_to_targets(
            &mut self.nets.cluster,
            &self.data,
            &targets,
            self.config.lr_cluster,
            self.config.batch,
            ALIGN_SWEEPS,
            ALIGN_TOL,
            &mut self.rng,
        )
    }

    pub fn run_to_completion(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step_epoch()?;
        }
        Ok(())
    }

    /// Final labels, parameters, and (when truth is supplied) metrics.
    /// The fit never reads `truth`; it is consumed only here.
    pub fn into_record(self, truth: Option<&HardLabels>, wall_clock_sec: f64) -> Result<RunRecord> {
        let metrics = match truth {
            Some(t) => {
                if t.len() != self.labels.len() {
                    return Err(Error::DimensionMismatch {
                        context: "truth labels",
                        expected: self.labels.len(),
                        got: t.len(),
                    });
                }
                MetricsReport {
                    acc: Some(crate::metrics::clustering_accuracy(&self.labels, t)?),
                    nmi: Some(crate::metrics::nmi(&self.labels, t)?),
                    ari: Some(crate::metrics::ari(&self.labels, t)?),
                    silhouette: if self.labels.distinct() >= 2 {
                        Some(crate::metrics::silhouette(&self.data, &self.labels)?)
                    } else {
                        None
                    },
                }
            }
            None => MetricsReport::empty(),
        };
        Ok(RunRecord {
            config: self.config.to_json(),
            seed: self.config.seed,
            epochs: self.epoch,
            k_trajectory: self.k_trajectory,
            per_epoch: self.per_epoch,
            final_labels: self.labels.z,
            final_params: self
                .state
                .clusters
                .iter()
                .map(ClusterParams::from_component)
                .collect(),
            metrics,
            wall_clock_sec,
        })
    }
}

fn count_accepted(outcomes: &[ProposalOutcome]) -> usize {
    outcomes.iter().filter(|o| o.accepted).count()
}

/// Fits the full pipeline and returns the persisted record.
pub fn run_fit(
    data: FeatureMatrix,
    config: FitConfig,
    truth: Option<&HardLabels>,
) -> Result<RunRecord> {
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(data, config)?;
    trainer.run_to_completion()?;
    trainer.into_record(truth, start.elapsed().as_secs_f64())
}

/// Runs the classical Bayesian EM baseline at fixed K and packages it as a
/// run record plus the log-posterior trace.
pub fn run_oracle_em(
    data: FeatureMatrix,
    k: usize,
    config: FitConfig,
    truth: Option<&HardLabels>,
) -> Result<(RunRecord, Vec<f64>)> {
    config.validate()?;
    let start = std::time::Instant::now();
    let prior = config.prior_for(&data)?;
    let (state, labels, trace) =
        crate::em::em_oracle(&data, k, &prior, config.epochs_max, config.seed)?;
    let epochs = trace.len().saturating_sub(1);
    let metrics = match truth {
        Some(t) => MetricsReport {
            acc: Some(crate::metrics::clustering_accuracy(&labels, t)?),
            nmi: Some(crate::metrics::nmi(&labels, t)?),
            ari: Some(crate::metrics::ari(&labels, t)?),
            silhouette: if labels.distinct() >= 2 {
                Some(crate::metrics::silhouette(&data, &labels)?)
            } else {
                None
            },
        },
        None => MetricsReport::empty(),
    };
    let mut config_json = config.to_json();
    config_json["mode"] = serde_json::json!("oracle-em");
    config_json["oracle_k"] = serde_json::json!(k);
    let record = RunRecord {
        config: config_json,
        seed: config.seed,
        epochs,
        k_trajectory: vec![k; epochs.max(1)],
        per_epoch: Vec::new(),
        final_labels: labels.z,
        final_params: state
            .clusters
            .iter()
            .map(ClusterParams::from_component)
            .collect(),
        metrics,
        wall_clock_sec: start.elapsed().as_secs_f64(),
    };
    Ok((record, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gmm;

    fn small_config(seed: u64) -> FitConfig {
        FitConfig {
            epochs_max: 40,
            seed,
            ..FitConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            init_k: 0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            lr_cluster: 0.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn psi_mode_parsing_and_prior() {
        assert_eq!(
            "identity-scale".parse::<PsiMode>().unwrap(),
            PsiMode::IdentityScale
        );
        assert_eq!(
            "data-std-scale".parse::<PsiMode>().unwrap(),
            PsiMode::DataStdScale
        );
        assert!("other".parse::<PsiMode>().is_err());

        let g = generate_gmm(2, 100, 3, 6.0, None, 1).unwrap();
        let cfg = FitConfig::default();
        let prior = cfg.prior_for(&g.data).unwrap();
        assert_eq!(prior.nu, 5.0); // d + 2
        assert_eq!(prior.m, g.data.mean());
        assert_eq!(prior.psi.get(0, 0), 0.005);

        let cfg = FitConfig {
            psi_mode: PsiMode::DataStdScale,
            psi_scale: 0.01,
            ..FitConfig::default()
        };
        let prior = cfg.prior_for(&g.data).unwrap();
        assert!((prior.psi.get(0, 0) - 0.01 * g.data.pooled_std()).abs() < 1e-12);
    }

    #[test]
    fn schedule_alternates_splits_and_merges() {
        let g = generate_gmm(2, 50, 2, 6.0, None, 2).unwrap();
        let trainer = Trainer::new(g.data, small_config(0)).unwrap();
        assert_eq!(trainer.scheduled_round(0), RoundKind::None); // warmup
        assert_eq!(trainer.scheduled_round(4), RoundKind::None);
        assert_eq!(trainer.scheduled_round(5), RoundKind::Merges);
        assert_eq!(trainer.scheduled_round(10), RoundKind::Splits);
        assert_eq!(trainer.scheduled_round(15), RoundKind::Merges);
        assert_eq!(trainer.scheduled_round(20), RoundKind::Splits);
        assert_eq!(trainer.scheduled_round(12), RoundKind::None);
    }

    #[test]
    fn trainer_grows_k_on_bimodal_data() {
        let g = generate_gmm(2, 400, 2, 8.0, None, 3).unwrap();
        let mut config = small_config(7);
        config.epochs_max = 30;
        let mut trainer = Trainer::new(g.data, config).unwrap();
        trainer.run_to_completion().unwrap();
        assert!(
            trainer.k() >= 2,
            "expected at least one split, K = {}",
            trainer.k()
        );
    }

    #[test]
    fn k_trajectory_changes_only_at_proposal_epochs() {
        let g = generate_gmm(3, 300, 2, 8.0, None, 5).unwrap();
        let mut config = small_config(11);
        config.epochs_max = 35;
        let mut trainer = Trainer::new(g.data, config.clone()).unwrap();
        trainer.run_to_completion().unwrap();
        let traj = trainer.k_trajectory();
        for e in 1..traj.len() {
            if traj[e] != traj[e - 1] {
                let round = trainer.scheduled_round(e);
                assert_ne!(
                    round,
                    RoundKind::None,
                    "K changed at non-proposal epoch {e}"
                );
            }
        }
    }

    #[test]
    fn disabled_moves_keep_k_fixed() {
        let g = generate_gmm(3, 200, 2, 8.0, None, 6).unwrap();
        let config = FitConfig {
            init_k: 3,
            epochs_max: 25,
            enable_splits: false,
            enable_merges: false,
            seed: 13,
            ..FitConfig::default()
        };
        let mut trainer = Trainer::new(g.data, config).unwrap();
        trainer.run_to_completion().unwrap();
        assert!(trainer.k_trajectory().iter().all(|&k| k == 3));
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let g = generate_gmm(2, 200, 2, 8.0, None, 8).unwrap();
        let mut config = small_config(21);
        config.epochs_max = 22;
        let a = run_fit(g.data.clone(), config.clone(), Some(&g.labels)).unwrap();
        let b = run_fit(g.data.clone(), config.clone(), None).unwrap();
        assert_eq!(a.final_labels, b.final_labels, "truth must not affect the fit");
        assert_eq!(a.k_trajectory, b.k_trajectory);
        assert!(a.metrics.acc.is_some());
        assert_eq!(b.metrics.acc, None);
        // Epoch reports are bit-identical across runs.
        assert_eq!(a.per_epoch.len(), b.per_epoch.len());
        for (x, y) in a.per_epoch.iter().zip(&b.per_epoch) {
            assert_eq!(x.cluster_loss, y.cluster_loss);
            assert_eq!(x.sub_loss, y.sub_loss);
            assert_eq!(x.k, y.k);
        }
    }

    #[test]
    fn cluster_loss_decreases_over_training() {
        // Fixed K on separable data: the epoch-50 loss is below epoch 1's.
        let g = generate_gmm(3, 600, 2, 8.0, None, 14).unwrap();
        let config = FitConfig {
            init_k: 3,
            enable_splits: false,
            enable_merges: false,
            epochs_max: 50,
            seed: 2,
            ..FitConfig::default()
        };
        let record = run_fit(g.data, config, None).unwrap();
        let first = record.per_epoch[1].cluster_loss;
        let last = record.per_epoch.last().unwrap().cluster_loss;
        assert!(
            last < first,
            "cluster loss failed to improve: {first} -> {last}"
        );
    }

    #[test]
    fn patience_stops_quiet_runs() {
        // Unimodal data: no proposal is ever accepted, so the patience rule
        // must fire well before epochs_max.
        let g = generate_gmm(1, 150, 2, 4.0, None, 9).unwrap();
        let config = FitConfig {
            epochs_max: 400,
            patience: 3,
            seed: 17,
            ..FitConfig::default()
        };
        let mut trainer = Trainer::new(g.data, config).unwrap();
        trainer.run_to_completion().unwrap();
        assert!(
            trainer.epoch() < 60,
            "patience should stop early, ran {} epochs",
            trainer.epoch()
        );
        assert_eq!(trainer.k(), 1);
    }

    #[test]
    fn oracle_em_record_and_trace() {
        let g = generate_gmm(3, 300, 2, 8.0, None, 10).unwrap();
        let config = FitConfig {
            epochs_max: 50,
            seed: 19,
            ..FitConfig::default()
        };
        let (record, trace) = run_oracle_em(g.data, 3, config, Some(&g.labels)).unwrap();
        assert!(record.metrics.acc.unwrap() > 0.95);
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-7 * (1.0 + w[0].abs()));
        }
        assert_eq!(record.config["mode"], "oracle-em");
    }
}
