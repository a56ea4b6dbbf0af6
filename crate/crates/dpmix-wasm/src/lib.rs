//! Browser demo bindings.
//!
//! Wraps a [`dpmix::fit::Trainer`] on synthetic 2-D data behind three
//! wasm-bindgen operations: create a lab (generates the dataset), step
//! the fit by a few epochs, and score the current labels against the
//! generating truth. All payloads cross the boundary as JSON strings;
//! the static page in `www/` renders them on a canvas.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dpmix::data::generate_gmm;
use dpmix::fit::{FitConfig, Trainer};
use dpmix::model::HardLabels;

#[derive(Serialize)]
struct DatasetView {
    points: Vec<[f64; 2]>,
    truth: Vec<usize>,
    true_k: usize,
}

#[derive(Serialize)]
struct ClusterView {
    pi: f64,
    mu: [f64; 2],
    /// Row-major 2×2 covariance.
    sigma: [f64; 4],
    sub_means: [[f64; 2]; 2],
}

#[derive(Serialize)]
struct StateView {
    epoch: usize,
    k: usize,
    done: bool,
    labels: Vec<usize>,
    clusters: Vec<ClusterView>,
    k_trajectory: Vec<usize>,
    cluster_loss: Vec<f64>,
}

#[derive(Serialize)]
struct MetricsView {
    acc: f64,
    nmi: f64,
    ari: f64,
    final_k: usize,
}

fn err_to_js(e: dpmix::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Interactive clustering session over a synthetic 2-D mixture.
#[wasm_bindgen]
pub struct ClusterLab {
    trainer: Trainer,
    truth: HardLabels,
    true_k: usize,
}

#[wasm_bindgen]
impl ClusterLab {
    /// Generates a `true_k`-component mixture (optionally with imbalanced
    /// Dirichlet-drawn weights) and prepares a trainer over it.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        true_k: usize,
        n: usize,
        separation: f64,
        imbalanced: bool,
        init_k: usize,
        psi_scale: f64,
        epochs_max: usize,
        seed: u64,
    ) -> Result<ClusterLab, JsValue> {
        let weights = if imbalanced {
            Some(dirichlet_weights(true_k, seed, 0.02))
        } else {
            None
        };
        let generated = generate_gmm(true_k, n, 2, separation, weights.as_deref(), seed)
            .map_err(err_to_js)?;
        let config = FitConfig {
            init_k,
            psi_scale,
            epochs_max,
            seed,
            ..FitConfig::default()
        };
        let trainer = Trainer::new(generated.data, config).map_err(err_to_js)?;
        Ok(ClusterLab {
            trainer,
            truth: generated.labels,
            true_k,
        })
    }

    /// The generated points and their true component labels (JSON).
    pub fn dataset(&self) -> String {
        let points = self
            .trainer
            .data()
            .rows()
            .map(|r| [r[0], r[1]])
            .collect();
        let view = DatasetView {
            points,
            truth: self.truth.z.clone(),
            true_k: self.true_k,
        };
        serde_json::to_string(&view).expect("dataset serializes")
    }

    /// Advances the fit by up to `epochs` epochs and returns the new
    /// state (labels, mixture parameters, K trajectory) as JSON.
    pub fn step(&mut self, epochs: usize) -> Result<String, JsValue> {
        for _ in 0..epochs {
            if self.trainer.is_done() {
                break;
            }
            self.trainer.step_epoch().map_err(err_to_js)?;
        }
        Ok(self.state_json())
    }

    /// Current state without advancing (JSON).
    pub fn state(&self) -> String {
        self.state_json()
    }

    /// Supervised metrics of the current hard labels against the
    /// generating truth (JSON).
    pub fn metrics(&self) -> Result<String, JsValue> {
        let labels = self.trainer.labels();
        let view = MetricsView {
            acc: dpmix::metrics::clustering_accuracy(labels, &self.truth).map_err(err_to_js)?,
            nmi: dpmix::metrics::nmi(labels, &self.truth).map_err(err_to_js)?,
            ari: dpmix::metrics::ari(labels, &self.truth).map_err(err_to_js)?,
            final_k: self.trainer.k(),
        };
        Ok(serde_json::to_string(&view).expect("metrics serialize"))
    }

    fn state_json(&self) -> String {
        let state = self.trainer.state();
        let clusters = state
            .clusters
            .iter()
            .zip(&state.subclusters)
            .map(|(c, pair)| ClusterView {
                pi: c.pi,
                mu: [c.mu[0], c.mu[1]],
                sigma: [
                    c.sigma.get(0, 0),
                    c.sigma.get(0, 1),
                    c.sigma.get(1, 0),
                    c.sigma.get(1, 1),
                ],
                sub_means: [
                    [pair.comps[0].mu[0], pair.comps[0].mu[1]],
                    [pair.comps[1].mu[0], pair.comps[1].mu[1]],
                ],
            })
            .collect();
        let view = StateView {
            epoch: self.trainer.epoch(),
            k: self.trainer.k(),
            done: self.trainer.is_done(),
            labels: self.trainer.labels().z.clone(),
            clusters,
            k_trajectory: self.trainer.k_trajectory().to_vec(),
            cluster_loss: self
                .trainer
                .per_epoch()
                .iter()
                .map(|r| r.cluster_loss)
                .collect(),
        };
        serde_json::to_string(&view).expect("state serializes")
    }
}

/// Flat-Dirichlet weights with a minimum-mass floor, regenerated until
/// every component keeps at least `min_mass`.
fn dirichlet_weights(k: usize, seed: u64, min_mass: f64) -> Vec<f64> {
    use rand_like::SplitMix64;
    let mut rng = SplitMix64::new(seed);
    loop {
        let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.next_unit()).ln()).collect();
        let total: f64 = draws.iter().sum();
        let weights: Vec<f64> = draws.iter().map(|d| d / total).collect();
        if weights.iter().all(|&w| w >= min_mass) {
            return weights;
        }
    }
}

/// Minimal deterministic generator so the demo does not need an entropy
/// source on the wasm target.
mod rand_like {
    pub struct SplitMix64(u64);

    impl SplitMix64 {
        pub fn new(seed: u64) -> Self {
            SplitMix64(seed)
        }

        fn next_u64(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }

        /// Uniform in [0, 1).
        pub fn next_unit(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_runs_and_reports() {
        let mut lab = ClusterLab::new(3, 300, 8.0, false, 1, 0.005, 40, 7).unwrap();
        let dataset: serde_json::Value = serde_json::from_str(&lab.dataset()).unwrap();
        assert_eq!(dataset["points"].as_array().unwrap().len(), 300);
        assert_eq!(dataset["true_k"], 3);

        let state: serde_json::Value = serde_json::from_str(&lab.step(40).unwrap()).unwrap();
        assert!(state["epoch"].as_u64().unwrap() > 0);
        assert_eq!(state["labels"].as_array().unwrap().len(), 300);
        let k = state["k"].as_u64().unwrap() as usize;
        assert_eq!(state["clusters"].as_array().unwrap().len(), k);

        let metrics: serde_json::Value = serde_json::from_str(&lab.metrics().unwrap()).unwrap();
        assert!(metrics["acc"].as_f64().unwrap() > 0.9);
        assert_eq!(metrics["final_k"].as_u64().unwrap() as usize, k);
    }

    #[test]
    fn imbalanced_weights_respect_floor() {
        let w = dirichlet_weights(5, 3, 0.02);
        assert_eq!(w.len(), 5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v >= 0.02));
    }

    #[test]
    fn stepping_is_deterministic() {
        let run = |seed: u64| -> String {
            let mut lab = ClusterLab::new(2, 200, 8.0, false, 1, 0.005, 25, seed).unwrap();
            lab.step(25).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }
}
