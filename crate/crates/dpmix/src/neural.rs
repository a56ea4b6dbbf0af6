//! Soft-assignment networks and their training machinery.
//!
//! A one-hidden-layer MLP with ReLU and a softmax output produces cluster
//! (or subcluster) responsibilities. Backprop for both losses is derived
//! by hand; the optimizer is an adaptive-moment update whose buffers are
//! resized together with the output layer during split/merge surgery.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, Responsibilities};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Floor applied to target responsibilities before taking logs; E-step
/// targets underflow for distant clusters.
const TARGET_FLOOR: f64 = 1e-10;

/// Per-parameter gradient tensors, shaped like the net they came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AdamState {
    t: u64,
    m_w1: Vec<f64>,
    v_w1: Vec<f64>,
    m_b1: Vec<f64>,
    v_b1: Vec<f64>,
    m_w2: Vec<f64>,
    v_w2: Vec<f64>,
    m_b2: Vec<f64>,
    v_b2: Vec<f64>,
}

impl AdamState {
    fn zeros(d_in: usize, h: usize, k_out: usize) -> Self {
        AdamState {
            t: 0,
            m_w1: vec![0.0; d_in * h],
            v_w1: vec![0.0; d_in * h],
            m_b1: vec![0.0; h],
            v_b1: vec![0.0; h],
            m_w2: vec![0.0; h * k_out],
            v_w2: vec![0.0; h * k_out],
            m_b2: vec![0.0; k_out],
            v_b2: vec![0.0; k_out],
        }
    }
}

/// One-hidden-layer soft-assignment network with a resizable K-unit
/// softmax output layer.
///
/// `w1` is d_in×h (input-major), `w2` is h×k_out (hidden-major); both
/// row-major, so output-unit surgery rewrites one column stripe of `w2`.
#[derive(Debug, Clone)]
pub struct AssignNet {
    d_in: usize,
    h: usize,
    k_out: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    opt: AdamState,
}

/// Deterministic initialization: weights uniform in ±√(6/(fan_in+fan_out)),
/// biases zero.
pub fn init_net(d_in: usize, h: usize, k_out: usize, seed: u64) -> AssignNet {
    assert!(d_in > 0 && h > 0 && k_out > 0, "net dims must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |fan_in: usize, fan_out: usize, len: usize| -> Vec<f64> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..len)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect()
    };
    let w1 = uniform(d_in, h, d_in * h);
    let w2 = uniform(h, k_out, h * k_out);
    AssignNet {
        d_in,
        h,
        k_out,
        w1,
        b1: vec![0.0; h],
        w2,
        b2: vec![0.0; k_out],
        opt: AdamState::zeros(d_in, h, k_out),
    }
}

impl AssignNet {
    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn k_out(&self) -> usize {
        self.k_out
    }

    pub fn params(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }

    /// Mutable parameter views, used by the finite-difference tests.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Hidden activations and softmax output for one input row.
    fn forward_row(&self, x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
        let (h, k) = (self.h, self.k_out);
        for j in 0..h {
            let mut a = self.b1[j];
            for (i, &xi) in x.iter().enumerate() {
                a += xi * self.w1[i * h + j];
            }
            hidden[j] = a.max(0.0);
        }
        for c in 0..k {
            let mut s = self.b2[c];
            for j in 0..h {
                s += hidden[j] * self.w2[j * k + c];
            }
            probs[c] = s;
        }
        softmax_in_place(probs);
    }

    /// Raw logits for one row; used by the surgery tests.
    pub fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        let (h, k) = (self.h, self.k_out);
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            let mut a = self.b1[j];
            for (i, &xi) in x.iter().enumerate() {
                a += xi * self.w1[i * h + j];
            }
            hidden[j] = a.max(0.0);
        }
        (0..k)
            .map(|c| {
                let mut s = self.b2[c];
                for j in 0..h {
                    s += hidden[j] * self.w2[j * k + c];
                }
                s
            })
            .collect()
    }

    /// Row-stochastic responsibilities for a batch.
    pub fn forward(&self, batch: &FeatureMatrix) -> Result<Responsibilities> {
        if batch.d() != self.d_in {
            return Err(Error::DimensionMismatch {
                context: "AssignNet::forward",
                expected: self.d_in,
                got: batch.d(),
            });
        }
        let n = batch.n();
        let k = self.k_out;
        let mut out = vec![0.0; n * k];
        let mut hidden = vec![0.0; self.h];
        for (i, row) in batch.rows().enumerate() {
            self.forward_row(row, &mut hidden, &mut out[i * k..(i + 1) * k]);
        }
        let resp = Responsibilities::new(n, k, out)?;
        debug_assert!(resp.is_row_stochastic(1e-9));
        Ok(resp)
    }

    /// Shared backprop tail: accumulate parameter gradients from dL/dlogits
    /// for one row.
    fn backprop_row(
        &self,
        x: &[f64],
        hidden: &[f64],
        dlogits: &[f64],
        grads: &mut Gradients,
        dhidden: &mut [f64],
    ) {
        let (h, k) = (self.h, self.k_out);
        for c in 0..k {
            grads.b2[c] += dlogits[c];
        }
        for j in 0..h {
            let hj = hidden[j];
            let mut dh = 0.0;
            for c in 0..k {
                grads.w2[j * k + c] += hj * dlogits[c];
                dh += self.w2[j * k + c] * dlogits[c];
            }
            // ReLU subgradient: zero where the unit is inactive.
            dhidden[j] = if hj > 0.0 { dh } else { 0.0 };
        }
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..h {
                grads.w1[i * h + j] += xi * dhidden[j];
            }
        }
        for j in 0..h {
            grads.b1[j] += dhidden[j];
        }
    }

    /// KL clustering loss Σ_i KL(r_i ‖ t_i) with exact softmax gradients.
    ///
    /// Targets are clamped below at 1e-10 before the log; loss and
    /// gradients are sums over the batch.
    pub fn kl_cluster_loss_grad(
        &self,
        batch: &FeatureMatrix,
        target: &Responsibilities,
    ) -> Result<(f64, Gradients)> {
        if target.k() != self.k_out {
            return Err(Error::DimensionMismatch {
                context: "kl_cluster_loss_grad target K",
                expected: self.k_out,
                got: target.k(),
            });
        }
        if target.n() != batch.n() {
            return Err(Error::DimensionMismatch {
                context: "kl_cluster_loss_grad target rows",
                expected: batch.n(),
                got: target.n(),
            });
        }
        let k = self.k_out;
        let mut grads = self.zero_gradients();
        let mut hidden = vec![0.0; self.h];
        let mut probs = vec![0.0; k];
        let mut dlogits = vec![0.0; k];
        let mut dhidden = vec![0.0; self.h];
        let mut loss = 0.0;
        for (i, row) in batch.rows().enumerate() {
            self.forward_row(row, &mut hidden, &mut probs);
            let t = target.row(i);
            // Via the softmax Jacobian, dL/ds_c = r_c·(ln(r_c/t_c) − row_kl).
            let mut row_kl = 0.0;
            for c in 0..k {
                let rc = probs[c];
                if rc > 0.0 {
                    row_kl += rc * (rc.ln() - t[c].max(TARGET_FLOOR).ln());
                }
            }
            for c in 0..k {
                let rc = probs[c];
                let diff = if rc > 0.0 {
                    rc.ln() - t[c].max(TARGET_FLOOR).ln()
                } else {
                    0.0
                };
                dlogits[c] = rc * (diff - row_kl);
            }
            loss += row_kl;
            self.backprop_row(row, &hidden, &dlogits, &mut grads, &mut dhidden);
        }
        Ok((loss, grads))
    }

    /// Isotropic subcluster loss Σ_i Σ_j r̃_{i,j}·‖x_i − μ̃_j‖² for a
    /// two-unit net. The means are constants within the epoch; no gradient
    /// flows to them.
    pub fn isotropic_subcluster_loss_grad(
        &self,
        batch: &FeatureMatrix,
        sub_means: [&[f64]; 2],
    ) -> Result<(f64, Gradients)> {
        if self.k_out != 2 {
            return Err(Error::DimensionMismatch {
                context: "isotropic_subcluster_loss_grad output units",
                expected: 2,
                got: self.k_out,
            });
        }
        if sub_means[0].len() != batch.d() || sub_means[1].len() != batch.d() {
            return Err(Error::DimensionMismatch {
                context: "isotropic_subcluster_loss_grad means",
                expected: batch.d(),
                got: sub_means[0].len(),
            });
        }
        let mut grads = self.zero_gradients();
        let mut hidden = vec![0.0; self.h];
        let mut probs = vec![0.0; 2];
        let mut dlogits = vec![0.0; 2];
        let mut dhidden = vec![0.0; self.h];
        let mut loss = 0.0;
        for row in batch.rows() {
            self.forward_row(row, &mut hidden, &mut probs);
            let sq = [
                squared_distance(row, sub_means[0]),
                squared_distance(row, sub_means[1]),
            ];
            let row_loss = probs[0] * sq[0] + probs[1] * sq[1];
            loss += row_loss;
            for c in 0..2 {
                dlogits[c] = probs[c] * (sq[c] - row_loss);
            }
            self.backprop_row(row, &hidden, &dlogits, &mut grads, &mut dhidden);
        }
        Ok((loss, grads))
    }

    /// Adaptive-moment update (decay 0.9/0.999, ε=1e-8, bias-corrected).
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(grads.w1.len(), self.w1.len(), "gradient shape mismatch");
        assert_eq!(grads.w2.len(), self.w2.len(), "gradient shape mismatch");
        self.opt.t += 1;
        let t = self.opt.t as i32;
        let corr1 = 1.0 - ADAM_BETA1.powi(t);
        let corr2 = 1.0 - ADAM_BETA2.powi(t);
        let update = |theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..theta.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        };
        update(&mut self.w1, &mut self.opt.m_w1, &mut self.opt.v_w1, &grads.w1);
        update(&mut self.b1, &mut self.opt.m_b1, &mut self.opt.v_b1, &grads.b1);
        update(&mut self.w2, &mut self.opt.m_w2, &mut self.opt.v_w2, &grads.w2);
        update(&mut self.b2, &mut self.opt.m_b2, &mut self.opt.v_b2, &grads.b2);
    }

    /// Duplicates output unit `k` — its `w2` column, bias entry, and
    /// optimizer moments — appending the copy as the last unit. Optional
    /// zero-mean noise of the given stddev breaks the twin symmetry; with
    /// zero noise the twins produce identical logits for every input.
    pub fn duplicate_output_unit<R: Rng>(
        &mut self,
        k: usize,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        if k >= self.k_out {
            return Err(Error::domain(format!(
                "duplicate_output_unit: unit {k} out of range (k_out={})",
                self.k_out
            )));
        }
        let old_k = self.k_out;
        let new_k = old_k + 1;
        let grow = |col_data: &[f64], h: usize| -> Vec<f64> {
            let mut out = vec![0.0; h * new_k];
            for j in 0..h {
                out[j * new_k..j * new_k + old_k]
                    .copy_from_slice(&col_data[j * old_k..(j + 1) * old_k]);
                out[j * new_k + old_k] = col_data[j * old_k + k];
            }
            out
        };
        self.w2 = grow(&self.w2, self.h);
        self.opt.m_w2 = grow(&self.opt.m_w2, self.h);
        self.opt.v_w2 = grow(&self.opt.v_w2, self.h);
        self.b2.push(self.b2[k]);
        self.opt.m_b2.push(self.opt.m_b2[k]);
        self.opt.v_b2.push(self.opt.v_b2[k]);
        self.k_out = new_k;
        if noise_scale > 0.0 {
            for j in 0..self.h {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                self.w2[j * new_k + old_k] += g * noise_scale;
            }
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            self.b2[old_k] += g * noise_scale;
        }
        Ok(())
    }

    /// Zeroes the output layer, making the forward pass exactly uniform
    /// for every input. A net aligned from this state never passes
    /// through confidently-wrong outputs, where the reverse-KL gradient
    /// (∝ r_c) vanishes and training freezes.
    pub fn zero_output_layer(&mut self) {
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self.opt.m_w2.fill(0.0);
        self.opt.v_w2.fill(0.0);
        self.opt.m_b2.fill(0.0);
        self.opt.v_b2.fill(0.0);
    }

    /// Removes output unit `k`; surviving unit order is preserved.
    pub fn remove_output_unit(&mut self, k: usize) -> Result<()> {
        if self.k_out < 2 {
            return Err(Error::domain("cannot remove the last output unit"));
        }
        if k >= self.k_out {
            return Err(Error::domain(format!(
                "remove_output_unit: unit {k} out of range (k_out={})",
                self.k_out
            )));
        }
        let old_k = self.k_out;
        let new_k = old_k - 1;
        let shrink = |col_data: &[f64], h: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(h * new_k);
            for j in 0..h {
                for c in 0..old_k {
                    if c != k {
                        out.push(col_data[j * old_k + c]);
                    }
                }
            }
            out
        };
        self.w2 = shrink(&self.w2, self.h);
        self.opt.m_w2 = shrink(&self.opt.m_w2, self.h);
        self.opt.v_w2 = shrink(&self.opt.v_w2, self.h);
        self.b2.remove(k);
        self.opt.m_b2.remove(k);
        self.opt.v_b2.remove(k);
        self.k_out = new_k;
        Ok(())
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
