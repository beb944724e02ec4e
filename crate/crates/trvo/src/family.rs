//! Parametric action distributions.
//!
//! A policy maps a state to distribution parameters `eta`; everything the
//! optimizer needs from the distribution (score, Fisher metric, KL) is
//! expressed in `eta` coordinates and pulled back through the policy's
//! Jacobian.

use rand::Rng;
use rand_distr::StandardNormal;

pub trait Family: Sync {
    fn n_eta(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn log_prob(&self, eta: &[f64], action: &[f64]) -> f64;
    /// `∂ log p(action) / ∂eta`, written into `out`.
    fn score(&self, eta: &[f64], action: &[f64], out: &mut [f64]);
    /// Fisher metric at `eta` applied to `u`.
    fn fisher_apply(&self, eta: &[f64], u: &[f64], out: &mut [f64]);
    /// `KL(p_old ‖ p_new)`.
    fn kl(&self, old: &[f64], new: &[f64]) -> f64;
    fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R, out: &mut [f64]);
    /// Deterministic action (mean or most likely outcome).
    fn mode(&self, eta: &[f64], out: &mut [f64]);
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian on `a = scale ⊙ u`, with `eta = (μ, log σ)` for `u`.
///
/// Working in `u` keeps the network outputs of order one when actions span
/// very different magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(scale: Vec<f64>) -> DiagGaussian {
        DiagGaussian { scale }
    }

    fn dim(&self) -> usize {
        self.scale.len()
    }
}

impl Family for DiagGaussian {
    fn n_eta(&self) -> usize {
        2 * self.dim()
    }

    fn action_dim(&self) -> usize {
        self.dim()
    }

    fn log_prob(&self, eta: &[f64], action: &[f64]) -> f64 {
        let d = self.dim();
        let mut lp = 0.0;
        for k in 0..d {
            let ls = eta[d + k];
            let z = (action[k] / self.scale[k] - eta[k]) * (-ls).exp();
            lp += -0.5 * z * z - ls - HALF_LN_2PI - self.scale[k].ln();
        }
        lp
    }

    fn score(&self, eta: &[f64], action: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for k in 0..d {
            let inv = (-eta[d + k]).exp();
            let z = (action[k] / self.scale[k] - eta[k]) * inv;
            out[k] = z * inv;
            out[d + k] = z * z - 1.0;
        }
    }

    fn fisher_apply(&self, eta: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for k in 0..d {
            out[k] = u[k] * (-2.0 * eta[d + k]).exp();
            out[d + k] = 2.0 * u[d + k];
        }
    }

    fn kl(&self, old: &[f64], new: &[f64]) -> f64 {
        let d = self.dim();
        (0..d)
            .map(|k| {
                let (lo, ln) = (old[d + k], new[d + k]);
                let dm = old[k] - new[k];
                ln - lo + ((2.0 * lo).exp() + dm * dm) / (2.0 * (2.0 * ln).exp()) - 0.5
            })
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        for k in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out[k] = self.scale[k] * (eta[k] + eta[d + k].exp() * z);
        }
    }

    fn mode(&self, eta: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = self.scale[k] * eta[k];
        }
    }
}

/// Categorical distribution over `n` outcomes with `eta` = logits. The
/// action is the outcome index stored as a float.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Categorical {
    pub n: usize,
}

fn softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

impl Categorical {
    pub fn probs(&self, eta: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        softmax(eta, &mut p);
        p
    }
}

impl Family for Categorical {
    fn n_eta(&self) -> usize {
        self.n
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn log_prob(&self, eta: &[f64], action: &[f64]) -> f64 {
        self.probs(eta)[action[0] as usize].ln()
    }

    fn score(&self, eta: &[f64], action: &[f64], out: &mut [f64]) {
        softmax(eta, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
        out[action[0] as usize] += 1.0;
    }

    fn fisher_apply(&self, eta: &[f64], u: &[f64], out: &mut [f64]) {
        let p = self.probs(eta);
        let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
        for k in 0..self.n {
            out[k] = p[k] * (u[k] - pu);
        }
    }

    fn kl(&self, old: &[f64], new: &[f64]) -> f64 {
        let (p, q) = (self.probs(old), self.probs(new));
        p.iter()
            .zip(&q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R, out: &mut [f64]) {
        let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = eta.iter().map(|l| (l - m).exp()).sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut k = self.n - 1;
        for (j, l) in eta.iter().enumerate() {
            acc += (l - m).exp();
            if u < acc {
                k = j;
                break;
            }
        }
        out[0] = k as f64;
    }

    fn mode(&self, eta: &[f64], out: &mut [f64]) {
        let mut best = 0;
        for k in 1..self.n {
            if eta[k] > eta[best] {
                best = k;
            }
        }
        out[0] = best as f64;
    }
}
