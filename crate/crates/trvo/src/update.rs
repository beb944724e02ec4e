//! KL-constrained natural-gradient step.

use serde::{Deserialize, Serialize};

use cvahedge_core::book_env::Trajectory;

use crate::error::{invalid, Result, TrvoError};
use crate::family::Family;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegion {
    pub kl_limit: f64,
    pub cg_iterations: usize,
    pub cg_damping: f64,
    pub max_backtracks: usize,
    /// Step shrink factor per backtrack.
    pub backtrack_ratio: f64,
    /// Decisions subsampled for the Fisher matrix and the KL check.
    pub fisher_states: usize,
}

impl Default for TrustRegion {
    fn default() -> Self {
        TrustRegion {
            kl_limit: 0.01,
            cg_iterations: 10,
            cg_damping: 1e-2,
            max_backtracks: 15,
            backtrack_ratio: 0.8,
            fisher_states: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub accepted: bool,
    /// Mean KL of the accepted step, 0 if rejected.
    pub kl: f64,
    /// Euclidean norm of the parameter change.
    pub step_norm: f64,
    /// Surrogate gain of the accepted step.
    pub surrogate: f64,
    /// Linearized gain of the full step.
    pub expected: f64,
    pub backtracks: usize,
}

impl UpdateReport {
    fn rejected(expected: f64, backtracks: usize) -> UpdateReport {
        UpdateReport {
            accepted: false,
            kl: 0.0,
            step_norm: 0.0,
            surrogate: 0.0,
            expected,
            backtracks,
        }
    }
}

struct FisherSample {
    /// `(state, weight)` references into the batch.
    states: Vec<(usize, usize, f64)>,
    old_eta: Vec<f64>,
    jacobians: Vec<f64>,
}

fn fisher_sample<P: Policy>(policy: &P, trs: &[Trajectory], max_states: usize) -> FisherSample {
    let total: usize = trs.iter().map(|t| t.len()).sum();
    let stride = total.div_ceil(max_states.max(1)).max(1);
    let mut states = Vec::new();
    let mut k = 0;
    for (e, t) in trs.iter().enumerate() {
        for i in 0..t.len() {
            if k % stride == 0 {
                states.push((e, i, t.weight));
            }
            k += 1;
        }
    }
    let wsum: f64 = states.iter().map(|s| s.2).sum();
    for s in &mut states {
        s.2 /= wsum;
    }
    let (ne, np) = (policy.family().n_eta(), policy.n_params());
    let mut old_eta = vec![0.0; states.len() * ne];
    let mut jacobians = vec![0.0; states.len() * ne * np];
    for (j, &(e, i, _)) in states.iter().enumerate() {
        let s = trs[e].state(i);
        policy.eta(s, &mut old_eta[j * ne..(j + 1) * ne]);
        policy.eta_jacobian(s, &mut jacobians[j * ne * np..(j + 1) * ne * np]);
    }
    FisherSample {
        states,
        old_eta,
        jacobians,
    }
}

impl FisherSample {
    fn apply<F: Family>(&self, f: &F, np: usize, damping: f64, v: &[f64], out: &mut [f64]) {
        let ne = f.n_eta();
        out.iter_mut().zip(v).for_each(|(o, x)| *o = damping * x);
        let (mut u, mut m) = (vec![0.0; ne], vec![0.0; ne]);
        for (j, &(_, _, w)) in self.states.iter().enumerate() {
            let jac = &self.jacobians[j * ne * np..(j + 1) * ne * np];
            for q in 0..ne {
                u[q] = jac[q * np..(q + 1) * np].iter().zip(v).map(|(a, b)| a * b).sum();
            }
            f.fisher_apply(&self.old_eta[j * ne..(j + 1) * ne], &u, &mut m);
            for q in 0..ne {
                let c = w * m[q];
                if c != 0.0 {
                    for (o, a) in out.iter_mut().zip(&jac[q * np..(q + 1) * np]) {
                        *o += c * a;
                    }
                }
            }
        }
    }

    fn mean_kl<P: Policy>(&self, policy: &P, trs: &[Trajectory]) -> f64 {
        let f = policy.family();
        let ne = f.n_eta();
        let mut eta = vec![0.0; ne];
        self.states
            .iter()
            .enumerate()
            .map(|(j, &(e, i, w))| {
                policy.eta(trs[e].state(i), &mut eta);
                w * f.kl(&self.old_eta[j * ne..(j + 1) * ne], &eta)
            })
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Approximately solve `A x = b` for symmetric positive-definite `A`.
pub fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], iterations: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let tol = 1e-20 * rr;
    for _ in 0..iterations {
        if rr <= tol {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    x
}

/// `log π(a|s)` of every decision in trajectory order.
pub fn log_probs<P: Policy>(policy: &P, trs: &[Trajectory]) -> Vec<f64> {
    trs.iter()
        .flat_map(|t| (0..t.len()).map(move |i| policy.log_prob(t.state(i), t.action(i))))
        .collect()
}

/// Importance-ratio surrogate `Σ c (π'/π − 1)`.
fn surrogate(coef: &[f64], old: &[f64], new: &[f64]) -> f64 {
    coef.iter()
        .zip(old.iter().zip(new))
        .map(|(c, (lo, ln))| c * ((ln - lo).exp() - 1.0))
        .sum()
}

/// Natural-gradient ascent on the surrogate with coefficients `coef`, whose
/// gradient at the current parameters is `grad`. `old_log_probs` may be
/// empty, in which case they are recomputed.
///
/// Solves `F x = grad` by conjugate gradient, scales `x` to the KL radius and
/// shrinks it until the surrogate improves and the mean KL is within limit.
/// Leaves the policy unchanged when no step is accepted.
pub fn trust_region_update<P: Policy>(
    policy: &mut P,
    grad: &[f64],
    coef: &[f64],
    old_log_probs: &[f64],
    trs: &[Trajectory],
    cfg: &TrustRegion,
) -> Result<UpdateReport> {
    if !(cfg.kl_limit > 0.0) {
        return invalid(format!("KL limit {} must be positive", cfg.kl_limit));
    }
    if !(cfg.backtrack_ratio > 0.0 && cfg.backtrack_ratio < 1.0) {
        return invalid(format!("backtrack ratio {} outside (0, 1)", cfg.backtrack_ratio));
    }
    let np = policy.n_params();
    if grad.len() != np {
        return invalid("gradient length does not match the policy");
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrvoError::Training(format!(
            "non-finite gradient at parameter {k}: {} (norm of finite part {:.3e})",
            grad[k],
            grad.iter().filter(|g| g.is_finite()).map(|g| g * g).sum::<f64>().sqrt()
        )));
    }
    if grad.iter().all(|&g| g == 0.0) {
        return Ok(UpdateReport::rejected(0.0, 0));
    }
    let fs = fisher_sample(policy, trs, cfg.fisher_states);
    let family = policy.family();
    let apply = |v: &[f64], out: &mut [f64]| fs.apply(family, np, cfg.cg_damping, v, out);
    let x = conjugate_gradient(apply, grad, cfg.cg_iterations);
    let mut fx = vec![0.0; np];
    apply(&x, &mut fx);
    let shs = dot(&x, &fx);
    if !(shs > 0.0) || !shs.is_finite() {
        return Err(TrvoError::Training(format!("Fisher quadratic form {shs} is not positive")));
    }
    let scale = (2.0 * cfg.kl_limit / shs).sqrt();
    let step: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let expected = dot(grad, &step);

    let old_params = policy.params().to_vec();
    let old_lp = if old_log_probs.is_empty() {
        log_probs(policy, trs)
    } else {
        old_log_probs.to_vec()
    };
    if old_lp.len() != coef.len() {
        return invalid("surrogate coefficients do not match the batch");
    }
    let mut frac = 1.0;
    for k in 0..=cfg.max_backtracks {
        let cand: Vec<f64> = old_params.iter().zip(&step).map(|(p, s)| p + frac * s).collect();
        policy.set_params(&cand)?;
        let kl = fs.mean_kl(policy, trs);
        let gain = surrogate(coef, &old_lp, &log_probs(policy, trs));
        if kl.is_finite() && gain.is_finite() && kl <= cfg.kl_limit && gain > 0.0 {
            return Ok(UpdateReport {
                accepted: true,
                kl,
                step_norm: frac * dot(&step, &step).sqrt(),
                surrogate: gain,
                expected,
                backtracks: k,
            });
        }
        frac *= cfg.backtrack_ratio;
    }
    policy.set_params(&old_params)?;
    Ok(UpdateReport::rejected(expected, cfg.max_backtracks + 1))
}
