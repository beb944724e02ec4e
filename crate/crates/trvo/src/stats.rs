//! Batch statistics and policy-gradient estimators for the stochastic-horizon
//! mean-volatility objective `η̂ = Ĵ − β ν̂²`.
//!
//! Per episode with rewards `r_1..r_ε` and discount `γ`:
//! `G = Σ γ^{i−1} r_i`, `Γ = Σ γ^{i−1}`, `Ĵ = E[G]`, `J = E[G/Γ]`,
//! `ν̂² = E[Σ γ^{i−1}(r_i − J)²]`. Expectations are weighted sums with the
//! trajectories' estimator weights.

use cvahedge_core::book_env::Trajectory;

use crate::critic::{predict, RidgeFit};
use crate::error::{invalid, Result, TrvoError};
use crate::policy::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub gamma: f64,
    pub beta: f64,
    pub n_episodes: usize,
    pub j_hat: f64,
    /// Normalized return `J`, frozen inside the volatility residuals.
    pub j_norm: f64,
    pub nu2_hat: f64,
    pub sigma2_hat: f64,
    pub eta_hat: f64,
    pub se_j: f64,
    pub se_nu2: f64,
    pub se_eta: f64,
    /// Largest `Γ` in the batch.
    pub max_gamma_sum: f64,
    /// Weighted mean of `Γ`.
    pub mean_gamma_sum: f64,
    /// Reward-to-go per episode and decision.
    pub q_hat: Vec<Vec<f64>>,
    /// Squared-residual-to-go per episode and decision.
    pub x_hat: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub gamma_sums: Vec<f64>,
    /// Episode `Σ γ^{i−1}(r_i − J)²`.
    pub volatilities: Vec<f64>,
    /// Per-episode terms whose plain mean is `η̂`: `B·w_e·(G_e − β V_e)`.
    pub eta_contributions: Vec<f64>,
    pub grad_j: Vec<f64>,
    pub grad_nu2: Vec<f64>,
}

/// `Σ_{i<n} γ^i`.
pub fn discount_sum(gamma: f64, n: usize) -> f64 {
    if gamma == 1.0 {
        n as f64
    } else {
        (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}

/// Standard error of `Σ w_e f_e`.
///
/// Importance batches (some `is_weight ≠ 1`) are stratified by the default
/// flag, each stratum contributing `Var(π f)/n`; naive batches are plain iid
/// means.
fn standard_error(trs: &[Trajectory], f: &[f64]) -> f64 {
    let stratified = trs.iter().any(|t| t.is_weight != 1.0);
    let mut var = 0.0;
    for group in [false, true] {
        let idx: Vec<usize> = (0..trs.len())
            .filter(|&e| !stratified || trs[e].defaulted == group)
            .collect();
        let n = idx.len();
        if n < 2 {
            if !stratified {
                break;
            }
            continue;
        }
        let terms: Vec<f64> = idx.iter().map(|&e| trs[e].weight * n as f64 * f[e]).collect();
        let m = terms.iter().sum::<f64>() / n as f64;
        let v = terms.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        var += v / n as f64;
        if !stratified {
            break;
        }
    }
    var.sqrt()
}

/// Scalar statistics and per-step `Q̂`, `X̂` of a weighted batch.
pub fn estimate_stats(trs: &[Trajectory], gamma: f64, beta: f64) -> Result<BatchStats> {
    if trs.is_empty() {
        return invalid("empty batch");
    }
    if !(0.0..=1.0).contains(&gamma) || gamma == 0.0 {
        return invalid(format!("discount {gamma} outside (0, 1]"));
    }
    if !(beta >= 0.0) {
        return invalid(format!("risk aversion {beta} must be non-negative"));
    }
    if let Some(t) = trs.iter().find(|t| t.rewards.is_empty() || !t.weight.is_finite()) {
        return invalid(format!("episode with {} rewards and weight {}", t.rewards.len(), t.weight));
    }
    let returns: Vec<f64> = trs
        .iter()
        .map(|t| t.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
        .collect();
    let gamma_sums: Vec<f64> = trs.iter().map(|t| discount_sum(gamma, t.len())).collect();
    let w: Vec<f64> = trs.iter().map(|t| t.weight).collect();
    let wsum = |f: &dyn Fn(usize) -> f64| (0..trs.len()).map(|e| w[e] * f(e)).sum::<f64>();

    let j_hat = wsum(&|e| returns[e]);
    let j_norm = wsum(&|e| returns[e] / gamma_sums[e]);
    let mean_gamma_sum = wsum(&|e| gamma_sums[e]);

    let mut q_hat = Vec::with_capacity(trs.len());
    let mut x_hat = Vec::with_capacity(trs.len());
    let mut volatilities = Vec::with_capacity(trs.len());
    for t in trs {
        let n = t.len();
        let (mut q, mut x) = (vec![0.0; n], vec![0.0; n]);
        let (mut qa, mut xa) = (0.0, 0.0);
        for i in (0..n).rev() {
            let r = t.rewards[i];
            qa = r + gamma * qa;
            xa = (r - j_norm) * (r - j_norm) + gamma * xa;
            q[i] = qa;
            x[i] = xa;
        }
        volatilities.push(xa);
        q_hat.push(q);
        x_hat.push(x);
    }
    let nu2_hat = wsum(&|e| volatilities[e]);
    let sigma2_hat = wsum(&|e| (returns[e] - j_hat) * (returns[e] - j_hat));
    let eta_hat = j_hat - beta * nu2_hat;
    let per_eta: Vec<f64> = (0..trs.len()).map(|e| returns[e] - beta * volatilities[e]).collect();
    let b = trs.len() as f64;
    let eta_contributions = (0..trs.len()).map(|e| b * w[e] * per_eta[e]).collect();
    Ok(BatchStats {
        gamma,
        beta,
        n_episodes: trs.len(),
        j_hat,
        j_norm,
        nu2_hat,
        sigma2_hat,
        eta_hat,
        se_j: standard_error(trs, &returns),
        se_nu2: standard_error(trs, &volatilities),
        se_eta: standard_error(trs, &per_eta),
        max_gamma_sum: gamma_sums.iter().cloned().fold(0.0, f64::max),
        mean_gamma_sum,
        q_hat,
        x_hat,
        returns,
        gamma_sums,
        volatilities,
        eta_contributions,
        grad_j: Vec::new(),
        grad_nu2: Vec::new(),
    })
}

/// State-value baseline subtracted from `Q̂` and `X̂`.
#[derive(Clone, Copy)]
pub enum Baseline<'a> {
    None,
    /// Ridge fit on the policy's baseline features, cross-fitted over two
    /// episode folds so no episode's baseline depends on its own returns.
    Fitted,
    /// Fixed functions of the state, for `(Q̂, X̂)`.
    Fixed(&'a (dyn Fn(&[f64]) -> f64 + Sync), &'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

const RIDGE: f64 = 1e-6;

/// Per-step baseline values `(b_Q, b_X)`.
fn baselines<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    stats: &BatchStats,
    kind: Baseline<'_>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let zeros = || trs.iter().map(|t| vec![0.0; t.len()]).collect::<Vec<_>>();
    match kind {
        Baseline::None => (zeros(), zeros()),
        Baseline::Fixed(fq, fx) => {
            let bq = trs.iter().map(|t| (0..t.len()).map(|i| fq(t.state(i))).collect()).collect();
            let bx = trs.iter().map(|t| (0..t.len()).map(|i| fx(t.state(i))).collect()).collect();
            (bq, bx)
        }
        Baseline::Fitted => {
            let mut feat = Vec::new();
            policy.baseline_features(trs[0].state(0), &mut feat);
            let dim = feat.len();
            let mut fits_q = [RidgeFit::new(dim), RidgeFit::new(dim)];
            let mut fits_x = [RidgeFit::new(dim), RidgeFit::new(dim)];
            for (e, t) in trs.iter().enumerate() {
                for i in 0..t.len() {
                    policy.baseline_features(t.state(i), &mut feat);
                    fits_q[e % 2].add(&feat, stats.q_hat[e][i], t.weight);
                    fits_x[e % 2].add(&feat, stats.x_hat[e][i], t.weight);
                }
            }
            let coef = |f: &RidgeFit| f.solve(RIDGE);
            let cq = [coef(&fits_q[1]), coef(&fits_q[0])];
            let cx = [coef(&fits_x[1]), coef(&fits_x[0])];
            let (mut bq, mut bx) = (zeros(), zeros());
            for (e, t) in trs.iter().enumerate() {
                let f = e % 2;
                for i in 0..t.len() {
                    policy.baseline_features(t.state(i), &mut feat);
                    if let Some(c) = &cq[f] {
                        bq[e][i] = predict(c, &feat);
                    }
                    if let Some(c) = &cx[f] {
                        bx[e][i] = predict(c, &feat);
                    }
                }
            }
            (bq, bx)
        }
    }
}

/// Score-function coefficients of both gradients, one entry per decision in
/// trajectory order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCoefficients {
    pub mean: Vec<f64>,
    pub volatility: Vec<f64>,
    /// `log π(a|s)` per decision when computed alongside the gradients.
    pub log_probs: Vec<f64>,
}

impl GradientCoefficients {
    /// Coefficients of `∇η̂ = ∇Ĵ − β∇ν̂²`.
    pub fn objective(&self, beta: f64) -> Vec<f64> {
        self.mean.iter().zip(&self.volatility).map(|(m, v)| m - beta * v).collect()
    }
}

/// Per-decision weights `c` such that each gradient is `Σ c ∇log π(a|s)`.
///
/// Mean: `w_e γ^i (Q̂ − b_Q)`. Volatility: `w_e [γ^i (X̂ − b_X) − 2R̄(G_e/Γ_e − J)]`
/// with `R̄ = Ĵ − J·E[Γ]`. The second term is the dependence of `ν̂²` on `J`
/// through `∇J = E[(G/Γ − J) Σ ∇log π]`; `R̄` is zero whenever every episode
/// has the same length, and otherwise the score term alone is biased.
pub fn gradient_coefficients<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    stats: &BatchStats,
    baseline: Baseline<'_>,
) -> Result<GradientCoefficients> {
    check_matching(trs, stats)?;
    let (bq, bx) = baselines(policy, trs, stats, baseline);
    let r_bar = stats.j_hat - stats.j_norm * stats.mean_gamma_sum;
    let n: usize = trs.iter().map(|t| t.len()).sum();
    let (mut mean, mut vol) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (e, t) in trs.iter().enumerate() {
        let jump = -2.0 * r_bar * (stats.returns[e] / stats.gamma_sums[e] - stats.j_norm);
        let mut disc = 1.0;
        for i in 0..t.len() {
            mean.push(t.weight * disc * (stats.q_hat[e][i] - bq[e][i]));
            vol.push(t.weight * (disc * (stats.x_hat[e][i] - bx[e][i]) + jump));
            disc *= stats.gamma;
        }
    }
    Ok(GradientCoefficients {
        mean,
        volatility: vol,
        log_probs: Vec::new(),
    })
}

fn check_matching(trs: &[Trajectory], stats: &BatchStats) -> Result<()> {
    if trs.len() != stats.n_episodes
        || trs.iter().zip(&stats.q_hat).any(|(t, q)| t.len() != q.len())
    {
        return invalid("statistics were computed on a different batch");
    }
    Ok(())
}

/// `Σ_k c_k ∇log π(a_k|s_k)` for each coefficient set, as a fixed-order sum.
pub fn score_sums<P: Policy>(policy: &P, trs: &[Trajectory], coeffs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    Ok(score_sums_with_log_probs(policy, trs, coeffs)?.0)
}

/// [`score_sums`] plus `log π(a_k|s_k)` of every decision.
pub fn score_sums_with_log_probs<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    coeffs: &[&[f64]],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let np = policy.n_params();
    let total: usize = trs.iter().map(|t| t.len()).sum();
    if coeffs.iter().any(|c| c.len() != total) {
        return invalid("coefficient count does not match the batch");
    }
    let mut grads = vec![vec![0.0; np]; coeffs.len()];
    let mut g = vec![0.0; np];
    let mut log_probs = Vec::with_capacity(total);
    let mut k = 0;
    for t in trs {
        for i in 0..t.len() {
            log_probs.push(policy.score_vjp(t.state(i), t.action(i), &mut g));
            for (acc, c) in grads.iter_mut().zip(coeffs) {
                let ck = c[k];
                if ck != 0.0 {
                    acc.iter_mut().zip(&g).for_each(|(a, x)| *a += ck * x);
                }
            }
            k += 1;
        }
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(TrvoError::Training("non-finite policy gradient".into()));
    }
    Ok((grads, log_probs))
}

/// Estimate of `∇Ĵ`.
pub fn mean_gradient<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    stats: &BatchStats,
    baseline: Baseline<'_>,
) -> Result<Vec<f64>> {
    let c = gradient_coefficients(policy, trs, stats, baseline)?;
    Ok(score_sums(policy, trs, &[&c.mean])?.remove(0))
}

/// Estimate of `∇ν̂²`.
pub fn volatility_gradient<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    stats: &BatchStats,
    baseline: Baseline<'_>,
) -> Result<Vec<f64>> {
    let c = gradient_coefficients(policy, trs, stats, baseline)?;
    Ok(score_sums(policy, trs, &[&c.volatility])?.remove(0))
}

/// Fill `stats.grad_j` and `stats.grad_nu2` and return the coefficients.
pub fn compute_gradients<P: Policy>(
    policy: &P,
    trs: &[Trajectory],
    stats: &mut BatchStats,
    baseline: Baseline<'_>,
) -> Result<GradientCoefficients> {
    let mut c = gradient_coefficients(policy, trs, stats, baseline)?;
    let (mut g, lp) = score_sums_with_log_probs(policy, trs, &[&c.mean, &c.volatility])?;
    stats.grad_nu2 = g.pop().expect("two gradients");
    stats.grad_j = g.pop().expect("two gradients");
    c.log_probs = lp;
    Ok(c)
}
