//! CVA of the FX forward when FX and intensity are independent under ℚ.
//!
//! Conditioning on the default time `s`, the loss is `(1 − rec)` times the
//! positive part of the exposure at `s`, which is a call on φ struck at the
//! forward-parity level. The default time is integrated with the midpoint
//! rule against CIR survival increments.

use super::{norm_cdf, Affine, Bumps};
use crate::config::MarketParams;
use crate::error::{invalid, CoreError, Result};

/// Default-time sub-intervals of `[t, T]`.
pub const CVA_QUADRATURE_NODES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    /// `(1−rec)·N_usd·e^{−r_eur(m−t)}·e^{−r_usd(T−m)}`
    weight: f64,
    growth: f64,
    strike: f64,
    stdev: f64,
    /// `ln(growth/strike) + stdev²/2`
    shift: f64,
}

/// CVA as a function of `(φ, λ)` at a fixed valuation time.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaSlice {
    pub t: f64,
    nodes: Vec<Node>,
    /// Survival curves from `t` to each quadrature boundary.
    curves: Vec<Affine>,
    /// `e^{−B·h}` per curve for the default λ bump `h`.
    bump_factors: Vec<f64>,
}

impl CvaSlice {
    pub fn new(t: f64, params: &MarketParams, n_nodes: usize) -> Result<CvaSlice> {
        if params.correlation.risk_neutral != 0.0 {
            return Err(CoreError::WrongPricer(
                "quadrature requires zero risk-neutral correlation; use the PDE pricer".into(),
            ));
        }
        let f = &params.forward;
        if !(t < f.maturity) {
            return invalid(format!("t={t} not before forward maturity {}", f.maturity));
        }
        if n_nodes == 0 {
            return invalid("need at least one quadrature node");
        }
        let fx = &params.fx.risk_neutral;
        let (r_eur, r_usd) = (params.rates.eur, params.rates.usd);
        let h = (f.maturity - t) / n_nodes as f64;
        let lgd = 1.0 - f.recovery;
        let nodes = (0..n_nodes)
            .map(|j| {
                let m = t + (j as f64 + 0.5) * h;
                let to_mat = f.maturity - m;
                let strike = (-r_eur * to_mat).exp() * f.eur_notional
                    / ((-r_usd * to_mat).exp() * f.usd_notional);
                let growth = (fx.drift * (m - t)).exp();
                let stdev = fx.volatility * (m - t).sqrt();
                Node {
                    weight: lgd * f.usd_notional * (-r_eur * (m - t)).exp() * (-r_usd * to_mat).exp(),
                    growth,
                    strike,
                    stdev,
                    shift: (growth / strike).ln() + 0.5 * stdev * stdev,
                }
            })
            .collect();
        let cir = &params.intensity.risk_neutral;
        let curves: Vec<Affine> = (0..=n_nodes).map(|j| Affine::new(cir, j as f64 * h)).collect();
        let bump = Bumps::default().lam_abs;
        let bump_factors = curves.iter().map(|c| (-c.b * bump).exp()).collect();
        Ok(CvaSlice {
            t,
            nodes,
            curves,
            bump_factors,
        })
    }

    #[inline]
    fn call(n: &Node, phi: f64, ln_phi: f64) -> f64 {
        if n.stdev <= 0.0 {
            return (phi * n.growth - n.strike).max(0.0);
        }
        let d1 = (ln_phi + n.shift) / n.stdev;
        phi * n.growth * norm_cdf(d1) - n.strike * norm_cdf(d1 - n.stdev)
    }

    /// Weighted call values per quadrature node.
    pub(crate) fn calls(&self, phi: f64, out: &mut [f64]) {
        let ln_phi = phi.ln();
        for (o, n) in out.iter_mut().zip(&self.nodes) {
            *o = n.weight * Self::call(n, phi, ln_phi);
        }
    }

    /// Default probabilities per quadrature interval.
    pub(crate) fn default_increments(&self, lam: f64, out: &mut [f64]) {
        let mut prev = self.curves[0].survival(lam);
        for (j, o) in out.iter_mut().enumerate() {
            let next = self.curves[j + 1].survival(lam);
            *o = prev - next;
            prev = next;
        }
    }

    pub(crate) fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, phi: f64, lam: f64) -> f64 {
        let n = self.nodes.len();
        let mut c = vec![0.0; n];
        let mut q = vec![0.0; n];
        self.calls(phi, &mut c);
        self.default_increments(lam, &mut q);
        -c.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Value with `(∂φ, ∂λ)`: the φ-delta is the exact Black delta, the
    /// λ-delta a central difference with bump `bumps.lam_abs` (forward when
    /// the down-bump would go negative). Bumped survival terms are rescaled
    /// rather than recomputed.
    pub fn value_and_sensitivities(&self, phi: f64, lam: f64, bumps: Bumps) -> (f64, f64, f64) {
        let hl = bumps.lam_abs;
        let forward_lam = lam - hl < 0.0;
        let cached = hl == Bumps::default().lam_abs;
        let ln_phi = phi.ln();
        let mut prev = self.curves[0].survival(lam);
        let (mut prev_u, mut prev_d) = (prev, prev);
        let (mut v, mut v_u, mut v_d, mut delta) = (0.0, 0.0, 0.0, 0.0);
        for (j, n) in self.nodes.iter().enumerate() {
            let c = &self.curves[j + 1];
            let s = c.survival(lam);
            let fac = if cached { self.bump_factors[j + 1] } else { (-c.b * hl).exp() };
            let s_u = s * fac;
            let s_d = if forward_lam { s } else { s / fac };
            let q = prev - s;
            let (call, call_delta) = if n.stdev <= 0.0 {
                let intrinsic = phi * n.growth - n.strike;
                (intrinsic.max(0.0), if intrinsic > 0.0 { n.growth } else { 0.0 })
            } else {
                let d1 = (ln_phi + n.shift) / n.stdev;
                let nd1 = norm_cdf(d1);
                (phi * n.growth * nd1 - n.strike * norm_cdf(d1 - n.stdev), n.growth * nd1)
            };
            v += n.weight * call * q;
            v_u += n.weight * call * (prev_u - s_u);
            v_d += n.weight * call * (prev_d - s_d);
            delta += n.weight * call_delta * q;
            prev = s;
            prev_u = s_u;
            prev_d = s_d;
        }
        let d_lam = if forward_lam { -(v_u - v) / hl } else { -(v_u - v_d) / (2.0 * hl) };
        (-v, -delta, d_lam)
    }
}

/// CVA (non-positive) at time `t` for FX rate `phi` and intensity `lam`.
pub fn cva_quadrature(phi: f64, lam: f64, t: f64, params: &MarketParams) -> Result<f64> {
    if lam < 0.0 || !(phi > 0.0) {
        return invalid(format!("bad state φ={phi}, λ={lam}"));
    }
    Ok(CvaSlice::new(t, params, CVA_QUADRATURE_NODES)?.value(phi, lam))
}
