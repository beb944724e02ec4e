//! Pricing of the book's components under the risk-neutral measure.
//!
//! * [`fx_forward_exposure`]: mark-to-market of the FX forward.
//! * [`survival_probability`]: CIR affine bond formula.
//! * [`cds_price`]: CDS upfront with bid/ask from shifted intensities.
//! * [`cva_quadrature`]: CVA by default-time quadrature of Black calls,
//!   valid when FX and intensity are independent under ℚ.
//! * [`pde::CvaPde`]: CVA by ADI finite differences for any correlation.

pub mod cds;
pub mod cva;
pub mod pde;

pub use cds::{cds_price, CdsSlice, CdsSpec, PriceQuote};
pub use cva::{cva_quadrature, CvaSlice, CVA_QUADRATURE_NODES};

use crate::config::{Cir, MarketParams};
use crate::error::{invalid, Result};

/// Coefficients of the CIR zero-coupon survival curve over a horizon `h`:
/// `S = exp(log_a − b·λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub log_a: f64,
    pub b: f64,
}

impl Affine {
    pub fn new(cir: &Cir, h: f64) -> Affine {
        if h <= 0.0 {
            return Affine { log_a: 0.0, b: 0.0 };
        }
        let k = cir.mean_reversion;
        let theta = cir.long_run_mean;
        let s2 = cir.volatility * cir.volatility;
        if s2 < 1e-14 {
            // Deterministic intensity: λ(u) = θ + (λ−θ)e^{−ku}.
            if k < 1e-12 {
                return Affine { log_a: 0.0, b: h };
            }
            let b = -(-k * h).exp_m1() / k;
            return Affine {
                log_a: -theta * (h - b),
                b,
            };
        }
        let g = (k * k + 2.0 * s2).sqrt();
        let em1 = (g * h).exp_m1();
        let den = 2.0 * g + (k + g) * em1;
        let b = 2.0 * em1 / den;
        let log_a = 2.0 * k * theta / s2 * ((2.0 * g).ln() + 0.5 * (k + g) * h - den.ln());
        Affine { log_a, b }
    }

    #[inline]
    pub fn survival(&self, lam: f64) -> f64 {
        (self.log_a - self.b * lam).exp()
    }
}

/// ℚ-survival probability from `t` to `maturity` given intensity `lam` at `t`.
pub fn survival_probability(lam: f64, t: f64, maturity: f64, cir: &Cir) -> Result<f64> {
    if maturity < t {
        return invalid(format!("maturity {maturity} before valuation time {t}"));
    }
    if lam < 0.0 {
        return invalid(format!("negative intensity {lam}"));
    }
    Ok(Affine::new(cir, maturity - t).survival(lam))
}

/// Value in EUR of receiving USD and paying EUR at the forward's maturity.
pub fn fx_forward_exposure(params: &MarketParams, phi: f64, t: f64) -> Result<f64> {
    let f = &params.forward;
    if t > f.maturity {
        return invalid(format!("t={t} after forward maturity {}", f.maturity));
    }
    Ok(exposure_unchecked(params, phi, t))
}

#[inline]
pub(crate) fn exposure_unchecked(params: &MarketParams, phi: f64, t: f64) -> f64 {
    let f = &params.forward;
    let h = f.maturity - t;
    phi * (-params.rates.usd * h).exp() * f.usd_notional - (-params.rates.eur * h).exp() * f.eur_notional
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Undiscounted Black call on a lognormal forward with total stdev `v`.
pub fn black_call(forward: f64, strike: f64, v: f64) -> f64 {
    if v <= 0.0 || strike <= 0.0 {
        return (forward - strike).max(0.0);
    }
    let d1 = ((forward / strike).ln() + 0.5 * v * v) / v;
    forward * norm_cdf(d1) - strike * norm_cdf(d1 - v)
}

/// Finite-difference bump sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bumps {
    /// Relative bump of φ.
    pub phi_rel: f64,
    /// Absolute bump of λ.
    pub lam_abs: f64,
}

impl Default for Bumps {
    fn default() -> Self {
        Bumps {
            phi_rel: 1e-4,
            lam_abs: 1e-4,
        }
    }
}

/// Central finite-difference `(∂/∂φ, ∂/∂λ)` of `f(φ, λ)`; falls back to a
/// forward difference in λ when the down-bump would make λ negative.
pub fn sensitivities<F>(f: F, phi: f64, lam: f64, bumps: Bumps) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if !(bumps.phi_rel > 0.0 && bumps.lam_abs > 0.0) {
        return invalid("bumps must be positive");
    }
    let hp = phi * bumps.phi_rel;
    let d_phi = (f(phi + hp, lam)? - f(phi - hp, lam)?) / (2.0 * hp);
    let hl = bumps.lam_abs;
    let d_lam = if lam - hl < 0.0 {
        (f(phi, lam + hl)? - f(phi, lam)?) / hl
    } else {
        (f(phi, lam + hl)? - f(phi, lam - hl)?) / (2.0 * hl)
    };
    Ok((d_phi, d_lam))
}
