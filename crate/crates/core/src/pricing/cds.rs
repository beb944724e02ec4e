//! CDS prices under CIR intensity.
//!
//! A positive notional is long the credit risk: it receives the running
//! coupon and pays `1 − rec` at default. The price is the dirty upfront
//! `premium − protection`, discounted at the collateral rate. Protection is
//! integrated on a monthly sub-grid anchored at maturity, so quarterly
//! payment dates are sub-grid nodes.

use serde::{Deserialize, Serialize};

use super::Affine;
use crate::config::MarketParams;
use crate::error::{invalid, Result};

const PAYMENT_INTERVAL: f64 = 0.25;
const SUBSTEPS_PER_PAYMENT: usize = 3;

/// Mid, bid and ask of an instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    pub mid: f64,
    pub bid: f64,
    pub ask: f64,
    pub semi_spread: f64,
}

impl PriceQuote {
    /// Quote centred on `mid` with half-width `semi_spread`.
    pub fn centred(mid: f64, semi_spread: f64) -> PriceQuote {
        PriceQuote {
            mid,
            bid: mid - semi_spread,
            ask: mid + semi_spread,
            semi_spread,
        }
    }
}

/// A CDS contract with quarterly coupons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdsSpec {
    pub maturity: f64,
    pub coupon: f64,
    /// Payment dates in (0, maturity], ascending.
    pub schedule: Vec<f64>,
    pub recovery: f64,
}

impl CdsSpec {
    pub fn new(maturity: f64, coupon: f64, recovery: f64) -> Result<CdsSpec> {
        if !(maturity > 0.0) || !(coupon >= 0.0) {
            return invalid(format!("bad CDS terms: maturity {maturity}, coupon {coupon}"));
        }
        let n = (maturity / PAYMENT_INTERVAL + 1e-9).ceil() as usize;
        let mut schedule: Vec<f64> = (0..n)
            .map(|j| maturity - j as f64 * PAYMENT_INTERVAL)
            .filter(|&p| p > 1e-12)
            .collect();
        schedule.reverse();
        Ok(CdsSpec {
            maturity,
            coupon,
            schedule,
            recovery,
        })
    }

    /// Contract struck at the par spread for the market's initial intensity.
    pub fn at_par(maturity: f64, params: &MarketParams) -> Result<CdsSpec> {
        let mut spec = CdsSpec::new(maturity, 0.0, params.forward.recovery)?;
        let slice = CdsSlice::new(&spec, 0.0, params)?;
        let lam = params.intensity.initial;
        spec.coupon = slice.protection(lam) / slice.annuity(lam);
        Ok(spec)
    }

    /// Coupon cash per unit notional for payment dates in `(t0, t1]` that fall
    /// strictly before `tau`.
    pub fn coupons_between(&self, t0: f64, t1: f64, tau: f64) -> f64 {
        let k0 = self.schedule.partition_point(|&p| p <= t0);
        let k1 = self.schedule.partition_point(|&p| p <= t1);
        let n = self.schedule[k0..k1].iter().filter(|&&p| p < tau).count();
        self.coupon * PAYMENT_INTERVAL * n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    curve: Affine,
    premium: f64,
    protection: f64,
    /// `e^{−B·γ_λ}` and `e^{−B·h}` for the bid/ask shift and default bump.
    shift_factor: f64,
    bump_factor: f64,
}

/// A CDS priced at a fixed valuation time, as a function of λ only.
///
/// The price is `Σ_n c_n·A_n·e^{−B_n λ}`; bumps in λ are a rescaling of each
/// term, which keeps finite differences cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct CdsSlice {
    pub t: f64,
    coupon: f64,
    shift: f64,
    nodes: Vec<Node>,
}

impl CdsSlice {
    pub fn new(spec: &CdsSpec, t: f64, params: &MarketParams) -> Result<CdsSlice> {
        if t >= spec.maturity {
            return invalid(format!("CDS maturing at {} has expired at t={t}", spec.maturity));
        }
        let cir = &params.intensity.risk_neutral;
        let r = params.rates.collateral;
        let lgd = 1.0 - spec.recovery;
        let step = PAYMENT_INTERVAL / SUBSTEPS_PER_PAYMENT as f64;

        // sub-grid u_0 = t < u_1 < ... < u_K = maturity
        let k_max = ((spec.maturity - t) / step + 1e-9).floor() as usize;
        let mut grid = vec![t];
        let mut idx = vec![usize::MAX];
        for k in (0..=k_max).rev() {
            let u = spec.maturity - k as f64 * step;
            if u > t + 1e-12 {
                grid.push(u);
                idx.push(k);
            }
        }
        let disc = |u: f64| (-r * (u - t)).exp();
        let mut nodes: Vec<Node> = grid
            .iter()
            .zip(&idx)
            .map(|(&u, &k)| {
                let paid = k != usize::MAX && k % SUBSTEPS_PER_PAYMENT == 0;
                let curve = Affine::new(cir, u - t);
                Node {
                    curve,
                    premium: if paid { PAYMENT_INTERVAL * disc(u) } else { 0.0 },
                    protection: 0.0,
                    shift_factor: (-curve.b * params.intensity.bid_ask_shift).exp(),
                    bump_factor: (-curve.b * super::Bumps::default().lam_abs).exp(),
                }
            })
            .collect();
        for k in 1..grid.len() {
            let d = lgd * disc(0.5 * (grid[k - 1] + grid[k]));
            nodes[k - 1].protection += d;
            nodes[k].protection -= d;
        }
        Ok(CdsSlice {
            t,
            coupon: spec.coupon,
            shift: params.intensity.bid_ask_shift,
            nodes,
        })
    }

    /// Risky annuity `Σ accrual·D·S`.
    pub fn annuity(&self, lam: f64) -> f64 {
        self.nodes.iter().map(|n| n.premium * n.curve.survival(lam)).sum()
    }

    /// Protection leg value (positive).
    pub fn protection(&self, lam: f64) -> f64 {
        self.nodes.iter().map(|n| n.protection * n.curve.survival(lam)).sum()
    }

    pub fn mid(&self, lam: f64) -> f64 {
        self.nodes
            .iter()
            .map(|n| (self.coupon * n.premium - n.protection) * n.curve.survival(lam))
            .sum()
    }

    /// Quote at `lam` plus the central λ-sensitivity with bump `h`.
    pub fn quote_and_delta(&self, lam: f64, h: f64) -> (PriceQuote, f64) {
        let cached = h == super::Bumps::default().lam_abs;
        let (mut mid, mut up, mut down, mut bid, mut ask) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for n in &self.nodes {
            let v = (self.coupon * n.premium - n.protection) * n.curve.survival(lam);
            let fb = if cached { n.bump_factor } else { (-n.curve.b * h).exp() };
            mid += v;
            up += v * fb;
            down += v / fb;
            bid += v * n.shift_factor;
            ask += v / n.shift_factor;
        }
        let delta = if lam - h < 0.0 {
            (up - mid) / h
        } else {
            (up - down) / (2.0 * h)
        };
        (PriceQuote::centred(mid, 0.5 * (ask - bid)), delta)
    }
}

/// Quote of a CDS at time `t` given intensity `lam`.
///
/// The mid is the model price at `lam`; the semi-spread is half the gap
/// between prices re-computed at `lam ∓ γ_λ`.
pub fn cds_price(lam: f64, t: f64, spec: &CdsSpec, params: &MarketParams) -> Result<PriceQuote> {
    if lam < 0.0 {
        return invalid(format!("negative intensity {lam}"));
    }
    let s = CdsSlice::new(spec, t, params)?;
    let g = params.intensity.bid_ask_shift;
    let mid = s.mid(lam);
    let semi = 0.5 * (s.mid(lam - g) - s.mid(lam + g));
    Ok(PriceQuote::centred(mid, semi))
}
