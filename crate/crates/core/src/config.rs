//! Market and scenario parameters, read from and written to TOML.
//!
//! Sections group forward terms, rates, the FX model, the intensity model
//! and correlations.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Terms of the EUR/USD forward whose counterparty risk is hedged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardTerms {
    /// Time to maturity of the FX forward, in years.
    pub maturity: f64,
    /// USD notional received at maturity.
    pub usd_notional: f64,
    /// EUR notional paid at maturity.
    pub eur_notional: f64,
    /// Recovery fraction of the CVA and of the CDS.
    pub recovery: f64,
}

/// Flat, deterministic interest rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub eur: f64,
    pub usd: f64,
    pub collateral: f64,
}

/// Drift and volatility of a geometric Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gbm {
    pub drift: f64,
    pub volatility: f64,
}

/// FX rate dynamics (EUR per USD) under both measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxModel {
    pub initial: f64,
    pub real_world: Gbm,
    pub risk_neutral: Gbm,
    /// Cost per unit of USD converted.
    pub transaction_cost: f64,
}

/// CIR parameters `dλ = k(θ − λ)dt + σ√λ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cir {
    pub mean_reversion: f64,
    pub long_run_mean: f64,
    pub volatility: f64,
}

/// Default intensity dynamics under both measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityModel {
    pub initial: f64,
    pub real_world: Cir,
    pub risk_neutral: Cir,
    /// Intensity shift used to generate CDS bid and ask prices.
    pub bid_ask_shift: f64,
    /// Lower bound applied to the simulated intensity.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1e-12
}

/// Correlation of the FX and intensity Brownian drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correlations {
    pub real_world: f64,
    pub risk_neutral: f64,
}

/// Multiplier turning the risk-neutral intensity into the real-world hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensityMultiplier {
    Constant(f64),
    /// Value `values[k]` applies on `[breakpoints[k-1], breakpoints[k])`;
    /// `values` has one more entry than `breakpoints`.
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl IntensityMultiplier {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            IntensityMultiplier::Constant(m) => *m,
            IntensityMultiplier::Piecewise { breakpoints, values } => {
                let k = breakpoints.partition_point(|&b| b <= t);
                values[k]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            IntensityMultiplier::Constant(m) if *m >= 0.0 && m.is_finite() => Ok(()),
            IntensityMultiplier::Constant(m) => cfg_err(format!("negative multiplier {m}")),
            IntensityMultiplier::Piecewise { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return cfg_err("piecewise multiplier needs one more value than breakpoints");
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return cfg_err("multiplier breakpoints must increase");
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return cfg_err("negative multiplier value");
                }
                Ok(())
            }
        }
    }
}

/// Everything the simulator and the pricers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Real-world hazard multiplier m̄ applied to the intensity.
    pub default_multiplier: IntensityMultiplier,
    /// Quadratic trading-impact coefficient; zero keeps costs linear.
    #[serde(default)]
    pub impact: f64,
    pub forward: ForwardTerms,
    pub rates: Rates,
    pub fx: FxModel,
    pub intensity: IntensityModel,
    pub correlation: Correlations,
}

/// Trading calendar of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub trading_days: usize,
    pub steps_per_day: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            trading_days: 90,
            steps_per_day: 5,
        }
    }
}

/// Hedging instruments available to the book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSet {
    /// Maturities (years) of the CDS contracts, each struck at par at inception.
    pub cds_maturities: Vec<f64>,
}

/// A market plus the hedge set and calendar of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub calendar: GridSpec,
    pub hedges: HedgeSet,
    pub market: MarketParams,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(msg.into()))
}

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        cfg_err(what.to_string())
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let f = &self.forward;
        check(f.maturity > 0.0, "forward maturity must be positive")?;
        check(f.usd_notional > 0.0 && f.eur_notional > 0.0, "notionals must be positive")?;
        check((0.0..=1.0).contains(&f.recovery), "recovery must lie in [0, 1]")?;
        check(self.fx.initial > 0.0, "initial FX rate must be positive")?;
        check(
            self.fx.real_world.volatility >= 0.0 && self.fx.risk_neutral.volatility >= 0.0,
            "FX volatilities must be non-negative",
        )?;
        check(self.fx.transaction_cost >= 0.0, "FX cost must be non-negative")?;
        let i = &self.intensity;
        check(i.initial >= 0.0, "initial intensity must be non-negative")?;
        for c in [&i.real_world, &i.risk_neutral] {
            check(c.mean_reversion >= 0.0, "mean reversion must be non-negative")?;
            check(c.long_run_mean >= 0.0, "long-run intensity must be non-negative")?;
            check(c.volatility >= 0.0, "intensity volatility must be non-negative")?;
        }
        check(i.bid_ask_shift >= 0.0, "bid/ask shift must be non-negative")?;
        check(i.floor > 0.0, "intensity floor must be positive")?;
        for r in [self.correlation.real_world, self.correlation.risk_neutral] {
            check((-1.0..=1.0).contains(&r), "correlations must lie in [-1, 1]")?;
        }
        check(self.impact >= 0.0, "impact must be non-negative")?;
        self.default_multiplier.validate()
    }

    /// Same market with every trading cost set to zero.
    pub fn costless(&self) -> MarketParams {
        let mut p = self.clone();
        p.fx.transaction_cost = 0.0;
        p.intensity.bid_ask_shift = 0.0;
        p.impact = 0.0;
        p
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        check(self.calendar.trading_days >= 1, "need at least one trading day")?;
        check(self.calendar.steps_per_day >= 1, "need at least one step per day")?;
        check(!self.hedges.cds_maturities.is_empty(), "need at least one CDS")?;
        check(
            self.hedges.cds_maturities.iter().all(|m| *m > 0.0),
            "CDS maturities must be positive",
        )
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn costless(&self) -> Scenario {
        Scenario {
            market: self.market.costless(),
            ..self.clone()
        }
    }
}
