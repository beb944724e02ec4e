//! Analytic reference strategies.
//!
//! All benchmarks are deterministic functions of the observation. They
//! return target sensitivities like any other policy, so they run through
//! the same environment code path as trained agents.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::book_env::{ActionVector, BookEnv, HedgingPolicy, StateVector};
use crate::config::MarketParams;
use crate::error::{CoreError, Result};
use crate::pricing::exposure_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    DeltaHedge,
    JumpHedge,
    TwoCdsBaseline,
    ZeroAction,
}

impl BenchmarkKind {
    pub fn label(&self) -> &'static str {
        match self {
            BenchmarkKind::DeltaHedge => "delta-hedge",
            BenchmarkKind::JumpHedge => "jump-hedge",
            BenchmarkKind::TwoCdsBaseline => "baseline",
            BenchmarkKind::ZeroAction => "zero-action",
        }
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta-hedge" | "delta" => Ok(BenchmarkKind::DeltaHedge),
            "jump-hedge" | "jump" => Ok(BenchmarkKind::JumpHedge),
            "baseline" | "two-cds-baseline" => Ok(BenchmarkKind::TwoCdsBaseline),
            "zero-action" | "zero" => Ok(BenchmarkKind::ZeroAction),
            other => Err(CoreError::InvalidArgument(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// Market data a benchmark needs beyond the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeContext {
    pub params: MarketParams,
    pub cds_maturities: Vec<f64>,
}

impl HedgeContext {
    pub fn from_env(env: &BookEnv) -> HedgeContext {
        HedgeContext {
            params: env.params().clone(),
            cds_maturities: env.cds.iter().map(|c| c.maturity).collect(),
        }
    }

    fn longest(&self) -> usize {
        let mut best = 0;
        for (m, &t) in self.cds_maturities.iter().enumerate() {
            if t > self.cds_maturities[best] {
                best = m;
            }
        }
        best
    }

    fn lgd(&self) -> f64 {
        1.0 - self.params.forward.recovery
    }

    /// Exposure of the forward at the state's time and FX rate.
    pub fn exposure(&self, s: &StateVector) -> f64 {
        let t = self.params.forward.maturity - s.time_to_maturity_years();
        exposure_unchecked(&self.params, s.0[StateVector::PHI], t)
    }

    /// CVA value change if default happened now.
    pub fn cva_default_jump(&self, s: &StateVector) -> f64 {
        -self.lgd() * self.exposure(s).max(0.0) - s.0[StateVector::CVA]
    }

    /// Value change per unit long-risk notional of CDS `m` at default.
    pub fn cds_default_jump(&self, s: &StateVector, m: usize) -> f64 {
        -self.lgd() - s.cds_value(m)
    }
}

fn check_dims(s: &StateVector, ctx: &HedgeContext) -> Result<()> {
    if s.n_cds() != ctx.cds_maturities.len() || ctx.cds_maturities.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "state carries {} CDS, context {}",
            s.n_cds(),
            ctx.cds_maturities.len()
        )));
    }
    Ok(())
}

/// Cancel the CVA's λ- and φ-sensitivities, using only the longest CDS.
pub fn delta_hedge_action(s: &StateVector, ctx: &HedgeContext) -> Result<ActionVector> {
    check_dims(s, ctx)?;
    let m = ctx.longest();
    if s.cds_dlam(m).abs() < 1e-14 {
        return Err(CoreError::DegenerateHedge("hedge CDS has no λ-sensitivity".into()));
    }
    let mut a = ActionVector::zeros(s.n_cds());
    a.0[m] = -s.0[StateVector::CVA_DLAM];
    a.0[s.n_cds()] = -s.0[StateVector::CVA_DPHI];
    Ok(a)
}

/// Choose the longest CDS's notional so an immediate default is PnL-neutral.
pub fn jump_hedge_action(s: &StateVector, ctx: &HedgeContext) -> Result<ActionVector> {
    check_dims(s, ctx)?;
    let m = ctx.longest();
    let jump = ctx.cds_default_jump(s, m);
    if jump.abs() < 1e-12 {
        return Err(CoreError::DegenerateHedge("CDS does not jump at default".into()));
    }
    let n = -ctx.cva_default_jump(s) / jump;
    let mut a = ActionVector::zeros(s.n_cds());
    a.0[m] = n * s.cds_dlam(m);
    a.0[s.n_cds()] = -s.0[StateVector::CVA_DPHI];
    Ok(a)
}

/// Two CDS notionals cancelling both the λ-sensitivity and the default jump.
pub fn two_cds_baseline_action(s: &StateVector, ctx: &HedgeContext) -> Result<ActionVector> {
    check_dims(s, ctx)?;
    if s.n_cds() != 2 {
        return Err(CoreError::InvalidArgument("baseline needs exactly two CDS".into()));
    }
    let (d1, d2) = (s.cds_dlam(0), s.cds_dlam(1));
    let (j1, j2) = (ctx.cds_default_jump(s, 0), ctx.cds_default_jump(s, 1));
    let det = d1 * j2 - d2 * j1;
    if det.abs() <= 1e-12 * (d1 * j2).abs().max((d2 * j1).abs()) {
        return Err(CoreError::SingularHedge("CDS sensitivities are collinear".into()));
    }
    let r1 = -s.0[StateVector::CVA_DLAM];
    let r2 = -ctx.cva_default_jump(s);
    let n1 = (r1 * j2 - d2 * r2) / det;
    let n2 = (d1 * r2 - j1 * r1) / det;
    Ok(ActionVector(vec![n1 * d1, n2 * d2, -s.0[StateVector::CVA_DPHI]]))
}

/// A benchmark strategy usable as a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub kind: BenchmarkKind,
    pub ctx: HedgeContext,
}

impl Benchmark {
    pub fn new(kind: BenchmarkKind, env: &BookEnv) -> Result<Benchmark> {
        if kind == BenchmarkKind::TwoCdsBaseline {
            let m = &env.scenario.hedges.cds_maturities;
            if m.len() != 2 || m[0] == m[1] {
                return Err(CoreError::SingularHedge(
                    "baseline needs two CDS with distinct maturities".into(),
                ));
            }
        }
        Ok(Benchmark {
            kind,
            ctx: HedgeContext::from_env(env),
        })
    }

    pub fn act(&self, s: &StateVector) -> Result<ActionVector> {
        match self.kind {
            BenchmarkKind::DeltaHedge => delta_hedge_action(s, &self.ctx),
            BenchmarkKind::JumpHedge => jump_hedge_action(s, &self.ctx),
            BenchmarkKind::TwoCdsBaseline => two_cds_baseline_action(s, &self.ctx),
            BenchmarkKind::ZeroAction => Ok(ActionVector::zeros(s.n_cds())),
        }
    }
}

impl HedgingPolicy for Benchmark {
    fn action(&self, state: &StateVector, _rng: &mut ChaCha8Rng) -> Result<ActionVector> {
        self.act(state)
    }
}
