//! Training loop, out-of-sample evaluation and artifacts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cvahedge_core::book_env::{BookEnv, HedgingPolicy, Trajectory};
use cvahedge_core::market_sim::{build_batch, SamplingMode};

use crate::error::{invalid, Result, TrvoError};
use crate::policy::{Actor, GaussianMlp, Policy};
use crate::stats::{compute_gradients, estimate_stats, Baseline, BatchStats};
use crate::update::{trust_region_update, TrustRegion, UpdateReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrvoConfig {
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Forced defaults per batch in importance mode.
    pub b0: usize,
    pub mode: SamplingMode,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Initial action std relative to the delta-hedge action size.
    pub init_std: f64,
    /// Iterations during which the input normalizer keeps updating.
    pub normalizer_iterations: usize,
    pub trust_region: TrustRegion,
}

impl Default for TrvoConfig {
    fn default() -> Self {
        TrvoConfig {
            beta: 0.0,
            gamma: 0.95,
            batch_size: 500,
            b0: 0,
            mode: SamplingMode::Naive,
            iterations: 100,
            seed: 0,
            hidden: vec![10, 10],
            init_std: 0.1,
            normalizer_iterations: 10,
            trust_region: TrustRegion::default(),
        }
    }
}

impl TrvoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return invalid("beta must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return invalid("gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if self.mode == SamplingMode::Importance && !(self.b0 > 0 && self.b0 < self.batch_size) {
            return invalid(format!("importance sampling needs 0 < B0 < B, got B0={}", self.b0));
        }
        if !(self.trust_region.kl_limit > 0.0) {
            return invalid("kl_limit must be positive");
        }
        Ok(())
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// In-sample loss `−η̂` at the training discount.
    pub loss: f64,
    pub j_hat: f64,
    pub nu2_hat: f64,
    pub kl: f64,
    pub step_size: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: GaussianMlp,
    pub policy: GaussianMlp,
    pub curve: Vec<CurveRow>,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial policy: zero mean action, std `init_std` relative to the
/// inception delta-hedge sensitivities.
pub fn initial_policy(env: &BookEnv, cfg: &TrvoConfig) -> Result<GaussianMlp> {
    let p = env.params();
    let (_, dphi, dlam) = env.cva_at(0, p.fx.initial, p.intensity.initial)?;
    let positive = |x: f64| if x.abs() > 0.0 { x.abs() } else { 1.0 };
    let mut scale = vec![positive(dlam); env.n_cds()];
    scale.push(positive(dphi));
    GaussianMlp::new(env.state_dim(), &cfg.hidden, scale, cfg.init_std, mix_seed(cfg.seed, 0x1417))
}

/// Sample a batch with the stochastic policy.
pub fn collect(env: &BookEnv, policy: &GaussianMlp, cfg: &TrvoConfig, iteration: usize) -> Result<Vec<Trajectory>> {
    let market_seed = mix_seed(cfg.seed, 2 * iteration as u64 + 1);
    let b0 = if cfg.mode == SamplingMode::Importance { cfg.b0 } else { 0 };
    let batch = build_batch(env.params(), &env.grid, cfg.batch_size, b0, cfg.mode, market_seed)?;
    let actor = Actor {
        policy,
        stochastic: true,
    };
    Ok(env.rollout(&actor, &batch, mix_seed(market_seed, 7))?)
}

/// One iteration: statistics, gradients and a trust-region step.
pub fn train_step(
    policy: &mut GaussianMlp,
    trs: &[Trajectory],
    cfg: &TrvoConfig,
) -> Result<(BatchStats, UpdateReport)> {
    let mut stats = estimate_stats(trs, cfg.gamma, cfg.beta)?;
    let coef = compute_gradients(policy, trs, &mut stats, Baseline::Fitted)?;
    let grad: Vec<f64> = stats
        .grad_j
        .iter()
        .zip(&stats.grad_nu2)
        .map(|(gj, gv)| gj - cfg.beta * gv)
        .collect();
    let report = trust_region_update(
        policy,
        &grad,
        &coef.objective(cfg.beta),
        &coef.log_probs,
        trs,
        &cfg.trust_region,
    )?;
    Ok((stats, report))
}

/// Train from the initial policy; `on_row` sees each learning-curve row.
pub fn train_with(env: &BookEnv, cfg: &TrvoConfig, mut on_row: impl FnMut(&CurveRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy = initial_policy(env, cfg)?;
    let mut initial = None;
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let trs = collect(env, &policy, cfg, it)?;
        if it < cfg.normalizer_iterations {
            for t in &trs {
                policy.observe_states(&t.states, t.state_dim);
            }
        }
        if initial.is_none() {
            initial = Some(policy.clone());
        }
        let (stats, rep) = train_step(&mut policy, &trs, cfg)?;
        let row = CurveRow {
            iteration: it,
            loss: -stats.eta_hat,
            j_hat: stats.j_hat,
            nu2_hat: stats.nu2_hat,
            kl: rep.kl,
            step_size: rep.step_norm,
            accepted: rep.accepted,
        };
        on_row(&row);
        curve.push(row);
    }
    Ok(TrainOutcome {
        initial: initial.unwrap_or_else(|| policy.clone()),
        policy,
        curve,
    })
}

pub fn train(env: &BookEnv, cfg: &TrvoConfig) -> Result<TrainOutcome> {
    train_with(env, cfg, |_| {})
}

/// Out-of-sample statistics at `γ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub b0: usize,
    pub beta: f64,
}

pub fn evaluate_trajectories<P: HedgingPolicy + ?Sized>(
    policy: &P,
    env: &BookEnv,
    cfg: &EvalConfig,
) -> Result<(BatchStats, Vec<Trajectory>)> {
    let b0 = if cfg.mode == SamplingMode::Importance { cfg.b0 } else { 0 };
    let batch = build_batch(env.params(), &env.grid, cfg.n_episodes, b0, cfg.mode, cfg.seed)?;
    let trs = env.rollout(policy, &batch, mix_seed(cfg.seed, 11))?;
    Ok((estimate_stats(&trs, 1.0, cfg.beta)?, trs))
}

pub fn evaluate<P: HedgingPolicy + ?Sized>(policy: &P, env: &BookEnv, cfg: &EvalConfig) -> Result<BatchStats> {
    Ok(evaluate_trajectories(policy, env, cfg)?.0)
}

pub fn write_curve_csv<W: Write>(curve: &[CurveRow], out: &mut W) -> Result<()> {
    writeln!(out, "iteration,neg_eta,j_hat,nu2_hat,kl,step_size,accepted")?;
    for r in curve {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            r.iteration, r.loss, r.j_hat, r.nu2_hat, r.kl, r.step_size, r.accepted as u8
        )?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Saved policy with the hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub policy: GaussianMlp,
}

impl Checkpoint {
    pub fn new(policy: GaussianMlp, config_hash: String) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash,
            policy,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| TrvoError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrvoError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| TrvoError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(TrvoError::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(Checkpoint {
            policy: ck.policy.restore()?,
            ..ck
        })
    }
}
