//! Risk-factor simulation under the real-world measure.
//!
//! FX follows a GBM stepped exactly in logs, the default intensity a CIR
//! process stepped with full-truncation Euler. The cumulative hazard is the
//! trapezoidal integral of `m̄(t)·λ`. Default times are drawn either naively
//! or by the two-population importance-sampling scheme that forces a fixed
//! number of defaults per batch.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, MarketParams};
use crate::error::{invalid, CoreError, Result};

const HOURS_PER_YEAR: f64 = 24.0 * 365.0;
const INTRADAY_HOURS: u64 = 2;
const WEEKEND_HOURS: u64 = 48;
const DAYS_PER_WEEK: usize = 5;

/// Sentinel default time for paths that survive the horizon.
pub const NO_DEFAULT: f64 = f64::INFINITY;

/// Decision times of an episode, in year fractions from inception.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    pub n_days: usize,
    pub steps_per_day: usize,
}

impl TimeGrid {
    /// Trading calendar with `steps_per_day` decisions per day, 2h apart.
    ///
    /// The last decision of a day is followed by an overnight gap reaching the
    /// next day's open, 24h after the current open. Every fifth trading day
    /// adds a 48h weekend. The final node sits 2h after the last decision.
    pub fn build(n_days: usize, steps_per_day: usize) -> Result<TimeGrid> {
        if n_days == 0 || steps_per_day == 0 {
            return invalid("grid needs at least one day and one step per day");
        }
        let day_hours = 24u64.max(INTRADAY_HOURS * steps_per_day as u64);
        let mut hours = Vec::with_capacity(n_days * steps_per_day + 1);
        let mut open = 0u64;
        for day in 0..n_days {
            for j in 0..steps_per_day as u64 {
                hours.push(open + INTRADAY_HOURS * j);
            }
            open += day_hours;
            if (day + 1) % DAYS_PER_WEEK == 0 {
                open += WEEKEND_HOURS;
            }
        }
        let last = *hours.last().expect("non-empty grid");
        hours.push(last + INTRADAY_HOURS);
        Ok(TimeGrid {
            times: hours.iter().map(|&h| h as f64 / HOURS_PER_YEAR).collect(),
            n_days,
            steps_per_day,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<TimeGrid> {
        TimeGrid::build(spec.trading_days, spec.steps_per_day)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps N (nodes are t₀..t_N).
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }
}

/// Build a trading calendar; see [`TimeGrid::build`].
pub fn build_grid(n_days: usize, steps_per_day: usize) -> Result<TimeGrid> {
    TimeGrid::build(n_days, steps_per_day)
}

/// Simulated FX, intensity and cumulative real-world hazard along a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath {
    pub phi: Vec<f64>,
    pub lam: Vec<f64>,
    pub hazard: Vec<f64>,
}

/// One episode of market randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePath {
    pub grid: Arc<TimeGrid>,
    pub phi: Vec<f64>,
    pub lam: Vec<f64>,
    pub hazard: Vec<f64>,
    /// Default time, or [`NO_DEFAULT`].
    pub tau: f64,
    /// Probability mass of the population the path was drawn from.
    pub is_weight: f64,
    pub defaulted: bool,
}

impl EpisodePath {
    /// Survival probability to the horizon under the real-world hazard.
    pub fn survival_to_horizon(&self) -> f64 {
        (-self.hazard.last().copied().unwrap_or(0.0)).exp()
    }
}

/// How default times are drawn for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Naive,
    #[serde(alias = "is")]
    Importance,
}

impl std::str::FromStr for SamplingMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SamplingMode::Naive),
            "is" | "importance" => Ok(SamplingMode::Importance),
            other => invalid(format!("unknown sampling mode '{other}'")),
        }
    }
}

/// A batch of episodes together with its sampling design.
#[derive(Debug, Clone)]
pub struct Batch {
    pub paths: Vec<EpisodePath>,
    pub mode: SamplingMode,
    pub n_defaults_forced: usize,
}

impl Batch {
    /// Weight of each path inside the two-term split estimator, so that
    /// `Σ_e w_e f_e` estimates `E[f]`.
    pub fn estimator_weights(&self) -> Vec<f64> {
        estimator_weights(
            self.mode,
            self.n_defaults_forced,
            self.paths.iter().map(|p| (p.defaulted, p.is_weight)),
        )
    }
}

/// Split-estimator weights for paths given as `(defaulted, is_weight)`.
///
/// Naive batches weight every path `1/B`. Importance batches weight a
/// survivor by `p/(B−B₀)` and a defaulter by `(1−p)/B₀` where the path's
/// `is_weight` already holds `p` or `1−p`.
pub fn estimator_weights(
    mode: SamplingMode,
    b0: usize,
    paths: impl ExactSizeIterator<Item = (bool, f64)>,
) -> Vec<f64> {
    let b = paths.len();
    match mode {
        SamplingMode::Naive => paths.map(|_| 1.0 / b as f64).collect(),
        SamplingMode::Importance => {
            let survivors = b - b0;
            paths
                .map(|(d, w)| {
                    if d {
                        w / b0 as f64
                    } else {
                        w / survivors as f64
                    }
                })
                .collect()
        }
    }
}

fn path_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

fn simulate_one(params: &MarketParams, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> FactorPath {
    let n = grid.n_steps();
    let fx = &params.fx.real_world;
    let cir = &params.intensity.real_world;
    let rho = params.correlation.real_world;
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
    let floor = params.intensity.floor;
    let mult = &params.default_multiplier;
    let t = grid.times();

    let mut phi = Vec::with_capacity(n + 1);
    let mut lam = Vec::with_capacity(n + 1);
    let mut hazard = Vec::with_capacity(n + 1);
    phi.push(params.fx.initial);
    lam.push(params.intensity.initial.max(floor));
    hazard.push(0.0);
    for i in 0..n {
        let dt = t[i + 1] - t[i];
        let z1: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        let z2 = rho * z1 + rho_perp * zp;
        let sq = dt.sqrt();
        let next_phi = phi[i]
            * ((fx.drift - 0.5 * fx.volatility * fx.volatility) * dt + fx.volatility * sq * z1).exp();
        let lp = lam[i].max(0.0);
        let proposal = lam[i]
            + cir.mean_reversion * (cir.long_run_mean - lp) * dt
            + cir.volatility * (lp * dt).sqrt() * z2;
        let next_lam = proposal.max(floor);
        let h = hazard[i] + 0.5 * (mult.at(t[i]) * lam[i] + mult.at(t[i + 1]) * next_lam) * dt;
        phi.push(next_phi);
        lam.push(next_lam);
        hazard.push(h);
    }
    FactorPath { phi, lam, hazard }
}

/// Simulate `n_paths` factor paths; path `e` uses RNG stream `e` of `seed`.
pub fn simulate_factors(
    params: &MarketParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<FactorPath>> {
    params.validate()?;
    if n_paths == 0 {
        return invalid("need at least one path");
    }
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|e| simulate_one(params, grid, &mut path_rng(seed, e)))
        .collect())
}

/// Time at which the piecewise-linear hazard first reaches `target`.
fn invert_hazard(hazard: &[f64], times: &[f64], target: f64) -> f64 {
    let k = hazard.partition_point(|&h| h < target);
    if k == 0 {
        return times[0];
    }
    if k >= hazard.len() {
        return NO_DEFAULT;
    }
    let (h0, h1) = (hazard[k - 1], hazard[k]);
    let w = if h1 > h0 { (target - h0) / (h1 - h0) } else { 1.0 };
    times[k - 1] + w * (times[k] - times[k - 1])
}

/// Unconditional default time `Λ̄⁻¹(−ln u)`, or [`NO_DEFAULT`] when the
/// exponential threshold exceeds the horizon hazard.
pub fn sample_default_naive(hazard: &[f64], times: &[f64], u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return invalid(format!("uniform draw {u} outside (0,1)"));
    }
    let target = -u.ln();
    if target > *hazard.last().unwrap_or(&0.0) {
        return Ok(NO_DEFAULT);
    }
    Ok(invert_hazard(hazard, times, target))
}

/// Default time conditional on the path's population.
///
/// Survivors get [`NO_DEFAULT`]: hazard past the horizon is not simulated
/// and cannot affect an episode. Defaulters invert
/// `(1 − e^{−Λ̄(τ)}) / (1 − e^{−Λ̄(t_N)}) = u`, with `u = 1` mapping to `t_N`.
pub fn sample_default_conditional(
    hazard: &[f64],
    times: &[f64],
    defaulted: bool,
    u: f64,
) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return invalid(format!("uniform draw {u} outside (0,1]"));
    }
    if !defaulted {
        return Ok(NO_DEFAULT);
    }
    let total = *hazard.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(CoreError::InconsistentInput(
            "defaulted path with zero total hazard".into(),
        ));
    }
    let target = -(-u * (-(-total).exp_m1())).ln_1p();
    Ok(invert_hazard(hazard, times, target.min(total)).min(*times.last().unwrap()))
}

/// Simulate a batch of `b` episodes.
///
/// In importance mode the first `b0` episodes are conditioned on default
/// before the horizon and the rest on survival; factor paths are the same
/// ones a naive batch with the same seed would use.
pub fn build_batch(
    params: &MarketParams,
    grid: &Arc<TimeGrid>,
    b: usize,
    b0: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Batch> {
    params.validate()?;
    if b == 0 {
        return invalid("batch size must be positive");
    }
    if b0 > b {
        return invalid(format!("B0={b0} exceeds B={b}"));
    }
    let times = grid.times();
    let paths = (0..b as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = path_rng(seed, e);
            let f = simulate_one(params, grid, &mut rng);
            // Uniform in (0,1): 1 - [0,1) excludes zero.
            let u: f64 = 1.0 - rng.random::<f64>();
            let p = (-f.hazard[f.hazard.len() - 1]).exp();
            let (tau, is_weight) = match mode {
                SamplingMode::Naive => {
                    let u = u.min(1.0 - f64::EPSILON);
                    (sample_default_naive(&f.hazard, times, u)?, 1.0)
                }
                SamplingMode::Importance => {
                    let d = (e as usize) < b0;
                    let tau = sample_default_conditional(&f.hazard, times, d, u)?;
                    (tau, if d { -(-f.hazard[f.hazard.len() - 1]).exp_m1() } else { p })
                }
            };
            Ok(EpisodePath {
                grid: Arc::clone(grid),
                phi: f.phi,
                lam: f.lam,
                hazard: f.hazard,
                defaulted: tau <= grid.horizon(),
                tau,
                is_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_defaults_forced = if mode == SamplingMode::Importance { b0 } else { 0 };
    Ok(Batch {
        paths,
        mode,
        n_defaults_forced,
    })
}

/// Write one CSV row per node and episode.
pub fn write_batch_csv<W: Write>(batch: &Batch, out: &mut W) -> Result<()> {
    let weights = batch.estimator_weights();
    writeln!(out, "episode,t,phi,lambda,hazard,defaulted,weight,estimator_weight")?;
    for (e, p) in batch.paths.iter().enumerate() {
        for (i, &t) in p.grid.times().iter().enumerate() {
            writeln!(
                out,
                "{e},{t},{},{},{},{},{},{}",
                p.phi[i],
                p.lam[i],
                p.hazard[i],
                u8::from(p.tau <= t),
                p.is_weight,
                weights[e]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = 1.0 / HOURS_PER_YEAR;

    #[test]
    fn single_day_grid_has_uniform_two_hour_gaps() {
        let g = build_grid(1, 5).unwrap();
        assert_eq!(g.n_steps(), 5);
        for i in 0..5 {
            assert!((g.dt(i) - 2.0 * H).abs() < 1e-15);
        }
    }

    #[test]
    fn full_grid_shape() {
        let g = build_grid(90, 5).unwrap();
        assert_eq!(g.n_steps(), 450);
        let gaps: Vec<f64> = (0..450).map(|i| g.dt(i)).collect();
        let max = gaps.iter().cloned().fold(0.0, f64::max);
        assert!((max - 64.0 * H).abs() < 1e-12);
        let mut distinct: Vec<f64> = gaps.iter().map(|g| (g / H).round()).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert_eq!(distinct, vec![2.0, 16.0, 64.0]);
        // weekend gaps close weeks 1..17
        assert_eq!(gaps.iter().filter(|&&d| d > 60.0 * H).count(), 17);
    }

    #[test]
    fn weekend_follows_fifth_day() {
        let g = build_grid(6, 5).unwrap();
        assert!((g.dt(24) - (16.0 + 48.0) * H).abs() < 1e-15);
        assert!((g.dt(25) - 2.0 * H).abs() < 1e-15);
        assert!((g.dt(19) - 16.0 * H).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_zero() {
        assert!(build_grid(0, 5).is_err());
        assert!(build_grid(3, 0).is_err());
    }

    #[test]
    fn naive_inversion_flat_hazard() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.2).collect();
        let hazard: Vec<f64> = times.iter().map(|t| 0.05 * t).collect();
        let tau = sample_default_naive(&hazard, &times, (-0.05f64).exp()).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
        assert_eq!(sample_default_naive(&[0.0; 11], &times, 0.3).unwrap(), NO_DEFAULT);
        assert!(sample_default_naive(&hazard, &times, 0.0).is_err());
        assert!(sample_default_naive(&hazard, &times, 1.0).is_err());
    }

    #[test]
    fn conditional_inversion() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let lam = 0.3;
        let hazard: Vec<f64> = times.iter().map(|t| lam * t).collect();
        let total = lam * 1.0;
        let tau = sample_default_conditional(&hazard, &times, true, 0.5).unwrap();
        let want = -(1.0 - 0.5 * (1.0 - (-total).exp())).ln() / lam;
        assert!((tau - want).abs() < 1e-12);
        assert_eq!(sample_default_conditional(&hazard, &times, true, 1.0).unwrap(), 1.0);
        assert_eq!(
            sample_default_conditional(&hazard, &times, false, 0.5).unwrap(),
            NO_DEFAULT
        );
        assert!(matches!(
            sample_default_conditional(&[0.0; 11], &times, true, 0.5),
            Err(CoreError::InconsistentInput(_))
        ));
    }
}
