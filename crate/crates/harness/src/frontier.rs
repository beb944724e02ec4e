//! Out-of-sample evaluation of agents and benchmarks on common episodes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cvahedge_core::benchmarks::{Benchmark, BenchmarkKind};
use cvahedge_core::book_env::{BookEnv, Trajectory};
use cvahedge_trvo::train::evaluate_trajectories;
use cvahedge_trvo::{Actor, BatchStats, Checkpoint, EvalConfig, GaussianMlp};

use crate::error::{config_err, HarnessError, Result};

/// Where a policy comes from on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    Benchmark(BenchmarkKind),
    Checkpoint(PathBuf),
}

impl FromStr for PolicySource {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match BenchmarkKind::from_str(s) {
            Ok(k) => PolicySource::Benchmark(k),
            Err(_) => PolicySource::Checkpoint(PathBuf::from(s)),
        })
    }
}

impl PolicySource {
    pub fn label(&self) -> String {
        match self {
            PolicySource::Benchmark(k) => k.label().to_string(),
            PolicySource::Checkpoint(p) => p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

/// A policy ready to run in an environment.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum LoadedPolicy {
    Benchmark(Benchmark),
    Agent(Box<GaussianMlp>),
}

impl LoadedPolicy {
    pub fn load(source: &PolicySource, env: &BookEnv) -> Result<LoadedPolicy> {
        match source {
            PolicySource::Benchmark(k) => Ok(LoadedPolicy::Benchmark(Benchmark::new(*k, env)?)),
            PolicySource::Checkpoint(path) => load_agent(path, env).map(|p| LoadedPolicy::Agent(Box::new(p))),
        }
    }

    /// Evaluates with deterministic agent actions; every policy evaluated
    /// with the same `cfg` sees the same episodes.
    pub fn evaluate(&self, env: &BookEnv, cfg: &EvalConfig) -> Result<(BatchStats, Vec<Trajectory>)> {
        Ok(match self {
            LoadedPolicy::Benchmark(b) => evaluate_trajectories(b, env, cfg)?,
            LoadedPolicy::Agent(p) => evaluate_trajectories(
                &Actor {
                    policy: p,
                    stochastic: false,
                },
                env,
                cfg,
            )?,
        })
    }
}

pub fn load_agent(path: &Path, env: &BookEnv) -> Result<GaussianMlp> {
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint(path.to_path_buf()));
    }
    let policy = Checkpoint::load(path)?.policy;
    let sizes = &policy.params.sizes;
    if sizes.first() != Some(&env.state_dim()) || policy.scale.len() != env.action_dim() {
        return config_err(format!(
            "checkpoint {} has layer sizes {sizes:?}, but the scenario needs {} inputs and {} actions",
            path.display(),
            env.state_dim(),
            env.action_dim()
        ));
    }
    Ok(policy)
}

/// Benchmarks that apply to the environment's hedge set.
pub fn default_benchmarks(env: &BookEnv) -> Vec<BenchmarkKind> {
    let mut v = vec![BenchmarkKind::ZeroAction, BenchmarkKind::DeltaHedge, BenchmarkKind::JumpHedge];
    if Benchmark::new(BenchmarkKind::TwoCdsBaseline, env).is_ok() {
        v.push(BenchmarkKind::TwoCdsBaseline);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub label: String,
    /// Risk aversion of agent points; benchmarks carry none and report
    /// `eta_hat = j_hat`.
    pub beta: Option<f64>,
    pub j_hat: f64,
    pub nu2_hat: f64,
    pub eta_hat: f64,
    pub se_j: f64,
    pub se_nu2: f64,
    pub se_eta: f64,
}

impl FrontierPoint {
    pub fn from_stats(label: impl Into<String>, beta: Option<f64>, st: &BatchStats) -> Result<FrontierPoint> {
        let p = FrontierPoint {
            label: label.into(),
            beta,
            j_hat: st.j_hat,
            nu2_hat: st.nu2_hat,
            eta_hat: st.eta_hat,
            se_j: st.se_j,
            se_nu2: st.se_nu2,
            se_eta: st.se_eta,
        };
        let values = [p.j_hat, p.nu2_hat, p.eta_hat, p.se_j, p.se_nu2, p.se_eta];
        if values.iter().any(|v| !v.is_finite()) {
            return config_err(format!("non-finite evaluation for {}", p.label));
        }
        Ok(p)
    }
}

/// One policy of a frontier run.
#[derive(Debug, Clone)]
pub struct FrontierEntry {
    pub label: String,
    pub beta: Option<f64>,
    pub policy: LoadedPolicy,
}

/// Evaluates every entry on the episodes of `cfg`; each entry's β
/// (zero for benchmarks) replaces `cfg.beta`.
pub fn frontier(env: &BookEnv, entries: &[FrontierEntry], cfg: &EvalConfig) -> Result<Vec<FrontierPoint>> {
    entries
        .iter()
        .map(|e| {
            let c = EvalConfig {
                beta: e.beta.unwrap_or(0.0),
                ..*cfg
            };
            let (st, _) = e.policy.evaluate(env, &c)?;
            FrontierPoint::from_stats(e.label.clone(), e.beta, &st)
        })
        .collect()
}

pub fn write_frontier_csv<W: Write + ?Sized>(points: &[FrontierPoint], out: &mut W) -> Result<()> {
    writeln!(out, "label,beta,nu2_hat,j_hat,eta_hat,se_nu2,se_j,se_eta")?;
    for p in points {
        let beta = p.beta.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{beta},{:e},{:e},{:e},{:e},{:e},{:e}",
            p.label, p.nu2_hat, p.j_hat, p.eta_hat, p.se_nu2, p.se_j, p.se_eta
        )?;
    }
    Ok(())
}

/// Per-episode summary of an evaluation.
pub fn write_episodes_csv<W: Write + ?Sized>(st: &BatchStats, trs: &[Trajectory], out: &mut W) -> Result<()> {
    writeln!(out, "episode,steps,defaulted,weight,return,gamma_sum,volatility,eta_contribution")?;
    for (e, t) in trs.iter().enumerate() {
        writeln!(
            out,
            "{e},{},{},{:e},{:e},{:e},{:e},{:e}",
            t.len(),
            u8::from(t.defaulted),
            t.weight,
            st.returns[e],
            st.gamma_sums[e],
            st.volatilities[e],
            st.eta_contributions[e]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_sources_parse() {
        assert_eq!("delta".parse::<PolicySource>().unwrap(), PolicySource::Benchmark(BenchmarkKind::DeltaHedge));
        let ckpt: PolicySource = "runs/policy_beta5.json".parse().unwrap();
        assert_eq!(ckpt, PolicySource::Checkpoint(PathBuf::from("runs/policy_beta5.json")));
        assert_eq!(ckpt.label(), "policy_beta5");
        assert_eq!(PolicySource::Benchmark(BenchmarkKind::TwoCdsBaseline).label(), "baseline");
    }

    #[test]
    fn frontier_csv_leaves_benchmark_beta_empty() {
        let p = FrontierPoint {
            label: "zero-action".into(),
            beta: None,
            j_hat: -1e-4,
            nu2_hat: 2e-6,
            eta_hat: -1e-4,
            se_j: 1e-5,
            se_nu2: 1e-7,
            se_eta: 1e-5,
        };
        let mut out = Vec::new();
        write_frontier_csv(&[p], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "zero-action,,2e-6,-1e-4,-1e-4,1e-7,1e-5,1e-5");
    }
}
