//! The `cvahedge` command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvahedge_core::book_env::BookEnv;
use cvahedge_core::market_sim::{build_batch, write_batch_csv, SamplingMode};
use cvahedge_core::pricing::cds::{cds_price, CdsSpec};
use cvahedge_core::pricing::cva::cva_quadrature;
use cvahedge_core::pricing::pde::cva_pde;
use cvahedge_trvo::train::write_curve_csv;
use cvahedge_trvo::{Checkpoint, EvalConfig};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};
use crate::frontier::{
    default_benchmarks, frontier, write_episodes_csv, write_frontier_csv, FrontierEntry, FrontierPoint, LoadedPolicy,
    PolicySource,
};
use crate::significance::paired_t_test;

#[derive(Debug, Parser)]
#[command(name = "cvahedge", version, about = "Simulate, price, train and evaluate CVA hedging strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated risk-factor paths to `paths.csv`.
    Simulate(Common),
    /// Print a CVA or CDS price.
    Price {
        #[command(subcommand)]
        what: PriceTarget,
    },
    /// Train one agent per β; writes learning curves and checkpoints.
    Train(Common),
    /// Evaluate one policy out of sample.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Benchmark label (zero-action, delta-hedge, jump-hedge, baseline) or checkpoint path.
        #[arg(long)]
        policy: String,
    },
    /// Evaluate agents and benchmarks on common episodes; writes `frontier.csv`.
    Frontier {
        #[command(flatten)]
        common: Common,
        /// Checkpoints to evaluate, one per β, instead of training.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<PathBuf>>,
    },
    /// Paired significance test of two policies' objective contributions.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PriceTarget {
    Cva {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: PricePoint,
        #[arg(long, value_enum, default_value_t = Pricer::Auto)]
        pricer: Pricer,
    },
    /// Quotes of the scenario's CDS contracts, struck at par at inception.
    Cds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: PricePoint,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pricer {
    /// Quadrature when the risk-neutral correlation is zero, PDE otherwise.
    Auto,
    Quadrature,
    Pde,
}

#[derive(Debug, Args)]
pub struct PricePoint {
    /// Valuation time in years.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// FX rate; defaults to the initial rate.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Default intensity; defaults to the initial intensity.
    #[arg(long)]
    pub lam: Option<f64>,
}

/// Options shared by all commands. `--seed`, `--mode` and `--b0` apply to
/// training for `train` and `frontier`, and to evaluation otherwise.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// Experiment config file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation seed for `frontier`.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub b0: Option<usize>,
    #[arg(long)]
    pub mode: Option<SamplingMode>,
    /// Shortens or lengthens the trading calendar.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub costless: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Training,
    Evaluation,
}

impl Common {
    fn experiment(&self, stage: Stage) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::for_preset(name)?,
            (None, None) => return config_err("either --config or --preset is required"),
        };
        if let Some(b) = &self.beta {
            cfg.betas = b.clone();
        }
        if let Some(n) = self.episodes {
            cfg.evaluation.n_episodes = n;
        }
        if let Some(n) = self.iterations {
            cfg.training.iterations = n;
        }
        if self.days.is_some() {
            cfg.trading_days = self.days;
        }
        cfg.costless |= self.costless;
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.eval_seed {
            cfg.evaluation.seed = s;
        }
        match stage {
            Stage::Training => {
                if let Some(s) = self.seed {
                    cfg.training.seed = s;
                }
                if let Some(m) = self.mode {
                    cfg.training.mode = m;
                }
                if let Some(b) = self.b0 {
                    cfg.training.b0 = b;
                }
            }
            Stage::Evaluation => {
                if let Some(s) = self.seed {
                    cfg.evaluation.seed = s;
                }
                if let Some(m) = self.mode {
                    cfg.evaluation.mode = m;
                }
                if let Some(b) = self.b0 {
                    cfg.evaluation.b0 = b;
                }
            }
        }
        let t = &cfg.training;
        if t.mode == SamplingMode::Importance && t.b0 > t.batch_size {
            return config_err(format!("b0 = {} exceeds the batch size {}", t.b0, t.batch_size));
        }
        let e = &cfg.evaluation;
        if e.mode == SamplingMode::Importance && e.b0 > e.n_episodes {
            return config_err(format!("b0 = {} exceeds the {} evaluation episodes", e.b0, e.n_episodes));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn eval_config(cfg: &ExperimentConfig, beta: f64) -> EvalConfig {
    EvalConfig {
        n_episodes: cfg.evaluation.n_episodes,
        seed: cfg.evaluation.seed,
        mode: cfg.evaluation.mode,
        b0: cfg.evaluation.b0,
        beta,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn single_beta(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.betas.as_slice() {
        [b] => Ok(*b),
        [] => Ok(0.0),
        _ => config_err("this command takes a single --beta"),
    }
}

/// Trains one agent per β in parallel and writes `curve_beta{β}.csv` and
/// `policy_beta{β}.json`; returns the checkpoint paths.
pub fn train_all(cfg: &ExperimentConfig, env: &BookEnv) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    cfg.betas
        .par_iter()
        .map(|&beta| {
            let out = cvahedge_trvo::train(env, &cfg.trvo_config(beta))?;
            let mut w = create(dir, &format!("curve_beta{beta}.csv"))?;
            write_curve_csv(&out.curve, &mut w)?;
            w.flush()?;
            let path = dir.join(format!("policy_beta{beta}.json"));
            Checkpoint::new(out.policy, cfg.training_hash(beta)?).save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Runs a parsed command, writing human-readable output to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.experiment(Stage::Evaluation)?;
            let env = BookEnv::new(&cfg.scenario()?)?;
            let e = &cfg.evaluation;
            let b0 = if e.mode == SamplingMode::Importance { e.b0 } else { 0 };
            let batch = build_batch(env.params(), &env.grid, e.n_episodes, b0, e.mode, e.seed)?;
            let mut w = create(&cfg.output_dir, "paths.csv")?;
            write_batch_csv(&batch, &mut w)?;
            w.flush()?;
            let defaults = batch.paths.iter().filter(|p| p.defaulted).count();
            writeln!(stdout, "simulated {} episodes, {defaults} with default", batch.paths.len())?;
        }
        Command::Price { what } => price(what, stdout)?,
        Command::Train(common) => {
            let cfg = common.experiment(Stage::Training)?;
            let env = BookEnv::new(&cfg.scenario()?)?;
            for path in train_all(&cfg, &env)? {
                writeln!(stdout, "wrote {}", path.display())?;
            }
        }
        Command::Evaluate { common, policy } => {
            let cfg = common.experiment(Stage::Evaluation)?;
            let beta = single_beta(&cfg)?;
            let env = BookEnv::new(&cfg.scenario()?)?;
            let source: PolicySource = policy.parse()?;
            let loaded = LoadedPolicy::load(&source, &env)?;
            let (st, trs) = loaded.evaluate(&env, &eval_config(&cfg, beta))?;
            let point = FrontierPoint::from_stats(source.label(), Some(beta), &st)?;
            let mut w = create(&cfg.output_dir, "evaluation.csv")?;
            write_frontier_csv(std::slice::from_ref(&point), &mut w)?;
            w.flush()?;
            let mut w = create(&cfg.output_dir, "episodes.csv")?;
            write_episodes_csv(&st, &trs, &mut w)?;
            w.flush()?;
            writeln!(
                stdout,
                "{}: J = {:e} (se {:e}), nu2 = {:e} (se {:e}), eta = {:e} (se {:e})",
                point.label, point.j_hat, point.se_j, point.nu2_hat, point.se_nu2, point.eta_hat, point.se_eta
            )?;
        }
        Command::Frontier { common, checkpoints } => {
            let cfg = common.experiment(Stage::Training)?;
            let env = BookEnv::new(&cfg.scenario()?)?;
            let paths = match checkpoints {
                Some(p) if p.len() != cfg.betas.len() => {
                    return config_err(format!("{} checkpoints for {} betas", p.len(), cfg.betas.len()))
                }
                Some(p) => p,
                None => train_all(&cfg, &env)?,
            };
            let mut entries = Vec::new();
            for (beta, path) in cfg.betas.iter().zip(&paths) {
                entries.push(FrontierEntry {
                    label: format!("agent-{beta}"),
                    beta: Some(*beta),
                    policy: LoadedPolicy::load(&PolicySource::Checkpoint(path.clone()), &env)?,
                });
            }
            for kind in default_benchmarks(&env) {
                entries.push(FrontierEntry {
                    label: kind.label().to_string(),
                    beta: None,
                    policy: LoadedPolicy::load(&PolicySource::Benchmark(kind), &env)?,
                });
            }
            let points = frontier(&env, &entries, &eval_config(&cfg, 0.0))?;
            let mut w = create(&cfg.output_dir, "frontier.csv")?;
            write_frontier_csv(&points, &mut w)?;
            w.flush()?;
            write_frontier_csv(&points, stdout)?;
        }
        Command::Compare { common, a, b } => {
            let cfg = common.experiment(Stage::Evaluation)?;
            let beta = single_beta(&cfg)?;
            let env = BookEnv::new(&cfg.scenario()?)?;
            let ec = eval_config(&cfg, beta);
            let (sa, sb): (PolicySource, PolicySource) = (a.parse()?, b.parse()?);
            let (st_a, _) = LoadedPolicy::load(&sa, &env)?.evaluate(&env, &ec)?;
            let (st_b, _) = LoadedPolicy::load(&sb, &env)?.evaluate(&env, &ec)?;
            let test = paired_t_test(&st_a.eta_contributions, &st_b.eta_contributions)?;
            let mut w = create(&cfg.output_dir, "compare.csv")?;
            writeln!(w, "a,b,beta,n,eta_a,eta_b,mean_difference,standard_error,t,p_value,stars")?;
            writeln!(
                w,
                "{},{},{beta},{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                sa.label(),
                sb.label(),
                test.n,
                st_a.eta_hat,
                st_b.eta_hat,
                test.mean_difference,
                test.standard_error,
                test.t,
                test.p_value,
                test.stars()
            )?;
            w.flush()?;
            writeln!(
                stdout,
                "eta({}) - eta({}) = {:e} (se {:e}), p = {:.3e}{}",
                sa.label(),
                sb.label(),
                test.mean_difference,
                test.standard_error,
                test.p_value,
                test.stars()
            )?;
        }
    }
    Ok(())
}

fn price(what: PriceTarget, stdout: &mut dyn Write) -> Result<()> {
    match what {
        PriceTarget::Cva { common, point, pricer } => {
            let cfg = common.experiment(Stage::Evaluation)?;
            let p = cfg.scenario()?.market;
            let phi = point.phi.unwrap_or(p.fx.initial);
            let lam = point.lam.unwrap_or(p.intensity.initial);
            let use_pde = match pricer {
                Pricer::Auto => p.correlation.risk_neutral != 0.0,
                Pricer::Quadrature => false,
                Pricer::Pde => true,
            };
            let v = if use_pde {
                cva_pde(phi, lam, point.t, &p)?
            } else {
                cva_quadrature(phi, lam, point.t, &p)?
            };
            writeln!(stdout, "{v:e}")?;
        }
        PriceTarget::Cds { common, point } => {
            let cfg = common.experiment(Stage::Evaluation)?;
            let s = cfg.scenario()?;
            let lam = point.lam.unwrap_or(s.market.intensity.initial);
            writeln!(stdout, "maturity,coupon,mid,bid,ask")?;
            for &m in &s.hedges.cds_maturities {
                let spec = CdsSpec::at_par(m, &s.market)?;
                let q = cds_price(lam, point.t, &spec, &s.market)?;
                writeln!(stdout, "{m},{:e},{:e},{:e},{:e}", spec.coupon, q.mid, q.bid, q.ask)?;
            }
        }
    }
    Ok(())
}
