//! Experiment configuration files.

use std::path::{Path, PathBuf};

use cvahedge_core::market_sim::SamplingMode;
use cvahedge_core::{presets, Scenario};
use cvahedge_trvo::{TrustRegion, TrvoConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

/// Training settings shared by every β of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub b0: usize,
    pub mode: SamplingMode,
    pub iterations: usize,
    pub gamma: f64,
    pub kl_limit: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub init_std: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrvoConfig::default();
        TrainingSection {
            batch_size: t.batch_size,
            b0: t.b0,
            mode: t.mode,
            iterations: t.iterations,
            gamma: t.gamma,
            kl_limit: t.trust_region.kl_limit,
            seed: t.seed,
            hidden: t.hidden,
            init_std: t.init_std,
        }
    }
}

/// Out-of-sample evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_episodes: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub b0: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            n_episodes: 2000,
            seed: 1_000_003,
            mode: SamplingMode::Naive,
            b0: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in preset name or path of a scenario TOML file.
    pub scenario: String,
    /// Overrides the scenario's CDS maturities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cds_maturities: Option<Vec<f64>>,
    /// Overrides the scenario's calendar length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trading_days: Option<usize>,
    /// Removes all trading costs.
    #[serde(default)]
    pub costless: bool,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Defaults for a built-in preset. Rare-default scenarios are evaluated
    /// on ten times more episodes.
    pub fn for_preset(name: &str) -> Result<ExperimentConfig> {
        presets::text(name)?;
        let mut evaluation = EvaluationSection::default();
        if name.starts_with("raredefault") {
            evaluation.n_episodes = 20_000;
        }
        Ok(ExperimentConfig {
            scenario: name.to_string(),
            cds_maturities: None,
            trading_days: None,
            costless: false,
            betas: vec![500.0],
            training: TrainingSection::default(),
            evaluation,
            output_dir: default_output_dir(),
        })
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return config_err("every beta must be finite and non-negative");
        }
        if self.evaluation.seed == self.training.seed {
            return config_err("evaluation seed must differ from the training seed");
        }
        if self.evaluation.n_episodes == 0 {
            return config_err("evaluation needs at least one episode");
        }
        if let Some(days) = self.trading_days {
            if days == 0 {
                return config_err("trading_days must be positive");
            }
        }
        self.trvo_config(0.0).validate()?;
        Ok(())
    }

    /// The scenario with all overrides applied.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = if presets::names().any(|n| n == self.scenario) {
            presets::load(&self.scenario)?
        } else {
            Scenario::load(Path::new(&self.scenario))?
        };
        if let Some(m) = &self.cds_maturities {
            s.hedges.cds_maturities = m.clone();
        }
        if let Some(d) = self.trading_days {
            s.calendar.trading_days = d;
        }
        if self.costless {
            s = s.costless();
        }
        s.validate()?;
        Ok(s)
    }

    pub fn trvo_config(&self, beta: f64) -> TrvoConfig {
        let t = &self.training;
        TrvoConfig {
            beta,
            gamma: t.gamma,
            batch_size: t.batch_size,
            b0: t.b0,
            mode: t.mode,
            iterations: t.iterations,
            seed: t.seed,
            hidden: t.hidden.clone(),
            init_std: t.init_std,
            trust_region: TrustRegion {
                kl_limit: t.kl_limit,
                ..TrustRegion::default()
            },
            ..TrvoConfig::default()
        }
    }

    /// Hex SHA-256 of everything that determines a trained policy at `beta`.
    pub fn training_hash(&self, beta: f64) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            scenario: &'a Scenario,
            training: &'a TrvoConfig,
        }
        let scenario = self.scenario()?;
        let training = self.trvo_config(beta);
        let text = toml::to_string(&Key {
            scenario: &scenario,
            training: &training,
        })?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_defaults_validate() {
        for n in presets::names() {
            let c = ExperimentConfig::for_preset(n).unwrap();
            c.validate().unwrap();
            c.scenario().unwrap();
        }
        assert!(ExperimentConfig::for_preset("nope").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = ExperimentConfig::for_preset("default-500bp").unwrap();
        c.betas = vec![0.0, 0.1, 500.0];
        c.trading_days = Some(7);
        c.training.mode = SamplingMode::Importance;
        c.training.b0 = 15;
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), c.to_toml().unwrap());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::for_preset("nodefault-100bp").unwrap();
        c.betas = vec![-1.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::for_preset("nodefault-100bp").unwrap();
        c.evaluation.seed = c.training.seed;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("scenario = \"nodefault-100bp\"\nbetas = [1.0]\nbogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_training_inputs() {
        let c = ExperimentConfig::for_preset("nodefault-100bp").unwrap();
        let h = c.training_hash(500.0).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, c.training_hash(500.0).unwrap());
        assert_ne!(h, c.training_hash(10.0).unwrap());
        let mut d = c.clone();
        d.evaluation.n_episodes = 7;
        assert_eq!(h, d.training_hash(500.0).unwrap());
    }
}
