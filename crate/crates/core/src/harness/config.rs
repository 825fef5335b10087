//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{default_groups, preset, ChannelRegistry, ObservationSpace};
use crate::envs::diagnostic::{DiagnosticEnv, DiagnosticParams};
use crate::envs::{canonical_env_id, make_env, Env};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::permtest::PermTestConfig;
use crate::search::SearchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Bench,
    Search,
    Permtest,
    Report,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Bench => "bench",
            Command::Search => "search",
            Command::Permtest => "permtest",
            Command::Report => "report",
        }
    }
}

/// Training steps per run when the config gives none.
pub fn default_steps(env_id: &str) -> usize {
    match env_id {
        "cart-double-pendulum" => 30_000,
        "diagnostic" | "diagnostic-clean" => 6_000,
        _ => 200_000,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub env: String,
    /// Overrides for the diagnostic environment.
    pub diagnostic: Option<DiagnosticParams>,
    /// Presets compared by `bench`.
    pub presets: Vec<String>,
    pub history_len: usize,
    /// Training steps of `bench` runs and of the search's K; defaults per env.
    pub steps: Option<usize>,
    pub train: Option<TrainConfig>,
    pub search: Option<SearchConfig>,
    pub permtest: PermTestConfig,
    /// Initial space of `search`.
    pub init_preset: String,
    /// Space tested by `permtest`: a preset id or an explicit channel list.
    pub permtest_preset: Option<String>,
    pub permtest_channels: Option<Vec<String>>,
    /// Dropout rates swept by `permtest` (rows of the heatmap).
    pub dropout_rates: Vec<f64>,
    pub seeds: usize,
    pub root_seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    /// Learning curves are bucketed to this many environment steps.
    pub bucket_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            env: "diagnostic".into(),
            diagnostic: None,
            presets: vec!["RS".into(), "Ours".into()],
            history_len: 1,
            steps: None,
            train: None,
            search: None,
            permtest: PermTestConfig::default(),
            init_preset: "RS".into(),
            permtest_preset: None,
            permtest_channels: None,
            dropout_rates: Vec::new(),
            seeds: 10,
            root_seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
            bucket_steps: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn env_id(&self) -> Result<&'static str> {
        canonical_env_id(&self.env).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_env(&self) -> Result<Box<dyn Env>> {
        let id = self.env_id()?;
        match (&self.diagnostic, id) {
            (Some(p), "diagnostic" | "diagnostic-clean") => {
                let mut p = p.clone();
                if id == "diagnostic-clean" {
                    p.deceptive = false;
                }
                Ok(Box::new(DiagnosticEnv::new(p)))
            }
            (Some(_), _) => Err(Error::Config("`diagnostic` overrides need a diagnostic env".into())),
            (None, _) => make_env(id),
        }
    }

    pub fn steps(&self) -> Result<usize> {
        Ok(self.steps.unwrap_or(default_steps(self.env_id()?)))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = match &self.train {
            Some(t) => t.clone(),
            None => TrainConfig::for_env(self.env_id()?),
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// The search config with K and the candidate groups filled in.
    pub fn search_config(&self) -> Result<SearchConfig> {
        let env = self.build_env()?;
        let mut cfg = self.search.clone().unwrap_or_default();
        // an explicit `steps` wins; an untouched k_steps follows the env
        if self.steps.is_some() || cfg.k_steps == SearchConfig::default().k_steps {
            cfg.k_steps = self.steps()?;
        }
        if cfg.candidate_groups.is_empty() {
            cfg.candidate_groups = default_groups(env.spec());
        }
        let registry = ChannelRegistry::for_env(env.spec());
        for m in cfg.candidate_groups.iter().flat_map(|g| &g.members) {
            registry.get(m).map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Builds a preset, applying the configured history length.
    pub fn space(&self, preset_id: &str) -> Result<ObservationSpace> {
        let env = self.build_env()?;
        preset(preset_id, env.spec())
            .and_then(|s| s.augment_history(self.history_len))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn permtest_space(&self) -> Result<ObservationSpace> {
        let env = self.build_env()?;
        let space = match (&self.permtest_channels, &self.permtest_preset) {
            (Some(names), _) => {
                let registry = ChannelRegistry::for_env(env.spec());
                let channels = names
                    .iter()
                    .map(|n| registry.get(n).cloned())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Config(e.to_string()))?;
                let mut s = ObservationSpace::new("custom", channels, env.spec().action_dim)
                    .map_err(|e| Error::Config(e.to_string()))?;
                s.sort_by_registry(&registry);
                s.augment_history(self.history_len)?
            }
            (None, Some(p)) => self.space(p)?,
            (None, None) => self.space("Ours")?,
        };
        Ok(space)
    }

    pub fn dropout_rates(&self) -> Vec<f64> {
        if self.dropout_rates.is_empty() {
            vec![self.permtest.dropout_rate]
        } else {
            self.dropout_rates.clone()
        }
    }

    pub fn validate(&self, command: Command) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.bucket_steps == 0 {
            return bad("bucket_steps must be at least 1");
        }
        if self.history_len == 0 {
            return bad("history_len must be at least 1");
        }
        if command == Command::Report {
            return Ok(());
        }
        self.build_env()?;
        self.train_config()?;
        if self.steps()? == 0 {
            return bad("steps must be positive");
        }
        match command {
            Command::Bench => {
                if self.presets.is_empty() {
                    return bad("bench needs at least one preset");
                }
                for p in &self.presets {
                    self.space(p)?;
                }
            }
            Command::Search => {
                self.search_config()?;
                self.space(&self.init_preset)?;
            }
            Command::Permtest => {
                self.permtest.validate().map_err(|e| Error::Config(e.to_string()))?;
                if self.dropout_rates().iter().any(|d| !(0.0..1.0).contains(d)) {
                    return bad("dropout rates must lie in [0, 1)");
                }
                self.permtest_space()?;
            }
            Command::Report => {}
        }
        Ok(())
    }

    /// Content hash of everything that affects results (not `out`,
    /// `workers` or `command`).
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.workers = 1;
        c.command = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..6])
    }

    pub fn run_dir(&self, command: Command) -> Result<PathBuf> {
        Ok(self
            .out
            .join(command.as_str())
            .join(self.env_id()?)
            .join(self.content_hash()))
    }
}
