use std::path::{Path, PathBuf};

use sact::features::SynthSpec;
use sact::model::ModelConfig;
use sact::training::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SACT_CONFIG";

/// Everything a run needs, as one TOML document. Command-line flags
/// override individual keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds weight init, the training episode stream and the evaluation tasks.
    pub seed: u64,
    /// Classes `[0, n)` are used for training and the rest for evaluation;
    /// 0 uses every class for both.
    pub train_classes: usize,
    /// Evaluation worker threads; 0 uses one per core.
    pub threads: usize,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub synth: SynthSpec,
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub n_train_tasks: usize,
    pub eval_every: usize,
    pub n_eval_tasks: usize,
    pub n_val_tasks: usize,
    pub way: usize,
    pub shot: usize,
    pub train_queries: usize,
    pub eval_queries: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Feature pack used by `train`, `eval` and `attn` when no flag is given.
    pub data: Option<PathBuf>,
    /// Model file written by `train` and read by `eval` and `attn`.
    pub model: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            n_train_tasks: t.n_train_tasks,
            eval_every: t.eval_every,
            n_eval_tasks: t.n_eval_tasks,
            n_val_tasks: t.n_val_tasks,
            way: t.way,
            shot: t.shot,
            train_queries: t.train_queries,
            eval_queries: t.eval_queries,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_classes: 20,
            threads: 0,
            model: ModelConfig::default(),
            train: TrainSection::default(),
            synth: SynthSpec {
                n_classes: 40,
                ..SynthSpec::default()
            },
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Read `path`, or the file named by `SACT_CONFIG`, or fall back to the
    /// defaults. clap already resolves the environment variable into `path`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            n_train_tasks: t.n_train_tasks,
            eval_every: t.eval_every,
            n_eval_tasks: t.n_eval_tasks,
            n_val_tasks: t.n_val_tasks,
            way: t.way,
            shot: t.shot,
            train_queries: t.train_queries,
            eval_queries: t.eval_queries,
            master_seed: self.seed,
            model: self.model.clone(),
        }
    }

    pub fn eval_config(&self, n_tasks: usize) -> EvalConfig {
        EvalConfig {
            threads: self.threads,
            ..self.train_config().eval_config(n_tasks, self.seed)
        }
    }

    /// Generator spec with the video shape taken from the model.
    pub fn synth_for_model(&self) -> SynthSpec {
        SynthSpec {
            frames: self.model.frames,
            patches_per_side: self.model.patches_per_side,
            channels: self.model.channels,
            ..self.synth.clone()
        }
    }
}
