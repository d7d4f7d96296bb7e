use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::{stream_episode, Episode, EpisodeShape};
use crate::error::{ConfigError, Result};
use crate::features::FeatureDataset;
use crate::model::{argmax, pn_fsar_forward, ModelConfig, SactParams};
use crate::tensor::Scalar;
use crate::training::check_dataset;

/// Anything that scores the classes of an episode for each query.
pub trait Classifier: Sync {
    fn name(&self) -> &'static str;
    fn logits(&self, episode: &Episode<'_>) -> Result<Vec<Vec<f64>>>;
    fn model_config(&self) -> Option<&ModelConfig> {
        None
    }
}

impl<T: Scalar> Classifier for SactParams<T> {
    fn name(&self) -> &'static str {
        "sa-ct"
    }

    fn logits(&self, episode: &Episode<'_>) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .forward(episode)?
            .into_iter()
            .map(|q| q.into_iter().map(|v| v.to_f64_lossy()).collect())
            .collect())
    }

    fn model_config(&self) -> Option<&ModelConfig> {
        Some(self.config())
    }
}

/// Frame-averaging ProtoNet baseline; it has no parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct PnFsar;

impl Classifier for PnFsar {
    fn name(&self) -> &'static str {
        "pn-fsar"
    }

    fn logits(&self, episode: &Episode<'_>) -> Result<Vec<Vec<f64>>> {
        Ok(pn_fsar_forward::<f64>(episode))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub way: usize,
    pub shot: usize,
    /// Queries per task.
    pub queries: usize,
    pub n_tasks: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl EvalConfig {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape::new(self.way, self.shot, self.queries)
    }
}

/// Per-prediction correctness, task-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap(pub Vec<bool>);

impl Bitmap {
    /// Bits packed most-significant first into bytes, as lowercase hex.
    pub fn to_hex(&self) -> String {
        self.0
            .chunks(8)
            .map(|chunk| {
                let byte = chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)));
                format!("{byte:02x}")
            })
            .collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Option<Self> {
        if hex.len() != len.div_ceil(8) * 2 {
            return None;
        }
        let mut bits = Vec::with_capacity(len);
        for i in 0..len.div_ceil(8) {
            let byte = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
            for j in 0..8 {
                if bits.len() < len {
                    bits.push(byte >> (7 - j) & 1 == 1);
                }
            }
        }
        Some(Self(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Serialize for Bitmap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub method: &'static str,
    pub accuracy: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub n_tasks: usize,
    /// Number of scored predictions, `n_tasks · queries`.
    pub n_predictions: usize,
    pub n_correct: usize,
    pub bitmap: Bitmap,
    pub config: EvalConfig,
    pub model: Option<ModelConfig>,
    pub wall_clock_secs: f64,
}

/// `1.96·√(p(1−p)/n)`.
pub fn ci95(accuracy: f64, n: usize) -> f64 {
    1.96 * (accuracy * (1.0 - accuracy) / n as f64).sqrt()
}

/// Score `n_tasks` seeded episodes. Tasks are independent, so they run in
/// parallel; results are gathered in task order, and the outcome does not
/// depend on the thread count.
pub fn evaluate<C: Classifier + ?Sized>(
    dataset: &FeatureDataset,
    classifier: &C,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.n_tasks == 0 || config.queries == 0 {
        return Err(ConfigError("evaluation needs at least one task and one query".into()).into());
    }
    if let Some(model) = classifier.model_config() {
        check_dataset(model, dataset)?;
    }
    let start = Instant::now();
    let shape = config.shape();
    let run = || -> Result<Vec<Vec<bool>>> {
        (0..config.n_tasks)
            .into_par_iter()
            .map(|t| {
                let episode = stream_episode(dataset, shape, config.seed, t)?;
                let logits = classifier.logits(&episode)?;
                Ok(logits
                    .iter()
                    .zip(&episode.queries)
                    .map(|(z, q)| argmax(z) == q.label)
                    .collect())
            })
            .collect()
    };
    let per_task = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| ConfigError(format!("cannot build thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    let bits: Vec<bool> = per_task.into_iter().flatten().collect();
    let n_correct = bits.iter().filter(|&&b| b).count();
    let accuracy = n_correct as f64 / bits.len() as f64;
    Ok(EvalReport {
        method: classifier.name(),
        accuracy,
        ci95: ci95(accuracy, bits.len()),
        n_tasks: config.n_tasks,
        n_predictions: bits.len(),
        n_correct,
        bitmap: Bitmap(bits),
        config: *config,
        model: classifier.model_config().cloned(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
