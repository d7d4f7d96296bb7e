//! Episodic training, evaluation, gradient verification and cost counting.

mod cost;
mod eval;
mod gradcheck;

pub use cost::{
    count_multiadds, dk_sweep, CostComponent, CostConfig, CostReport, MixerCost, Stage, SweepRow, PUBLISHED_SCA_4,
    PUBLISHED_SCA_8,
};
pub use eval::{evaluate, Bitmap, Classifier, EvalConfig, EvalReport, PnFsar};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::episodes::{stream_episode, Episode, EpisodeShape};
use crate::error::{ConfigError, Error, Result, TensorError};
use crate::features::FeatureDataset;
use crate::model::network;
use crate::model::{ModelConfig, SactParams};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_train_tasks: usize,
    /// Validate every this many episodes; 0 disables validation.
    pub eval_every: usize,
    /// Tasks in a final evaluation.
    pub n_eval_tasks: usize,
    /// Tasks in each periodic validation.
    pub n_val_tasks: usize,
    pub way: usize,
    pub shot: usize,
    /// Queries per training episode.
    pub train_queries: usize,
    /// Queries per evaluation episode.
    pub eval_queries: usize,
    pub master_seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            n_train_tasks: 2000,
            eval_every: 0,
            n_eval_tasks: 10_000,
            n_val_tasks: 500,
            way: 5,
            shot: 1,
            train_queries: 1,
            eval_queries: 5,
            master_seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError(format!(
                "learning_rate must be finite and non-negative (got {})",
                self.learning_rate
            )));
        }
        if self.n_train_tasks == 0 || self.n_eval_tasks == 0 || self.train_queries == 0 || self.eval_queries == 0 {
            return Err(ConfigError("task and query counts must be at least 1".into()));
        }
        if self.way == 0 || self.shot == 0 {
            return Err(ConfigError("way and shot must be at least 1".into()));
        }
        self.model.validate()
    }

    pub fn train_shape(&self) -> EpisodeShape {
        EpisodeShape::new(self.way, self.shot, self.train_queries)
    }

    pub fn eval_config(&self, n_tasks: usize, seed: u64) -> EvalConfig {
        EvalConfig {
            way: self.way,
            shot: self.shot,
            queries: self.eval_queries,
            n_tasks,
            seed,
            threads: 0,
        }
    }
}

/// Cross-entropy of `softmax(logits)` against `target`, via log-sum-exp.
pub fn episode_loss<T: Scalar>(logits: &[T], target: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - logits[target]
}

/// Mean query cross-entropy of one episode, recorded on `tape`.
pub(crate) fn episode_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    params: &SactParams<T>,
    episode: &Episode<'_>,
) -> Result<Var> {
    let bound = network::bind(tape, params)?;
    let graphs = network::episode_graph(tape, &bound, params.config(), episode)?;
    let mut losses = Vec::with_capacity(graphs.len());
    for (g, q) in graphs.iter().zip(&episode.queries) {
        losses.push(tape.cross_entropy(g.logits, q.label)?);
    }
    let stacked = tape.stack(&losses, 0)?;
    Ok(tape.mean(stacked, &[0])?)
}

/// Loss of one episode and the gradient of every parameter, written into
/// the parameters' `grad` fields.
pub fn loss_and_grad<T: Scalar>(params: &mut SactParams<T>, episode: &Episode<'_>) -> Result<T> {
    let mut tape = Tape::new();
    let loss = episode_loss_graph(&mut tape, params, episode)?;
    let grads = tape.backward(loss)?;
    params.store_mut().zero_grad();
    grads.accumulate_into(params.store_mut());
    Ok(tape.value(loss).item()?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub episode: usize,
    pub accuracy: f64,
    pub ci95: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: SactParams<T>,
    /// Loss of every training episode, in order.
    pub loss_curve: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
}

/// Plain SGD, one step per episode. Training episode `t` is task `t` of the
/// stream rooted at `master_seed`; initial weights are seeded by
/// `master_seed` too.
pub fn train<T: Scalar>(
    dataset: &FeatureDataset,
    validation: Option<&FeatureDataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let params = SactParams::init(&config.model, config.master_seed)?;
    train_from(params, dataset, validation, config)
}

/// Continue training from given parameters.
pub fn train_from<T: Scalar>(
    mut params: SactParams<T>,
    dataset: &FeatureDataset,
    validation: Option<&FeatureDataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if params.config() != &config.model {
        return Err(ConfigError("parameters were built for a different model config".into()).into());
    }
    check_dataset(&config.model, dataset)?;
    let lr = T::from_f64_lossy(config.learning_rate);
    let shape = config.train_shape();
    let mut loss_curve = Vec::with_capacity(config.n_train_tasks);
    let mut history = Vec::new();
    for t in 0..config.n_train_tasks {
        let episode = stream_episode(dataset, shape, config.master_seed, t)?;
        let loss = loss_and_grad(&mut params, &episode).map_err(|e| non_finite(e, t))?;
        params.store_mut().sgd_step(lr);
        if let Some(name) = params.store().first_non_finite() {
            return Err(Error::NonFinite {
                episode: t,
                source: TensorError::Shape {
                    op: "sgd_step",
                    detail: format!("parameter {name} became non-finite"),
                },
            });
        }
        loss_curve.push(loss.to_f64_lossy());
        if let Some(val) = validation {
            if config.eval_every > 0 && (t + 1) % config.eval_every == 0 {
                let report = evaluate(
                    val,
                    &params,
                    &config.eval_config(config.n_val_tasks, config.master_seed ^ 0x5EED),
                )?;
                history.push(ValidationPoint {
                    episode: t + 1,
                    accuracy: report.accuracy,
                    ci95: report.ci95,
                });
            }
        }
    }
    Ok(TrainOutcome {
        params,
        loss_curve,
        validation: history,
    })
}

fn non_finite(e: Error, episode: usize) -> Error {
    match e {
        Error::Tensor(source @ TensorError::NonFinite { .. }) => Error::NonFinite { episode, source },
        other => other,
    }
}

/// Data and model must agree on `[frames, patches, channels]`.
pub fn check_dataset(model: &ModelConfig, dataset: &FeatureDataset) -> Result<()> {
    if dataset.shape() != model.video_shape() {
        return Err(crate::error::DataError::ShapeMismatch {
            expected: model.video_shape(),
            found: dataset.shape(),
        }
        .into());
    }
    Ok(())
}
