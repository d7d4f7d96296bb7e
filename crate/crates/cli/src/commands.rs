use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sact::features::pack::encode_feature_pack;
use sact::features::{generate_synthetic, read_feature_pack, FeatureDataset, SynthSpec, TemporalMode};
use sact::model::{ModelConfig, SactParams, SavedModel};
use sact::training::{
    dk_sweep, evaluate, grad_check, train, EvalReport, GradCheckConfig, GradCheckReport, PnFsar, SweepRow,
    TrainConfig, ValidationPoint, PUBLISHED_SCA_4, PUBLISHED_SCA_8,
};
use serde::{Deserialize, Serialize};

use crate::args::Sweep;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Origin of the features a model was trained or evaluated on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic { spec: SynthSpec },
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    write_file(path, text + "\n")
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The configured feature pack, or the generator output for `synthetic`.
pub fn load_data(cfg: &RunConfig, synthetic: bool) -> Result<(FeatureDataset, DataSource)> {
    if synthetic {
        let spec = cfg.synth_for_model();
        return Ok((generate_synthetic(&spec)?, DataSource::Synthetic { spec }));
    }
    match &cfg.paths.data {
        Some(path) => {
            let ds = read_feature_pack(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok((ds, DataSource::File { path: path.clone() }))
        }
        None => Err(CliError::Config(
            "no features given: pass --data PACK, --synthetic, or set paths.data".into(),
        )),
    }
}

/// Disjoint train and evaluation classes; `train_classes = 0` shares all.
pub fn split_classes(ds: &FeatureDataset, train_classes: usize) -> Result<(FeatureDataset, FeatureDataset)> {
    let n = ds.classes().len();
    if train_classes == 0 {
        return Ok((ds.clone(), ds.clone()));
    }
    if train_classes >= n {
        return Err(CliError::Config(format!(
            "train_classes = {train_classes} leaves no evaluation classes in a dataset of {n}"
        )));
    }
    Ok(ds.split_classes(train_classes))
}

#[derive(Clone, Debug, Serialize)]
pub struct GenSummary {
    pub seed: u64,
    pub path: PathBuf,
    pub spec: SynthSpec,
    /// `[frames, patches, channels]`.
    pub shape: [usize; 3],
    pub n_classes: usize,
    pub n_videos: usize,
    pub bytes: u64,
    pub class_names: Vec<String>,
    /// Order-pair classes whose A/B sequences are mirror images of each
    /// other (A and B swapped).
    pub paired_classes: Vec<[String; 2]>,
}

impl GenSummary {
    pub fn describe(&self) -> String {
        let [l, p, d] = self.shape;
        let mut s = format!(
            "wrote {} ({} bytes): {} classes × {} videos, shape L={l} P²={p} D={d}, seed {}\n",
            self.path.display(),
            self.bytes,
            self.n_classes,
            self.n_videos / self.n_classes.max(1),
            self.seed
        );
        if self.spec.temporal_mode == TemporalMode::OrderPair {
            let _ = writeln!(
                s,
                "order-pair: all {} classes share sub-signatures A and B; {} mirrored pairs",
                self.n_classes,
                self.paired_classes.len()
            );
            for [a, b] in &self.paired_classes {
                let _ = writeln!(s, "  {a} <-> {b}");
            }
        }
        s
    }
}

/// Generate the `[synth]` dataset and write it to `out`, with a JSON
/// summary next to it.
pub fn gen(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    let ds = generate_synthetic(&cfg.synth)?;
    let bytes = encode_feature_pack(&ds);
    write_file(out, &bytes)?;
    let class_names: Vec<String> = ds.classes().iter().map(|c| c.name.clone()).collect();
    let mut paired_classes = Vec::new();
    if cfg.synth.temporal_mode == TemporalMode::OrderPair {
        for (i, a) in class_names.iter().enumerate() {
            let mirror: String = a
                .chars()
                .map(|ch| match ch {
                    'A' => 'B',
                    'B' => 'A',
                    other => other,
                })
                .collect();
            if let Some(b) = class_names[i + 1..].iter().find(|b| **b == mirror) {
                paired_classes.push([a.clone(), b.clone()]);
            }
        }
    }
    let summary = GenSummary {
        seed: cfg.synth.seed,
        path: out.to_path_buf(),
        spec: cfg.synth.clone(),
        shape: ds.shape(),
        n_classes: ds.classes().len(),
        n_videos: ds.n_videos(),
        bytes: bytes.len() as u64,
        class_names,
        paired_classes,
    };
    write_json(&sidecar(out), &summary)?;
    Ok(summary)
}

/// `x.fpk` → `x.fpk.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Contents of a model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub seed: u64,
    pub learning_rate: f64,
    pub train_classes: usize,
    pub data: DataSource,
    pub train: TrainConfig,
    pub loss_curve: Vec<f64>,
    pub validation: Vec<(usize, f64, f64)>,
    pub wall_clock_secs: f64,
    pub model: SavedModel,
}

impl ModelArtifact {
    pub fn params(&self) -> Result<SactParams<f32>> {
        Ok(SactParams::from_saved(&self.model)?)
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Mean loss over the first and last tenth of training.
    pub fn loss_summary(&self) -> (f64, f64) {
        let n = self.loss_curve.len();
        let k = (n / 10).max(1).min(n.max(1));
        let mean = |s: &[f64]| if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
        (mean(&self.loss_curve[..k.min(n)]), mean(&self.loss_curve[n.saturating_sub(k)..]))
    }
}

/// Episodic training at 32-bit on the training classes.
pub fn train_model(cfg: &RunConfig, synthetic: bool) -> Result<ModelArtifact> {
    let (ds, data) = load_data(cfg, synthetic)?;
    let (train_ds, val_ds) = split_classes(&ds, cfg.train_classes)?;
    let tc = cfg.train_config();
    let start = Instant::now();
    let validation = (tc.eval_every > 0).then_some(&val_ds);
    let out = train::<f32>(&train_ds, validation, &tc)?;
    Ok(ModelArtifact {
        seed: cfg.seed,
        learning_rate: tc.learning_rate,
        train_classes: cfg.train_classes,
        data,
        loss_curve: out.loss_curve,
        validation: out
            .validation
            .iter()
            .map(|v: &ValidationPoint| (v.episode, v.accuracy, v.ci95))
            .collect(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        model: out.params.to_saved(),
        train: tc,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    pub seed: u64,
    pub model_path: Option<PathBuf>,
    /// Learning rate the model was trained with.
    pub learning_rate: f64,
    pub train_classes: usize,
    pub data: DataSource,
    pub report: EvalReport,
    pub baseline: Option<EvalReport>,
}

pub fn format_report(r: &EvalReport) -> String {
    format!(
        "{}: accuracy {:.4} ± {:.4} over {} tasks ({} predictions)",
        r.method, r.accuracy, r.ci95, r.n_tasks, r.n_predictions
    )
}

/// Evaluate `params` on the evaluation classes of the configured data.
pub fn eval_model(
    cfg: &RunConfig,
    artifact: &ModelArtifact,
    synthetic: bool,
    n_tasks: usize,
    baseline: bool,
) -> Result<EvalOutput> {
    let params = artifact.params()?;
    let mut cfg = cfg.clone();
    cfg.model = artifact.model_config().clone();
    let (ds, data) = load_data(&cfg, synthetic)?;
    let (_, eval_ds) = split_classes(&ds, cfg.train_classes)?;
    let ec = cfg.eval_config(n_tasks);
    let report = evaluate(&eval_ds, &params, &ec)?;
    let baseline = if baseline {
        Some(evaluate(&eval_ds, &PnFsar, &ec)?)
    } else {
        None
    };
    Ok(EvalOutput {
        seed: cfg.seed,
        model_path: None,
        learning_rate: artifact.learning_rate,
        train_classes: cfg.train_classes,
        data,
        report,
        baseline,
    })
}

/// Train on the training classes of a fresh synthetic dataset and evaluate
/// on its held-out classes. The baseline is scored on the same tasks.
pub fn synthetic_experiment(cfg: &RunConfig, n_tasks: usize) -> Result<(EvalReport, EvalReport)> {
    let spec = cfg.synth_for_model();
    let ds = generate_synthetic(&spec)?;
    let (train_ds, eval_ds) = split_classes(&ds, cfg.train_classes)?;
    let out = train::<f32>(&train_ds, None, &cfg.train_config())?;
    let ec = cfg.eval_config(n_tasks);
    Ok((evaluate(&eval_ds, &out.params, &ec)?, evaluate(&eval_ds, &PnFsar, &ec)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: &'static str,
    pub dataset: &'static str,
    pub parameter: &'static str,
    pub value: String,
    pub accuracy: f64,
    pub ci95: f64,
    pub n_tasks: usize,
    pub seed: u64,
}

pub const ABLATION_HEADER: &str = "sweep,dataset,parameter,value,accuracy,ci95,n_tasks,seed";

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{},{}",
            self.sweep, self.dataset, self.parameter, self.value, self.accuracy, self.ci95, self.n_tasks, self.seed
        )
    }
}

fn dataset_name(mode: TemporalMode) -> &'static str {
    match mode {
        TemporalMode::None => "spatial",
        TemporalMode::OrderPair => "order-pair",
    }
}

/// One trained and evaluated row per setting. Every row regenerates its
/// data, so the patch sweep changes the generator's grid too.
pub fn ablate(cfg: &RunConfig, sweep: Sweep, n_tasks: usize, mut progress: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    let mut settings: Vec<(RunConfig, &'static str, &'static str, String)> = Vec::new();
    match sweep {
        Sweep::Patches => {
            for p in 1..=7 {
                let mut c = cfg.clone();
                c.model.patches_per_side = p;
                settings.push((c, "patches", "P", p.to_string()));
            }
        }
        Sweep::Tmixer => {
            for mode in [TemporalMode::None, TemporalMode::OrderPair] {
                for on in [true, false] {
                    let mut c = cfg.clone();
                    c.synth.temporal_mode = mode;
                    c.model.use_tmixer = on;
                    settings.push((c, "tmixer", "tmixer", if on { "on" } else { "off" }.into()));
                }
            }
        }
        Sweep::Exponent => {
            for e in [1, 2] {
                let mut c = cfg.clone();
                c.model.frame_norm_exponent = e;
                settings.push((c, "exponent", "exponent", e.to_string()));
            }
        }
    }
    let mut rows = Vec::with_capacity(settings.len());
    for (c, sweep, parameter, value) in settings {
        let (report, _) = synthetic_experiment(&c, n_tasks)?;
        let row = AblationRow {
            sweep,
            dataset: dataset_name(c.synth.temporal_mode),
            parameter,
            value,
            accuracy: report.accuracy,
            ci95: report.ci95,
            n_tasks: report.n_tasks,
            seed: c.seed,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckRun {
    pub use_cpe: bool,
    pub use_tmixer: bool,
    pub frame_norm_exponent: u32,
    pub report: GradCheckReport,
}

/// Gradient check of the tiny config under every flag combination.
pub fn gradcheck_all(seed: Option<u64>) -> Result<Vec<GradCheckRun>> {
    let mut runs = Vec::with_capacity(8);
    for use_cpe in [false, true] {
        for use_tmixer in [false, true] {
            for e in [1, 2] {
                let mut gc = GradCheckConfig::default();
                if let Some(s) = seed {
                    gc.seed = s;
                }
                gc.model.use_cpe = use_cpe;
                gc.model.use_tmixer = use_tmixer;
                gc.model.frame_norm_exponent = e;
                runs.push(GradCheckRun {
                    use_cpe,
                    use_tmixer,
                    frame_norm_exponent: e,
                    report: grad_check(&gc, None)?,
                });
            }
        }
    }
    Ok(runs)
}

#[derive(Clone, Debug, Serialize)]
pub struct CostSweep {
    pub rows: Vec<SweepRow>,
    pub published_8_frames: f64,
    pub published_4_frames: f64,
    pub matched: Vec<u64>,
    /// d_k whose 8-frame count is closest to the published one.
    pub closest_8: u64,
    pub closest_4: u64,
}

impl CostSweep {
    pub fn finding(&self) -> String {
        if self.matched.is_empty() {
            "no match: formula set differs".to_string()
        } else {
            format!("matched d_k = {:?}", self.matched)
        }
    }
}

pub fn cost_sweep(d_k_min: u64, d_k_max: u64) -> Result<CostSweep> {
    if d_k_min == 0 || d_k_min > d_k_max {
        return Err(CliError::Config(format!("empty d_k range {d_k_min}..={d_k_max}")));
    }
    let rows = dk_sweep(d_k_min..=d_k_max);
    let closest = |f: fn(&SweepRow) -> f64| {
        rows.iter()
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map(|r| r.d_k)
            .unwrap_or(d_k_min)
    };
    Ok(CostSweep {
        matched: rows.iter().filter(|r| r.matches).map(|r| r.d_k).collect(),
        closest_8: closest(|r| r.rel_err_8),
        closest_4: closest(|r| r.rel_err_4),
        published_8_frames: PUBLISHED_SCA_8,
        published_4_frames: PUBLISHED_SCA_4,
        rows,
    })
}
