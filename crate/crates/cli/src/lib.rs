//! The `sact` command line: data generation, training, evaluation,
//! ablations, attention export, gradient checks and cost sweeps.

pub mod args;
pub mod attn;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

pub use args::{Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};

use commands::{format_report, sidecar, write_file, write_json, ModelArtifact};

fn model_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.model.clone())
        .ok_or_else(|| CliError::Config("no model file: pass --model or set paths.model".into()))
}

/// Execute one parsed command line. Reports go to stdout, progress to
/// stderr.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => {
            a.shape.apply(&mut cfg);
            a.synth.apply(&mut cfg);
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            let summary = commands::gen(&cfg, &a.out)?;
            print!("{}", summary.describe());
        }
        Command::Train(a) => {
            a.shape.apply(&mut cfg);
            a.model.apply(&mut cfg);
            a.train.apply(&mut cfg);
            a.synth.apply(&mut cfg);
            a.data.apply(&mut cfg);
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let out = a
                .out
                .or_else(|| cfg.paths.model.clone())
                .unwrap_or_else(|| PathBuf::from("model.json"));
            eprintln!(
                "training {} episodes at lr {} (seed {})",
                cfg.train.n_train_tasks, cfg.train.learning_rate, cfg.seed
            );
            let artifact = commands::train_model(&cfg, a.data.synthetic)?;
            write_json(&out, &artifact)?;
            let (first, last) = artifact.loss_summary();
            println!(
                "trained {} episodes, lr {}, seed {}: mean loss {first:.4} (first tenth) -> {last:.4} (last tenth), {:.1}s; wrote {}",
                artifact.loss_curve.len(),
                artifact.learning_rate,
                artifact.seed,
                artifact.wall_clock_secs,
                out.display()
            );
        }
        Command::Eval(a) => {
            let path = model_path(a.model, &cfg)?;
            let artifact: ModelArtifact = commands::read_json(&path)?;
            // a synthetic model is evaluated on its own generator unless
            // flags say otherwise
            if let (true, commands::DataSource::Synthetic { spec }) = (a.data.synthetic, &artifact.data) {
                cfg.synth = spec.clone();
            }
            cfg.train_classes = artifact.train_classes;
            cfg.train.way = artifact.train.way;
            cfg.train.shot = artifact.train.shot;
            cfg.train.eval_queries = artifact.train.eval_queries;
            a.synth.apply(&mut cfg);
            a.data.apply(&mut cfg);
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(t) = a.threads {
                cfg.threads = t;
            }
            if let Some(q) = a.eval_queries {
                cfg.train.eval_queries = q;
            }
            if let Some(n) = a.train_classes {
                cfg.train_classes = n;
            }
            let n_tasks = a.tasks.unwrap_or(cfg.train.n_eval_tasks);
            let mut output = commands::eval_model(&cfg, &artifact, a.data.synthetic, n_tasks, a.baseline)?;
            output.model_path = Some(path);
            println!(
                "model trained at lr {}; eval seed {}",
                output.learning_rate, output.seed
            );
            println!("{}", format_report(&output.report));
            if let Some(b) = &output.baseline {
                println!("{}", format_report(b));
            }
            if let Some(out) = a.out {
                write_json(&out, &output)?;
            }
        }
        Command::Ablate(a) => {
            a.shape.apply(&mut cfg);
            a.model.apply(&mut cfg);
            a.train.apply(&mut cfg);
            a.synth.apply(&mut cfg);
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(t) = a.threads {
                cfg.threads = t;
            }
            let n_tasks = a.tasks.unwrap_or(cfg.train.n_eval_tasks);
            let rows = commands::ablate(&cfg, a.sweep, n_tasks, |r| eprintln!("{}", r.csv()))?;
            let mut csv = String::from(commands::ABLATION_HEADER);
            csv.push('\n');
            for r in &rows {
                csv.push_str(&r.csv());
                csv.push('\n');
            }
            match a.out {
                Some(out) => write_file(&out, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Attn(a) => {
            let path = model_path(a.model, &cfg)?;
            let artifact: ModelArtifact = commands::read_json(&path)?;
            if let (true, commands::DataSource::Synthetic { spec }) = (a.data.synthetic, &artifact.data) {
                cfg.synth = spec.clone();
            }
            cfg.model = artifact.model_config().clone();
            cfg.train_classes = artifact.train_classes;
            a.synth.apply(&mut cfg);
            a.data.apply(&mut cfg);
            if let Some(n) = a.train_classes {
                cfg.train_classes = n;
            }
            let (ds, _) = commands::load_data(&cfg, a.data.synthetic)?;
            let (_, eval_ds) = commands::split_classes(&ds, cfg.train_classes)?;
            let export = attn::export_attention(
                &artifact.params()?,
                &eval_ds,
                artifact.train.way,
                artifact.train.shot,
                a.episode_seed,
                a.downsample,
            )?;
            export.write(&a.out)?;
            println!(
                "episode seed {}: {} classes, {}×{} grid; wrote {} and {}",
                a.episode_seed,
                export.matrices.len(),
                export.manifest.grid,
                export.manifest.grid,
                a.out.display(),
                a.out.with_extension("json").display()
            );
        }
        Command::Gradcheck(a) => {
            let runs = commands::gradcheck_all(a.seed)?;
            let mut failed = 0;
            for r in &runs {
                println!(
                    "cpe={:<5} tmixer={:<5} e={}  max rel err {:.3e}  {}",
                    r.use_cpe,
                    r.use_tmixer,
                    r.frame_norm_exponent,
                    r.report.max_rel_error,
                    if r.report.passed { "ok" } else { "FAIL" }
                );
                failed += usize::from(!r.report.passed);
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} of {} gradient checks failed", runs.len())));
            }
        }
        Command::Cost(a) => {
            let sweep = commands::cost_sweep(a.d_k_min, a.d_k_max)?;
            let row = |d: u64| sweep.rows.iter().find(|r| r.d_k == d).expect("d_k in sweep");
            let (c8, c4) = (row(sweep.closest_8), row(sweep.closest_4));
            println!(
                "published: {:.2}G at 8 frames, {:.2}G at 4 frames",
                sweep.published_8_frames / 1e9,
                sweep.published_4_frames / 1e9
            );
            println!(
                "closest at 8 frames: d_k={} -> {:.3}G / {:.3}G ({:.1}% reduction)",
                c8.d_k,
                c8.sca_8_frames as f64 / 1e9,
                c8.sca_4_frames as f64 / 1e9,
                c8.reduction_pct
            );
            println!(
                "closest at 4 frames: d_k={} -> {:.3}G / {:.3}G ({:.1}% reduction)",
                c4.d_k,
                c4.sca_8_frames as f64 / 1e9,
                c4.sca_4_frames as f64 / 1e9,
                c4.reduction_pct
            );
            println!("d_k {}..={}: {}", a.d_k_min, a.d_k_max, sweep.finding());
            if let Some(out) = a.out {
                let mut csv = String::from("d_k,sca_8_frames,sca_4_frames,reduction_pct,rel_err_8,rel_err_4,matches\n");
                for r in &sweep.rows {
                    csv.push_str(&format!(
                        "{},{},{},{:.4},{:.6},{:.6},{}\n",
                        r.d_k, r.sca_8_frames, r.sca_4_frames, r.reduction_pct, r.rel_err_8, r.rel_err_4, r.matches
                    ));
                }
                write_file(&out, csv)?;
                write_json(&sidecar(&out), &serde_json::json!({
                    "d_k_min": a.d_k_min,
                    "d_k_max": a.d_k_max,
                    "finding": sweep.finding(),
                    "closest_8": sweep.closest_8,
                    "closest_4": sweep.closest_4,
                }))?;
            }
        }
        Command::Config(a) => {
            a.shape.apply(&mut cfg);
            a.model.apply(&mut cfg);
            a.train.apply(&mut cfg);
            a.synth.apply(&mut cfg);
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}
