//! `tarn` — synth | train | eval | gradcheck.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

mod config;

use clap::{Parser, Subcommand};
use config::{load_config, RunConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tarn_core::data;
use tarn_core::episodic::{
    binomial_half_width_95, eval_records_csv, evaluate, train, train_log_csv,
};
use tarn_core::error::{Result, TarnError};
use tarn_core::model::{gradcheck_model, make_fixture, Mode, ModelConfig, TarnModel};

#[derive(Parser)]
#[command(name = "tarn", about = "Temporal attentive relation networks for few-shot and zero-shot sequence classification", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from a spec JSON.
    Synth {
        /// Synthetic dataset spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for segments.tsf (and semantics.tsv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the log, best checkpoint and summary.
    Train {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path overrides, e.g. --set train.val_every=100.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the held-out classes.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
        /// Support-video segment count of the probe episode.
        #[arg(long, default_value_t = 3)]
        support_segments: usize,
        /// Query-video segment count of the probe episode.
        #[arg(long, default_value_t = 3)]
        query_segments: usize,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Maximum accepted relative error per tensor.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    let result = match cli.cmd {
        Cmd::Synth { spec, out } => cmd_synth(&spec, &out),
        Cmd::Train { config, set } => cmd_train(&config, &set),
        Cmd::Eval {
            config,
            checkpoint,
            set,
        } => cmd_eval(&config, &checkpoint, &set),
        Cmd::Gradcheck {
            config,
            set,
            support_segments,
            query_segments,
            step,
            threshold,
        } => cmd_gradcheck(&config, &set, support_segments, query_segments, step, threshold),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &TarnError) -> i32 {
    match e {
        TarnError::Shape { .. } | TarnError::Contract(_) | TarnError::Config(_) => 1,
        TarnError::Data(_) | TarnError::Load { .. } | TarnError::Io(_) => 2,
        TarnError::Numeric(_) => 3,
    }
}

/// Stdout write that tolerates a closed pipe (`tarn ... | head`).
fn emit(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| TarnError::Config(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let spec: data::SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| TarnError::Config(format!("spec is not a valid synthetic spec: {e}")))?;
    let dataset = data::generate_synthetic(&spec)?;
    std::fs::create_dir_all(out)?;
    let tsf = out.join("segments.tsf");
    data::save_dataset(&tsf, &dataset)?;
    let tsv = if dataset.d_sem().is_some() {
        let p = out.join("semantics.tsv");
        data::save_semantics(&p, &dataset.semantic_vectors())?;
        Some(p)
    } else {
        None
    };
    let summary = serde_json::json!({
        "command": "synth",
        "videos": dataset.n_videos(),
        "classes": dataset.n_classes(),
        "d_in": dataset.d_in(),
        "tsf": tsf,
        "tsv": tsv,
    });
    emit(summary.to_string());
    Ok(())
}

fn cmd_train(config_path: &Path, sets: &[String]) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(config_path, sets)?;
    let dataset = cfg.load_dataset()?;
    let (seen, _unseen) = cfg.split(&dataset)?;
    let model_cfg = cfg.model_config(&dataset)?;
    let mut model = TarnModel::new(model_cfg, cfg.seed)?;
    let spec = cfg.episode_spec(seen.len());
    let train_cfg = cfg.train_config();

    let result = train(&mut model, &dataset, &seen, &spec, &train_cfg)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("train_log.csv");
    std::fs::write(&log_path, train_log_csv(&result.log))?;
    let ckpt_path = cfg.out_dir.join("checkpoint.tck");
    data::save_checkpoint(
        &ckpt_path,
        result.best_params.names(),
        result.best_params.mats(),
    )?;

    let final_val = result.log.iter().rev().find_map(|r| r.val_accuracy);
    let summary = serde_json::json!({
        "command": "train",
        "train_episodes": train_cfg.train_episodes,
        "val_episodes": train_cfg.val_episodes,
        "final_loss": result.log.last().map(|r| r.loss),
        "best_val_accuracy": result.best_val_accuracy,
        "final_val_accuracy": final_val,
        "checkpoint": ckpt_path,
        "train_log": log_path,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        cfg.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    emit(summary.to_string());
    Ok(())
}

fn cmd_eval(config_path: &Path, checkpoint: &Path, sets: &[String]) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(config_path, sets)?;
    let dataset = cfg.load_dataset()?;
    let (_seen, unseen) = cfg.split(&dataset)?;
    let model_cfg = cfg.model_config(&dataset)?;
    let mut model = TarnModel::new(model_cfg, cfg.seed)?;
    model.load_params(data::load_checkpoint(checkpoint)?)?;

    let spec = cfg.episode_spec(unseen.len());
    let train_cfg = cfg.train_config();
    let threads = std::env::var("TARN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);
    let res = evaluate(
        &model,
        &dataset,
        &unseen,
        &spec,
        train_cfg.test_episodes,
        cfg.seed,
        threads,
    )?;
    let half_width = binomial_half_width_95(res.accuracy, res.n_queries);
    emit(format!(
        "accuracy {:.4} ± {:.4} (95% binomial over {} queries, {} episodes)",
        res.accuracy, half_width, res.n_queries, train_cfg.test_episodes
    ));

    std::fs::create_dir_all(&cfg.out_dir)?;
    let records_path = cfg.out_dir.join("eval_records.csv");
    std::fs::write(&records_path, eval_records_csv(&res.records, spec.way))?;
    let summary = serde_json::json!({
        "command": "eval",
        "accuracy": res.accuracy,
        "half_width_95": half_width,
        "episodes": train_cfg.test_episodes,
        "queries": res.n_queries,
        "records": records_path,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    emit(summary.to_string());
    Ok(())
}

fn cmd_gradcheck(
    config_path: &Path,
    sets: &[String],
    support_segments: usize,
    query_segments: usize,
    step: f64,
    threshold: f64,
) -> Result<()> {
    let cfg = load_config(config_path, sets)?;
    let model_cfg = standalone_model_config(&cfg)?;
    let model = TarnModel::new(model_cfg, cfg.seed)?;
    let fixture = make_fixture(
        &model.cfg,
        cfg.episode.way,
        if cfg.mode == Mode::Zsl { 1 } else { cfg.episode.shot },
        support_segments,
        query_segments,
        cfg.seed,
    );
    let report = gradcheck_model(&model, &fixture, step, threshold)?;
    for t in &report.tensors {
        emit(format!(
            "{:<20} max_rel_err {:>12.3e}  {}",
            t.name,
            t.max_rel_err,
            if t.max_rel_err < threshold { "pass" } else { "FAIL" }
        ));
    }
    let summary = serde_json::json!({
        "command": "gradcheck",
        "tensors": report.tensors.len(),
        "worst_rel_err": report.worst(),
        "threshold": threshold,
        "pass": report.pass(),
    });
    emit(summary.to_string());
    if !report.pass() {
        let failing: Vec<&str> = report.failing().iter().map(|t| t.name.as_str()).collect();
        return Err(TarnError::Numeric(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )));
    }
    Ok(())
}

/// Gradcheck runs from explicit model dimensions, without a dataset.
fn standalone_model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    let d_in = cfg.model.d_in.ok_or_else(|| {
        TarnError::Config("gradcheck needs model.d_in in the config".into())
    })?;
    if cfg.mode == Mode::Zsl && cfg.model.d_sem.is_none() {
        return Err(TarnError::Config(
            "gradcheck on a zsl config needs model.d_sem".into(),
        ));
    }
    let model_cfg = ModelConfig {
        mode: cfg.mode,
        variant: cfg.variant,
        measure: cfg.measure,
        d_in,
        hidden: cfg.model.hidden.unwrap_or(256),
        nn_hidden: cfg.model.nn_hidden.unwrap_or(512),
        relation_hidden: cfg.model.relation_hidden.unwrap_or(256),
        d_sem: cfg.model.d_sem,
        semantic_hidden: cfg.model.semantic_hidden.unwrap_or(4096),
        semantic_out: cfg.model.semantic_out,
    };
    model_cfg.validate()?;
    Ok(model_cfg)
}
