//! `dir train`: train one model, write the per-epoch metrics CSV, the
//! best-epoch checkpoint, and a run manifest.

use std::path::PathBuf;
use std::time::Instant;

use dir_core::graph::Dataset;
use dir_core::nn::save_checkpoint;
use dir_core::optim::OptimKind;
use dir_core::train::{run_experiment, Mode, RunResult, TrainConfig};

use crate::args::Args;
use crate::errors::CliError;
use crate::manifest::{dataset_hashes, RunManifest};

const FLAGS: &[&str] = &[
    "data",
    "mode",
    "lambda",
    "r",
    "lr",
    "batch",
    "seed",
    "out",
    "optimizer",
    "max-epochs",
    "patience",
    "k",
];

pub struct ResolvedTrain {
    pub cfg: TrainConfig,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub bias: String,
}

pub fn resolve(argv: &[String]) -> Result<ResolvedTrain, CliError> {
    let args = Args::parse(argv, FLAGS)?;
    let mode = Mode::parse(args.required("mode")?)
        .ok_or_else(|| CliError::Usage("--mode must be dir, dir-var, erm, or attn".into()))?;
    let optimizer = OptimKind::parse(args.get("optimizer").unwrap_or("adam"))
        .ok_or_else(|| CliError::Usage("--optimizer must be adam or sgd".into()))?;
    let cfg = TrainConfig {
        mode,
        lambda: args.f64_or("lambda", 1e-2)?,
        r: args.f64_or("r", 0.25)?,
        lr: args.f64_or("lr", 1e-3)?,
        optimizer,
        batch_size: args.usize_or("batch", 32)?,
        max_epochs: args.usize_or("max-epochs", 400)?,
        patience: args.usize_or("patience", 5)?,
        seed: args.u64_or("seed", 0)?,
        audit_routing: true,
        precision_k: args.usize_or("k", 5)?,
    };
    if cfg.lambda < 0.0 {
        return Err(CliError::Usage(format!("--lambda {} < 0", cfg.lambda)));
    }
    if !(0.0 < cfg.r && cfg.r < 1.0) {
        return Err(CliError::Usage(format!("--r {} outside (0, 1)", cfg.r)));
    }
    let data_dir = PathBuf::from(args.required("data")?);
    let out = PathBuf::from(args.required("out")?);
    let bias = super::bias_label(&data_dir);
    Ok(ResolvedTrain {
        cfg,
        data_dir,
        out,
        bias,
    })
}

pub fn config_json(r: &ResolvedTrain) -> serde_json::Value {
    serde_json::json!({
        "data": r.data_dir.display().to_string(),
        "mode": r.cfg.mode.name(),
        "lambda": r.cfg.lambda,
        "r": r.cfg.r,
        "lr": r.cfg.lr,
        "optimizer": r.cfg.optimizer.name(),
        "batch": r.cfg.batch_size,
        "max_epochs": r.cfg.max_epochs,
        "patience": r.cfg.patience,
        "seed": r.cfg.seed,
        "k": r.cfg.precision_k,
        "bias": r.bias,
    })
}

/// Trains and writes all run outputs; shared with the sweep command.
pub fn execute(
    resolved: &ResolvedTrain,
    dataset: &Dataset,
    command_line: &str,
) -> Result<RunResult, CliError> {
    let started = Instant::now();
    let result = run_experiment(&resolved.cfg, dataset)?;
    write_outputs(resolved, &result, command_line, started)?;
    Ok(result)
}

fn write_outputs(
    resolved: &ResolvedTrain,
    result: &RunResult,
    command_line: &str,
    started: Instant,
) -> Result<(), CliError> {
    let out = &resolved.out;
    std::fs::create_dir_all(out)?;
    let csv_name = format!(
        "{}_b{}_s{}.csv",
        resolved.cfg.mode.name(),
        resolved.bias,
        resolved.cfg.seed
    );
    std::fs::write(out.join(&csv_name), result.csv())?;
    let meta = serde_json::json!({
        "mode": resolved.cfg.mode.name(),
        "r": resolved.cfg.r,
        "lambda": resolved.cfg.lambda,
        "k": resolved.cfg.precision_k,
        "bias": resolved.bias,
        "best_epoch": result.best_epoch,
    });
    save_checkpoint(&out.join("checkpoint"), &result.params, &meta)?;
    let mut manifest = RunManifest::new(command_line.to_string(), config_json(resolved));
    manifest.dataset_hash = dataset_hashes(&resolved.data_dir)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(())
}

pub fn run(argv: &[String], command_line: &str) -> Result<(), CliError> {
    let resolved = resolve(argv)?;
    let dataset = super::load_dataset(&resolved.data_dir)?;
    let result = execute(&resolved, &dataset, command_line)?;
    let last = result.final_row();
    println!(
        "{} seed {}: best epoch {}, val_acc {:.4}, test_acc {:.4}, prec@{} {:.4}",
        resolved.cfg.mode.name(),
        resolved.cfg.seed,
        result.best_epoch,
        last.val_acc,
        last.test_acc,
        resolved.cfg.precision_k,
        last.prec_at_k
    );
    Ok(())
}
