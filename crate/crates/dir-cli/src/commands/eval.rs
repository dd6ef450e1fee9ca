//! `dir eval`: re-evaluate a checkpoint on a dataset split and report
//! accuracy, rationale precision, and spurious confidence. Running it on a
//! training run's own test split reproduces the final CSV row exactly.

use std::path::PathBuf;
use std::time::Instant;

use dir_core::graph::Split;
use dir_core::nn::load_checkpoint;
use dir_core::train::{evaluate, Mode};

use crate::args::Args;
use crate::errors::CliError;
use crate::manifest::{dataset_hashes, RunManifest};

const FLAGS: &[&str] = &["checkpoint", "data", "k", "split", "out"];

pub fn run(argv: &[String], command_line: &str) -> Result<(), CliError> {
    let started = Instant::now();
    let args = Args::parse(argv, FLAGS)?;
    let ckpt_dir = PathBuf::from(args.required("checkpoint")?);
    let data_dir = PathBuf::from(args.required("data")?);
    if !ckpt_dir.join("manifest.json").exists() {
        return Err(CliError::MissingInput(format!(
            "checkpoint {} does not exist",
            ckpt_dir.display()
        )));
    }
    let k = args.usize_or("k", 5)?;
    let split = match args.get("split").unwrap_or("test") {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => {
            return Err(CliError::Usage(format!(
                "--split must be train, val, or test, got '{other}'"
            )))
        }
    };
    let (params, meta) = load_checkpoint(&ckpt_dir)?;
    let dataset = super::load_dataset(&data_dir)?;
    if dataset.feature_dim() != params.arch.feature_dim {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects feature dim {}, dataset has {}",
            params.arch.feature_dim,
            dataset.feature_dim()
        )));
    }
    if dataset.n_classes() > params.arch.n_classes {
        return Err(CliError::Incompatible(format!(
            "checkpoint has {} classes, dataset needs {}",
            params.arch.n_classes,
            dataset.n_classes()
        )));
    }
    let mode = Mode::parse(meta["mode"].as_str().unwrap_or("dir"))
        .ok_or_else(|| CliError::Incompatible("checkpoint has an unknown mode".into()))?;
    let r = meta["r"].as_f64().unwrap_or(0.25);

    let graphs = dataset.split(split);
    let metrics = evaluate(&params, &graphs, mode, r, k)?;
    println!(
        "split={} acc={} prec_at_{}={} spurious_entropy={}",
        split.name(),
        metrics.acc,
        k,
        metrics.prec_at_k,
        metrics.spurious_entropy
    );

    let out = match args.get("out") {
        Some(o) => PathBuf::from(o),
        None => ckpt_dir
            .parent()
            .map(|p| p.join("eval"))
            .unwrap_or_else(|| PathBuf::from("eval")),
    };
    std::fs::create_dir_all(&out)?;
    let report = serde_json::json!({
        "split": split.name(),
        "mode": mode.name(),
        "r": r,
        "k": k,
        "acc": metrics.acc,
        "prec_at_k": metrics.prec_at_k,
        "spurious_entropy": metrics.spurious_entropy,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(out.join("eval.json"), text)?;
    let mut manifest = RunManifest::new(
        command_line.to_string(),
        serde_json::json!({
            "checkpoint": ckpt_dir.display().to_string(),
            "data": data_dir.display().to_string(),
            "split": split.name(),
            "k": k,
        }),
    );
    manifest.dataset_hash = dataset_hashes(&data_dir)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.write(&out)?;
    Ok(())
}
