//! `dir generate`: write a Spurious-Motif dataset (three JSONL splits, a
//! stats report, and a run manifest) into an output directory.

use std::path::PathBuf;
use std::time::Instant;

use dir_core::graph::{save_jsonl, Split};
use dir_core::synth::{generate_dataset, stats_report, DependencyMode, GenConfig};

use crate::args::Args;
use crate::errors::CliError;
use crate::manifest::{dataset_hashes, RunManifest};

const FLAGS: &[&str] = &[
    "bias",
    "train",
    "val",
    "test",
    "seed",
    "mode",
    "base-scale",
    "base-size",
    "feature-dim",
    "out",
];

pub fn run(argv: &[String], command_line: &str) -> Result<(), CliError> {
    let started = Instant::now();
    let args = Args::parse(argv, FLAGS)?;
    let bias = args.f64_or("bias", 0.9)?;
    if !(0.0..=1.0).contains(&bias) {
        return Err(CliError::Usage(format!(
            "--bias {bias} is outside [0, 1]"
        )));
    }
    let mode = match args.get("mode").unwrap_or("biased") {
        "biased" => DependencyMode::Biased,
        "independent" => DependencyMode::Independent,
        "latent" => DependencyMode::LatentConfounder,
        other => {
            return Err(CliError::Usage(format!(
                "--mode must be biased, independent, or latent, got '{other}'"
            )))
        }
    };
    let cfg = GenConfig {
        bias,
        n_train: args.usize_or("train", 3000)?,
        n_val: args.usize_or("val", 1000)?,
        n_test: args.usize_or("test", 2000)?,
        base_size: args.usize_or("base-size", 20)?,
        test_base_scale: args.f64_or("base-scale", 3.0)?,
        feature_dim: args.usize_or("feature-dim", 4)?,
        mode,
        seed: args.u64_or("seed", 0)?,
    };
    cfg.validate().map_err(CliError::Usage)?;
    let out = PathBuf::from(args.required("out")?);
    std::fs::create_dir_all(&out)?;

    let dataset = generate_dataset(&cfg);
    for split in [Split::Train, Split::Val, Split::Test] {
        let graphs: Vec<dir_core::graph::Graph> =
            dataset.split(split).into_iter().cloned().collect();
        save_jsonl(&graphs, out.join(format!("{}.jsonl", split.name())))?;
    }
    std::fs::write(out.join("stats.txt"), stats_report(&dataset))?;

    let mut manifest = RunManifest::new(
        command_line.to_string(),
        serde_json::json!({
            "bias": cfg.bias,
            "train": cfg.n_train,
            "val": cfg.n_val,
            "test": cfg.n_test,
            "base_size": cfg.base_size,
            "test_base_scale": cfg.test_base_scale,
            "feature_dim": cfg.feature_dim,
            "mode": match cfg.mode {
                DependencyMode::Biased => "biased",
                DependencyMode::Independent => "independent",
                DependencyMode::LatentConfounder => "latent",
            },
            "seed": cfg.seed,
        }),
    );
    manifest.dataset_hash = dataset_hashes(&out)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.write(&out)?;
    println!(
        "generated {} graphs into {}",
        dataset.graphs.len(),
        out.display()
    );
    Ok(())
}
