//! `dir export`: write per-graph rationale files (JSON or DOT) from a
//! trained checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use dir_core::engine::{infer, rationale_dot, rationale_json};
use dir_core::graph::Split;
use dir_core::nn::load_checkpoint;

use crate::args::Args;
use crate::errors::CliError;
use crate::manifest::{dataset_hashes, RunManifest};

const FLAGS: &[&str] = &["checkpoint", "data", "ids", "split", "format", "out"];

pub fn run(argv: &[String], command_line: &str) -> Result<(), CliError> {
    let started = Instant::now();
    let args = Args::parse(argv, FLAGS)?;
    let ckpt_dir = PathBuf::from(args.required("checkpoint")?);
    let data_dir = PathBuf::from(args.required("data")?);
    let out = PathBuf::from(args.required("out")?);
    let format = args.get("format").unwrap_or("json");
    if format != "json" && format != "dot" {
        return Err(CliError::Usage(format!(
            "--format must be json or dot, got '{format}'"
        )));
    }
    if !ckpt_dir.join("manifest.json").exists() {
        return Err(CliError::MissingInput(format!(
            "checkpoint {} does not exist",
            ckpt_dir.display()
        )));
    }
    let (params, meta) = load_checkpoint(&ckpt_dir)?;
    let r = meta["r"].as_f64().unwrap_or(0.25);
    let dataset = super::load_dataset(&data_dir)?;
    if dataset.feature_dim() != params.arch.feature_dim {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects feature dim {}, dataset has {}",
            params.arch.feature_dim,
            dataset.feature_dim()
        )));
    }

    let selected: Vec<&dir_core::graph::Graph> = match (args.get("ids"), args.get("split")) {
        (Some(ids), _) => {
            let mut graphs = Vec::new();
            for part in ids.split(',') {
                let id: u64 = part
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad graph id '{part}'")))?;
                let g = dataset
                    .graphs
                    .iter()
                    .find(|g| g.id == id)
                    .ok_or_else(|| CliError::NotFound(format!("graph id {id}")))?;
                graphs.push(g);
            }
            graphs
        }
        (None, split) => {
            let split = match split.unwrap_or("test") {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(CliError::Usage(format!(
                        "--split must be train, val, or test, got '{other}'"
                    )))
                }
            };
            dataset.split(split)
        }
    };

    std::fs::create_dir_all(&out)?;
    for g in &selected {
        let inf = infer(&params, g, r)?;
        match format {
            "json" => {
                let mut text = serde_json::to_string_pretty(&rationale_json(g, &inf))?;
                text.push('\n');
                std::fs::write(out.join(format!("graph_{}.json", g.id)), text)?;
            }
            _ => {
                std::fs::write(out.join(format!("graph_{}.dot", g.id)), rationale_dot(g, &inf))?;
            }
        }
    }
    let mut manifest = RunManifest::new(
        command_line.to_string(),
        serde_json::json!({
            "checkpoint": ckpt_dir.display().to_string(),
            "data": data_dir.display().to_string(),
            "format": format,
            "count": selected.len(),
        }),
    );
    manifest.dataset_hash = dataset_hashes(&data_dir)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.write(&out)?;
    println!("exported {} rationales to {}", selected.len(), out.display());
    Ok(())
}
