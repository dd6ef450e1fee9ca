//! `dir sweep`: a lambda-by-seed grid of DIR training runs with a summary
//! table (mean and standard deviation of test accuracy per lambda). Cells
//! run in a worker pool capped by DIR_THREADS; each cell owns its output
//! subdirectory, so results are identical regardless of scheduling.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use dir_core::optim::OptimKind;
use dir_core::train::{run_experiment, Mode, TrainConfig};

use crate::args::Args;
use crate::errors::CliError;
use crate::manifest::{dataset_hashes, RunManifest};

const FLAGS: &[&str] = &[
    "data",
    "lambdas",
    "seeds",
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

struct Cell {
    lambda_idx: usize,
    lambda: f64,
    seed: u64,
}

struct CellResult {
    lambda_idx: usize,
    seed: u64,
    test_acc: Result<f64, String>,
}

pub fn run(argv: &[String], command_line: &str) -> Result<(), CliError> {
    let started = Instant::now();
    let args = Args::parse(argv, FLAGS)?;
    let data_dir = PathBuf::from(args.required("data")?);
    let out = PathBuf::from(args.required("out")?);
    let lambdas: Vec<f64> = args
        .required("lambdas")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad lambda '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    if lambdas.is_empty() || lambdas.iter().any(|&l| l < 0.0) {
        return Err(CliError::Usage("--lambdas must be non-negative".into()));
    }
    let n_seeds = args.usize_or("seeds", 5)?;
    if n_seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let base_seed = args.u64_or("seed", 0)?;
    let optimizer = OptimKind::parse(args.get("optimizer").unwrap_or("adam"))
        .ok_or_else(|| CliError::Usage("--optimizer must be adam or sgd".into()))?;
    let template = TrainConfig {
        mode: Mode::Dir,
        lambda: 0.0,
        r: args.f64_or("r", 0.25)?,
        lr: args.f64_or("lr", 1e-3)?,
        optimizer,
        batch_size: args.usize_or("batch", 32)?,
        max_epochs: args.usize_or("max-epochs", 400)?,
        patience: args.usize_or("patience", 5)?,
        seed: 0,
        audit_routing: true,
        precision_k: args.usize_or("k", 5)?,
    };
    let dataset = super::load_dataset(&data_dir)?;
    let bias = super::bias_label(&data_dir);
    std::fs::create_dir_all(&out)?;

    let mut cells = VecDeque::new();
    for (lambda_idx, &lambda) in lambdas.iter().enumerate() {
        for s in 0..n_seeds {
            cells.push_back(Cell {
                lambda_idx,
                lambda,
                seed: base_seed + s as u64,
            });
        }
    }
    let total_cells = cells.len();
    let workers = worker_count(total_cells);
    let queue = Mutex::new(cells);
    let results = Mutex::new(Vec::<CellResult>::with_capacity(total_cells));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cell = { queue.lock().unwrap().pop_front() };
                let Some(cell) = cell else { break };
                let mut cfg = template.clone();
                cfg.lambda = cell.lambda;
                cfg.seed = cell.seed;
                let cell_dir = out.join(format!("lambda_{}", cell.lambda)).join(format!(
                    "seed_{}",
                    cell.seed
                ));
                let outcome = run_cell(&cfg, &dataset, &cell_dir, &bias);
                results.lock().unwrap().push(CellResult {
                    lambda_idx: cell.lambda_idx,
                    seed: cell.seed,
                    test_acc: outcome,
                });
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|r| (r.lambda_idx, r.seed));
    let mut summary = String::from("lambda,runs_ok,mean_test_acc,std_test_acc\n");
    for (lambda_idx, &lambda) in lambdas.iter().enumerate() {
        let accs: Vec<f64> = results
            .iter()
            .filter(|r| r.lambda_idx == lambda_idx)
            .filter_map(|r| r.test_acc.as_ref().ok().copied())
            .collect();
        let (mean, std) = mean_std(&accs);
        summary.push_str(&format!("{},{},{},{}\n", lambda, accs.len(), mean, std));
    }
    std::fs::write(out.join("summary.csv"), &summary)?;
    for r in &results {
        if let Err(e) = &r.test_acc {
            eprintln!(
                "cell lambda={} seed={} failed: {e}",
                lambdas[r.lambda_idx], r.seed
            );
        }
    }

    let mut manifest = RunManifest::new(
        command_line.to_string(),
        serde_json::json!({
            "data": data_dir.display().to_string(),
            "lambdas": lambdas,
            "seeds": n_seeds,
            "base_seed": base_seed,
            "r": template.r,
            "lr": template.lr,
            "batch": template.batch_size,
        }),
    );
    manifest.dataset_hash = dataset_hashes(&data_dir)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.write(&out)?;
    print!("{summary}");
    Ok(())
}

fn run_cell(
    cfg: &TrainConfig,
    dataset: &dir_core::graph::Dataset,
    cell_dir: &std::path::Path,
    bias: &str,
) -> Result<f64, String> {
    let result = run_experiment(cfg, dataset).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(cell_dir).map_err(|e| e.to_string())?;
    let csv_name = format!("{}_b{}_s{}.csv", cfg.mode.name(), bias, cfg.seed);
    std::fs::write(cell_dir.join(csv_name), result.csv()).map_err(|e| e.to_string())?;
    let meta = serde_json::json!({
        "mode": cfg.mode.name(),
        "r": cfg.r,
        "lambda": cfg.lambda,
        "k": cfg.precision_k,
        "bias": bias,
        "best_epoch": result.best_epoch,
    });
    dir_core::nn::save_checkpoint(&cell_dir.join("checkpoint"), &result.params, &meta)
        .map_err(|e| e.to_string())?;
    Ok(result.final_row().test_acc)
}

fn worker_count(cells: usize) -> usize {
    let cap = std::env::var("DIR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    cap.unwrap_or(cpus).min(cells.max(1))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}
