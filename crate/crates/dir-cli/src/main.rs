//! Command-line surface for the invariant-rationale training stack.
//!
//! Subcommands: `generate`, `train`, `eval`, `sweep`, `export`. Every
//! command is deterministic given its flags and writes a run manifest into
//! its output directory. Exit codes: 0 success, 2 usage error, 3 missing
//! input, 4 incompatible inputs, 5 not found.

mod args;
mod commands;
mod errors;
mod manifest;

use errors::CliError;

const USAGE: &str = "usage: dir <command> [--flag value ...]

commands:
  generate   write a synthetic spurious-motif dataset
             --bias 0.9 --train 3000 --val 1000 --test 2000 --seed 0
             --mode biased|independent|latent --base-scale 3 --out DIR
  train      train one model and write its metrics CSV and checkpoint
             --data DIR --mode dir|dir-var|erm|attn --lambda 0.01 --r 0.25
             --lr 0.001 --batch 32 --seed 0 --out DIR
  eval       re-evaluate a checkpoint on a dataset split
             --checkpoint DIR --data DIR [--k 5] [--split test] [--out DIR]
  sweep      lambda-by-seed grid of dir runs with a summary table
             --data DIR --lambdas 0,0.001,0.01 --seeds 5 --out DIR
  export     write per-graph rationale files
             --checkpoint DIR --data DIR [--ids 1,2 | --split test]
             --format json|dot --out DIR
";

fn run() -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    let command_line = argv.join(" ");
    let Some(cmd) = argv.get(1) else {
        return Err(CliError::Usage(USAGE.into()));
    };
    let rest = &argv[2..];
    match cmd.as_str() {
        "generate" => commands::generate::run(rest, &command_line),
        "train" => commands::train::run(rest, &command_line),
        "eval" => commands::eval::run(rest, &command_line),
        "sweep" => commands::sweep::run(rest, &command_line),
        "export" => commands::export::run(rest, &command_line),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!(
            "unknown command '{other}'\n{USAGE}"
        ))),
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
