use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use rsnlab::eval::{read_report, summary_row};
use rsnlab::pipeline::{
    run_all, run_step, truth_report, verify_steps, PipelineConfig, PipelineError, RunManifest, RunOptions, Step,
};

#[derive(Parser)]
#[command(name = "rsnlab", version, about = "Resting-state network labeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Last step for `run-all`, or the only step checked by `verify`.
    #[arg(long, global = true)]
    step: Option<String>,
    /// Global seed; section seeds not set in the config follow it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; runs live under `<out>/runs/<run_id>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Re-execute steps even when cached.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    Synth,
    Preprocess,
    Groupica,
    Dualreg,
    Represent,
    Train,
    Predict,
    Evaluate,
    RunAll,
    Verify,
}

impl Command {
    fn step(self) -> Option<Step> {
        Some(match self {
            Command::Synth => Step::Synth,
            Command::Preprocess => Step::Preprocess,
            Command::Groupica => Step::Groupica,
            Command::Dualreg => Step::Dualreg,
            Command::Represent => Step::Represent,
            Command::Train => Step::Train,
            Command::Predict => Step::Predict,
            Command::Evaluate => Step::Evaluate,
            Command::RunAll | Command::Verify => return None,
        })
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p, cli.seed)?,
        None => PipelineConfig::with_seed(cli.seed.unwrap_or(0)),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(id) = &cli.run_id {
        cfg.run_id = id.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_manifest(m: &RunManifest) {
    let line = json!({
        "step": m.step,
        "cached": m.cached,
        "manifest_hash": m.manifest_hash,
        "duration_s": m.duration_s,
        "outputs": m.outputs.len(),
    });
    println!("{line}");
}

fn run(cli: &Cli) -> Result<bool, PipelineError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    let step_flag = cli.step.as_deref().map(str::parse::<Step>).transpose()?;
    let opts = RunOptions { force: cli.force };
    match cli.command {
        Command::RunAll => {
            for m in run_all(&cfg, step_flag, opts)? {
                print_manifest(&m);
            }
            Ok(true)
        }
        Command::Verify => {
            let run_dir = cfg.run_dir();
            let steps: Vec<Step> = match step_flag {
                Some(s) => vec![s],
                None => Step::ALL.to_vec(),
            };
            let report = verify_steps(&run_dir, &steps);
            // corrupted outputs may not decode, so recovery is only scored on a clean run
            let truth = if report.is_clean() { truth_report(&run_dir)? } else { None };
            println!("{}", json!({ "verify": report, "truth": truth }));
            Ok(report.is_clean())
        }
        cmd => {
            let step = cmd.step().expect("single-step command");
            if let Some(s) = step_flag {
                if s != step {
                    return Err(PipelineError::Config(format!("--step {s} conflicts with subcommand {step}")));
                }
            }
            let m = run_step(&cfg, step, opts)?;
            print_manifest(&m);
            if step == Step::Evaluate {
                let path = cfg.run_dir().join("evaluate").join("report.json");
                if let Ok(r) = read_report(&path) {
                    eprintln!("{}", summary_row("MLP", &r));
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "error": { "kind": "verify_failed", "message": "run does not verify" } }));
            ExitCode::from(7)
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
