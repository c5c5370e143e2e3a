use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use murag_cli::{
    gen_workload, run_attacks, run_experiment, run_sweep, run_tau_study, CliError, ExperimentConfig, RunOptions,
};

#[derive(Parser)]
#[command(name = "murag", version, about = "Differentially private multi-query RAG simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over a workload
    Run(Common),
    /// Grid search over hyperparameters, best cell per method
    Sweep(Common),
    /// Membership inference against configured systems
    Attack(Common),
    /// Error of the adaptive threshold against the exact top-k threshold
    TauStudy(Common),
    /// Write the synthetic corpus and queries as JSONL
    GenWorkload(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace all noise with zero. Results carry no privacy guarantee.
    #[arg(long)]
    noiseless: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("murag: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (common, which) = match cmd {
        Command::Run(c) => (c, "run"),
        Command::Sweep(c) => (c, "sweep"),
        Command::Attack(c) => (c, "attack"),
        Command::TauStudy(c) => (c, "tau-study"),
        Command::GenWorkload(c) => (c, "gen-workload"),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.noiseless {
        eprintln!("WARNING: --noiseless disables all noise; nothing produced by this run is differentially private");
    }
    let opts = RunOptions { out_dir: common.out.clone(), noiseless: common.noiseless };
    match which {
        "run" => {
            let (_, row) = run_experiment(&cfg, &opts)?;
            println!(
                "{} seed={} eps={} accuracy={:.4} precision={}",
                row.method,
                row.seed,
                row.eps_claim.map_or("-".into(), |e| format!("{e:.6}")),
                row.match_accuracy,
                row.retrieval_precision.map_or("-".into(), |p| format!("{p:.2}")),
            );
        }
        "sweep" => {
            for b in run_sweep(&cfg, &opts)?.best {
                println!("{:16} {:32} accuracy={:.4} over {} seeds", b.method, b.cell, b.mean_match_accuracy, b.seeds);
            }
        }
        "attack" => {
            for s in run_attacks(&cfg, &opts)?.summary {
                println!("system {} ({}) mean AUC {:.4} over {} seeds", s.system, s.method, s.mean_auc, s.seeds);
            }
        }
        "tau-study" => {
            for r in run_tau_study(&cfg, &opts)? {
                println!("eps_thr={} mean |err|={:.4} max |err|={:.4}", r.eps_thr, r.mean_abs_error, r.max_abs_error);
            }
        }
        _ => {
            let d = gen_workload(&cfg, &opts)?;
            println!("wrote {} documents and {} queries to {}", d.corpus.len(), d.queries.len(), opts.out_dir.display());
        }
    }
    Ok(())
}
