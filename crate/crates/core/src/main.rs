use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tomoguard::harness::{cmd_attack, cmd_bound, cmd_eval, cmd_gen, cmd_run, cmd_train, ExperimentConfig};
use tomoguard::Result;

#[derive(Parser)]
#[command(name = "tomoguard", version, about = "Topology obfuscation experiments on rooted delay trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated topology file.
    Gen,
    /// Train the generator; write a checkpoint and a trace CSV.
    Train,
    /// Infer a topology from a (defended) observation.
    Attack,
    /// Compare two topology files.
    Eval {
        truth: PathBuf,
        inferred: PathBuf,
    },
    /// Run the experiment grid; write the CSV and JSON summary.
    Run,
    /// Mutual information, Fano bound and empirical success probability.
    Bound,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn show(p: &Path) {
    println!("wrote {}", p.display());
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => show(&cmd_gen(&config(cli)?, &cli.out)?),
        Command::Train => {
            let (ckpt, trace) = cmd_train(&config(cli)?, &cli.out)?;
            show(&ckpt);
            show(&trace);
        }
        Command::Attack => show(&cmd_attack(&config(cli)?, &cli.out)?),
        Command::Eval { truth, inferred } => {
            let (report, path) = cmd_eval(truth, inferred, &cli.out)?;
            println!(
                "ted_sim {} struct_sim {} link_dist {}",
                report.ted_similarity, report.struct_similarity, report.link_distance
            );
            show(&path);
        }
        Command::Run => {
            let (csv, json) = cmd_run(&config(cli)?, &cli.out)?;
            show(&csv);
            show(&json);
        }
        Command::Bound => {
            let report = cmd_bound(&config(cli)?)?;
            println!("{report}");
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("bound.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            show(&path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
