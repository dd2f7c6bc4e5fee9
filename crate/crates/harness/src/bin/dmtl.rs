use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmtl_core::datagen::{generate, write_csv_tasks, GenConfig, TaskKind};
use dmtl_harness::experiment::SPEC_FILE;
use dmtl_harness::{run_experiment, summarize_dir, ExperimentSpec, HarnessError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dmtl",
    version,
    about = "Distributed low-rank multi-task learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 1.0)]
        corr_decay: f64,
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (solver, seed) cell of an experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; defaults to the spec's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the traces in a directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Excess-risk thresholds; defaults to the epsilons of the spec in `--in`.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: dmtl_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Gen {
            p,
            m,
            n,
            r,
            corr_decay,
            task,
            seed,
            out,
        } => {
            let cfg = GenConfig::new(n, p, m, r, corr_decay, task, seed);
            cfg.validate()
                .map_err(|e| HarnessError::config(e.to_string()))?;
            let inst = generate(&cfg)?;
            write_csv_tasks(&out, &inst.train, task, Some(&inst.truth), Some(&cfg))?;
            println!("wrote {m} tasks to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { spec, out } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            let out = out.or_else(|| spec.output.clone()).ok_or_else(|| {
                HarnessError::config("no output directory: pass --out or set `output`")
            })?;
            let report = run_experiment(&spec, &out)?;
            let diverged: Vec<_> = report.diverged().collect();
            println!(
                "{} cells written to {} (aggregate {})",
                report.cells.len(),
                out.display(),
                report.aggregate.display()
            );
            if diverged.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for c in &diverged {
                    eprintln!("diverged: {} seed {}", c.solver, c.seed);
                }
                Ok(ExitCode::from(EXIT_DIVERGED))
            }
        }
        Command::Summarize { input, out, eps } => {
            let eps = match eps {
                Some(e) => e,
                None => spec_epsilons(&input)?,
            };
            let rows = summarize_dir(&input, &out, &eps)?;
            println!("{} aggregate rows written to {}", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn spec_epsilons(dir: &Path) -> Result<Vec<f64>, HarnessError> {
    let path = dir.join(SPEC_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(ExperimentSpec::from_file(&path)?.epsilons)
}
