//! Scenario driver for the finsler workbench.
//!
//! `finsler run <file>` executes the tasks of a declarative scenario in
//! order, writing one key-value report per task plus CSV tables, and
//! exits 0 only if every task passes. `finsler validate <file>` prints
//! well-formedness diagnostics without running anything.
//!
//! Exit codes: 0 all tasks pass; 1 a task fails (or is degenerate);
//! 2 the scenario cannot be read, parsed, or built; 3 a solver reports
//! no convergence.

mod report;
mod scenario;
mod tasks;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use finsler::Error;
use report::{Doc, Status};
use tasks::{run_task, Ctx, TaskOutcome};

/// Names the default output directory when neither `--out` nor the
/// scenario's `output` key is given.
const OUT_ENV: &str = "FINSLER_OUT";

#[derive(Parser)]
#[command(name = "finsler", version, about = "Finsler workbench scenario driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task in a scenario file and write reports.
    Run {
        file: PathBuf,
        /// Output directory (default: scenario `output`, then $FINSLER_OUT,
        /// then `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for intra-task parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print well-formedness diagnostics without running tasks.
    Validate { file: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { file, out, seed, jobs } => run(&file, out, seed, jobs),
        Command::Validate { file } => validate(&file),
    }
}

fn run(
    file: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> ExitCode {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let parsed = match scenario::parse(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let spec = match parsed.metric.build() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: metric: {e}");
            return ExitCode::from(2);
        }
    };
    let vol = match parsed.volume.build(&spec) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: volume: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(k) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let out_dir = out
        .or(parsed.output)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    let ctx = Ctx { spec, vol, seed: seed.unwrap_or(parsed.seed) };
    let mut all_pass = true;
    for (idx, task) in parsed.tasks.iter().enumerate() {
        let slug = task.slug();
        let (outcome, internal) = match run_task(task, &ctx) {
            Ok(o) => (o, None),
            Err(e) => {
                let mut doc = Doc::new();
                doc.str("error", &e.to_string());
                let failed = TaskOutcome {
                    status: Status::Fail,
                    body: doc.render(),
                    tables: Vec::new(),
                };
                (failed, Some(e))
            }
        };
        let stem = format!("{:02}-{slug}", idx + 1);
        let head = format!("task = {slug:?}\nstatus = {:?}\n", outcome.status.as_str());
        if let Err(e) = fs::write(out_dir.join(format!("{stem}.toml")), head + &outcome.body) {
            eprintln!("error: cannot write report: {e}");
            return ExitCode::from(2);
        }
        for (suffix, table) in &outcome.tables {
            if let Err(e) = fs::write(out_dir.join(format!("{stem}.{suffix}.csv")), table) {
                eprintln!("error: cannot write table: {e}");
                return ExitCode::from(2);
            }
        }
        println!("[{}] {slug}: {}", idx + 1, outcome.status.as_str());
        if !outcome.status.passed() {
            all_pass = false;
        }
        // A library error means later tasks would run against a state the
        // scenario author cannot trust; stop after recording it.
        if let Some(e) = internal {
            eprintln!("error: {slug}: {e}");
            return if matches!(e, Error::NoConvergence { .. }) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            };
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn validate(file: &Path) -> ExitCode {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            println!("read: {e}");
            return ExitCode::SUCCESS;
        }
    };
    for line in scenario::diagnostics(&text) {
        println!("{line}");
    }
    ExitCode::SUCCESS
}
