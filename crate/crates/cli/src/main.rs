use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hilbert_lrd::{ExperimentConfig, LrdError, Task};

/// Runs one experiment task described by a TOML or JSON config.
#[derive(Parser, Debug)]
#[command(name = "hilbert-lrd", version, about)]
struct Cli {
    /// simulate, autocov, verify-clt, verify-rosenblatt, rosenblatt-sample,
    /// kernel-distance or lift-check
    task: String,
    /// Experiment config (`.toml` or `.json`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(), LrdError> {
    let task: Task = cli.task.parse()?;
    let mut config = ExperimentConfig::load(&cli.config)?;
    if config.task != task {
        return Err(LrdError::config(format!("config describes task '{}' but '{task}' was requested", config.task)));
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    if let Some(dir) = cli.out {
        config.output.dir = dir;
    }
    let report = hilbert_lrd::run(&config)?;
    for c in &report.comparisons {
        let n = c.n.map(|n| format!(" N={n}")).unwrap_or_default();
        println!(
            "{} {}{n}: observed {:.6e} (se {:.2e}, R={}) reference {:.6e} rel {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.observed.value,
            c.observed.std_error,
            c.observed.replications,
            c.reference,
            c.rel_error
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    if let Some(b) = report.budgets.truncation_bound {
        println!("truncation bound: {b:.3e}");
    }
    println!("wrote {} files to {} in {:.2}s", report.files.len() + 1, config.output.dir.display(), report.timing_seconds);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
