use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gevrey_core::error::{Category, Error};
use gevrey_evolve::config::{parse_values, RunConfig};
use gevrey_evolve::{oracle, pipeline, sweep, thread_cap};

#[derive(Parser)]
#[command(name = "gevrey-evolve", version, about = "Gevrey well-posedness pipeline for 3-evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select weights, solve, and write report.txt, trajectory.csv and positivity.csv.
    Run { config: PathBuf },
    /// One full run per value of one config axis; writes sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 64,128,256.
        #[arg(long)]
        values: String,
    },
    /// Assumptions and positivity only, no solve.
    Verify { config: PathBuf },
    /// Dense-oracle consistency suite at small N.
    Oracle { config: PathBuf },
}

fn fail(e: &Error) -> ExitCode {
    let cat = e.category();
    eprintln!("error ({}): {e}", cat.name());
    ExitCode::from(cat.exit_code() as u8)
}

fn finish(out: &pipeline::Outcome, command: &str) -> ExitCode {
    if let Err(e) = pipeline::write_outputs(out, command) {
        return fail(&e);
    }
    eprintln!("wrote {}", out.requested.output.dir.display());
    match &out.error {
        None => ExitCode::SUCCESS,
        Some(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match thread_cap() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: thread pool already initialized: {e}");
            }
        }
        Ok(None) => {}
        Err(m) => return fail(&Error::Config(m)),
    }
    let load = |p: &PathBuf| RunConfig::load(p);
    match cli.command {
        Command::Run { config } => match load(&config) {
            Ok(cfg) => finish(&pipeline::run(&cfg), "run"),
            Err(e) => fail(&e),
        },
        Command::Verify { config } => match load(&config) {
            Ok(cfg) => {
                let out = pipeline::verify(&cfg);
                if let Some(sel) = &out.selection {
                    print!("{}", sel.report);
                }
                finish(&out, "verify")
            }
            Err(e) => fail(&e),
        },
        Command::Sweep { config, axis, values } => {
            let run = || -> Result<(RunConfig, Vec<sweep::Row>), Error> {
                let cfg = load(&config)?;
                let values = parse_values(&values)?;
                let rows = sweep::sweep(&cfg, &axis, &values)?;
                sweep::write_outputs(&cfg, &axis, &rows)?;
                Ok((cfg, rows))
            };
            match run() {
                Ok((cfg, rows)) => {
                    let failed = rows.iter().filter(|r| r.status != "ok").count();
                    eprintln!("wrote {} ({} rows, {failed} failed)", cfg.output.dir.join("sweep.csv").display(), rows.len());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Oracle { config } => {
            let run = || -> Result<oracle::OracleReport, Error> {
                let cfg = load(&config)?;
                let rep = oracle::oracle_suite(&cfg)?;
                std::fs::create_dir_all(&cfg.output.dir)?;
                let mut w = std::fs::File::create(cfg.output.dir.join("oracle.csv"))?;
                rep.write_csv(&mut w)?;
                w.flush()?;
                Ok(rep)
            };
            match run() {
                Ok(rep) => {
                    print!("{rep}");
                    if rep.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(Category::Instability.exit_code() as u8)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
