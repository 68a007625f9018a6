use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcsim::analysis::{report, TaskSet};
use mcsim::sim::csv::{summary_csv, trace_csv};
use mcsim::sim::golden::{reproduce, GoldenError};
use mcsim::sim::scenario::load;
use mcsim::taskgen::{generate, DEFAULT_PERIOD_RANGE};

#[derive(Parser)]
#[command(name = "mcsim", version, about = "Mixed-criticality microkernel scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario (or a task-set file) and print its summary CSV.
    Run {
        scenario: PathBuf,
        /// Write the trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the summary CSV here instead of stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Utilization, bounds and response times of a task set.
    Analyze { taskset: PathBuf },
    /// Generate random task sets.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 1)]
        sets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `set-NNN.json` files; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a reference experiment and compare with its golden output.
    Reproduce {
        figure: String,
        /// Write the freshly rendered output here.
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// Run a scenario with the kernel invariants checked after every event.
    CheckInvariants { scenario: PathBuf },
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Run { scenario, trace, summary, seed } => {
            let mut file = load(&read(&scenario)?).map_err(|e| format!("{}: {e}", scenario.display()))?;
            if let Some(s) = seed {
                file.seed = s;
            }
            let mut engine = file.build().map_err(|e| format!("{}: {e}", scenario.display()))?;
            engine.run_until(file.duration).map_err(|e| e.to_string())?;
            let s = engine.finish();
            if let Some(p) = trace {
                write(&p, &trace_csv(engine.trace(), engine.names()))?;
            }
            let text = summary_csv(&s, engine.names());
            match summary {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Analyze { taskset } => {
            let set: TaskSet = serde_json::from_str(&read(&taskset)?).map_err(|e| format!("{}: {e}", taskset.display()))?;
            set.validate().map_err(|e| e.to_string())?;
            print!("{}", report(&set).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gen { n, u, sets, seed, out } => {
            let all = generate(n, u, sets, seed, DEFAULT_PERIOD_RANGE).map_err(|e| e.to_string())?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            }
            for (i, set) in all.iter().enumerate() {
                let json = serde_json::to_string_pretty(set).expect("task sets serialize");
                match &out {
                    Some(dir) => write(&dir.join(format!("set-{i:03}.json")), &format!("{json}\n"))?,
                    None => println!("{}", serde_json::to_string(set).expect("task sets serialize")),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Reproduce { figure, write: dest } => {
            let r = match reproduce(&figure) {
                Ok(r) => r,
                Err(e @ GoldenError::UnknownFigure(_)) => return Err(e.to_string()),
                Err(e) => return Err(format!("{figure}: {e}")),
            };
            if let Some(p) = dest {
                write(&p, &r.output)?;
            }
            for c in &r.checks {
                println!("{} {}", if c.ok { "ok  " } else { "FAIL" }, c.name);
            }
            for d in r.diff.iter().take(40) {
                println!("{d}");
            }
            if r.diff.len() > 40 {
                println!("... {} more differing lines", r.diff.len() - 40);
            }
            let verdict = if r.passed() { "pass" } else { "fail" };
            println!("{figure}: {verdict}");
            Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::CheckInvariants { scenario } => {
            let file = load(&read(&scenario)?).map_err(|e| format!("{}: {e}", scenario.display()))?;
            let mut engine = file.build().map_err(|e| format!("{}: {e}", scenario.display()))?;
            engine.check_invariants(true);
            match engine.run_until(file.duration) {
                Ok(()) => {
                    let s = engine.finish();
                    if !s.time_conserved() {
                        println!("time not conserved");
                        return Ok(ExitCode::FAILURE);
                    }
                    println!("ok: invariants held for {} ticks", file.duration);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    println!("violation: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
