//! Argument parsing and dispatch for the `curio` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use curio_core::eval::{curves_from_csv, eval_snapshots, plot_svg};
use curio_core::hierarchy::{train_downstream, DownstreamMode};
use curio_core::orchestrator::{run_selmo, RunConfig, RunMode};
use curio_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "curio", version, about = "Curiosity-driven exploration: training, evaluation and plotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run curiosity training, writing metrics.csv and snapshots/ under --out.
    TrainSelmo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate every snapshot in a directory with the mean action.
    EvalSnapshots {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        env: String,
        /// Comma-separated task names.
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<String>,
        #[arg(long, default_value_t = 20)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a task policy with snapshot options, auxiliary options or alone.
    TrainDownstream {
        #[arg(long)]
        config: PathBuf,
        /// snapshots:early|snapshots:mid|snapshots:late|sacx|scratch
        #[arg(long, value_parser = parse_downstream)]
        mode: DownstreamMode,
        #[arg(long)]
        seed: Option<u64>,
        /// Learning-curve path; defaults to curve_<mode>_<seed>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a curve CSV as an SVG line chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        sigma: f64,
    },
}

fn parse_mode(s: &str) -> std::result::Result<RunMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_downstream(s: &str) -> std::result::Result<DownstreamMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainSelmo { config, seed, mode, out } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(m) = mode {
                cfg.run.mode = m;
            }
            let res = run_selmo(&cfg, &out)?;
            println!("metrics: {}", res.metrics_path.display());
            println!("snapshots: {} ({} written)", res.snapshot_dir.display(), res.snapshots.len());
        }
        Command::EvalSnapshots { dir, env, tasks, n_eval, seed, out } => {
            let report = eval_snapshots(&dir, &env, &tasks, n_eval, seed)?;
            for ep in &report.skipped {
                eprintln!("warning: snapshot {ep} skipped");
            }
            match out {
                Some(p) => report.write(&p)?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::TrainDownstream { config, mode, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let path = out.unwrap_or_else(|| {
                PathBuf::from(format!("curve_{}_{}.csv", mode.to_string().replace(':', "_"), cfg.run.seed))
            });
            let res = train_downstream(&cfg, mode, &path)?;
            let last = res.returns.last().copied().unwrap_or(0.0);
            println!("curve: {} ({} episodes, last return {last})", path.display(), res.returns.len());
        }
        Command::Plot { input, out, sigma } => {
            let text = std::fs::read_to_string(&input)?;
            let (series, x, y) = curves_from_csv(&text, sigma)?;
            let title = input.file_name().and_then(|n| n.to_str()).unwrap_or("curves");
            std::fs::write(&out, plot_svg(&series, title, x, y))?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on bad usage.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
