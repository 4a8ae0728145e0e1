//! `ftcl`: pretrain an encoder, probe it, plot its telemetry, sweep configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure (non-finite loss), 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ftcl::config::{merge, parse_override, resolve, Assignment, RunConfig, SweepPlan};
use ftcl::run::{self, OutDir, PlotInput, CHECKPOINT_FILE};
use ftcl::{Error, Result};

#[derive(Parser)]
#[command(name = "ftcl", version, about = "Contrastive pretraining with feature-space transformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines) or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set ft.alpha_ex=2.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn assignments(&self) -> Result<Vec<Assignment>> {
        let file = match &self.config {
            Some(p) => run::load_assignments(p)?,
            None => Vec::new(),
        };
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            overrides.push(parse_override(&format!("train.seed={seed}"))?);
        }
        Ok(merge(file, overrides))
    }

    fn config(&self) -> Result<RunConfig> {
        resolve(&self.assignments()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder; writes checkpoint, scores/grads CSVs and a manifest.
    Pretrain(Common),
    /// Fit a linear probe on a checkpoint's frozen features.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to read (default: `<out>/checkpoint.bin`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render SVG panels from scores/grads CSVs or run directories.
    Plot {
        /// CSV files or run directories; each becomes one legend entry.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// mean_pos, mean_neg, var_neg or grads (default: all available). Repeatable.
        #[arg(long)]
        panel: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Pretrain every cell of a grid written as `key = {a, b, …}`.
    Sweep(Common),
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = common.config()?;
            let out = OutDir::create(&common.out)?;
            let outcome = run::pretrain_with_progress(&cfg, &out, |s| {
                println!("epoch {:>3}  loss {:.6}", s.epoch, s.mean_loss());
            })?;
            if let Some(p) = &outcome.probe {
                println!("probe accuracy {:.4}", p.accuracy);
            }
            println!("wrote {}", out.root().display());
            match outcome.failure_error() {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Probe { common, checkpoint } => {
            let cfg = common.config()?;
            let out = OutDir::create(&common.out)?;
            let ckpt = checkpoint.unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
            let report = run::probe(&cfg, &ckpt, &out)?;
            println!("accuracy {:.4}", report.accuracy);
            Ok(())
        }
        Command::Plot { inputs, panel, out } => {
            let expanded: Vec<PlotInput> = inputs.iter().flat_map(|p| PlotInput::expand(p)).collect();
            if expanded.is_empty() {
                return Err(Error::Parse("no scores.csv or grads.csv found in the given inputs".into()));
            }
            let out = OutDir::create(out)?;
            for path in run::plot(&expanded, &panel, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Sweep(common) => {
            let plan = SweepPlan::from_assignments(common.assignments()?)?;
            let out = OutDir::create(&common.out)?;
            for cell in run::sweep(&plan, &out)? {
                let acc = cell.probe_accuracy.map_or("-".into(), |a| format!("{a:.4}"));
                println!("{}  {:?}  {}  acc {}", cell.dir, cell.assignments, cell.status, acc);
            }
            Ok(())
        }
    }
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
