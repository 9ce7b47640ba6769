//! `coldaug`: split, augment, train, eval, sweep and synth commands over a
//! run directory `<paths.runs>/<run_id>`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use config::{parse_override, RunConfig};

#[derive(Parser)]
#[command(
    name = "coldaug",
    version,
    about = "Cold-start recommendation with pairwise preference augmentation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override, global = true)]
    overrides: Vec<(String, String)>,
    /// More log output on stderr (repeat for more).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and report oracle agreement.
    Synth,
    /// Temporal split of the interaction log into the run directory.
    Split,
    /// Ask an oracle for cold-pair preferences and write triples.
    Augment {
        /// lexical, remote, replay or true.
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        pairs_per_query: Option<usize>,
    },
    /// Train one arm and save its checkpoint.
    Train {
        /// no_aug, content or aug.
        #[arg(long, default_value = "aug")]
        arm: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train and evaluate arms, or evaluate one saved checkpoint.
    Eval {
        /// Comma-separated subset of no_aug,content,aug.
        #[arg(long)]
        arms: Option<String>,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Aug-arm sweep over augmentation fraction or oracle flip probability.
    Sweep {
        /// aug_fraction or flip_prob.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated, strictly increasing.
        #[arg(long)]
        values: Option<String>,
        /// Number of seeds, starting at `seed`.
        #[arg(long)]
        seeds: Option<u64>,
        /// lexical, remote, replay or true.
        #[arg(long)]
        oracle: Option<String>,
    },
}

fn oracle_backend(name: &str) -> Result<&'static str, coldaug::Error> {
    match name {
        "lexical" => Ok("lexical"),
        "remote" | "remote_llm" => Ok("remote_llm"),
        "replay" => Ok("replay"),
        "true" | "true_score" => Ok("true_score"),
        other => Err(coldaug::Error::Config(format!(
            "unknown oracle {other:?}; expected lexical, remote, replay or true"
        ))),
    }
}

/// Command flags become `--set` overrides applied after the explicit ones.
fn flag_overrides(command: &Command) -> coldaug::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut push = |k: &str, v: String| out.push((k.to_string(), v));
    match command {
        Command::Augment {
            oracle,
            fraction,
            pairs_per_query,
        } => {
            if let Some(o) = oracle {
                push("oracle.backend", format!("{:?}", oracle_backend(o)?));
            }
            if let Some(f) = fraction {
                push("augment.fraction", format!("{f:?}"));
            }
            if let Some(n) = pairs_per_query {
                push("augment.pairs_per_query", n.to_string());
            }
        }
        Command::Train { epochs, .. } => {
            if let Some(e) = epochs {
                push("train.epochs", e.to_string());
            }
        }
        Command::Eval { arms, .. } => {
            if let Some(a) = arms {
                let list: Vec<String> = a.split(',').map(|s| format!("{:?}", s.trim())).collect();
                push("eval.arms", format!("[{}]", list.join(", ")));
            }
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            oracle,
        } => {
            if let Some(a) = axis {
                push("sweep.axis", format!("{a:?}"));
            }
            if let Some(v) = values {
                push("sweep.values", format!("[{v}]"));
            }
            if let Some(s) = seeds {
                push("sweep.seeds", s.to_string());
            }
            if let Some(o) = oracle {
                push("oracle.backend", format!("{:?}", oracle_backend(o)?));
            }
        }
        Command::Synth | Command::Split => {}
    }
    Ok(out)
}

fn run(cli: Cli) -> coldaug::Result<()> {
    let mut overrides = cli.common.overrides.clone();
    overrides.extend(flag_overrides(&cli.command)?);
    let config = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => commands::synth(&config),
        Command::Split => commands::split(&config),
        Command::Augment { .. } => commands::augment(&config),
        Command::Train { arm, .. } => commands::train(&config, arm.parse()?),
        Command::Eval { checkpoint, .. } => match checkpoint {
            Some(path) => commands::eval_checkpoint(&config, &path),
            None => commands::eval(&config),
        },
        Command::Sweep { .. } => commands::sweep(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match (cli.common.quiet, cli.common.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
