//! Command-line entry point: train, eval, plot, sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdher::envs::make_env;
use tdher::harness::sweep::parse_grid_arg;
use tdher::harness::{emit_plot, evaluate, load_checkpoint, sweep, TrainConfig};
use tdher::{Error, Result};

#[derive(Parser)]
#[command(name = "tdher", version, about = "Goal-conditioned TD3/DDPG with HER and K-FAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint without exploration noise.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment name, optionally `name:n`.
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Plot eval success rate from one or more metrics CSVs.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per point of a hyperparameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=v1,v2,...`; repeat for more axes.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let outcome = tdher::harness::train::train_with_progress(&cfg, |row| {
                eprintln!(
                    "epoch {:>3}  steps {:>8}  train {:.3}  eval {:.3}  critic {:.4}  q {:.3}",
                    row.epoch, row.env_steps, row.train_success_rate, row.eval_success_rate, row.critic_loss, row.q_mean
                );
            })?;
            let last = outcome.metrics.last().map(|r| r.eval_success_rate).unwrap_or(0.0);
            println!("final eval_success_rate {last}");
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::Eval { checkpoint, env, episodes, seed } => {
            let agent = load_checkpoint(&checkpoint)?;
            let (name, n) = match env.split_once(':') {
                Some((name, n)) => {
                    let n = n.parse().map_err(|_| Error::Config(format!("bad env size in '{env}'")))?;
                    (name.to_string(), Some(n))
                }
                None => (env.clone(), Some(agent.dims.goal_dim).filter(|_| env != "push_box")),
            };
            let mut e = make_env(&name, n)?;
            let spec = e.spec();
            if spec.obs_dim != agent.dims.obs_dim || spec.goal_dim != agent.dims.goal_dim || spec.action_dim != agent.dims.action_dim {
                return Err(Error::Config(format!("checkpoint dimensions do not match environment '{env}'")));
            }
            let rate = evaluate(&agent, e.as_mut(), episodes, seed)?;
            println!("{rate}");
        }
        Command::Plot { metrics, out } => {
            emit_plot(&metrics, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Sweep { config, grid, out } => {
            let base = TrainConfig::from_file(&config)?;
            let grid = grid.iter().map(|g| parse_grid_arg(g)).collect::<Result<Vec<_>>>()?;
            let rows = sweep(&base, &grid, &out)?;
            for r in &rows {
                println!("{}  eval_success_rate {}", r.run_dir, r.final_metrics.eval_success_rate);
            }
            println!("summary in {}", out.join("summary.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
