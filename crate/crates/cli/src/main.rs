//! `cabi`: staged driver for the RiskWorld imagination experiments.
//!
//! ```text
//! cabi collect --env riskworld --steps 10000 --seed 7
//! cabi train-models --seed 7
//! cabi augment --seed 7 --strategy cabi --k 20 --fwd-horizon 3 --bwd-horizon 3 --count 10000
//! cabi train-policy --seed 7 --strategy cabi --k 20
//! cabi eval --seed 7 --strategy cabi --k 20
//! cabi report --seeds 7 --strategies forward,backward,cabi
//! cabi ablation --strategies cabi,bomi --ks 0,10,20,50,100 --seeds 0,1,2,3,4
//! ```
//!
//! Outputs go to `--out`, else `$CABI_OUT`, else the config's `out`.

mod config;
mod manifest;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use cabi_core::augment::Strategy;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use stages::{Ctx, Source};

#[derive(Parser, Debug)]
#[command(name = "cabi", version, about = "Bidirectional model-based imagination experiments")]
struct Cli {
    /// key=value experiment config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "CABI_OUT")]
    out: Option<PathBuf>,
    /// Re-run stages even when their outputs are current
    #[arg(long, global = true)]
    force: bool,
    /// Config override, e.g. `--set model.epochs=20` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Buffer strategy; omit for the raw dataset
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect a random-policy dataset
    Collect {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train forward/backward ensembles and rollout policies
    TrainModels {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a model buffer
    Augment {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        fwd_horizon: Option<usize>,
        #[arg(long)]
        bwd_horizon: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Train the offline learner on real (+ synthetic) data
    TrainPolicy {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a trained policy in RiskWorld
    Eval {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Region-fraction CSV and scatter plots of buffers
    Report {
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "forward,backward,cabi")]
        strategies: Vec<Strategy>,
        #[arg(long)]
        k: Option<f64>,
    },
    /// Run every (strategy, k, seed) cell end to end
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "forward,backward,bomi,cabi,random-k,ev-k")]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,50,100")]
        ks: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn source(args: &SourceArgs, default_k: f64) -> Source {
    match args.strategy {
        Some(s) => Source::Buffer(s, args.k.unwrap_or(default_k)),
        None => Source::Raw,
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("config: {e}"))?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| format!("config: override {o:?} is not key=value"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| format!("config: --set {o}: {e}"))?;
    }
    if let Command::Collect { env: Some(e), .. } = &cli.command {
        cfg.env = e.clone();
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out.clone());
    let first_seed = cfg.seeds.first().copied().unwrap_or(0);
    let default_k = cfg.rollout.k;
    let mut ctx = Ctx::new(cfg, out, cli.force).map_err(|e| format!("setup: {e}"))?;
    let err = |e: stages::StageError| e.to_string();

    match cli.command {
        Command::Collect { steps, seed, .. } => {
            let steps = steps.unwrap_or(ctx.cfg.collect_steps);
            stages::collect(&mut ctx, seed.unwrap_or(first_seed), steps).map_err(err)?;
        }
        Command::TrainModels { seed } => {
            stages::train_models(&mut ctx, seed.unwrap_or(first_seed)).map_err(err)?;
        }
        Command::Augment {
            seed,
            strategy,
            k,
            fwd_horizon,
            bwd_horizon,
            count,
            batch_size,
        } => {
            let mut rollout = ctx.cfg.rollout.clone();
            rollout.k = k.unwrap_or(rollout.k);
            rollout.fwd_horizon = fwd_horizon.unwrap_or(rollout.fwd_horizon);
            rollout.bwd_horizon = bwd_horizon.unwrap_or(rollout.bwd_horizon);
            rollout.total = count.unwrap_or(rollout.total);
            rollout.batch_size = batch_size.unwrap_or(rollout.batch_size);
            let strategy = strategy.unwrap_or(ctx.cfg.strategy);
            stages::augment(&mut ctx, seed.unwrap_or(first_seed), strategy, &rollout).map_err(err)?;
        }
        Command::TrainPolicy {
            seed,
            source: src,
            eta,
            steps,
        } => {
            if let Some(e) = eta {
                ctx.cfg.learner.eta = e;
            }
            if let Some(s) = steps {
                ctx.cfg.learner.steps = s;
            }
            stages::train_policy_stage(&mut ctx, seed.unwrap_or(first_seed), source(&src, default_k)).map_err(err)?;
        }
        Command::Eval {
            seed,
            source: src,
            episodes,
        } => {
            let episodes = episodes.unwrap_or(ctx.cfg.eval_episodes);
            let (mean, std) =
                stages::eval(&mut ctx, seed.unwrap_or(first_seed), source(&src, default_k), episodes).map_err(err)?;
            println!("{mean},{std}");
        }
        Command::Report { seeds, strategies, k } => {
            let seeds = if seeds.is_empty() { vec![first_seed] } else { seeds };
            let path = stages::report(&mut ctx, &seeds, &strategies, k.unwrap_or(default_k)).map_err(err)?;
            println!("{}", path.display());
        }
        Command::Ablation { strategies, ks, seeds } => {
            let seeds = if seeds.is_empty() { ctx.cfg.seeds.clone() } else { seeds };
            let results = stages::ablation(&mut ctx, &strategies, &ks, &seeds).map_err(err)?;
            println!("{}", stages::ABLATION_HEADER);
            for r in &results {
                println!("{}", r.csv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
