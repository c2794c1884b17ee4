//! Subcommand implementations for the `paac` binary.
//!
//! Exit codes: 0 success, 1 property failure, 2 configuration error,
//! 3 I/O error, 4 oracle non-convergence.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paac_core::agents::{self, AgentConfig, Variant};
use paac_core::bench::{self, VariantResult};
use paac_core::checkpoint::AgentCheckpoint;
use paac_core::checks::{self, Suite};
use paac_core::envs;
use paac_core::paac::ActorGradMode;
use paac_core::{csv, Error, Result};

pub use config::{parse_config, RunConfig, OUTPUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

const CONFIG_HELP: &str = "\
Configuration keys (TOML sections; every key optional):
  [experiment] variants, n_trials, n_env_seeds, total_steps, eval_period,
               jobs, output_dir, save_checkpoints
  [env]        preset (lqr1d | lqr2d | cartpole | pendulum), episode_len,
               action_bound, reset_low, reset_high
  [agent]      gamma, minibatch_n, buffer_capacity, target_mode (none | hard
               | soft), hard_period, tau, actor_mode (q_only | td_only |
               phased), td_form (linear_delta | squared_delta), schedule
               (linear | quadratic | hard_switch), noise_scale, warmup_steps,
               lr, hidden_width, updates_per_step
  [thresholds] success, failure, auc_normalizer
  [probe]      batch_size, n_batches, seed
  [check]      suites
  [riccati]    tol, max_iters
  [sweep]      variant, schedules

Exit codes: 0 ok, 1 property failure, 2 config error, 3 I/O error,
4 oracle did not converge.";

#[derive(Debug, Parser)]
#[command(name = "paac", version, about = "Phased actor-critic experiments on desk-scale control tasks", after_long_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set experiment.n_trials=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; beats PAAC_OUTPUT_DIR and experiment.output_dir.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured variant over all trial seeds; writes
    /// curves.csv, evalmatrix.csv, metrics.csv and checkpoints.
    Train(Common),
    /// Evaluate a checkpoint's greedy policy; writes eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Actor-gradient variance of each branch form at a checkpoint; writes
    /// variance.csv.
    ProbeVariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Solve the discounted Riccati equation of an LQR preset.
    Riccati(Common),
    /// Run the property suites.
    Check {
        #[command(flatten)]
        common: Common,
        /// Suite to run (gradient-check, td-identity, schedule,
        /// vi-monotonicity, riccati). Repeatable; all when omitted.
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Compare transition functions for one phased variant; writes
    /// sweep.csv and sweep_curves.csv.
    Sweep(Common),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Oracle(_) => EXIT_ORACLE,
        Error::Config { .. } | Error::Format(_) | Error::Contract(_) => EXIT_CONFIG,
        _ => EXIT_PROPERTY,
    }
}

/// Parses, dispatches and reports; returns the process exit code.
pub fn run(cli: Cli, stdout: &mut impl Write) -> i32 {
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut impl Write) -> Result<i32> {
    match cli.command {
        Command::Train(c) => cmd_train(&load(&c)?, &dir(&c)?, out),
        Command::Eval { common, checkpoint } => cmd_eval(&load(&common)?, &checkpoint, &dir(&common)?, out),
        Command::ProbeVariance { common, checkpoint } => {
            cmd_probe_variance(&load(&common)?, &checkpoint, &dir(&common)?, out)
        }
        Command::Riccati(c) => cmd_riccati(&load(&c)?, out),
        Command::Check { common, suites } => {
            let cfg = load(&common)?;
            let selected = if suites.is_empty() { cfg.check.suites.clone() } else { Some(suites) };
            cmd_check(selected, gradient_for_build(), out)
        }
        Command::Sweep(c) => cmd_sweep(&load(&c)?, &dir(&c)?, out),
    }
}

#[cfg(not(feature = "mutate-backprop"))]
fn gradient_for_build() -> checks::GradientFn {
    checks::backprop_gradient
}

#[cfg(feature = "mutate-backprop")]
fn gradient_for_build() -> checks::GradientFn {
    fn mutated(
        params: &paac_core::tensor::NetParams,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<paac_core::tensor::NetParams> {
        let mut g = checks::backprop_gradient(params, input, upstream)?;
        for v in g.weights[2].data_mut() {
            *v *= 1.5;
        }
        Ok(g)
    }
    mutated
}

fn load(c: &Common) -> Result<RunConfig> {
    parse_config(c.config.as_deref(), &c.overrides)
}

fn dir(c: &Common) -> Result<PathBuf> {
    Ok(load(c)?.output_dir(c.out.as_deref()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn print_metrics(out: &mut impl Write, label: &str, results: &[(String, &VariantResult)]) -> Result<()> {
    writeln!(
        out,
        "{label:<14} {:>12} {:>12} {:>12} {:>8} {:>8} {:>6}",
        "total_cost", "learn_var", "robustness", "auc", "success", "ok"
    )?;
    for (name, r) in results {
        let ok = r.matrix.as_ref().map_or(0, |m| m.success_flags.iter().filter(|f| **f).count());
        match &r.metrics {
            Ok(m) => writeln!(
                out,
                "{name:<14} {:>12.4} {:>12.4} {:>12.4} {:>8.4} {:>8.3} {:>3}/{}",
                m.total_cost,
                m.learning_variance,
                m.robustness,
                m.auc,
                m.success_rate,
                ok,
                r.logs.len()
            )?,
            Err(e) => writeln!(out, "{name:<14} undefined: {e}")?,
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, out: &mut impl Write) -> Result<i32> {
    let env = cfg.env_spec()?;
    let x = cfg.experiment(cfg.agent_configs(&env)?)?;
    let ck_dir = out_dir.join("checkpoints");
    let save = cfg.experiment.save_checkpoints;
    if save {
        fs::create_dir_all(&ck_dir)?;
    }
    let results = bench::run_experiment(&x, |a, trial| {
        if let Some(reason) = &trial.log.aborted {
            eprintln!("{} seed {} aborted: {reason}", a.variant, a.seed);
        }
        if save {
            AgentCheckpoint::from_agent(&trial.agent, &env).save(&ck_dir.join(format!("{}-seed{}.json", a.variant, a.seed)))?;
        }
        Ok(())
    })?;
    csv::write_curves(&mut create(out_dir, "curves.csv")?, &results, &x.trial_seeds, &x.eval_seeds)?;
    csv::write_evalmatrix(&mut create(out_dir, "evalmatrix.csv")?, &results, &x.trial_seeds, &x.eval_seeds)?;
    csv::write_metrics(&mut create(out_dir, "metrics.csv")?, &results)?;
    let rows: Vec<(String, &VariantResult)> = results.iter().map(|r| (r.variant.to_string(), r)).collect();
    print_metrics(out, "variant", &rows)?;
    writeln!(out, "wrote {}", out_dir.display())?;
    Ok(EXIT_OK)
}

fn load_checkpoint(path: &Path) -> Result<AgentCheckpoint> {
    if !path.is_file() {
        return Err(Error::config("checkpoint", format!("{} does not exist", path.display())));
    }
    AgentCheckpoint::load(path)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path, out: &mut impl Write) -> Result<i32> {
    let ck = load_checkpoint(checkpoint)?;
    let seeds: Vec<u64> = (100..100 + cfg.experiment.n_env_seeds).collect();
    let costs = agents::evaluate_policy(&ck.actor, &ck.env, &seeds, ck.env.episode_len)?;
    let mut w = create(out_dir, "eval.csv")?;
    writeln!(w, "env_seed,total_cost")?;
    for (s, c) in seeds.iter().zip(&costs) {
        writeln!(w, "{s},{}", csv::fmt_f64(*c))?;
        writeln!(out, "seed {s}: {c:.6}")?;
    }
    writeln!(out, "mean: {:.6}", costs.iter().sum::<f64>() / costs.len() as f64)?;
    Ok(EXIT_OK)
}

pub fn cmd_probe_variance(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path, out: &mut impl Write) -> Result<i32> {
    let agent = load_checkpoint(checkpoint)?.into_agent()?;
    let p = &cfg.probe;
    let v = bench::variance_probe(&agent, p.batch_size, p.n_batches, p.seed)?;
    csv::write_variance(&mut create(out_dir, "variance.csv")?, &v)?;
    writeln!(out, "var_q          {:e}", v.var_q)?;
    writeln!(out, "var_td_linear  {:e}", v.var_td_linear)?;
    writeln!(out, "var_td_squared {:e}", v.var_td_squared)?;
    writeln!(out, "{} batches of {}", v.n_batches, v.batch_size)?;
    Ok(EXIT_OK)
}

pub fn cmd_riccati(cfg: &RunConfig, out: &mut impl Write) -> Result<i32> {
    let env = cfg.env_spec()?;
    let sys = env
        .lqr()
        .ok_or_else(|| Error::config("env.preset", format!("`{}` is not an LQR preset", env.name)))?;
    let gamma = match cfg.agent.gamma {
        Some(g) => g,
        None => AgentConfig::for_env(Variant::Ddpg, &env.name, 0).gamma,
    };
    let sol = envs::riccati_solve(sys, gamma, cfg.riccati.tol, cfg.riccati.max_iters)?;
    let rho = envs::spectral_radius(&envs::discounted_closed_loop(sys, gamma, &sol.k)?)?;
    let rows = |m: &paac_core::tensor::DenseMatrix| {
        (0..m.rows())
            .map(|r| format!("  {:?}", m.row(r)))
            .collect::<Vec<_>>()
            .join("\n")
    };
    writeln!(out, "gamma {gamma}")?;
    writeln!(out, "P =\n{}", rows(&sol.p))?;
    writeln!(out, "K =\n{}", rows(&sol.k))?;
    writeln!(out, "residual {:e} (tol {:e})", sol.residual, cfg.riccati.tol)?;
    writeln!(out, "iterations {}", sol.iterations)?;
    writeln!(out, "closed-loop spectral radius {rho}")?;
    Ok(EXIT_OK)
}

pub fn cmd_check(selected: Option<Vec<String>>, grad: checks::GradientFn, out: &mut impl Write) -> Result<i32> {
    let suites: Vec<Suite> = match selected {
        None => Suite::ALL.to_vec(),
        Some(names) => names.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    };
    let reports = checks::run_suites(&suites, grad)?;
    writeln!(out, "{} suites", reports.len())?;
    for r in &reports {
        writeln!(out, "{:<16} {:>8} checks  {}", r.suite.name(), r.checks, if r.passed() { "pass" } else { "FAIL" })?;
    }
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        writeln!(out, "first failure: {}: {}", bad.suite, bad.failure.as_deref().unwrap_or(""))?;
        return Ok(EXIT_PROPERTY);
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path, out: &mut impl Write) -> Result<i32> {
    let env = cfg.env_spec()?;
    let variant: Variant = cfg.sweep.variant.parse()?;
    let base = cfg.agent_config(variant, &env)?;
    if base.actor.mode != ActorGradMode::Phased {
        return Err(Error::config("sweep.variant", format!("{variant} does not use the phased actor")));
    }
    let agents: Vec<AgentConfig> = cfg
        .sweep
        .schedules
        .iter()
        .map(|&kind| {
            let mut a = base.clone();
            a.schedule.kind = kind;
            a
        })
        .collect();
    let x = cfg.experiment(agents)?;
    let results = bench::run_experiment(&x, |_, _| Ok(()))?;
    let labelled: Vec<(String, &VariantResult)> = cfg
        .sweep
        .schedules
        .iter()
        .zip(&results)
        .map(|(k, r)| (schedule_name(*k).to_string(), r))
        .collect();
    csv::write_sweep(&mut create(out_dir, "sweep.csv")?, &labelled)?;
    csv::write_sweep_curves(&mut create(out_dir, "sweep_curves.csv")?, &labelled, &x.trial_seeds, &x.eval_seeds)?;
    print_metrics(out, "schedule", &labelled)?;
    writeln!(out, "wrote {}", out_dir.display())?;
    Ok(EXIT_OK)
}

fn schedule_name(k: paac_core::paac::ScheduleKind) -> &'static str {
    use paac_core::paac::ScheduleKind::*;
    match k {
        Linear => "linear",
        Quadratic => "quadratic",
        HardSwitch => "hard_switch",
    }
}
