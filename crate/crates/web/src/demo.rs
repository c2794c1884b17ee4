//! Plain-Rust bodies of the exported operations, so they test natively.

use paac_core::agents::{evaluate_policy, run_trial, AgentConfig, LinearPolicy, Variant};
use paac_core::envs::{self, EnvSpec, LqrSystem};
use paac_core::networks::actor_forward;
use paac_core::paac::{select_branch, Branch, PhaseSchedule, ScheduleKind};
use paac_core::rng;
use rand::Rng;

pub const SCHEDULE_HORIZON: u64 = 10_000;

fn kind(name: &str) -> Result<ScheduleKind, String> {
    match name {
        "linear" => Ok(ScheduleKind::Linear),
        "quadratic" => Ok(ScheduleKind::Quadratic),
        "hard_switch" => Ok(ScheduleKind::HardSwitch),
        other => Err(format!("unknown schedule `{other}`")),
    }
}

fn grid(points: usize) -> impl Iterator<Item = u64> {
    let last = points.saturating_sub(1).max(1) as u64;
    (0..points as u64).map(move |i| i * SCHEDULE_HORIZON / last)
}

/// `M(k)` on `points` evenly spaced steps of a fixed horizon.
pub fn schedule_curve(schedule: &str, points: usize) -> Result<Vec<f64>, String> {
    let s = PhaseSchedule::new(kind(schedule)?, SCHEDULE_HORIZON);
    Ok(grid(points).map(|k| s.value(k)).collect())
}

/// Empirical Q-branch frequency at each grid step from `draws` coin flips.
pub fn branch_frequency(schedule: &str, points: usize, draws: usize, seed: u64) -> Result<Vec<f64>, String> {
    let s = PhaseSchedule::new(kind(schedule)?, SCHEDULE_HORIZON);
    let mut rng = rng::stream(seed, rng::Stream::Phase);
    Ok(grid(points)
        .map(|k| {
            let m = s.value(k);
            let hits = (0..draws)
                .filter(|_| select_branch(m, rng.random::<f64>()) == Branch::QValue)
                .count();
            hits as f64 / draws.max(1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRiccati {
    pub p: f64,
    pub k: f64,
    pub residual: f64,
    /// `|√γ (a − bK)|`.
    pub closed_loop: f64,
}

pub fn scalar_riccati(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> Result<ScalarRiccati, String> {
    let sys = LqrSystem::scalar(a, b, q, r);
    let sol = envs::riccati_solve(&sys, gamma, 1e-13, 1_000_000).map_err(|e| e.to_string())?;
    let (p, k) = (sol.p.data()[0], sol.k.data()[0]);
    Ok(ScalarRiccati { p, k, residual: sol.residual, closed_loop: (gamma.sqrt() * (a - b * k)).abs() })
}

/// `Q*(x, u)` for `points` actions spanning `[u_lo, u_hi]`.
#[allow(clippy::too_many_arguments)]
pub fn q_star_slice(
    a: f64,
    b: f64,
    q: f64,
    r: f64,
    gamma: f64,
    x: f64,
    u_lo: f64,
    u_hi: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let sys = LqrSystem::scalar(a, b, q, r);
    let sol = envs::riccati_solve(&sys, gamma, 1e-13, 1_000_000).map_err(|e| e.to_string())?;
    let last = points.saturating_sub(1).max(1) as f64;
    (0..points)
        .map(|i| {
            let u = u_lo + (u_hi - u_lo) * i as f64 / last;
            envs::lqr_q_star(&sol, &sys, gamma, &[x], &[u]).map_err(|e| e.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub gain: f64,
    pub optimal_gain: f64,
    /// Mean evaluation cost over the optimal policy's, one entry per evaluation.
    pub cost_ratio: Vec<f64>,
}

pub const DEMO_EVALS: u64 = 10;

/// Trains one small agent on `lqr1d`, evaluating ten times along the way.
pub fn train_lqr(variant: &str, steps: u64, seed: u64) -> Result<TrainSummary, String> {
    let variant: Variant = variant.parse().map_err(|e: paac_core::Error| e.to_string())?;
    let env = EnvSpec::preset("lqr1d").map_err(|e| e.to_string())?;
    let mut cfg = AgentConfig::for_env(variant, &env.name, steps);
    cfg.hidden_width = 32;
    cfg.minibatch_n = 32;
    cfg.warmup_steps = cfg.warmup_steps.min(steps / 4);
    cfg.seed = seed;
    let eval_seeds: Vec<u64> = (100..110).collect();
    let period = (steps / DEMO_EVALS).max(1);
    let trial = run_trial(&cfg, &env, steps, period, &eval_seeds).map_err(|e| e.to_string())?;
    if let Some(reason) = &trial.log.aborted {
        return Err(reason.clone());
    }
    let sys = env.lqr().expect("lqr preset");
    let sol = envs::riccati_solve(sys, cfg.gamma, 1e-13, 1_000_000).map_err(|e| e.to_string())?;
    let opt = evaluate_policy(&LinearPolicy { gain: sol.k.clone() }, &env, &eval_seeds, env.episode_len)
        .map_err(|e| e.to_string())?;
    let opt = opt.iter().sum::<f64>() / opt.len() as f64;
    let pairs: Vec<(f64, f64)> = (-20..=20)
        .map(|i| {
            let x = i as f64 * 0.05;
            Ok((x, actor_forward(&trial.agent.actor, &[x]).map_err(|e| e.to_string())?[0]))
        })
        .collect::<Result<_, String>>()?;
    Ok(TrainSummary {
        gain: envs::fit_scalar_gain(&pairs),
        optimal_gain: sol.k.data()[0],
        cost_ratio: trial.log.evals.iter().map(|e| e.mean() / opt).collect(),
    })
}
