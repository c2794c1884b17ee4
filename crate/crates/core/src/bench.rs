//! Multi-trial experiments, the five performance metrics and the
//! actor-gradient variance probe.
//!
//! Standard deviations are population (`1/n`) standard deviations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{self, Agent, AgentConfig, LinearPolicy, TrainingLog, Trial, Variant};
use crate::envs::{self, EnvKind, EnvSpec};
use crate::paac::{self, Batch, Branch, TdForm};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Number of trailing evaluations the metrics look at.
pub const LAST_EVALS: usize = 10;

/// Total costs indexed by `(trial, eval_index, env_seed)`, row-major.
///
/// `eval_index` counts over the trailing window only. Trials flagged
/// unsuccessful stay in the matrix but are skipped by every metric except
/// [`metric_success`]. Cells an aborted trial never reached are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub n_trials: usize,
    pub n_evals: usize,
    pub n_env_seeds: usize,
    pub values: Vec<f64>,
    pub success_flags: Vec<bool>,
}

impl EvalMatrix {
    pub fn new(
        n_trials: usize,
        n_evals: usize,
        n_env_seeds: usize,
        values: Vec<f64>,
        success_flags: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != n_trials * n_evals * n_env_seeds {
            return Err(Error::shape("eval matrix", n_trials * n_evals * n_env_seeds, values.len()));
        }
        if success_flags.len() != n_trials {
            return Err(Error::shape("eval matrix flags", n_trials, success_flags.len()));
        }
        Ok(Self {
            n_trials,
            n_evals,
            n_env_seeds,
            values,
            success_flags,
        })
    }

    /// Takes the last `window` evaluations of every log. A trial fails if it
    /// aborted or if every evaluation in its window exceeds
    /// `failure_threshold`.
    pub fn from_logs(logs: &[TrainingLog], window: usize, failure_threshold: f64) -> Result<Self> {
        let n_env_seeds = logs
            .iter()
            .flat_map(|l| l.evals.first())
            .map(|e| e.costs.len())
            .next()
            .unwrap_or(0);
        let n_evals = logs
            .iter()
            .filter(|l| l.aborted.is_none())
            .map(|l| l.evals.len().min(window))
            .min()
            .unwrap_or_else(|| window.min(logs.iter().map(|l| l.evals.len()).max().unwrap_or(0)));
        let mut values = Vec::with_capacity(logs.len() * n_evals * n_env_seeds);
        let mut flags = Vec::with_capacity(logs.len());
        for log in logs {
            let tail = &log.evals[log.evals.len().saturating_sub(n_evals)..];
            let mut all_fail = !tail.is_empty();
            for i in 0..n_evals {
                match tail.get(i) {
                    Some(e) if e.costs.len() == n_env_seeds => {
                        values.extend_from_slice(&e.costs);
                        all_fail &= e.mean() > failure_threshold;
                    }
                    Some(e) => return Err(Error::shape("eval seeds", n_env_seeds, e.costs.len())),
                    None => values.extend(std::iter::repeat_n(f64::NAN, n_env_seeds)),
                }
            }
            let complete = tail.len() == n_evals;
            flags.push(log.aborted.is_none() && complete && !all_fail);
        }
        Self::new(logs.len(), n_evals, n_env_seeds, values, flags)
    }

    pub fn get(&self, trial: usize, eval: usize, seed: usize) -> f64 {
        self.values[(trial * self.n_evals + eval) * self.n_env_seeds + seed]
    }

    fn cells(&self, trial: usize) -> &[f64] {
        let w = self.n_evals * self.n_env_seeds;
        &self.values[trial * w..(trial + 1) * w]
    }

    fn seed_mean(&self, trial: usize, eval: usize) -> f64 {
        let start = (trial * self.n_evals + eval) * self.n_env_seeds;
        mean(&self.values[start..start + self.n_env_seeds])
    }

    fn included(&self) -> Result<Vec<usize>> {
        if self.n_evals == 0 || self.n_env_seeds == 0 {
            return Err(Error::UndefinedMetric("evaluation matrix is empty".into()));
        }
        let ids: Vec<usize> = (0..self.n_trials).filter(|&t| self.success_flags[t]).collect();
        if ids.is_empty() {
            return Err(Error::UndefinedMetric("no successful trials".into()));
        }
        Ok(ids)
    }

    /// Seed-averaged cost of every `(trial, eval)` cell of successful trials.
    fn seed_means(&self) -> Result<Vec<f64>> {
        Ok(self
            .included()?
            .into_iter()
            .flat_map(|t| (0..self.n_evals).map(move |e| (t, e)))
            .map(|(t, e)| self.seed_mean(t, e))
            .collect())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn metric_total_cost(m: &EvalMatrix) -> Result<f64> {
    Ok(mean(&m.seed_means()?))
}

pub fn metric_learning_variance(m: &EvalMatrix) -> Result<f64> {
    Ok(population_std(&m.seed_means()?))
}

pub fn metric_robustness(m: &EvalMatrix) -> Result<f64> {
    let stds: Vec<f64> = m
        .included()?
        .into_iter()
        .map(|t| population_std(m.cells(t)))
        .collect();
    Ok(mean(&stds))
}

/// Trapezoidal area under `(step, cost)` divided by
/// `step span × normalizer`.
pub fn metric_auc(curve: &[(u64, f64)], normalizer: f64) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::UndefinedMetric("AUC needs at least two points".into()));
    }
    if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Contract("curve steps must be strictly increasing".into()));
    }
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::config("auc_normalizer", "must be positive"));
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * 0.5 * (w[0].1 + w[1].1))
        .sum();
    let span = (curve[curve.len() - 1].0 - curve[0].0) as f64;
    Ok(area / (span * normalizer))
}

/// Fraction of `(trial, eval)` cells, failed trials included, whose
/// seed-averaged cost is at most `threshold`.
pub fn metric_success(m: &EvalMatrix, threshold: Option<f64>) -> Result<f64> {
    let threshold = threshold.ok_or_else(|| Error::config("success_threshold", "not defined for this task"))?;
    let cells = m.n_trials * m.n_evals;
    if cells == 0 || m.n_env_seeds == 0 {
        return Err(Error::UndefinedMetric("evaluation matrix is empty".into()));
    }
    let hits = (0..m.n_trials)
        .flat_map(|t| (0..m.n_evals).map(move |e| (t, e)))
        .filter(|&(t, e)| m.seed_mean(t, e) <= threshold)
        .count();
    Ok(hits as f64 / cells as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub total_cost: f64,
    pub learning_variance: f64,
    pub robustness: f64,
    pub auc: f64,
    pub success_rate: f64,
}

/// Per-task constants the metrics need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskThresholds {
    /// Seed-averaged total cost at or below which an evaluation counts as
    /// reaching the learning goal.
    pub success: f64,
    /// A trial whose trailing evaluations all exceed this is unsuccessful.
    pub failure: f64,
    /// Largest total cost an episode can plausibly incur.
    pub auc_normalizer: f64,
}

/// Success multiplier on the Riccati-optimal cost for LQR tasks.
pub const LQR_SUCCESS_RATIO: f64 = 1.1;
/// Failure threshold as a fraction of the AUC normaliser.
pub const FAILURE_FRACTION: f64 = 0.9;

/// Seed-averaged total cost of the optimal linear policy.
pub fn riccati_optimal_cost(env: &EnvSpec, gamma: f64, eval_seeds: &[u64]) -> Result<f64> {
    let sys = env
        .lqr()
        .ok_or_else(|| Error::config("env", format!("`{}` is not an LQR task", env.name)))?;
    let sol = envs::riccati_solve(sys, gamma, 1e-12, envs::DEFAULT_RICCATI_MAX_ITERS)?;
    let costs = agents::evaluate_policy(&LinearPolicy { gain: sol.k }, env, eval_seeds, env.episode_len)?;
    Ok(mean(&costs))
}

/// Defaults: LQR succeeds at 1.1× the Riccati-optimal cost; cartpole and
/// pendulum at a mean stage cost of 0.2 and 0.3.
pub fn task_thresholds(env: &EnvSpec, gamma: f64, eval_seeds: &[u64]) -> Result<TaskThresholds> {
    let t = env.episode_len as f64;
    let (success, auc_normalizer) = match &env.kind {
        EnvKind::Lqr(_) => (
            LQR_SUCCESS_RATIO * riccati_optimal_cost(env, gamma, eval_seeds)?,
            zero_policy_worst_cost(env)?,
        ),
        EnvKind::CartpoleBalance(_) => (0.2 * t, t),
        EnvKind::PendulumSwingup(_) => (0.3 * t, t),
    };
    Ok(TaskThresholds {
        success,
        failure: FAILURE_FRACTION * auc_normalizer,
        auc_normalizer,
    })
}

/// Cost of `u = 0` from the worst corner of the reset box.
fn zero_policy_worst_cost(env: &EnvSpec) -> Result<f64> {
    let d = env.reset_low.len();
    let zero = vec![0.0; env.action_dim];
    let mut worst: f64 = 0.0;
    for mask in 0..1u32 << d {
        let mut x: Vec<f64> = (0..d)
            .map(|i| if mask >> i & 1 == 1 { env.reset_high[i] } else { env.reset_low[i] })
            .collect();
        let mut total = 0.0;
        for _ in 0..env.episode_len {
            let out = envs::env_step(env, &x, &zero)?;
            total += out.cost;
            x = out.next_state;
        }
        worst = worst.max(total);
    }
    Ok(worst)
}

/// Mean learning curve over successful trials.
pub fn mean_curve(logs: &[TrainingLog], include: &[bool]) -> Vec<(u64, f64)> {
    let kept: Vec<&TrainingLog> = logs.iter().zip(include).filter(|(_, &k)| k).map(|(l, _)| l).collect();
    let len = kept.iter().map(|l| l.evals.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let step = kept[0].evals[i].step;
            let avg = kept.iter().map(|l| l.evals[i].mean()).sum::<f64>() / kept.len() as f64;
            (step, avg)
        })
        .collect()
}

pub fn compute_metrics(logs: &[TrainingLog], thresholds: &TaskThresholds) -> Result<(EvalMatrix, MetricsRecord)> {
    let m = EvalMatrix::from_logs(logs, LAST_EVALS, thresholds.failure)?;
    let record = MetricsRecord {
        total_cost: metric_total_cost(&m)?,
        learning_variance: metric_learning_variance(&m)?,
        robustness: metric_robustness(&m)?,
        auc: metric_auc(&mean_curve(logs, &m.success_flags), thresholds.auc_normalizer)?,
        success_rate: metric_success(&m, Some(thresholds.success))?,
    };
    Ok((m, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// One agent configuration per variant; `seed` is overwritten per trial.
    pub agents: Vec<AgentConfig>,
    pub trial_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_period: u64,
    pub thresholds: TaskThresholds,
    pub jobs: usize,
}

pub const DEFAULT_EVAL_PERIOD: u64 = 5000;

impl ExperimentConfig {
    /// Trial seeds `0..n_trials`, evaluation seeds `100..100 + n_env_seeds`.
    pub fn new(env: EnvSpec, agents: Vec<AgentConfig>, n_trials: u64, n_env_seeds: u64, total_steps: u64) -> Result<Self> {
        let eval_seeds: Vec<u64> = (100..100 + n_env_seeds).collect();
        let gamma = agents.first().map_or(agents::DEFAULT_GAMMA, |a| a.gamma);
        Ok(Self {
            thresholds: task_thresholds(&env, gamma, &eval_seeds)?,
            env,
            agents,
            trial_seeds: (0..n_trials).collect(),
            eval_seeds,
            total_steps,
            eval_period: DEFAULT_EVAL_PERIOD,
            jobs: 1,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub logs: Vec<TrainingLog>,
    pub matrix: Option<EvalMatrix>,
    pub metrics: Result<MetricsRecord, String>,
}

/// Runs every `(agent config, trial seed)` pair. `on_trial` sees each
/// finished trial (final networks and buffer included) in submission
/// order, regardless of `jobs`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut on_trial: impl FnMut(&AgentConfig, &Trial) -> Result<()>,
) -> Result<Vec<VariantResult>> {
    let jobs: Vec<AgentConfig> = cfg
        .agents
        .iter()
        .flat_map(|a| {
            cfg.trial_seeds.iter().map(move |&s| AgentConfig { seed: s, ..a.clone() })
        })
        .collect();
    for a in &cfg.agents {
        a.validate()?;
    }
    let run = |a: &AgentConfig| agents::run_trial(a, &cfg.env, cfg.total_steps, cfg.eval_period, &cfg.eval_seeds);

    let mut logs = Vec::with_capacity(jobs.len());
    if cfg.jobs <= 1 {
        for a in &jobs {
            let trial = run(a)?;
            on_trial(a, &trial)?;
            logs.push(trial.log);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<Trial>>>> = jobs.iter().map(|_| Default::default()).collect();
        std::thread::scope(|s| {
            for _ in 0..cfg.jobs.min(jobs.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(a) = jobs.get(i) else { break };
                    *slots[i].lock().expect("unpoisoned") = Some(run(a));
                });
            }
        });
        for (a, slot) in jobs.iter().zip(slots) {
            let trial = slot.into_inner().expect("unpoisoned").expect("every job ran")?;
            on_trial(a, &trial)?;
            logs.push(trial.log);
        }
    }

    let per = cfg.trial_seeds.len();
    let mut out = Vec::with_capacity(cfg.agents.len());
    let mut logs = logs.into_iter();
    for a in &cfg.agents {
        let variant_logs: Vec<TrainingLog> = logs.by_ref().take(per).collect();
        let (matrix, metrics) = match compute_metrics(&variant_logs, &cfg.thresholds) {
            Ok((m, r)) => (Some(m), Ok(r)),
            Err(e) => (EvalMatrix::from_logs(&variant_logs, LAST_EVALS, cfg.thresholds.failure).ok(), Err(e.to_string())),
        };
        out.push(VariantResult {
            variant: a.variant,
            logs: variant_logs,
            matrix,
            metrics,
        });
    }
    Ok(out)
}

/// Trace of the empirical covariance of the flattened actor gradient under
/// each branch form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub var_q: f64,
    pub var_td_linear: f64,
    pub var_td_squared: f64,
    pub batch_size: usize,
    pub n_batches: usize,
}

/// Running per-coordinate mean and sum of squared deviations.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Trace of the unbiased covariance estimate.
    fn trace(&self) -> f64 {
        self.m2.iter().sum::<f64>() / (self.n - 1.0)
    }
}

/// Draws `n_batches` minibatches from the agent's buffer and evaluates all
/// three branch forms on each one.
pub fn variance_probe(agent: &Agent, batch_size: usize, n_batches: usize, seed: u64) -> Result<VarianceEstimate> {
    if batch_size == 0 || n_batches < 2 {
        return Err(Error::config("probe", "needs batch_size ≥ 1 and n_batches ≥ 2"));
    }
    if agent.buffer.len() < batch_size {
        return Err(Error::Contract(format!(
            "buffer holds {} transitions, fewer than the batch size {batch_size}",
            agent.buffer.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Probe);
    let dim = agent.actor.params.num_params();
    let mut acc = [Welford::new(dim), Welford::new(dim), Welford::new(dim)];
    let view = agent.targets.resolve(&agent.actor, &agent.critic);
    for _ in 0..n_batches {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..agent.buffer.len())).collect();
        let sample: Vec<_> = idx.iter().map(|&i| agent.buffer.get(i).expect("in range").clone()).collect();
        let batch = Batch::from_transitions(&sample)?;
        let ys = paac::bellman_targets(&batch, view, agent.cfg.gamma)?;
        let forms = [
            (Branch::QValue, TdForm::LinearDelta),
            (Branch::TdError, TdForm::LinearDelta),
            (Branch::TdError, TdForm::SquaredDelta),
        ];
        for (w, (branch, form)) in acc.iter_mut().zip(forms) {
            let g = paac::branch_gradient_with_targets(branch, form, &batch, &agent.critic, &agent.actor, Some(&ys))?;
            w.push(&g.flatten());
        }
    }
    Ok(VarianceEstimate {
        var_q: acc[0].trace(),
        var_td_linear: acc[1].trace(),
        var_td_squared: acc[2].trace(),
        batch_size,
        n_batches,
    })
}
