//! The algorithm lattice and the training loop.
//!
//! Seven variants are built from three switches: replay on/off, target
//! networks (none, hard copy, soft blend) and the actor objective (Q-value
//! only, or phased). [`Variant::lattice`] is the single source of truth for
//! which combinations exist.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvSpec};
use crate::networks::{self, ActorNet, CriticNet, Policy, TargetMode, TargetPair};
use crate::paac::{self, ActorGradMode, ActorObjective, Batch, Branch, PhaseSchedule, ScheduleKind, TdForm};
use crate::replay::{self, ReplayBuffer, Transition};
use crate::rng::{self, Rng64, Stream};
use crate::tensor::{self, AdamState, DenseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    VanillaDhdp,
    DhdpEr,
    DhdpTarget,
    Dhdp,
    DhdpPaac,
    Ddpg,
    DdpgPaac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFamily {
    None,
    Hard,
    Soft,
}

/// The `(replay, targets, actor)` triple a variant stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticePoint {
    pub replay: bool,
    pub targets: TargetFamily,
    pub actor: ActorGradMode,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::VanillaDhdp,
        Variant::DhdpEr,
        Variant::DhdpTarget,
        Variant::Dhdp,
        Variant::DhdpPaac,
        Variant::Ddpg,
        Variant::DdpgPaac,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::VanillaDhdp => "vanilla_dhdp",
            Variant::DhdpEr => "dhdp_er",
            Variant::DhdpTarget => "dhdp_target",
            Variant::Dhdp => "dhdp",
            Variant::DhdpPaac => "dhdp_paac",
            Variant::Ddpg => "ddpg",
            Variant::DdpgPaac => "ddpg_paac",
        }
    }

    pub fn lattice(&self) -> LatticePoint {
        use ActorGradMode::*;
        let (replay, targets, actor) = match self {
            Variant::VanillaDhdp => (false, TargetFamily::None, QOnly),
            Variant::DhdpEr => (false, TargetFamily::Hard, QOnly),
            Variant::DhdpTarget => (true, TargetFamily::None, QOnly),
            Variant::Dhdp => (true, TargetFamily::Hard, QOnly),
            Variant::DhdpPaac => (true, TargetFamily::Hard, Phased),
            Variant::Ddpg => (true, TargetFamily::Soft, QOnly),
            Variant::DdpgPaac => (true, TargetFamily::Soft, Phased),
        };
        LatticePoint { replay, targets, actor }
    }

    fn default_target_mode(&self) -> TargetMode {
        match self.lattice().targets {
            TargetFamily::None => TargetMode::None,
            TargetFamily::Hard => TargetMode::Hard {
                period: networks::DEFAULT_HARD_PERIOD,
            },
            TargetFamily::Soft => TargetMode::Soft {
                tau: networks::DEFAULT_TAU,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

/// Every knob of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub minibatch_n: usize,
    pub buffer_capacity: usize,
    pub target_mode: TargetMode,
    pub actor: ActorObjective,
    pub schedule: PhaseSchedule,
    /// Exploration noise std as a fraction of the action bound.
    pub noise_scale: f64,
    pub warmup_steps: u64,
    pub lr: f64,
    pub hidden_width: usize,
    pub updates_per_step: usize,
    pub seed: u64,
}

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;
pub const DEFAULT_WARMUP: u64 = 8000;
pub const DEFAULT_MINIBATCH: usize = 256;

impl AgentConfig {
    /// Full-size defaults for a variant: 256-wide networks, minibatches of
    /// 256, linear schedule over `k_total` steps.
    pub fn new(variant: Variant, k_total: u64) -> Self {
        let point = variant.lattice();
        Self {
            variant,
            gamma: DEFAULT_GAMMA,
            minibatch_n: DEFAULT_MINIBATCH,
            buffer_capacity: if point.replay { replay::DEFAULT_CAPACITY } else { 1 },
            target_mode: variant.default_target_mode(),
            actor: ActorObjective {
                mode: point.actor,
                td_form: TdForm::SquaredDelta,
            },
            schedule: PhaseSchedule::new(ScheduleKind::Linear, k_total),
            noise_scale: DEFAULT_NOISE_SCALE,
            warmup_steps: DEFAULT_WARMUP,
            lr: tensor::DEFAULT_LR,
            hidden_width: tensor::DEFAULT_HIDDEN_WIDTH,
            updates_per_step: 1,
            seed: 0,
        }
    }

    /// Desk-scale defaults tuned per environment preset.
    pub fn for_env(variant: Variant, env: &str, k_total: u64) -> Self {
        let mut cfg = Self::new(variant, k_total);
        match env {
            "lqr1d" => {
                cfg.gamma = 0.9;
                cfg.noise_scale = 0.3;
                cfg.hidden_width = 64;
                cfg.minibatch_n = 64;
                cfg.warmup_steps = 1000;
            }
            "lqr2d" => {
                cfg.hidden_width = 64;
                cfg.minibatch_n = 64;
                cfg.warmup_steps = 1000;
            }
            "cartpole" | "pendulum" => {
                cfg.hidden_width = 64;
                cfg.minibatch_n = 64;
            }
            _ => {}
        }
        cfg
    }

    pub fn lattice_point(&self) -> LatticePoint {
        LatticePoint {
            replay: self.buffer_capacity > 1,
            targets: match self.target_mode {
                TargetMode::None => TargetFamily::None,
                TargetMode::Hard { .. } => TargetFamily::Hard,
                TargetMode::Soft { .. } => TargetFamily::Soft,
            },
            actor: self.actor.mode,
        }
    }

    /// Range checks plus membership in the variant lattice.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        if self.minibatch_n == 0 {
            return Err(Error::config("minibatch_n", "must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be at least 1"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("noise_scale", "must be nonnegative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width", "must be at least 1"));
        }
        if self.updates_per_step == 0 {
            return Err(Error::config("updates_per_step", "must be at least 1"));
        }
        match self.target_mode {
            TargetMode::Hard { period: 0 } => {
                return Err(Error::config("hard_period", "must be at least 1"))
            }
            TargetMode::Soft { tau } if !(0.0..=1.0).contains(&tau) => {
                return Err(Error::config("tau", "must lie in [0, 1]"))
            }
            _ => {}
        }
        let want = self.variant.lattice();
        let got = self.lattice_point();
        if want.replay != got.replay {
            let reason = if want.replay {
                "needs a replay buffer (capacity > 1)"
            } else {
                "runs without replay (capacity 1)"
            };
            return Err(Error::config("buffer_capacity", format!("{} {reason}", self.variant)));
        }
        if want.targets != got.targets {
            return Err(Error::config(
                "target_mode",
                format!(
                    "{} uses {:?} targets, not {}",
                    self.variant,
                    want.targets,
                    self.target_mode.family()
                ),
            ));
        }
        if want.actor != got.actor {
            return Err(Error::config(
                "actor_mode",
                format!("{} uses the {:?} actor objective", self.variant, want.actor),
            ));
        }
        Ok(())
    }
}

/// `u = −Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub gain: DenseMatrix,
}

impl Policy for LinearPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gain.matvec(state)?.into_iter().map(|v| -v).collect())
    }
}

/// I.i.d. Gaussian noise with std `scale · bound_i` per dimension.
pub fn exploration_noise(rng: &mut impl Rng, bound: &[f64], scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return vec![0.0; bound.len()];
    }
    bound
        .iter()
        .map(|b| {
            Normal::new(0.0, scale * b)
                .expect("finite nonnegative std")
                .sample(rng)
        })
        .collect()
}

fn clamp_action(u: &mut [f64], bound: &[f64]) {
    for (v, b) in u.iter_mut().zip(bound) {
        *v = v.clamp(-b, *b);
    }
}

/// One greedy episode per seed; returns the undiscounted total cost of each.
pub fn evaluate_policy(
    policy: &impl Policy,
    env: &EnvSpec,
    seeds: &[u64],
    episode_len: usize,
) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut x = envs::env_reset(env, seed);
            let mut total = 0.0;
            for _ in 0..episode_len {
                let mut u = policy.act(&x)?;
                clamp_action(&mut u, &env.action_bound);
                let out = envs::env_step(env, &x, &u)?;
                total += out.cost;
                x = out.next_state;
                if out.terminal {
                    break;
                }
            }
            Ok(total)
        })
        .collect()
}

/// What happened on one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub cost: f64,
    /// Critic loss of the last update this step, if learning happened.
    pub critic_loss: Option<f64>,
    pub branch: Option<Branch>,
    /// `M(k)`.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Environment steps completed when the evaluation ran.
    pub step: u64,
    /// Total cost per evaluation seed.
    pub costs: Vec<f64>,
}

impl EvalRecord {
    pub fn mean(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Diagnostic for a trial that stopped on a numeric error.
    pub aborted: Option<String>,
}

/// A wired agent mid-training.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub targets: TargetPair,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub buffer: ReplayBuffer,
    explore_rng: Rng64,
    replay_rng: Rng64,
    phase_rng: Rng64,
    episode_rng: Rng64,
    state: Option<Vec<f64>>,
    episode_step: usize,
}

pub fn build_agent(cfg: &AgentConfig, env: &EnvSpec) -> Result<Agent> {
    cfg.validate()?;
    let (actor, critic, targets) = networks::init_agent_networks(
        cfg.seed,
        env.state_dim,
        env.action_dim,
        &env.action_bound,
        cfg.hidden_width,
        cfg.target_mode,
    )?;
    Ok(Agent {
        actor_adam: AdamState::new(&actor.params, cfg.lr),
        critic_adam: AdamState::new(&critic.params, cfg.lr),
        actor,
        critic,
        targets,
        buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
        explore_rng: rng::stream(cfg.seed, Stream::Exploration),
        replay_rng: rng::stream(cfg.seed, Stream::Replay),
        phase_rng: rng::stream(cfg.seed, Stream::Phase),
        episode_rng: rng::stream(cfg.seed, Stream::Episodes),
        state: None,
        episode_step: 0,
        cfg: cfg.clone(),
    })
}

impl Agent {
    /// One environment step followed, after warmup, by
    /// `updates_per_step` learning iterations.
    pub fn train_step(&mut self, env: &EnvSpec, k: u64) -> Result<StepRecord> {
        if env.state_dim != self.actor.state_dim() || env.action_dim != self.actor.action_dim() {
            return Err(Error::shape("train_step env", self.actor.state_dim(), env.state_dim));
        }
        let x = match self.state.take() {
            Some(x) if self.episode_step < env.episode_len => x,
            _ => {
                self.episode_step = 0;
                envs::env_reset(env, self.episode_rng.random())
            }
        };
        let warm = k < self.cfg.warmup_steps;
        let mut u = if warm {
            env.action_bound
                .iter()
                .map(|b| self.explore_rng.random_range(-b..=*b))
                .collect()
        } else {
            let mut u = networks::actor_forward(&self.actor, &x)?;
            let noise = exploration_noise(&mut self.explore_rng, &env.action_bound, self.cfg.noise_scale);
            for (a, n) in u.iter_mut().zip(noise) {
                *a += n;
            }
            u
        };
        clamp_action(&mut u, &env.action_bound);
        let out = envs::env_step(env, &x, &u)?;
        let cost = out.cost;
        self.buffer.push(Transition {
            state: x,
            action: u,
            cost,
            next_state: out.next_state.clone(),
            terminal: out.terminal,
        })?;
        self.episode_step += 1;
        if !out.terminal {
            self.state = Some(out.next_state);
        }

        let phase = paac::phase_value(&self.cfg.schedule, k);
        let mut record = StepRecord {
            k,
            cost,
            critic_loss: None,
            branch: None,
            phase,
        };
        if !warm {
            for _ in 0..self.cfg.updates_per_step {
                let (loss, branch) = self.learn(phase)?;
                record.critic_loss = Some(loss);
                record.branch = Some(branch);
            }
        }
        Ok(record)
    }

    /// Critic step, actor step, target tick.
    fn learn(&mut self, phase: f64) -> Result<(f64, Branch)> {
        let sample = self.buffer.sample(self.cfg.minibatch_n, &mut self.replay_rng)?;
        let batch = Batch::from_transitions(&sample)?;
        let ys = paac::bellman_targets(&batch, self.targets.resolve(&self.actor, &self.critic), self.cfg.gamma)?;
        let loss = paac::critic_update_with_targets(&mut self.critic, &batch, &ys, &mut self.critic_adam)?;

        let omega: f64 = self.phase_rng.random();
        let branch = self.cfg.actor.branch(phase, omega);
        let grads = paac::branch_gradient_with_targets(
            branch,
            self.cfg.actor.td_form,
            &batch,
            &self.critic,
            &self.actor,
            Some(&ys),
        )?;
        paac::actor_update(&mut self.actor, &grads, &mut self.actor_adam)?;
        self.targets.tick(&self.actor, &self.critic)?;
        Ok((loss, branch))
    }
}

/// A finished (or aborted) trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub log: TrainingLog,
    pub agent: Agent,
}

/// Trains for `total_steps`, evaluating greedily on `eval_seeds` before the
/// first step and after every `eval_period` steps.
pub fn run_trial(
    cfg: &AgentConfig,
    env: &EnvSpec,
    total_steps: u64,
    eval_period: u64,
    eval_seeds: &[u64],
) -> Result<Trial> {
    if cfg.schedule.k_total != total_steps {
        return Err(Error::config(
            "total_steps",
            format!("schedule spans {} steps but the trial runs {total_steps}", cfg.schedule.k_total),
        ));
    }
    if eval_period == 0 {
        return Err(Error::config("eval_period", "must be at least 1"));
    }
    let mut agent = build_agent(cfg, env)?;
    let mut log = TrainingLog::default();
    let evaluate = |agent: &Agent, step: u64| -> Result<EvalRecord> {
        Ok(EvalRecord {
            step,
            costs: evaluate_policy(&agent.actor, env, eval_seeds, env.episode_len)?,
        })
    };
    let run = |agent: &mut Agent, log: &mut TrainingLog| -> Result<()> {
        log.evals.push(evaluate(agent, 0)?);
        for k in 0..total_steps {
            log.steps.push(agent.train_step(env, k)?);
            if (k + 1) % eval_period == 0 {
                log.evals.push(evaluate(agent, k + 1)?);
            }
        }
        Ok(())
    };
    if let Err(e) = run(&mut agent, &mut log) {
        log.aborted = Some(e.to_string());
    }
    Ok(Trial { log, agent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lqr() -> EnvSpec {
        EnvSpec::preset("lqr1d").unwrap()
    }

    fn small(variant: Variant, k_total: u64) -> AgentConfig {
        let mut cfg = AgentConfig::for_env(variant, "lqr1d", k_total);
        cfg.hidden_width = 8;
        cfg.minibatch_n = 8;
        cfg.warmup_steps = 20;
        cfg
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("td3".parse::<Variant>().is_err());
    }

    #[test]
    fn defaults_sit_on_the_lattice() {
        for v in Variant::ALL {
            let cfg = AgentConfig::new(v, 100);
            cfg.validate().unwrap();
            assert_eq!(cfg.lattice_point(), v.lattice());
        }
        let ddpg = AgentConfig::new(Variant::Ddpg, 1);
        assert_eq!(ddpg.target_mode, TargetMode::Soft { tau: 0.05 });
        assert_eq!(ddpg.actor.mode, ActorGradMode::QOnly);
        let dhdp = AgentConfig::new(Variant::Dhdp, 1);
        assert_eq!(dhdp.target_mode, TargetMode::Hard { period: 15 });
        let paac = AgentConfig::new(Variant::DhdpPaac, 1);
        assert_eq!(paac.actor.mode, ActorGradMode::Phased);
        assert_eq!(paac.schedule.kind, ScheduleKind::Linear);
        assert!(matches!(paac.target_mode, TargetMode::Hard { .. }));
        assert_eq!(AgentConfig::new(Variant::VanillaDhdp, 1).buffer_capacity, 1);
        assert_eq!(AgentConfig::new(Variant::DhdpEr, 1).buffer_capacity, 1);
        assert_eq!(AgentConfig::new(Variant::DhdpTarget, 1).target_mode, TargetMode::None);
    }

    #[test]
    fn off_lattice_configs_are_rejected() {
        let mut cfg = AgentConfig::new(Variant::Ddpg, 1);
        cfg.target_mode = TargetMode::Hard { period: 15 };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "target_mode"));

        let mut cfg = AgentConfig::new(Variant::Dhdp, 1);
        cfg.actor.mode = ActorGradMode::Phased;
        assert!(matches!(cfg.validate(), Err(Error::Config { ref key, .. }) if key == "actor_mode"));

        let mut cfg = AgentConfig::new(Variant::VanillaDhdp, 1);
        cfg.buffer_capacity = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config { ref key, .. }) if key == "buffer_capacity"));

        let mut cfg = AgentConfig::new(Variant::Ddpg, 1);
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_statistics_and_seeding() {
        assert_eq!(exploration_noise(&mut rng::seeded(0), &[1.0, 2.0], 0.0), vec![0.0, 0.0]);
        let a = exploration_noise(&mut rng::seeded(4), &[1.0], 0.1);
        let b = exploration_noise(&mut rng::seeded(4), &[1.0], 0.1);
        assert_eq!(a, b);
        let mut r = rng::seeded(8);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| exploration_noise(&mut r, &[1.0], 0.1)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.098..=0.102).contains(&std), "{std}");
    }

    #[test]
    fn warmup_changes_no_parameters() {
        let cfg = small(Variant::Ddpg, 100);
        let env = lqr();
        let mut agent = build_agent(&cfg, &env).unwrap();
        let (a0, c0, t0) = (agent.actor.clone(), agent.critic.clone(), agent.targets.clone());
        for k in 0..cfg.warmup_steps {
            let rec = agent.train_step(&env, k).unwrap();
            assert!(rec.critic_loss.is_none());
        }
        assert_eq!(agent.actor, a0);
        assert_eq!(agent.critic, c0);
        assert_eq!(agent.targets, t0);
        assert_eq!(agent.buffer.len(), cfg.warmup_steps as usize);
        let rec = agent.train_step(&env, cfg.warmup_steps).unwrap();
        assert!(rec.critic_loss.is_some());
        assert_ne!(agent.critic, c0);
    }

    #[test]
    fn executed_actions_are_clamped() {
        let mut cfg = small(Variant::Ddpg, 200);
        cfg.noise_scale = 5.0;
        let env = lqr();
        let mut agent = build_agent(&cfg, &env).unwrap();
        for k in 0..200 {
            agent.train_step(&env, k).unwrap();
        }
        assert!(agent.buffer.iter_oldest_first().all(|t| t.action[0].abs() <= 2.0));
    }

    #[test]
    fn training_is_reproducible() {
        for noise in [0.0, 0.1] {
            let mut cfg = small(Variant::DdpgPaac, 120);
            cfg.noise_scale = noise;
            let a = run_trial(&cfg, &lqr(), 120, 40, &[100, 101]).unwrap();
            let b = run_trial(&cfg, &lqr(), 120, 40, &[100, 101]).unwrap();
            assert_eq!(a.log, b.log);
            assert_eq!(a.agent.actor, b.agent.actor);
            assert_eq!(a.agent.critic, b.agent.critic);
        }
    }

    #[test]
    fn small_buffer_still_fills_minibatch() {
        let mut cfg = small(Variant::Ddpg, 30);
        cfg.warmup_steps = 1;
        cfg.minibatch_n = 64;
        let env = lqr();
        let mut agent = build_agent(&cfg, &env).unwrap();
        agent.train_step(&env, 0).unwrap();
        let rec = agent.train_step(&env, 1).unwrap();
        assert!(rec.critic_loss.is_some());
    }

    #[test]
    fn evaluation_cadence() {
        let cfg = small(Variant::Dhdp, 0);
        let t = run_trial(&cfg, &lqr(), 0, 5, &[100]).unwrap();
        assert_eq!(t.log.evals.len(), 1);
        assert!(t.log.steps.is_empty());

        let cfg = small(Variant::Dhdp, 50);
        let t = run_trial(&cfg, &lqr(), 50, 5, &[100]).unwrap();
        let steps: Vec<u64> = t.log.evals.iter().map(|e| e.step).collect();
        assert_eq!(steps, (0..=10).map(|i| i * 5).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_must_span_trial() {
        let cfg = small(Variant::Dhdp, 10);
        assert!(run_trial(&cfg, &lqr(), 20, 5, &[100]).is_err());
    }

    #[test]
    fn every_variant_trains() {
        for v in Variant::ALL {
            let cfg = small(v, 60);
            let t = run_trial(&cfg, &lqr(), 60, 30, &[100, 101]).unwrap();
            assert!(t.log.aborted.is_none(), "{v}: {:?}", t.log.aborted);
            assert_eq!(t.log.evals.len(), 3);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_zero_cost_at_origin() {
        let mut env = lqr();
        env.reset_low = vec![0.0];
        env.reset_high = vec![0.0];
        let zero = LinearPolicy {
            gain: DenseMatrix::column(&[0.0]),
        };
        assert_eq!(evaluate_policy(&zero, &env, &[100, 101], 50).unwrap(), vec![0.0, 0.0]);
        let env = lqr();
        let p = LinearPolicy {
            gain: DenseMatrix::column(&[0.5]),
        };
        assert_eq!(
            evaluate_policy(&p, &env, &[7], 50).unwrap(),
            evaluate_policy(&p, &env, &[7], 50).unwrap()
        );
    }

    #[test]
    fn optimal_gain_evaluates_to_riccati_cost() {
        let env = lqr();
        let sys = env.lqr().unwrap();
        let sol = envs::riccati_solve(sys, 0.99, 1e-13, 100_000).unwrap();
        let seeds: Vec<u64> = (100..110).collect();
        let policy = LinearPolicy { gain: sol.k.clone() };
        let total: f64 = evaluate_policy(&policy, &env, &seeds, env.episode_len).unwrap().iter().sum();
        let predicted: f64 = seeds
            .iter()
            .map(|&s| envs::lqr_value(&sol, &envs::env_reset(&env, s)).unwrap())
            .sum();
        assert!(((total - predicted) / predicted).abs() < 0.01, "{total} vs {predicted}");
    }
}
