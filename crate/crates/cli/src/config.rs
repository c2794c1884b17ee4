//! Run configuration: a sectioned TOML file plus `--set section.key=value`
//! overrides. Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use paac_core::agents::{AgentConfig, Variant};
use paac_core::bench::{self, ExperimentConfig, TaskThresholds};
use paac_core::envs::EnvSpec;
use paac_core::networks::{TargetMode, DEFAULT_HARD_PERIOD, DEFAULT_TAU};
use paac_core::paac::{ActorGradMode, ScheduleKind, TdForm};
use paac_core::{Error, Result};
use serde::Deserialize;

/// Environment variable that overrides `experiment.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "PAAC_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub thresholds: ThresholdSection,
    pub probe: ProbeSection,
    pub check: CheckSection,
    pub riccati: RiccatiSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub variants: Vec<String>,
    pub n_trials: u64,
    pub n_env_seeds: u64,
    pub total_steps: u64,
    pub eval_period: u64,
    pub jobs: usize,
    pub output_dir: Option<PathBuf>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            variants: vec!["ddpg".into(), "ddpg_paac".into()],
            n_trials: 10,
            n_env_seeds: 10,
            total_steps: 20_000,
            eval_period: bench::DEFAULT_EVAL_PERIOD,
            jobs: 1,
            output_dir: None,
            save_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub preset: String,
    pub episode_len: Option<usize>,
    /// Applied to every action dimension.
    pub action_bound: Option<f64>,
    pub reset_low: Option<Vec<f64>>,
    pub reset_high: Option<Vec<f64>>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            preset: "lqr1d".into(),
            episode_len: None,
            action_bound: None,
            reset_low: None,
            reset_high: None,
        }
    }
}

/// Unset keys keep the per-variant, per-environment defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub gamma: Option<f64>,
    pub minibatch_n: Option<usize>,
    pub buffer_capacity: Option<usize>,
    /// `none`, `hard` or `soft`.
    pub target_mode: Option<String>,
    pub hard_period: Option<u32>,
    pub tau: Option<f64>,
    pub actor_mode: Option<ActorGradMode>,
    pub td_form: Option<TdForm>,
    pub schedule: Option<ScheduleKind>,
    pub noise_scale: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub lr: Option<f64>,
    pub hidden_width: Option<usize>,
    pub updates_per_step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    pub success: Option<f64>,
    pub failure: Option<f64>,
    pub auc_normalizer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub batch_size: usize,
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            batch_size: 1,
            n_batches: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// All suites when unset.
    pub suites: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RiccatiSection {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: paac_core::envs::DEFAULT_RICCATI_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub variant: String,
    pub schedules: Vec<ScheduleKind>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variant: "dhdp_paac".into(),
            schedules: vec![ScheduleKind::Linear, ScheduleKind::Quadratic, ScheduleKind::HardSwitch],
        }
    }
}

/// Reads `path` (if any), applies `overrides` in order and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::config("config", e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `section.key=value`; the value is read as TOML and falls back to a bare
/// string. An empty value is an empty list.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::config(key, "override key must be section.key"))?;
    let raw = raw.trim();
    let value = if raw.is_empty() {
        toml::Value::Array(vec![])
    } else {
        format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()))
    };
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(Error::config(section, "is not a section"));
    };
    sec.insert(field.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let env = self.env_spec()?;
        for a in self.agent_configs(&env)? {
            a.validate()?;
        }
        if self.experiment.eval_period == 0 {
            return Err(Error::config("experiment.eval_period", "must be at least 1"));
        }
        if self.experiment.n_env_seeds == 0 {
            return Err(Error::config("experiment.n_env_seeds", "must be at least 1"));
        }
        self.sweep
            .variant
            .parse::<Variant>()
            .map_err(|_| Error::config("sweep.variant", format!("unknown variant `{}`", self.sweep.variant)))?;
        if let Some(suites) = &self.check.suites {
            for s in suites {
                s.parse::<paac_core::checks::Suite>()
                    .map_err(|_| Error::config("check.suites", format!("unknown suite `{s}`")))?;
            }
        }
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut env = EnvSpec::preset(&self.env.preset).map_err(|_| {
            Error::config("env.preset", format!("unknown preset `{}`", self.env.preset))
        })?;
        if let Some(t) = self.env.episode_len {
            if t == 0 {
                return Err(Error::config("env.episode_len", "must be at least 1"));
            }
            env.episode_len = t;
        }
        if let Some(b) = self.env.action_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config("env.action_bound", "must be positive"));
            }
            env.action_bound = vec![b; env.action_dim];
        }
        if let Some(lo) = &self.env.reset_low {
            env.reset_low = lo.clone();
        }
        if let Some(hi) = &self.env.reset_high {
            env.reset_high = hi.clone();
        }
        let n = env.reset_low.len();
        let bad = env.reset_high.len() != n || env.reset_low.iter().zip(&env.reset_high).any(|(l, h)| l > h);
        if bad {
            return Err(Error::config("env.reset_low", "reset box must have matching bounds with low ≤ high"));
        }
        Ok(env)
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.experiment
            .variants
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::config("experiment.variants", format!("unknown variant `{v}`")))
            })
            .collect()
    }

    /// One configuration per listed variant with overrides applied.
    pub fn agent_configs(&self, env: &EnvSpec) -> Result<Vec<AgentConfig>> {
        self.variants()?
            .into_iter()
            .map(|v| self.agent_config(v, env))
            .collect()
    }

    pub fn agent_config(&self, variant: Variant, env: &EnvSpec) -> Result<AgentConfig> {
        let a = &self.agent;
        let mut c = AgentConfig::for_env(variant, &env.name, self.experiment.total_steps);
        if let Some(v) = a.gamma {
            c.gamma = v;
        }
        if let Some(v) = a.minibatch_n {
            c.minibatch_n = v;
        }
        if let Some(v) = a.buffer_capacity {
            c.buffer_capacity = v;
        }
        if let Some(kind) = &a.target_mode {
            c.target_mode = match kind.as_str() {
                "none" => TargetMode::None,
                "hard" => TargetMode::Hard { period: DEFAULT_HARD_PERIOD },
                "soft" => TargetMode::Soft { tau: DEFAULT_TAU },
                other => return Err(Error::config("agent.target_mode", format!("`{other}` is not none, hard or soft"))),
            };
        }
        match (&mut c.target_mode, a.hard_period, a.tau) {
            (TargetMode::Hard { period }, Some(p), _) => *period = p,
            (TargetMode::Soft { tau }, _, Some(t)) => *tau = t,
            _ => {}
        }
        if let Some(v) = a.actor_mode {
            c.actor.mode = v;
        }
        if let Some(v) = a.td_form {
            c.actor.td_form = v;
        }
        if let Some(v) = a.schedule {
            c.schedule.kind = v;
        }
        if let Some(v) = a.noise_scale {
            c.noise_scale = v;
        }
        if let Some(v) = a.warmup_steps {
            c.warmup_steps = v;
        }
        if let Some(v) = a.lr {
            c.lr = v;
        }
        if let Some(v) = a.hidden_width {
            c.hidden_width = v;
        }
        if let Some(v) = a.updates_per_step {
            c.updates_per_step = v;
        }
        c.validate().map_err(|e| match e {
            Error::Config { key, reason } => Error::Config {
                key: format!("agent.{key}"),
                reason,
            },
            other => other,
        })?;
        Ok(c)
    }

    pub fn thresholds(&self, env: &EnvSpec, gamma: f64, eval_seeds: &[u64]) -> Result<TaskThresholds> {
        let mut t = bench::task_thresholds(env, gamma, eval_seeds)?;
        if let Some(v) = self.thresholds.success {
            t.success = v;
        }
        if let Some(v) = self.thresholds.failure {
            t.failure = v;
        }
        if let Some(v) = self.thresholds.auc_normalizer {
            t.auc_normalizer = v;
        }
        Ok(t)
    }

    pub fn experiment(&self, agents: Vec<AgentConfig>) -> Result<ExperimentConfig> {
        let env = self.env_spec()?;
        let e = &self.experiment;
        let mut x = ExperimentConfig::new(env.clone(), agents, e.n_trials, e.n_env_seeds, e.total_steps)?;
        let gamma = x.agents.first().map_or(paac_core::agents::DEFAULT_GAMMA, |a| a.gamma);
        x.thresholds = self.thresholds(&env, gamma, &x.eval_seeds)?;
        x.eval_period = e.eval_period;
        x.jobs = e.jobs.max(1);
        Ok(x)
    }

    /// `--out`, then the environment variable, then the config, then `out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.experiment.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
