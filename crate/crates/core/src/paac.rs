//! Bellman targets, critic regression and the phased actor gradient.
//!
//! The actor minimises cost. Its gradient is taken either from the critic
//! value `Q(x, π(x|θ))` or from the TD error `δ(θ) = Q(x, π(x|θ)) − y`,
//! with the choice made per update by comparing a uniform draw `ω` against
//! a decaying schedule `M(k)`.
//!
//! Because `y` is built from target networks it is a constant with respect
//! to `θ`, so `∇δ = ∇Q` sample by sample. [`TdForm::LinearDelta`] keeps that
//! literal form. [`TdForm::SquaredDelta`] differentiates `½δ²` instead,
//! which scales each sample's contribution by its TD error and is the form
//! that actually behaves differently from the Q-value branch.

use serde::{Deserialize, Serialize};

use crate::networks::{ActorNet, CriticNet, TargetView};
use crate::replay::Transition;
use crate::tensor::{self, AdamState, DenseMatrix, NetParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Quadratic,
    HardSwitch,
}

/// Transition function `M(k)`: probability of taking the Q-value branch at
/// global step `k`, decreasing from 1 at `k = 0` to 0 at `k = k_total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub kind: ScheduleKind,
    pub k_total: u64,
}

impl PhaseSchedule {
    pub fn new(kind: ScheduleKind, k_total: u64) -> Self {
        Self { kind, k_total }
    }

    pub fn value(&self, k: u64) -> f64 {
        phase_value(self, k)
    }
}

/// `k` above `k_total` is clamped. A zero-length schedule is fully
/// transitioned.
pub fn phase_value(s: &PhaseSchedule, k: u64) -> f64 {
    if s.k_total == 0 {
        return 0.0;
    }
    let k = k.min(s.k_total);
    let frac = 1.0 - k as f64 / s.k_total as f64;
    match s.kind {
        ScheduleKind::Linear => frac,
        ScheduleKind::Quadratic => frac * frac,
        ScheduleKind::HardSwitch => {
            if 2 * k < s.k_total {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    QValue,
    TdError,
}

pub fn select_branch(m: f64, omega: f64) -> Branch {
    if omega <= m {
        Branch::QValue
    } else {
        Branch::TdError
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorGradMode {
    QOnly,
    TdOnly,
    Phased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdForm {
    /// `Ψ = δ`; gradient identical to the Q-value branch.
    LinearDelta,
    /// `Ψ = ½δ²`; gradient `δ·∇Q`.
    SquaredDelta,
}

/// Actor objective: which branch(es) to use and the TD-branch form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorObjective {
    pub mode: ActorGradMode,
    pub td_form: TdForm,
}

impl ActorObjective {
    pub fn q_only() -> Self {
        Self {
            mode: ActorGradMode::QOnly,
            td_form: TdForm::SquaredDelta,
        }
    }

    pub fn phased(td_form: TdForm) -> Self {
        Self {
            mode: ActorGradMode::Phased,
            td_form,
        }
    }

    /// Branch for one update given `M(k)` and the draw `omega`.
    pub fn branch(&self, m: f64, omega: f64) -> Branch {
        match self.mode {
            ActorGradMode::QOnly => Branch::QValue,
            ActorGradMode::TdOnly => Branch::TdError,
            ActorGradMode::Phased => select_branch(m, omega),
        }
    }
}

/// A minibatch stacked into row-per-sample matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: DenseMatrix,
    pub actions: DenseMatrix,
    pub costs: Vec<f64>,
    pub next_states: DenseMatrix,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(batch: &[Transition]) -> Result<Self> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Contract("minibatch must be nonempty".into()))?;
        let (n, m) = (first.state.len(), first.action.len());
        let mut states = Vec::with_capacity(batch.len() * n);
        let mut actions = Vec::with_capacity(batch.len() * m);
        let mut next = Vec::with_capacity(batch.len() * n);
        for t in batch {
            if t.state.len() != n || t.next_state.len() != n {
                return Err(Error::shape("batch state", n, t.state.len()));
            }
            if t.action.len() != m {
                return Err(Error::shape("batch action", m, t.action.len()));
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next.extend_from_slice(&t.next_state);
        }
        Ok(Self {
            states: DenseMatrix::new(batch.len(), n, states)?,
            actions: DenseMatrix::new(batch.len(), m, actions)?,
            costs: batch.iter().map(|t| t.cost).collect(),
            next_states: DenseMatrix::new(batch.len(), n, next)?,
            terminal: batch.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::config("gamma", format!("{gamma} is outside (0, 1)")))
    }
}

/// `y = R + γ Q'(x', π'(x'))`, or `y = R` for an absorbing terminal.
pub fn bellman_target(t: &Transition, targets: TargetView<'_>, gamma: f64) -> Result<f64> {
    let batch = Batch::from_transitions(std::slice::from_ref(t))?;
    Ok(bellman_targets(&batch, targets, gamma)?[0])
}

pub fn bellman_targets(batch: &Batch, targets: TargetView<'_>, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let (next_actions, _) = targets.actor.forward_batch(&batch.next_states)?;
    let (q_next, _) = targets.critic.forward_batch(&batch.next_states, &next_actions)?;
    let mut ys = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        if !q_next[i].is_finite() {
            return Err(Error::Numeric(format!("target critic returned {}", q_next[i])));
        }
        let boot = if batch.terminal[i] { 0.0 } else { gamma * q_next[i] };
        ys.push(batch.costs[i] + boot);
    }
    Ok(ys)
}

/// `δ = Q(x, π(x|θ)) − y`. The critic sees the current policy's action,
/// not the stored one.
pub fn td_error(critic: &CriticNet, actor: &ActorNet, t: &Transition, y: f64) -> Result<f64> {
    let u = crate::networks::actor_forward(actor, &t.state)?;
    Ok(crate::networks::critic_forward(critic, &t.state, &u)? - y)
}

/// Mean squared Bellman error at the stored actions.
pub fn critic_loss(critic: &CriticNet, batch: &Batch, ys: &[f64]) -> Result<f64> {
    let (q, _) = critic.forward_batch(&batch.states, &batch.actions)?;
    Ok(q.iter().zip(ys).map(|(q, y)| (y - q).powi(2)).sum::<f64>() / batch.len() as f64)
}

/// One Adam step on `L = (1/N) Σ (y − Q(x, u))²`. Returns the loss before
/// the step.
pub fn critic_update(
    critic: &mut CriticNet,
    batch: &Batch,
    targets: TargetView<'_>,
    gamma: f64,
    adam: &mut AdamState,
) -> Result<f64> {
    let ys = bellman_targets(batch, targets, gamma)?;
    critic_update_with_targets(critic, batch, &ys, adam)
}

pub fn critic_update_with_targets(
    critic: &mut CriticNet,
    batch: &Batch,
    ys: &[f64],
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grads) = critic_loss_and_gradient(critic, batch, ys)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {loss}")));
    }
    tensor::adam_step(&mut critic.params, &grads, adam)?;
    Ok(loss)
}

/// Gradient of the mean squared Bellman error with `y` held constant.
pub fn critic_gradient(critic: &CriticNet, batch: &Batch, ys: &[f64]) -> Result<NetParams> {
    Ok(critic_loss_and_gradient(critic, batch, ys)?.1)
}

fn critic_loss_and_gradient(critic: &CriticNet, batch: &Batch, ys: &[f64]) -> Result<(f64, NetParams)> {
    if ys.len() != batch.len() {
        return Err(Error::shape("critic targets", batch.len(), ys.len()));
    }
    let (q, cache) = critic.forward_batch(&batch.states, &batch.actions)?;
    let n = batch.len() as f64;
    let loss = q.iter().zip(ys).map(|(q, y)| (y - q).powi(2)).sum::<f64>() / n;
    let upstream: Vec<f64> = q.iter().zip(ys).map(|(q, y)| 2.0 * (q - y) / n).collect();
    let (grads, _) = tensor::backward_batch(
        &critic.params,
        &cache,
        &DenseMatrix::column(&upstream),
        true,
    )?;
    Ok((loss, grads.expect("requested")))
}

/// Actor gradient plus the branch that produced it.
#[derive(Debug, Clone)]
pub struct ActorGradient {
    pub grads: NetParams,
    pub branch: Branch,
}

/// Phased policy gradient for one update at step `k` with draw `omega`.
#[allow(clippy::too_many_arguments)]
pub fn actor_gradient(
    objective: ActorObjective,
    schedule: &PhaseSchedule,
    k: u64,
    omega: f64,
    batch: &Batch,
    critic: &CriticNet,
    actor: &ActorNet,
    targets: TargetView<'_>,
    gamma: f64,
) -> Result<ActorGradient> {
    let branch = objective.branch(phase_value(schedule, k), omega);
    let grads = branch_gradient(branch, objective.td_form, batch, critic, actor, targets, gamma)?;
    Ok(ActorGradient { grads, branch })
}

/// Gradient of the batch-mean surrogate for a fixed branch, with the
/// critic parameters frozen.
pub fn branch_gradient(
    branch: Branch,
    td_form: TdForm,
    batch: &Batch,
    critic: &CriticNet,
    actor: &ActorNet,
    targets: TargetView<'_>,
    gamma: f64,
) -> Result<NetParams> {
    let ys = match branch {
        Branch::QValue => None,
        Branch::TdError => Some(bellman_targets(batch, targets, gamma)?),
    };
    branch_gradient_with_targets(branch, td_form, batch, critic, actor, ys.as_deref())
}

/// [`branch_gradient`] with Bellman targets already computed (the critic
/// update's `y`). `ys` may be `None` for the Q-value branch.
pub fn branch_gradient_with_targets(
    branch: Branch,
    td_form: TdForm,
    batch: &Batch,
    critic: &CriticNet,
    actor: &ActorNet,
    ys: Option<&[f64]>,
) -> Result<NetParams> {
    if batch.is_empty() {
        return Err(Error::Contract("minibatch must be nonempty".into()));
    }
    let n = batch.len() as f64;
    let (actions, actor_cache) = actor.forward_batch(&batch.states)?;
    let (q, critic_cache) = critic.forward_batch(&batch.states, &actions)?;

    // ∂Ψ/∂Q per sample
    let upstream: Vec<f64> = match branch {
        Branch::QValue => vec![1.0 / n; batch.len()],
        Branch::TdError => {
            let ys = ys.ok_or_else(|| Error::Contract("TD branch needs Bellman targets".into()))?;
            if ys.len() != batch.len() {
                return Err(Error::shape("actor targets", batch.len(), ys.len()));
            }
            match td_form {
                // δ = Q − y with y constant in θ
                TdForm::LinearDelta => vec![1.0 / n; batch.len()],
                TdForm::SquaredDelta => q.iter().zip(ys).map(|(q, y)| (q - y) / n).collect(),
            }
        }
    };

    let (_, d_input) = tensor::backward_batch(
        &critic.params,
        &critic_cache,
        &DenseMatrix::column(&upstream),
        false,
    )?;
    let (sd, ad) = (critic.state_dim, actor.action_dim());
    let mut d_out = DenseMatrix::zeros(batch.len(), ad);
    for r in 0..batch.len() {
        let row = &d_input.row(r)[sd..sd + ad];
        for j in 0..ad {
            d_out.set(r, j, row[j] * actor.action_bound[j]);
        }
    }
    let (grads, _) = tensor::backward_batch(&actor.params, &actor_cache, &d_out, true)?;
    let grads = grads.expect("requested");
    for (i, t) in grads.tensors().enumerate() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "actor gradient",
                layer: i / 2,
            });
        }
    }
    Ok(grads)
}

/// One Adam descent step on a supplied actor gradient.
pub fn actor_update(actor: &mut ActorNet, grads: &NetParams, adam: &mut AdamState) -> Result<()> {
    tensor::adam_step(&mut actor.params, grads, adam)
}
