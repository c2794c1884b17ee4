//! Actor and critic networks and their target copies.

use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::tensor::{self, ActivationSpec, DenseMatrix, ForwardCache, NetParams};
use crate::{Error, Result};

/// Deterministic policy `u = bound ⊙ tanh(mlp(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorNet {
    pub params: NetParams,
    pub action_bound: Vec<f64>,
}

/// Cost-to-go approximator `Q(x, u)` over the concatenated input `[x, u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub params: NetParams,
    pub state_dim: usize,
}

/// Anything that maps a state to an action. Lets hand-built controllers go
/// through the same evaluation path as learned actors.
pub trait Policy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

impl ActorNet {
    pub fn state_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_bound.len()
    }

    /// Batched forward pass; rows of `states` are states.
    pub fn forward_batch(&self, states: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
        let (mut out, cache) = tensor::forward_batch(&self.params, states)?;
        let m = self.action_dim();
        for row in out.data_mut().chunks_exact_mut(m) {
            for (a, b) in row.iter_mut().zip(&self.action_bound) {
                *a *= b;
            }
        }
        Ok((out, cache))
    }
}

impl Policy for ActorNet {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        actor_forward(self, state)
    }
}

pub fn actor_forward(net: &ActorNet, state: &[f64]) -> Result<Vec<f64>> {
    let (raw, _) = tensor::mlp_forward(&net.params, state)?;
    Ok(raw.iter().zip(&net.action_bound).map(|(r, b)| r * b).collect())
}

impl CriticNet {
    pub fn action_dim(&self) -> usize {
        self.params.input_dim() - self.state_dim
    }

    /// Batched `Q` over row-aligned state and action matrices.
    pub fn forward_batch(
        &self,
        states: &DenseMatrix,
        actions: &DenseMatrix,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let input = concat_rows(states, actions, self.state_dim, self.action_dim())?;
        let (out, cache) = tensor::forward_batch(&self.params, &input)?;
        Ok((out.into_data(), cache))
    }
}

pub fn critic_forward(net: &CriticNet, state: &[f64], action: &[f64]) -> Result<f64> {
    if state.len() != net.state_dim {
        return Err(Error::shape("critic_forward state", net.state_dim, state.len()));
    }
    if action.len() != net.action_dim() {
        return Err(Error::shape("critic_forward action", net.action_dim(), action.len()));
    }
    let input: Vec<f64> = state.iter().chain(action).copied().collect();
    let (out, _) = tensor::mlp_forward(&net.params, &input)?;
    Ok(out[0])
}

pub(crate) fn concat_rows(
    states: &DenseMatrix,
    actions: &DenseMatrix,
    state_dim: usize,
    action_dim: usize,
) -> Result<DenseMatrix> {
    if states.cols() != state_dim {
        return Err(Error::shape("critic state columns", state_dim, states.cols()));
    }
    if actions.cols() != action_dim {
        return Err(Error::shape("critic action columns", action_dim, actions.cols()));
    }
    if states.rows() != actions.rows() {
        return Err(Error::shape("critic batch rows", states.rows(), actions.rows()));
    }
    let mut data = Vec::with_capacity(states.rows() * (state_dim + action_dim));
    for r in 0..states.rows() {
        data.extend_from_slice(states.row(r));
        data.extend_from_slice(actions.row(r));
    }
    DenseMatrix::new(states.rows(), state_dim + action_dim, data)
}

/// How target networks follow the live networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetMode {
    /// Exact copy every `period` learning iterations.
    Hard { period: u32 },
    /// Polyak blend `p' ← τ p + (1 − τ) p'` every learning iteration.
    Soft { tau: f64 },
    /// No target networks; Bellman targets use the live networks.
    None,
}

pub const DEFAULT_HARD_PERIOD: u32 = 15;
pub const DEFAULT_TAU: f64 = 0.05;

impl TargetMode {
    pub fn family(&self) -> &'static str {
        match self {
            TargetMode::Hard { .. } => "hard",
            TargetMode::Soft { .. } => "soft",
            TargetMode::None => "none",
        }
    }
}

/// Borrowed `(π', Q')` used to form Bellman targets.
#[derive(Debug, Clone, Copy)]
pub struct TargetView<'a> {
    pub actor: &'a ActorNet,
    pub critic: &'a CriticNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub target_actor: ActorNet,
    pub target_critic: CriticNet,
    pub mode: TargetMode,
    pub updates_since_copy: u32,
}

impl TargetPair {
    pub fn new(actor: &ActorNet, critic: &CriticNet, mode: TargetMode) -> Self {
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            mode,
            updates_since_copy: 0,
        }
    }

    /// The networks Bellman targets should read. In `None` mode these are
    /// the live networks themselves.
    pub fn resolve<'a>(&'a self, live_actor: &'a ActorNet, live_critic: &'a CriticNet) -> TargetView<'a> {
        match self.mode {
            TargetMode::None => TargetView {
                actor: live_actor,
                critic: live_critic,
            },
            _ => TargetView {
                actor: &self.target_actor,
                critic: &self.target_critic,
            },
        }
    }

    /// Advances the target networks by one learning iteration in whatever
    /// mode they are in.
    pub fn tick(&mut self, live_actor: &ActorNet, live_critic: &CriticNet) -> Result<()> {
        match self.mode {
            TargetMode::Hard { .. } => hard_update_tick(self, live_actor, live_critic),
            TargetMode::Soft { .. } => soft_update(self, live_actor, live_critic),
            TargetMode::None => Ok(()),
        }
    }
}

fn check_compatible(targets: &TargetPair, actor: &ActorNet, critic: &CriticNet) -> Result<()> {
    if !targets.target_actor.params.same_shape(&actor.params) {
        return Err(Error::shape(
            "target actor",
            targets.target_actor.params.num_params(),
            actor.params.num_params(),
        ));
    }
    if !targets.target_critic.params.same_shape(&critic.params) {
        return Err(Error::shape(
            "target critic",
            targets.target_critic.params.num_params(),
            critic.params.num_params(),
        ));
    }
    Ok(())
}

fn blend(target: &mut NetParams, live: &NetParams, tau: f64) {
    for (t, l) in target.tensors_mut().zip(live.tensors()) {
        for (p, q) in t.iter_mut().zip(l) {
            *p = tau * q + (1.0 - tau) * *p;
        }
    }
}

pub fn soft_update(targets: &mut TargetPair, live_actor: &ActorNet, live_critic: &CriticNet) -> Result<()> {
    let TargetMode::Soft { tau } = targets.mode else {
        return Err(Error::Contract(format!(
            "soft_update on {} targets",
            targets.mode.family()
        )));
    };
    check_compatible(targets, live_actor, live_critic)?;
    blend(&mut targets.target_actor.params, &live_actor.params, tau);
    blend(&mut targets.target_critic.params, &live_critic.params, tau);
    Ok(())
}

/// Counts one learning iteration; copies the live networks when the
/// counter reaches the period.
pub fn hard_update_tick(
    targets: &mut TargetPair,
    live_actor: &ActorNet,
    live_critic: &CriticNet,
) -> Result<()> {
    let TargetMode::Hard { period } = targets.mode else {
        return Err(Error::Contract(format!(
            "hard_update_tick on {} targets",
            targets.mode.family()
        )));
    };
    check_compatible(targets, live_actor, live_critic)?;
    targets.updates_since_copy += 1;
    if targets.updates_since_copy >= period {
        targets.target_actor.params.clone_from(&live_actor.params);
        targets.target_critic.params.clone_from(&live_critic.params);
        targets.updates_since_copy = 0;
    }
    Ok(())
}

/// Builds seeded live networks and their target copies.
///
/// The critic's output layer starts at zero so `Q ≡ 0` at birth.
pub fn init_agent_networks(
    seed: u64,
    state_dim: usize,
    action_dim: usize,
    action_bound: &[f64],
    hidden_width: usize,
    mode: TargetMode,
) -> Result<(ActorNet, CriticNet, TargetPair)> {
    if state_dim == 0 || action_dim == 0 {
        return Err(Error::config("dims", "state and action dimensions must be at least 1"));
    }
    if action_bound.len() != action_dim {
        return Err(Error::shape("action_bound", action_dim, action_bound.len()));
    }
    if action_bound.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::config("action_bound", "bounds must be positive and finite"));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let actor = ActorNet {
        params: NetParams::init(state_dim, hidden_width, action_dim, ActivationSpec::ReluReluTanh, &mut rng),
        action_bound: action_bound.to_vec(),
    };
    let mut critic_params = NetParams::init(
        state_dim + action_dim,
        hidden_width,
        1,
        ActivationSpec::ReluReluLinear,
        &mut rng,
    );
    critic_params.weights[2].data_mut().fill(0.0);
    critic_params.biases[2].fill(0.0);
    let critic = CriticNet {
        params: critic_params,
        state_dim,
    };
    let targets = TargetPair::new(&actor, &critic, mode);
    Ok((actor, critic, targets))
}
