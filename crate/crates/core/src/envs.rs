//! Desk-scale control tasks and exact oracles.
//!
//! Every task is a pure function of `(spec, state, action)`; the caller owns
//! the state. Costs follow the minimisation convention: LQR uses the
//! quadratic stage cost, the mechanical tasks use a shaped cost in `[0, 1]`
//! that is zero only at the goal.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::DenseMatrix;
use crate::{Error, Result};

/// Discrete-time linear system `x' = Ax + Bu` with cost `xᵀQx + uᵀRu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSystem {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

impl LqrSystem {
    pub fn scalar(a: f64, b: f64, q: f64, r: f64) -> Self {
        let m = |v| DenseMatrix::column(&[v]);
        Self {
            a: m(a),
            b: m(b),
            q: m(q),
            r: m(r),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.action_dim());
        if self.a.cols() != n {
            return Err(Error::shape("LQR A", n, self.a.cols()));
        }
        if self.b.rows() != n {
            return Err(Error::shape("LQR B", n, self.b.rows()));
        }
        if self.q.rows() != n || self.q.cols() != n {
            return Err(Error::shape("LQR Q", n, self.q.rows()));
        }
        if self.r.rows() != m || self.r.cols() != m {
            return Err(Error::shape("LQR R", m, self.r.rows()));
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let ax = self.a.matvec(x)?;
        let bu = self.b.matvec(u)?;
        Ok(ax.iter().zip(&bu).map(|(p, q)| p + q).collect())
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(quad_form(&self.q, x)? + quad_form(&self.r, u)?)
    }
}

fn quad_form(m: &DenseMatrix, v: &[f64]) -> Result<f64> {
    Ok(m.matvec(v)?.iter().zip(v).map(|(a, b)| a * b).sum())
}

/// Cart-pole with the pole angle measured from upright.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    /// Force applied at action +1.
    pub force_scale: f64,
    pub dt: f64,
    /// Half-width of the track used to shape the centring term.
    pub track_half_width: f64,
    /// Treat `|x| > track_half_width` as an absorbing failure.
    pub terminate_off_track: bool,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_scale: 10.0,
            dt: 0.02,
            track_half_width: 2.4,
            terminate_off_track: false,
        }
    }
}

/// Torque-limited pendulum, angle measured from upright. The observed
/// state is `[cos θ, sin θ, θ̇]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub max_speed: f64,
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            mass: 1.0,
            length: 1.0,
            max_speed: 8.0,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvKind {
    Lqr(LqrSystem),
    CartpoleBalance(CartpoleParams),
    PendulumSwingup(PendulumParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: Vec<f64>,
    pub episode_len: usize,
    pub cost_normalized: bool,
    /// Box the reset draws from, in the task's internal coordinates
    /// (`[θ, θ̇]` for the pendulum, the state itself otherwise).
    pub reset_low: Vec<f64>,
    pub reset_high: Vec<f64>,
}

pub const PRESETS: [&str; 4] = ["lqr1d", "lqr2d", "cartpole", "pendulum"];

impl EnvSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "lqr1d" => Self {
                name: name.into(),
                kind: EnvKind::Lqr(LqrSystem::scalar(1.0, 1.0, 1.0, 1.0)),
                state_dim: 1,
                action_dim: 1,
                action_bound: vec![1.0],
                episode_len: 10,
                cost_normalized: false,
                reset_low: vec![-1.0],
                reset_high: vec![1.0],
            },
            "lqr2d" => Self {
                name: name.into(),
                kind: EnvKind::Lqr(LqrSystem {
                    a: DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]])?,
                    b: DenseMatrix::from_rows(&[vec![0.005], vec![0.1]])?,
                    q: DenseMatrix::identity(2),
                    r: DenseMatrix::column(&[0.1]),
                }),
                state_dim: 2,
                action_dim: 1,
                action_bound: vec![5.0],
                episode_len: 100,
                cost_normalized: false,
                reset_low: vec![-1.0, -1.0],
                reset_high: vec![1.0, 1.0],
            },
            "cartpole" => Self {
                name: name.into(),
                kind: EnvKind::CartpoleBalance(CartpoleParams::default()),
                state_dim: 4,
                action_dim: 1,
                action_bound: vec![1.0],
                episode_len: 1000,
                cost_normalized: true,
                reset_low: vec![-0.1, -0.05, -0.2, -0.05],
                reset_high: vec![0.1, 0.05, 0.2, 0.05],
            },
            "pendulum" => Self {
                name: name.into(),
                kind: EnvKind::PendulumSwingup(PendulumParams::default()),
                state_dim: 3,
                action_dim: 1,
                action_bound: vec![3.0],
                episode_len: 1000,
                cost_normalized: true,
                reset_low: vec![PI - 0.1, -0.1],
                reset_high: vec![PI + 0.1, 0.1],
            },
            other => {
                return Err(Error::config(
                    "env",
                    format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", ")),
                ))
            }
        };
        Ok(spec)
    }

    pub fn lqr(&self) -> Option<&LqrSystem> {
        match &self.kind {
            EnvKind::Lqr(sys) => Some(sys),
            _ => None,
        }
    }

    /// Upper bound on the stage cost wherever it is bounded.
    pub fn max_stage_cost(&self) -> Option<f64> {
        self.cost_normalized.then_some(1.0)
    }
}

/// Seeded initial state.
pub fn env_reset(spec: &EnvSpec, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    let coords: Vec<f64> = spec
        .reset_low
        .iter()
        .zip(&spec.reset_high)
        .map(|(&lo, &hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    match spec.kind {
        EnvKind::PendulumSwingup(_) => pendulum_observe(coords[0], coords[1]),
        _ => coords,
    }
}

/// Whether a state lies in the region `env_reset` draws from.
pub fn in_reset_region(spec: &EnvSpec, state: &[f64]) -> bool {
    let coords = match spec.kind {
        EnvKind::PendulumSwingup(_) => {
            let theta = state[1].atan2(state[0]);
            // reset box straddles θ = π; compare on [0, 2π)
            vec![theta.rem_euclid(2.0 * PI), state[2]]
        }
        _ => state.to_vec(),
    };
    coords
        .iter()
        .zip(spec.reset_low.iter().zip(&spec.reset_high))
        .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12)
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub cost: f64,
    /// Absorbing failure; never set for time-limit truncation.
    pub terminal: bool,
}

pub fn env_step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<StepOutcome> {
    if state.len() != spec.state_dim {
        return Err(Error::shape("env_step state", spec.state_dim, state.len()));
    }
    if action.len() != spec.action_dim {
        return Err(Error::shape("env_step action", spec.action_dim, action.len()));
    }
    let out = match &spec.kind {
        EnvKind::Lqr(sys) => StepOutcome {
            next_state: sys.step(state, action)?,
            cost: sys.stage_cost(state, action)?,
            terminal: false,
        },
        EnvKind::CartpoleBalance(p) => cartpole_step(p, state, action[0] / spec.action_bound[0]),
        EnvKind::PendulumSwingup(p) => pendulum_step(p, state, action[0], spec.action_bound[0]),
    };
    if out.next_state.iter().any(|v| !v.is_finite()) || !out.cost.is_finite() {
        return Err(Error::Numeric("environment state diverged".into()));
    }
    Ok(out)
}

fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// `u` is the normalised force in `[-1, 1]`.
fn cartpole_step(p: &CartpoleParams, s: &[f64], u: f64) -> StepOutcome {
    let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
    let total_mass = p.cart_mass + p.pole_mass;
    let pole_ml = p.pole_mass * p.half_length;
    let force = u * p.force_scale;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    let x_dot = x_dot + p.dt * x_acc;
    let x = x + p.dt * x_dot;
    let theta_dot = theta_dot + p.dt * theta_acc;
    let theta = wrap_angle(theta + p.dt * theta_dot);

    let cost = cartpole_cost(p, s, u);
    StepOutcome {
        next_state: vec![x, x_dot, theta, theta_dot],
        cost,
        terminal: p.terminate_off_track && x.abs() > p.track_half_width,
    }
}

/// `1 − upright · centred · small_control · small_velocity`.
fn cartpole_cost(p: &CartpoleParams, s: &[f64], u: f64) -> f64 {
    let upright = (1.0 + s[2].cos()) / 2.0;
    let centred = 1.0 - 0.5 * (s[0] / p.track_half_width).powi(2).min(1.0);
    let small_control = (4.0 + (1.0 - u.clamp(-1.0, 1.0).powi(2))) / 5.0;
    let small_velocity = (1.0 + 1.0 / (1.0 + s[3] * s[3])) / 2.0;
    (1.0 - upright * centred * small_control * small_velocity).clamp(0.0, 1.0)
}

fn pendulum_observe(theta: f64, theta_dot: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), theta_dot]
}

fn pendulum_step(p: &PendulumParams, s: &[f64], torque: f64, max_torque: f64) -> StepOutcome {
    let theta = s[1].atan2(s[0]);
    let theta_dot = s[2];
    let theta_acc = p.gravity / p.length * theta.sin() + torque / (p.mass * p.length * p.length);
    let theta_dot_next = (theta_dot + p.dt * theta_acc).clamp(-p.max_speed, p.max_speed);
    let theta_next = wrap_angle(theta + p.dt * theta_dot_next);
    StepOutcome {
        next_state: pendulum_observe(theta_next, theta_dot_next),
        cost: pendulum_cost(theta, theta_dot, torque / max_torque),
        terminal: false,
    }
}

fn pendulum_cost(theta: f64, theta_dot: f64, u: f64) -> f64 {
    let upright = (1.0 + theta.cos()) / 2.0;
    let small_control = (4.0 + (1.0 - u.clamp(-1.0, 1.0).powi(2))) / 5.0;
    let small_velocity = (1.0 + 1.0 / (1.0 + 0.1 * theta_dot * theta_dot)) / 2.0;
    (1.0 - upright * small_control * small_velocity).clamp(0.0, 1.0)
}

/// Fixed point of the discounted Riccati recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    /// Cost-to-go matrix, `V*(x) = xᵀPx`.
    pub p: DenseMatrix,
    /// Optimal gain, `u* = −Kx`.
    pub k: DenseMatrix,
    pub iterations: usize,
    /// `‖P − Ric(P)‖∞` at the returned `P`.
    pub residual: f64,
}

pub const DEFAULT_RICCATI_MAX_ITERS: usize = 100_000;

/// One application of `P ↦ Q + γAᵀPA − γ²AᵀPB(R + γBᵀPB)⁻¹BᵀPA`, also
/// returning the gain `K = γ(R + γBᵀPB)⁻¹BᵀPA`.
pub fn riccati_map(sys: &LqrSystem, gamma: f64, p: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let at = sys.a.transpose();
    let bt = sys.b.transpose();
    let pa = p.matmul(&sys.a)?;
    let pb = p.matmul(&sys.b)?;
    let gain_lhs = sys.r.add(&bt.matmul(&pb)?.scale(gamma))?;
    let k = gain_lhs.solve(&bt.matmul(&pa)?)?.scale(gamma);
    // Q + γAᵀPA − γAᵀPB·K
    let next = sys
        .q
        .add(&at.matmul(&pa)?.scale(gamma))?
        .sub(&at.matmul(&pb)?.matmul(&k)?.scale(gamma))?;
    // symmetrise against round-off drift
    let sym = next.add(&next.transpose())?.scale(0.5);
    Ok((sym, k))
}

pub fn riccati_residual(sys: &LqrSystem, gamma: f64, p: &DenseMatrix) -> Result<f64> {
    let (next, _) = riccati_map(sys, gamma, p)?;
    Ok(next.sub(p)?.max_abs())
}

/// Value iteration on the Riccati map from `P = 0` until `‖ΔP‖∞ < tol`.
pub fn riccati_solve(sys: &LqrSystem, gamma: f64, tol: f64, max_iters: usize) -> Result<RiccatiSolution> {
    sys.validate()?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::config("gamma", format!("{gamma} is outside (0, 1]")));
    }
    let n = sys.state_dim();
    let mut p = DenseMatrix::zeros(n, n);
    for it in 1..=max_iters {
        let (next, _) = riccati_map(sys, gamma, &p)?;
        let delta = next.sub(&p)?.max_abs();
        p = next;
        if !delta.is_finite() {
            return Err(Error::Oracle("Riccati iteration diverged".into()));
        }
        if delta < tol {
            let (_, k) = riccati_map(sys, gamma, &p)?;
            let residual = riccati_residual(sys, gamma, &p)?;
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::Oracle(format!("no convergence within {max_iters} iterations")))
}

/// `Q*(x, u) = xᵀQx + uᵀRu + γ(Ax + Bu)ᵀP(Ax + Bu)`.
pub fn lqr_q_star(sol: &RiccatiSolution, sys: &LqrSystem, gamma: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let next = sys.step(x, u)?;
    Ok(sys.stage_cost(x, u)? + gamma * quad_form(&sol.p, &next)?)
}

/// `x₀ᵀPx₀`.
pub fn lqr_value(sol: &RiccatiSolution, x: &[f64]) -> Result<f64> {
    quad_form(&sol.p, x)
}

/// Spectral radius by Gelfand's formula on repeated squares, renormalised
/// at each squaring.
pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::shape("spectral_radius", m.rows(), m.cols()));
    }
    if m.rows() == 1 {
        return Ok(m.get(0, 0).abs());
    }
    let frob = |x: &DenseMatrix| x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut norm = frob(m);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut cur = m.scale(1.0 / norm);
    let mut log_scale = norm.ln();
    let mut power = 1.0f64;
    for _ in 0..48 {
        let sq = cur.matmul(&cur)?;
        norm = frob(&sq);
        if norm == 0.0 {
            return Ok(0.0);
        }
        log_scale = 2.0 * log_scale + norm.ln();
        power *= 2.0;
        cur = sq.scale(1.0 / norm);
    }
    Ok((log_scale / power).exp())
}

/// `√γ (A − BK)`.
pub fn discounted_closed_loop(sys: &LqrSystem, gamma: f64, k: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(sys.a.sub(&sys.b.matmul(k)?)?.scale(gamma.sqrt()))
}

/// One uniformly spaced grid axis with `n ≥ 2` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn node(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
    }

    /// Lower node index and interpolation weight toward the upper node,
    /// with the coordinate clamped to the axis.
    fn locate(&self, v: f64) -> (usize, f64) {
        let v = v.clamp(self.lo, self.hi);
        let t = (v - self.lo) / (self.hi - self.lo) * (self.n - 1) as f64;
        let i = (t.floor() as usize).min(self.n - 2);
        (i, t - i as f64)
    }
}

/// Discretisation for tabular value iteration over an LQR or pendulum task.
/// Pendulum axes are `[θ, θ̇]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub env: EnvSpec,
    pub state_axes: Vec<GridAxis>,
    pub action_axis: GridAxis,
}

impl GridSpec {
    /// 41 nodes per state axis, 21 actions across the action bound.
    pub fn default_for(env: &EnvSpec) -> Result<Self> {
        let state_axes = match &env.kind {
            EnvKind::Lqr(_) => vec![
                GridAxis {
                    lo: -2.0,
                    hi: 2.0,
                    n: 41
                };
                env.state_dim
            ],
            EnvKind::PendulumSwingup(p) => vec![
                GridAxis { lo: -PI, hi: PI, n: 41 },
                GridAxis {
                    lo: -p.max_speed,
                    hi: p.max_speed,
                    n: 41,
                },
            ],
            EnvKind::CartpoleBalance(_) => {
                return Err(Error::config("env", "value iteration supports LQR and pendulum grids"))
            }
        };
        if env.action_dim != 1 {
            return Err(Error::config("env", "value iteration needs a scalar action"));
        }
        Ok(Self {
            env: env.clone(),
            state_axes,
            action_axis: GridAxis {
                lo: -env.action_bound[0],
                hi: env.action_bound[0],
                n: 21,
            },
        })
    }

    pub fn num_states(&self) -> usize {
        self.state_axes.iter().map(|a| a.n).product()
    }

    /// Grid coordinates of flat node index `s`.
    pub fn coords(&self, mut s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.state_axes.len()];
        for (d, axis) in self.state_axes.iter().enumerate().rev() {
            out[d] = axis.node(s % axis.n);
            s /= axis.n;
        }
        out
    }

    fn to_state(&self, coords: &[f64]) -> Vec<f64> {
        match self.env.kind {
            EnvKind::PendulumSwingup(_) => pendulum_observe(coords[0], coords[1]),
            _ => coords.to_vec(),
        }
    }

    fn to_coords(&self, state: &[f64]) -> Vec<f64> {
        match self.env.kind {
            EnvKind::PendulumSwingup(_) => vec![state[1].atan2(state[0]), state[2]],
            _ => state.to_vec(),
        }
    }

    /// Multilinear interpolation stencil: node indices and nonnegative
    /// weights summing to one.
    fn stencil(&self, coords: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for (axis, &v) in self.state_axes.iter().zip(coords) {
            let (i, w) = axis.locate(v);
            let mut next = Vec::with_capacity(out.len() * 2);
            for (idx, weight) in out {
                next.push((idx * axis.n + i, weight * (1.0 - w)));
                next.push((idx * axis.n + i + 1, weight * w));
            }
            out = next;
        }
        out
    }
}

/// `Q[s·n_actions + a]` over grid nodes and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl TabularQ {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// `min_a Q(s, a)` per node.
    pub fn state_values(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.n_actions)
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }

    pub fn greedy_action_index(&self, s: usize) -> usize {
        let row = &self.values[s * self.n_actions..(s + 1) * self.n_actions];
        (0..row.len()).min_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0)
    }
}

/// Stage costs and successor stencils for every (node, action) cell.
struct ViModel {
    costs: Vec<f64>,
    stencils: Vec<Vec<(usize, f64)>>,
}

fn vi_model(grid: &GridSpec) -> Result<ViModel> {
    let (ns, na) = (grid.num_states(), grid.action_axis.n);
    let mut costs = Vec::with_capacity(ns * na);
    let mut stencils = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let state = grid.to_state(&grid.coords(s));
        for a in 0..na {
            let u = [grid.action_axis.node(a)];
            let out = env_step(&grid.env, &state, &u)?;
            costs.push(out.cost);
            stencils.push(grid.stencil(&grid.to_coords(&out.next_state)));
        }
    }
    Ok(ViModel { costs, stencils })
}

/// `Q_{i+1}(x, u) = R(x, u) + γ min_{u'} Q_i(x', u')` from `Q_0 = 0`, with
/// `x'` interpolated on the grid. Returns `Q_0 ..= Q_iters`.
pub fn value_iteration_oracle(grid: &GridSpec, gamma: f64, iters: usize) -> Result<Vec<TabularQ>> {
    let mut out = Vec::with_capacity(iters + 1);
    value_iteration_for_each(grid, gamma, iters, |q| out.push(q.clone()))?;
    Ok(out)
}

/// Streaming form of [`value_iteration_oracle`]; `visit` sees every iterate
/// including `Q_0`. Returns the last iterate.
pub fn value_iteration_for_each(
    grid: &GridSpec,
    gamma: f64,
    iters: usize,
    mut visit: impl FnMut(&TabularQ),
) -> Result<TabularQ> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config("gamma", format!("{gamma} is outside (0, 1)")));
    }
    let model = vi_model(grid)?;
    let (ns, na) = (grid.num_states(), grid.action_axis.n);
    let mut q = TabularQ {
        n_states: ns,
        n_actions: na,
        values: vec![0.0; ns * na],
    };
    visit(&q);
    for _ in 0..iters {
        let v = q.state_values();
        for (cell, value) in q.values.iter_mut().enumerate() {
            let next: f64 = model.stencils[cell].iter().map(|&(i, w)| w * v[i]).sum();
            *value = model.costs[cell] + gamma * next;
        }
        visit(&q);
    }
    Ok(q)
}

/// Largest stage cost over the grid's (node, action) cells.
pub fn grid_max_cost(grid: &GridSpec) -> Result<f64> {
    Ok(vi_model(grid)?.costs.into_iter().fold(0.0, f64::max))
}

/// Least-squares scalar gain `K` with `u ≈ −Kx` from `(x, u)` pairs.
pub fn fit_scalar_gain(pairs: &[(f64, f64)]) -> f64 {
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    let sxu: f64 = pairs.iter().map(|(x, u)| x * u).sum();
    -sxu / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_reject_unknown() {
        for p in PRESETS {
            let spec = EnvSpec::preset(p).unwrap();
            assert_eq!(spec.action_bound.len(), spec.action_dim);
        }
        assert!(EnvSpec::preset("walker").is_err());
    }

    #[test]
    fn reset_is_seeded_and_in_range() {
        for p in PRESETS {
            let spec = EnvSpec::preset(p).unwrap();
            assert_eq!(env_reset(&spec, 3), env_reset(&spec, 3));
            for seed in 0..1000 {
                let x = env_reset(&spec, seed);
                assert_eq!(x.len(), spec.state_dim);
                assert!(in_reset_region(&spec, &x), "{p}: {x:?}");
            }
        }
    }

    #[test]
    fn singleton_reset_range() {
        let mut spec = EnvSpec::preset("lqr1d").unwrap();
        spec.reset_low = vec![0.7];
        spec.reset_high = vec![0.7];
        for seed in 0..10 {
            assert_eq!(env_reset(&spec, seed), vec![0.7]);
        }
    }

    #[test]
    fn lqr_equilibrium_and_arithmetic() {
        let spec = EnvSpec::preset("lqr2d").unwrap();
        let out = env_step(&spec, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(out.next_state, vec![0.0, 0.0]);
        assert_eq!(out.cost, 0.0);

        let spec = EnvSpec::preset("lqr1d").unwrap();
        let out = env_step(&spec, &[1.0], &[-0.5]).unwrap();
        assert_eq!(out.next_state, vec![0.5]);
        assert_eq!(out.cost, 1.25);
    }

    #[test]
    fn normalized_costs_in_unit_interval() {
        let mut r = rng::seeded(5);
        for name in ["cartpole", "pendulum"] {
            let spec = EnvSpec::preset(name).unwrap();
            for _ in 0..100_000 {
                let state: Vec<f64> = match name {
                    "cartpole" => (0..4).map(|_| r.random_range(-5.0..5.0)).collect(),
                    _ => pendulum_observe(r.random_range(-PI..PI), r.random_range(-8.0..8.0)),
                };
                let u = [r.random_range(-spec.action_bound[0]..=spec.action_bound[0])];
                let c = env_step(&spec, &state, &u).unwrap().cost;
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn goal_states_cost_nothing() {
        let spec = EnvSpec::preset("pendulum").unwrap();
        let out = env_step(&spec, &pendulum_observe(0.0, 0.0), &[0.0]).unwrap();
        assert!(out.cost < 0.01);
        assert!(out.next_state[0] > 0.9999);

        let spec = EnvSpec::preset("cartpole").unwrap();
        let out = env_step(&spec, &[0.0; 4], &[0.0]).unwrap();
        assert!(out.cost < 0.01);
        assert_eq!(out.next_state, vec![0.0; 4]);
    }

    #[test]
    fn pendulum_falls_from_near_upright() {
        let spec = EnvSpec::preset("pendulum").unwrap();
        let mut s = pendulum_observe(0.05, 0.0);
        let mut lowest = 1.0f64;
        for _ in 0..200 {
            s = env_step(&spec, &s, &[0.0]).unwrap().next_state;
            lowest = lowest.min(s[0]);
        }
        assert!(lowest < -0.9, "pendulum should swing through the bottom: {lowest}");
    }

    #[test]
    fn cartpole_off_track_terminal() {
        let mut spec = EnvSpec::preset("cartpole").unwrap();
        if let EnvKind::CartpoleBalance(p) = &mut spec.kind {
            p.terminate_off_track = true;
        }
        assert!(env_step(&spec, &[2.5, 1.0, 0.0, 0.0], &[0.0]).unwrap().terminal);
        assert!(!env_step(&spec, &[0.0, 0.0, 0.0, 0.0], &[0.0]).unwrap().terminal);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let spec = EnvSpec::preset("lqr2d").unwrap();
        assert!(env_step(&spec, &[0.0], &[0.0]).is_err());
        assert!(env_step(&spec, &[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn riccati_zero_cost() {
        let sys = LqrSystem::scalar(1.0, 1.0, 0.0, 1.0);
        let sol = riccati_solve(&sys, 0.9, 1e-12, 1000).unwrap();
        assert_eq!(sol.p.get(0, 0), 0.0);
        assert_eq!(sol.k.get(0, 0), 0.0);
    }

    #[test]
    fn riccati_scalar_matches_quadratic_root() {
        let sys = LqrSystem::scalar(1.0, 1.0, 1.0, 1.0);
        let sol = riccati_solve(&sys, 0.9, 1e-13, 10_000).unwrap();
        // 0.9 P² − 0.8 P − 1 = 0
        let root = (0.8 + (0.64f64 + 4.0 * 0.9).sqrt()) / 1.8;
        assert!((sol.p.get(0, 0) - root).abs() < 1e-10);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn riccati_near_one_discount_approaches_undiscounted() {
        let sys = LqrSystem::scalar(0.5, 1.0, 1.0, 1.0);
        let disc = riccati_solve(&sys, 0.999, 1e-13, 100_000).unwrap();
        let undisc = riccati_solve(&sys, 1.0, 1e-13, 100_000).unwrap();
        let (a, b) = (disc.p.get(0, 0), undisc.p.get(0, 0));
        assert!(((a - b) / b).abs() < 0.01);
    }

    #[test]
    fn riccati_two_dimensional_residual_and_stability() {
        let spec = EnvSpec::preset("lqr2d").unwrap();
        let sys = spec.lqr().unwrap();
        let sol = riccati_solve(sys, 0.99, 1e-12, 100_000).unwrap();
        assert!(riccati_residual(sys, 0.99, &sol.p).unwrap() < 1e-11);
        let cl = discounted_closed_loop(sys, 0.99, &sol.k).unwrap();
        assert!(spectral_radius(&cl).unwrap() < 1.0);
    }

    #[test]
    fn riccati_reports_non_convergence() {
        let sys = LqrSystem::scalar(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(riccati_solve(&sys, 0.9, 1e-15, 2), Err(Error::Oracle(_))));
    }

    #[test]
    fn q_star_consistency_and_optimality() {
        let sys = LqrSystem::scalar(1.0, 1.0, 1.0, 1.0);
        let g = 0.99;
        let sol = riccati_solve(&sys, g, 1e-13, 100_000).unwrap();
        assert_eq!(lqr_q_star(&sol, &sys, g, &[0.0], &[0.0]).unwrap(), 0.0);
        let k = sol.k.get(0, 0);
        let mut r = rng::seeded(2);
        for _ in 0..1000 {
            let x: f64 = r.random_range(-3.0..3.0);
            let best = lqr_q_star(&sol, &sys, g, &[x], &[-k * x]).unwrap();
            assert!((best - lqr_value(&sol, &[x]).unwrap()).abs() < 1e-9);
            let u: f64 = r.random_range(-5.0..5.0);
            assert!(best <= lqr_q_star(&sol, &sys, g, &[x], &[u]).unwrap() + 1e-12);
        }
    }

    #[test]
    fn spectral_radius_known_matrices() {
        let rot = DenseMatrix::from_rows(&[vec![0.0, -0.8], vec![0.8, 0.0]]).unwrap();
        assert!((spectral_radius(&rot).unwrap() - 0.8).abs() < 1e-9);
        let jordan = DenseMatrix::from_rows(&[vec![0.5, 1.0], vec![0.0, 0.5]]).unwrap();
        assert!((spectral_radius(&jordan).unwrap() - 0.5).abs() < 1e-9);
        let nil = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(spectral_radius(&nil).unwrap(), 0.0);
    }

    #[test]
    fn value_iteration_first_iterate_is_stage_cost() {
        let env = EnvSpec::preset("lqr1d").unwrap();
        let grid = GridSpec::default_for(&env).unwrap();
        let seq = value_iteration_oracle(&grid, 0.95, 3).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq[0].values.iter().all(|v| *v == 0.0));
        for s in 0..grid.num_states() {
            let x = grid.coords(s);
            for a in 0..grid.action_axis.n {
                let u = grid.action_axis.node(a);
                assert_eq!(seq[1].get(s, a), x[0] * x[0] + u * u);
            }
        }
    }

    #[test]
    fn value_iteration_monotone_and_bounded() {
        let env = EnvSpec::preset("pendulum").unwrap();
        let grid = GridSpec::default_for(&env).unwrap();
        let gamma = 0.95;
        let bound = grid_max_cost(&grid).unwrap() / (1.0 - gamma);
        let mut prev: Option<TabularQ> = None;
        value_iteration_for_each(&grid, gamma, 30, |q| {
            if let Some(p) = &prev {
                assert!(p.values.iter().zip(&q.values).all(|(a, b)| a <= b));
            }
            assert!(q.values.iter().all(|v| *v <= bound + 1e-9));
            prev = Some(q.clone());
        })
        .unwrap();
    }

    #[test]
    fn grid_rejects_cartpole() {
        assert!(GridSpec::default_for(&EnvSpec::preset("cartpole").unwrap()).is_err());
    }

    #[test]
    fn scalar_gain_fit() {
        let pairs: Vec<(f64, f64)> = (-5..=5).map(|i| (i as f64, -0.6 * i as f64)).collect();
        assert!((fit_scalar_gain(&pairs) - 0.6).abs() < 1e-12);
    }
}
