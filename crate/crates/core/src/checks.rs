//! Self-contained property suites behind `paac check`.
//!
//! Each suite returns a [`SuiteReport`] naming the first property that
//! failed. The gradient suite takes the analytic gradient as a parameter so
//! a deliberately broken backward pass can be shown to fail it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{self, EnvSpec, GridSpec, LqrSystem};
use crate::networks::{self, TargetMode, TargetPair};
use crate::paac::{self, Batch, Branch, PhaseSchedule, ScheduleKind, TdForm};
use crate::replay::Transition;
use crate::rng;
use crate::tensor::{self, ActivationSpec, DenseMatrix, NetParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    GradientCheck,
    TdIdentity,
    Schedule,
    ViMonotonicity,
    Riccati,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::GradientCheck,
        Suite::TdIdentity,
        Suite::Schedule,
        Suite::ViMonotonicity,
        Suite::Riccati,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::GradientCheck => "gradient-check",
            Suite::TdIdentity => "td-identity",
            Suite::Schedule => "schedule",
            Suite::ViMonotonicity => "vi-monotonicity",
            Suite::Riccati => "riccati",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("suite", format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    /// Individual assertions evaluated.
    pub checks: usize,
    /// First failing property and what was observed.
    pub failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Records assertions until the first failure.
struct Tally {
    checks: usize,
    failure: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Self { checks: 0, failure: None }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn done(&self) -> bool {
        self.failure.is_some()
    }

    fn report(self, suite: Suite) -> SuiteReport {
        SuiteReport {
            suite,
            checks: self.checks,
            failure: self.failure,
        }
    }
}

/// Analytic gradient of `Σ_j c_j · out_j(x)` for upstream weights `c`.
pub type GradientFn = fn(&NetParams, &[f64], &[f64]) -> Result<NetParams>;

pub fn backprop_gradient(params: &NetParams, input: &[f64], upstream: &[f64]) -> Result<NetParams> {
    let (_, cache) = tensor::mlp_forward(params, input)?;
    Ok(tensor::mlp_backward(params, &cache, upstream)?.0)
}

/// Tolerances and sizes for the gradient suite.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheckOptions {
    pub pairs_per_role: usize,
    pub hidden_width: usize,
    pub eps: f64,
    pub rel_tol: f64,
    /// Coordinates with `|fd|` at or below this are not compared.
    pub fd_floor: f64,
    pub seed: u64,
}

impl Default for GradientCheckOptions {
    fn default() -> Self {
        Self {
            pairs_per_role: 50,
            hidden_width: 16,
            eps: 1e-6,
            rel_tol: 1e-5,
            fd_floor: 1e-8,
            seed: 0,
        }
    }
}

/// Backprop against central differences for the actor (ReLU, ReLU, tanh)
/// and critic (ReLU, ReLU, linear) roles.
pub fn gradient_check(grad: GradientFn, opts: &GradientCheckOptions) -> Result<SuiteReport> {
    let mut t = Tally::new();
    let roles = [("actor", 3, 2, ActivationSpec::ReluReluTanh), ("critic", 5, 1, ActivationSpec::ReluReluLinear)];
    let mut r = rng::seeded(opts.seed);
    for (role, input_dim, output_dim, act) in roles {
        for pair in 0..opts.pairs_per_role {
            let params = NetParams::init(input_dim, opts.hidden_width, output_dim, act, &mut r);
            let x: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let c: Vec<f64> = (0..output_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let analytic = grad(&params, &x, &c)?;
            let numeric = tensor::finite_diff_grad(
                |p| {
                    let (out, _) = tensor::mlp_forward(p, &x).expect("shapes fixed");
                    out.iter().zip(&c).map(|(o, c)| o * c).sum()
                },
                &params,
                opts.eps,
            );
            let (a, n) = (analytic.flatten(), numeric.flatten());
            t.check(a.len() == n.len(), || format!("{role} pair {pair}: gradient has {} entries, expected {}", a.len(), n.len()));
            for (i, (a, n)) in a.iter().zip(&n).enumerate() {
                if n.abs() <= opts.fd_floor {
                    continue;
                }
                let rel = (a - n).abs() / a.abs().max(n.abs());
                t.check(rel < opts.rel_tol, || {
                    format!("{role} pair {pair} coordinate {i}: backprop {a:e} vs finite difference {n:e} (relative error {rel:e})")
                });
                if t.done() {
                    return Ok(t.report(Suite::GradientCheck));
                }
            }
        }
    }
    Ok(t.report(Suite::GradientCheck))
}

fn random_transition(r: &mut impl Rng, sd: usize, ad: usize) -> Transition {
    let mut v = |n| (0..n).map(|_| r.random_range(-1.5..1.5)).collect::<Vec<f64>>();
    let (state, action, next_state) = (v(sd), v(ad), v(sd));
    Transition {
        state,
        action,
        cost: r.random_range(0.0..2.0),
        next_state,
        terminal: r.random_bool(0.1),
    }
}

/// The TD-error branch in its literal linear form against the Q-value
/// branch, elementwise, over `draws` random networks and batches.
pub fn td_identity(draws: usize, batch_size: usize, tol: f64, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new();
    let mut r = rng::seeded(seed);
    for draw in 0..draws {
        let (sd, ad) = (3, 2);
        let (actor, mut critic, _) =
            networks::init_agent_networks(seed.wrapping_add(draw as u64), sd, ad, &[1.0, 2.0], 16, TargetMode::Soft { tau: 0.05 })?;
        critic.params = NetParams::init(sd + ad, 16, 1, ActivationSpec::ReluReluLinear, &mut r);
        let mut targets = TargetPair::new(&actor, &critic, TargetMode::Soft { tau: 0.05 });
        targets.target_critic.params = NetParams::init(sd + ad, 16, 1, ActivationSpec::ReluReluLinear, &mut r);
        let sample: Vec<Transition> = (0..batch_size).map(|_| random_transition(&mut r, sd, ad)).collect();
        let batch = Batch::from_transitions(&sample)?;
        let view = targets.resolve(&actor, &critic);
        let q = paac::branch_gradient(Branch::QValue, TdForm::LinearDelta, &batch, &critic, &actor, view, 0.99)?;
        let td = paac::branch_gradient(Branch::TdError, TdForm::LinearDelta, &batch, &critic, &actor, view, 0.99)?;
        let diff = q.max_abs_diff(&td);
        t.check(diff <= tol, || format!("draw {draw}: TD and Q-value actor gradients differ by {diff:e}"));
    }
    Ok(t.report(Suite::TdIdentity))
}

/// Endpoints, monotonicity on a dense grid and branch frequencies.
pub fn schedule_properties(grid_points: u64, draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new();
    for kind in [ScheduleKind::Linear, ScheduleKind::Quadratic, ScheduleKind::HardSwitch] {
        let s = PhaseSchedule::new(kind, grid_points);
        t.check(s.value(0) == 1.0, || format!("{kind:?}: M(0) = {}", s.value(0)));
        t.check(s.value(grid_points) == 0.0, || format!("{kind:?}: M(K) = {}", s.value(grid_points)));
        let mut prev = s.value(0);
        for k in 1..=grid_points {
            let m = s.value(k);
            t.check(m <= prev, || format!("{kind:?}: M({k}) = {m} exceeds M({}) = {prev}", k - 1));
            t.check((0.0..=1.0).contains(&m), || format!("{kind:?}: M({k}) = {m} outside [0, 1]"));
            prev = m;
        }
    }
    let mut r = rng::seeded(seed);
    for m in [0.1, 0.5, 0.9] {
        let hits = (0..draws)
            .filter(|_| paac::select_branch(m, r.random()) == Branch::QValue)
            .count();
        let freq = hits as f64 / draws as f64;
        let bound = 4.0 * (m * (1.0 - m) / draws as f64).sqrt();
        t.check((freq - m).abs() <= bound, || {
            format!("branch frequency {freq} at M = {m} is outside ±{bound:.2e}")
        });
    }
    Ok(t.report(Suite::Schedule))
}

/// Value iteration from `Q_0 = 0` is monotone and bounded by
/// `R_max / (1 − γ)`.
pub fn vi_monotonicity(env: &EnvSpec, gamma: f64, iters: usize) -> Result<SuiteReport> {
    let grid = GridSpec::default_for(env)?;
    let r_max = envs::grid_max_cost(&grid)?;
    let bound = r_max / (1.0 - gamma) + 1e-9;
    let mut t = Tally::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut i = 0usize;
    envs::value_iteration_for_each(&grid, gamma, iters, |q| {
        if let Some(p) = &prev {
            let violations = p.iter().zip(&q.values).filter(|(a, b)| a > b).count();
            t.check(violations == 0, || format!("Q_{} > Q_{} at {violations} cells", i - 1, i));
        }
        let sup = q.values.iter().copied().fold(0.0, f64::max);
        t.check(sup <= bound, || format!("sup Q_{i} = {sup} exceeds {bound}"));
        prev = Some(q.values.clone());
        i += 1;
    })?;
    Ok(t.report(Suite::ViMonotonicity))
}

/// Positive root of `γ b² P² + (r(1 − γ a²) − γ q b²) P − q r = 0`, the
/// scalar discounted Riccati equation cleared of its denominator.
pub fn scalar_riccati_root(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> f64 {
    let qa = gamma * b * b;
    let qb = r * (1.0 - gamma * a * a) - gamma * q * b * b;
    let qc = -q * r;
    (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
}

/// Fixed-point residual of every LQR preset and the scalar closed form.
pub fn riccati_consistency(gamma: f64, residual_tol: f64, root_tol: f64) -> Result<SuiteReport> {
    let mut t = Tally::new();
    for name in ["lqr1d", "lqr2d"] {
        let env = EnvSpec::preset(name)?;
        let sys = env.lqr().expect("LQR preset");
        let sol = envs::riccati_solve(sys, gamma, 1e-13, envs::DEFAULT_RICCATI_MAX_ITERS)?;
        t.check(sol.residual < residual_tol, || format!("{name}: residual {:e}", sol.residual));
        let rho = envs::spectral_radius(&envs::discounted_closed_loop(sys, gamma, &sol.k)?)?;
        t.check(rho < 1.0, || format!("{name}: closed-loop spectral radius {rho}"));
    }
    let sys = LqrSystem::scalar(1.0, 1.0, 1.0, 1.0);
    let sol = envs::riccati_solve(&sys, gamma, 1e-14, envs::DEFAULT_RICCATI_MAX_ITERS)?;
    let root = scalar_riccati_root(1.0, 1.0, 1.0, 1.0, gamma);
    let p = sol.p.get(0, 0);
    t.check((p - root).abs() < root_tol, || format!("scalar P = {p}, closed form {root}"));
    let zero_q = LqrSystem {
        q: DenseMatrix::zeros(1, 1),
        ..sys
    };
    let z = envs::riccati_solve(&zero_q, gamma, 1e-14, envs::DEFAULT_RICCATI_MAX_ITERS)?;
    t.check(z.p.max_abs() == 0.0, || format!("zero state cost gives P = {:?}", z.p.data()));
    Ok(t.report(Suite::Riccati))
}

/// Runs `suites` with their default sizes.
pub fn run_suites(suites: &[Suite], grad: GradientFn) -> Result<Vec<SuiteReport>> {
    suites
        .iter()
        .map(|s| match s {
            Suite::GradientCheck => gradient_check(grad, &GradientCheckOptions::default()),
            Suite::TdIdentity => td_identity(100, 256, 1e-12, 0),
            Suite::Schedule => schedule_properties(10_000, 100_000, 0),
            Suite::ViMonotonicity => vi_monotonicity(&EnvSpec::preset("lqr1d")?, 0.9, 200),
            Suite::Riccati => riccati_consistency(0.9, 1e-9, 1e-10),
        })
        .collect()
}
