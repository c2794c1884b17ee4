//! Dense linear algebra, the two-hidden-layer MLP and Adam.
//!
//! Everything is `f64`. Weight matrices are stored row-major with shape
//! `out × in`, so a layer computes `W·x + b`. Batched passes take inputs as
//! `batch × in` matrices; the single-vector entry points are batches of one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseMatrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseMatrix::new",
                layer: 0,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("DenseMatrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape("DenseMatrix::matmul", self.cols, rhs.rows));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm(
            self.rows, self.cols, rhs.cols, &self.data, false, &rhs.data, false, 0.0,
            &mut out.data,
        );
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::shape("DenseMatrix::matvec", self.cols, v.len()));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn zip_with(&self, rhs: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::shape(
                "DenseMatrix elementwise",
                self.rows * self.cols,
                rhs.rows * rhs.cols,
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, rhs: &DenseMatrix) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &DenseMatrix) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<Self> {
        let n = self.rows;
        if self.cols != n {
            return Err(Error::shape("DenseMatrix::solve (square)", n, self.cols));
        }
        if rhs.rows != n {
            return Err(Error::shape("DenseMatrix::solve (rhs rows)", n, rhs.rows));
        }
        let m = rhs.cols;
        let mut a = self.data.clone();
        let mut x = rhs.data.clone();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap_or(col);
            if a[pivot * n + col].abs() <= 1e-14 * scale {
                return Err(Error::Numeric("singular matrix in solve".into()));
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                }
                for c in 0..m {
                    x.swap(col * m + c, pivot * m + c);
                }
            }
            let diag = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / diag;
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                for c in 0..m {
                    x[r * m + c] -= f * x[col * m + c];
                }
            }
        }
        for col in (0..n).rev() {
            let diag = a[col * n + col];
            for c in 0..m {
                let mut acc = x[col * m + c];
                for k in col + 1..n {
                    acc -= a[col * n + k] * x[k * m + c];
                }
                x[col * m + c] = acc / diag;
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: x,
        })
    }
}

/// `c = op(a)·op(b) + beta·c` for row-major operands, where `op(a)` is
/// `m × k` and `op(b)` is `k × n`. A transposed operand is stored in its
/// untransposed layout (`k × m` for `a`, `n × k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every operand length to the extents
    // implied by (m, k, n) and the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output nonlinearity of the final layer. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSpec {
    /// Actor head: ReLU, ReLU, tanh.
    ReluReluTanh,
    /// Critic head: ReLU, ReLU, identity.
    ReluReluLinear,
}

pub const DEFAULT_HIDDEN_WIDTH: usize = 256;
pub const NUM_LAYERS: usize = 3;

/// Weights and biases of a `in → h → h → out` perceptron.
///
/// The same type carries gradients and Adam moments, which is why the
/// finiteness invariant is checked by [`NetParams::validate`] rather than
/// enforced on every mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_width: usize,
    pub activation: ActivationSpec,
}

impl NetParams {
    /// All-zero parameters.
    pub fn zeros(
        input_dim: usize,
        hidden_width: usize,
        output_dim: usize,
        activation: ActivationSpec,
    ) -> Self {
        let dims = [input_dim, hidden_width, hidden_width, output_dim];
        Self {
            weights: (0..NUM_LAYERS)
                .map(|l| DenseMatrix::zeros(dims[l + 1], dims[l]))
                .collect(),
            biases: (0..NUM_LAYERS).map(|l| vec![0.0; dims[l + 1]]).collect(),
            hidden_width,
            activation,
        }
    }

    /// Seeded initialisation: every weight and bias of a layer is drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(
        input_dim: usize,
        hidden_width: usize,
        output_dim: usize,
        activation: ActivationSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = Self::zeros(input_dim, hidden_width, output_dim, activation);
        for l in 0..NUM_LAYERS {
            let fan_in = params.weights[l].cols();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in params.weights[l].data_mut() {
                *w = rng.random_range(-bound..=bound);
            }
            for b in &mut params.biases[l] {
                *b = rng.random_range(-bound..=bound);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim(),
            self.hidden_width,
            self.output_dim(),
            self.activation,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[NUM_LAYERS - 1].rows()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Weight and bias slices in order `W1, b1, W2, b2, W3, b3`. Tensor `i`
    /// belongs to layer `i / 2`.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("NetParams::assign_flat", n, flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// True when both parameter sets have identical architecture.
    pub fn same_shape(&self, other: &NetParams) -> bool {
        self.activation == other.activation
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
    }

    fn check_same_shape(&self, other: &NetParams, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(context, self.num_params(), other.num_params()))
        }
    }

    /// Checks layer chaining and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != NUM_LAYERS || self.biases.len() != NUM_LAYERS {
            return Err(Error::shape(
                "NetParams layers",
                NUM_LAYERS,
                self.weights.len(),
            ));
        }
        for l in 0..NUM_LAYERS {
            let w = &self.weights[l];
            if w.data().len() != w.rows() * w.cols() {
                return Err(Error::shape("NetParams weight data", w.rows() * w.cols(), w.data().len()));
            }
            if self.biases[l].len() != w.rows() {
                return Err(Error::shape("NetParams bias", w.rows(), self.biases[l].len()));
            }
            if l > 0 && w.cols() != self.weights[l - 1].rows() {
                return Err(Error::shape("NetParams chaining", self.weights[l - 1].rows(), w.cols()));
            }
        }
        if self.weights[0].rows() != self.hidden_width || self.weights[1].rows() != self.hidden_width {
            return Err(Error::shape("NetParams hidden width", self.hidden_width, self.weights[0].rows()));
        }
        for (i, t) in self.tensors().enumerate() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "NetParams",
                    layer: i / 2,
                });
            }
        }
        Ok(())
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &NetParams) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.tensors()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Pre- and post-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    dims: [usize; 4],
    activation: ActivationSpec,
    input: Vec<f64>,
    pre: [Vec<f64>; NUM_LAYERS],
    post: [Vec<f64>; NUM_LAYERS],
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        &self.post[NUM_LAYERS - 1]
    }

    fn matches(&self, params: &NetParams) -> bool {
        self.activation == params.activation
            && self.dims
                == [
                    params.input_dim(),
                    params.weights[0].rows(),
                    params.weights[1].rows(),
                    params.output_dim(),
                ]
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Forward pass over a `batch × in` input matrix.
pub fn forward_batch(params: &NetParams, input: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
    if input.cols() != params.input_dim() {
        return Err(Error::shape("mlp_forward input", params.input_dim(), input.cols()));
    }
    let batch = input.rows();
    let dims = [
        params.input_dim(),
        params.weights[0].rows(),
        params.weights[1].rows(),
        params.output_dim(),
    ];
    let mut pre: [Vec<f64>; NUM_LAYERS] = Default::default();
    let mut post: [Vec<f64>; NUM_LAYERS] = Default::default();
    for l in 0..NUM_LAYERS {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let x = if l == 0 { input.data() } else { &post[l - 1] };
        let mut z = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            z.extend_from_slice(&params.biases[l]);
        }
        gemm(batch, fan_in, fan_out, x, false, params.weights[l].data(), true, 1.0, &mut z);
        let a = if l + 1 < NUM_LAYERS {
            z.iter().map(|&v| relu(v)).collect()
        } else {
            match params.activation {
                ActivationSpec::ReluReluTanh => z.iter().map(|v| v.tanh()).collect(),
                ActivationSpec::ReluReluLinear => z.clone(),
            }
        };
        pre[l] = z;
        post[l] = a;
    }
    let out = DenseMatrix {
        rows: batch,
        cols: dims[NUM_LAYERS],
        data: post[NUM_LAYERS - 1].clone(),
    };
    let cache = ForwardCache {
        batch,
        dims,
        activation: params.activation,
        input: input.data().to_vec(),
        pre,
        post,
    };
    Ok((out, cache))
}

/// Reverse pass for a cached batch.
///
/// `upstream` holds `∂L/∂output` (`batch × out`). Returns the parameter
/// gradient summed over the batch (skipped when `want_param_grads` is false)
/// and `∂L/∂input` (`batch × in`).
pub fn backward_batch(
    params: &NetParams,
    cache: &ForwardCache,
    upstream: &DenseMatrix,
    want_param_grads: bool,
) -> Result<(Option<NetParams>, DenseMatrix)> {
    if !cache.matches(params) {
        return Err(Error::shape("mlp_backward cache", params.num_params(), 0));
    }
    let batch = cache.batch;
    let dims = cache.dims;
    if upstream.rows() != batch || upstream.cols() != dims[NUM_LAYERS] {
        return Err(Error::shape(
            "mlp_backward upstream",
            batch * dims[NUM_LAYERS],
            upstream.rows() * upstream.cols(),
        ));
    }
    let mut grads = want_param_grads.then(|| params.zeros_like());

    // delta = ∂L/∂z for the current layer
    let mut delta: Vec<f64> = match params.activation {
        ActivationSpec::ReluReluTanh => upstream
            .data()
            .iter()
            .zip(&cache.post[NUM_LAYERS - 1])
            .map(|(g, t)| g * (1.0 - t * t))
            .collect(),
        ActivationSpec::ReluReluLinear => upstream.data().to_vec(),
    };
    for l in (0..NUM_LAYERS).rev() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        if let Some(g) = grads.as_mut() {
            gemm(fan_out, batch, fan_in, &delta, true, x, false, 0.0, g.weights[l].data_mut());
            let gb = &mut g.biases[l];
            for row in delta.chunks_exact(fan_out) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc += d;
                }
            }
        }
        let mut dx = vec![0.0; batch * fan_in];
        gemm(batch, fan_out, fan_in, &delta, false, params.weights[l].data(), false, 0.0, &mut dx);
        if l > 0 {
            for (d, z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        delta = dx;
    }
    let input_grad = DenseMatrix {
        rows: batch,
        cols: dims[0],
        data: delta,
    };
    Ok((grads, input_grad))
}

/// Forward pass for a single input vector.
pub fn mlp_forward(params: &NetParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = DenseMatrix {
        rows: 1,
        cols: input.len(),
        data: input.to_vec(),
    };
    let (out, cache) = forward_batch(params, &x)?;
    Ok((out.into_data(), cache))
}

/// Gradients of `output · upstream` with respect to every parameter and the
/// input, for a cache produced by [`mlp_forward`].
pub fn mlp_backward(
    params: &NetParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<(NetParams, Vec<f64>)> {
    let up = DenseMatrix {
        rows: 1,
        cols: upstream.len(),
        data: upstream.to_vec(),
    };
    if cache.batch != 1 {
        return Err(Error::shape("mlp_backward batch", 1, cache.batch));
    }
    let (grads, dx) = backward_batch(params, cache, &up, true)?;
    Ok((grads.expect("requested"), dx.into_data()))
}

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&NetParams) -> f64,
    params: &NetParams,
    eps: f64,
) -> NetParams {
    let mut probe = params.clone();
    let mut flat = params.flatten();
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + eps;
        probe.assign_flat(&flat).expect("same length");
        let up = f(&probe);
        flat[i] = orig - eps;
        probe.assign_flat(&flat).expect("same length");
        let down = f(&probe);
        flat[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    let mut out = params.zeros_like();
    out.assign_flat(&grad).expect("same length");
    out
}

/// Adam optimiser state for one [`NetParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: NetParams,
    pub second_moment: NetParams,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

pub const DEFAULT_LR: f64 = 1e-3;

impl AdamState {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam descent step, in place.
///
/// Gradients are checked before anything is written, so a non-finite entry
/// leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState) -> Result<()> {
    params.check_same_shape(grads, "adam_step grads")?;
    params.check_same_shape(&state.first_moment, "adam_step state")?;
    for (i, g) in grads.tensors().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "adam_step gradient",
                layer: i / 2,
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.lr);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
