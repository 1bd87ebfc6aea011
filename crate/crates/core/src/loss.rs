//! Smoothed SVM loss, the quadratic feature map, and per-agent cost,
//! gradient and Hessian.
//!
//! An agent's classifier is packed as `x_i = [omega; nu]` with `omega` in
//! `R^(m-1)`. For a shard of mapped points `phi_j` with labels `l_j`:
//!
//! ```text
//! z_j    = 1 - l_j (omega . phi_j + nu)
//! f_i(x) = omega . omega + C * sum_j L(z_j)
//! ```
//!
//! where `L(z) = log(1 + exp(mu z)) / mu` (or the squared hinge, optionally).
//! Prediction uses the same `+nu` convention: `sign(omega . phi + nu)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, invalid, Result};

const GUARD: f64 = 30.0;

/// Value and first two derivatives of a scalar loss at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `L(z, mu) = log(1 + exp(mu z)) / mu` with its derivatives.
///
/// For `|mu z| > 30` the asymptotic branches `z + exp(-mu z)/mu` and
/// `exp(mu z)/mu` are used; both agree with the closed form to machine precision.
pub fn smooth_hinge(z: f64, mu: f64) -> LossEval {
    let t = mu * z;
    let value = if t > GUARD {
        z + (-t).exp() / mu
    } else if t < -GUARD {
        t.exp() / mu
    } else {
        t.exp().ln_1p() / mu
    };
    let s = sigmoid(t);
    let s_neg = sigmoid(-t);
    LossEval {
        value,
        d1: s,
        d2: mu * s * s_neg,
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `max(z, 0)^2` with its (one-sided) derivatives.
pub fn squared_hinge(z: f64) -> LossEval {
    if z > 0.0 {
        LossEval {
            value: z * z,
            d1: 2.0 * z,
            d2: 2.0,
        }
    } else {
        LossEval {
            value: 0.0,
            d1: 0.0,
            d2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Smoothed hinge, `q = 1`.
    #[default]
    SmoothHinge,
    /// Squared hinge, `q = 2`; not twice differentiable at the margin.
    SquaredHinge,
}

/// Trade-off constant `C`, smoothness `mu`, and which hinge variant to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub c: f64,
    pub mu: f64,
    pub kind: LossKind,
}

impl LossConfig {
    pub fn new(c: f64, mu: f64) -> Result<Self> {
        Self::with_kind(c, mu, LossKind::SmoothHinge)
    }

    pub fn with_kind(c: f64, mu: f64, kind: LossKind) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("C", format!("must be positive, got {c}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid("mu", format!("must be positive, got {mu}")));
        }
        Ok(Self { c, mu, kind })
    }

    pub fn eval(&self, z: f64) -> LossEval {
        match self.kind {
            LossKind::SmoothHinge => smooth_hinge(z, self.mu),
            LossKind::SquaredHinge => squared_hinge(z),
        }
    }
}

/// `phi(chi) = [chi1^2, chi2^2, sqrt(2) chi1 chi2]`, so that
/// `phi(a) . phi(b) = (a . b)^2`.
pub fn feature_map_quadratic(chi: &[f64]) -> Result<[f64; 3]> {
    ensure_dim("quadratic feature map input", 2, chi.len())?;
    let (a, b) = (chi[0], chi[1]);
    Ok([a * a, b * b, std::f64::consts::SQRT_2 * a * b])
}

/// How raw points are lifted before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    #[default]
    Quadratic,
}

impl FeatureMap {
    pub fn apply(&self, chi: &[f64]) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Identity => Ok(DVector::from_column_slice(chi)),
            FeatureMap::Quadratic => Ok(DVector::from_column_slice(&feature_map_quadratic(chi)?)),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Quadratic => 3,
        }
    }
}

/// One agent's share of the (already feature-mapped) training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    dim: usize,
    points: Vec<DVector<f64>>,
    labels: Vec<f64>,
}

impl Shard {
    /// `dim` is the feature dimension `m - 1`; all points must match it.
    pub fn new(dim: usize, points: Vec<DVector<f64>>, labels: Vec<f64>) -> Result<Self> {
        ensure_dim("shard labels", points.len(), labels.len())?;
        for p in &points {
            ensure_dim("shard point", dim, p.len())?;
        }
        if let Some(l) = labels.iter().find(|l| **l != 1.0 && **l != -1.0) {
            return Err(invalid(
                "labels",
                format!("labels must be -1 or +1, got {l}"),
            ));
        }
        Ok(Self {
            dim,
            points,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> {
        self.points.iter().zip(self.labels.iter().copied())
    }
}

/// Separating hyperplane `omega . phi + nu = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub omega: DVector<f64>,
    pub nu: f64,
}

impl Classifier {
    pub fn m(&self) -> usize {
        self.omega.len() + 1
    }

    /// `[omega; nu]`
    pub fn pack(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.m());
        x.rows_mut(0, self.omega.len()).copy_from(&self.omega);
        x[self.omega.len()] = self.nu;
        x
    }

    pub fn unpack(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("x", "packed classifier needs at least the offset"));
        }
        let k = x.len() - 1;
        Ok(Self {
            omega: DVector::from_column_slice(&x[..k]),
            nu: x[k],
        })
    }

    pub fn score(&self, phi: &DVector<f64>) -> f64 {
        self.omega.dot(phi) + self.nu
    }
}

fn score(x: &[f64], phi: &DVector<f64>) -> f64 {
    let k = phi.len();
    phi.iter().zip(&x[..k]).map(|(p, w)| p * w).sum::<f64>() + x[k]
}

fn check_x(x: &[f64], shard: &Shard) -> Result<()> {
    ensure_dim("classifier vs shard", shard.dim() + 1, x.len())
}

/// `omega . omega + C * sum_j L(1 - l_j (omega . phi_j + nu))`
pub fn local_cost(x: &[f64], shard: &Shard, cfg: &LossConfig) -> Result<f64> {
    check_x(x, shard)?;
    let k = shard.dim();
    let reg: f64 = x[..k].iter().map(|w| w * w).sum();
    let data: f64 = shard
        .iter()
        .map(|(phi, l)| cfg.eval(1.0 - l * score(x, phi)).value)
        .sum();
    Ok(reg + cfg.c * data)
}

/// Analytic gradient of [`local_cost`].
pub fn local_gradient(x: &[f64], shard: &Shard, cfg: &LossConfig) -> Result<DVector<f64>> {
    check_x(x, shard)?;
    let k = shard.dim();
    let mut g = DVector::zeros(k + 1);
    for i in 0..k {
        g[i] = 2.0 * x[i];
    }
    for (phi, l) in shard.iter() {
        let coef = -cfg.c * cfg.eval(1.0 - l * score(x, phi)).d1 * l;
        for i in 0..k {
            g[i] += coef * phi[i];
        }
        g[k] += coef;
    }
    Ok(g)
}

/// Analytic Hessian of [`local_cost`]:
/// `2 diag(1, .., 1, 0) + C * sum_j L''(z_j) l_j^2 [phi_j; 1][phi_j; 1]^T`.
pub fn local_hessian(x: &[f64], shard: &Shard, cfg: &LossConfig) -> Result<DMatrix<f64>> {
    check_x(x, shard)?;
    let k = shard.dim();
    let m = k + 1;
    let mut h = DMatrix::zeros(m, m);
    for i in 0..k {
        h[(i, i)] = 2.0;
    }
    let mut a = vec![1.0; m];
    for (phi, l) in shard.iter() {
        let coef = cfg.c * cfg.eval(1.0 - l * score(x, phi)).d2 * l * l;
        if coef == 0.0 {
            continue;
        }
        a[..k].copy_from_slice(phi.as_slice());
        for r in 0..m {
            let ar = coef * a[r];
            for c in r..m {
                h[(r, c)] += ar * a[c];
            }
        }
    }
    // filled the upper triangle only, so the mirror is bit-exact
    for r in 1..m {
        for c in 0..r {
            h[(r, c)] = h[(c, r)];
        }
    }
    Ok(h)
}

/// The networked problem: one shard per agent, a shared loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    shards: Vec<Shard>,
    loss: LossConfig,
    m: usize,
}

impl Problem {
    pub fn new(shards: Vec<Shard>, loss: LossConfig) -> Result<Self> {
        let first = shards
            .first()
            .ok_or_else(|| invalid("shards", "need at least one agent"))?;
        let dim = first.dim();
        for s in &shards {
            ensure_dim("shard feature dimension", dim, s.dim())?;
        }
        Ok(Self {
            shards,
            loss,
            m: dim + 1,
        })
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.shards.len()
    }

    /// Classifier dimension (features plus offset).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn loss(&self) -> &LossConfig {
        &self.loss
    }

    fn agent<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[i * self.m..(i + 1) * self.m]
    }

    fn check_stacked(&self, x: &[f64]) -> Result<()> {
        ensure_dim("stacked agent states", self.n() * self.m, x.len())
    }

    /// `F(x) = sum_i f_i(x_i)` over stacked agent states.
    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        self.check_stacked(x)?;
        let mut total = 0.0;
        for (i, s) in self.shards.iter().enumerate() {
            total += local_cost(self.agent(x, i), s, &self.loss)?;
        }
        Ok(total)
    }

    /// Stacked local gradients `[grad f_1(x_1); ...; grad f_n(x_n)]`.
    pub fn stacked_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_stacked(x)?;
        let m = self.m;
        let mut g = DVector::zeros(self.n() * m);
        for (i, s) in self.shards.iter().enumerate() {
            let gi = local_gradient(self.agent(x, i), s, &self.loss)?;
            g.rows_mut(i * m, m).copy_from(&gi);
        }
        Ok(g)
    }

    /// `sum_i grad f_i(x_i)`.
    pub fn gradient_sum(&self, x: &[f64]) -> Result<DVector<f64>> {
        let g = self.stacked_gradient(x)?;
        Ok(self.sum_blocks(g.as_slice()))
    }

    /// Per-agent Hessians `Hess f_i(x_i)`.
    pub fn hessian_blocks(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_stacked(x)?;
        self.shards
            .iter()
            .enumerate()
            .map(|(i, s)| local_hessian(self.agent(x, i), s, &self.loss))
            .collect()
    }

    /// The `nm x nm` block-diagonal Hessian `H`.
    pub fn block_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(block_diag(&self.hessian_blocks(x)?))
    }

    /// `g(xbar) = sum_i f_i(xbar)`, the cost with every agent at `xbar`.
    pub fn consensus_cost(&self, xbar: &[f64]) -> Result<f64> {
        ensure_dim("consensus point", self.m, xbar.len())?;
        let mut total = 0.0;
        for s in &self.shards {
            total += local_cost(xbar, s, &self.loss)?;
        }
        Ok(total)
    }

    /// `sum_i grad f_i(xbar)`.
    pub fn consensus_gradient(&self, xbar: &[f64]) -> Result<DVector<f64>> {
        ensure_dim("consensus point", self.m, xbar.len())?;
        let mut g = DVector::zeros(self.m);
        for s in &self.shards {
            g += local_gradient(xbar, s, &self.loss)?;
        }
        Ok(g)
    }

    /// Sums consecutive length-`m` blocks of a stacked vector.
    pub fn sum_blocks(&self, v: &[f64]) -> DVector<f64> {
        let m = self.m;
        let mut out = DVector::zeros(m);
        for block in v.chunks_exact(m) {
            for (o, b) in out.iter_mut().zip(block) {
                *o += b;
            }
        }
        out
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(size, size);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    out
}
