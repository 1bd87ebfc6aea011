//! Eigenstructure of the linearized gradient-tracking system.
//!
//! The system matrix splits as `M = M0 + alpha * M1` where `M0` is block
//! lower-triangular with spectrum `sigma(Wbar (x) I) U sigma(Abar (x) I)`.
//! `M0` therefore has a `2m`-fold zero eigenvalue. Turning on `alpha` keeps
//! `m` of those at zero (the null space `(1_n; 0_n) (x) I_m` does not depend
//! on `alpha`) and pushes the other `m` into the left half-plane. This
//! module computes spectra, counts the zero cluster, evaluates the matching
//! distance bound and solves for the certified step-size bound.

mod eigen;
mod matching;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{assemble_system_matrix, SystemMatrix};
use crate::error::{ensure_dim, invalid, Error, Result};

pub use eigen::eigenvalues;
pub use matching::optimal_matching_distance;

/// Max absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Thresholds separating the zero cluster from the left half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// `|lambda| < zero_rel * ||M||_inf` counts as zero.
    pub zero_rel: f64,
    /// `Re(lambda) < -neg` counts as strictly stable.
    pub neg: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            zero_rel: 1e-7,
            neg: 1e-9,
        }
    }
}

/// Outcome of checking "exactly `m` zero eigenvalues, the rest strictly stable".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroStructureVerdict {
    pub expected_zero: usize,
    pub zero_count: usize,
    pub lhp_count: usize,
    /// Eigenvalues neither in the zero cluster nor strictly stable.
    pub other_count: usize,
    pub tol_zero: f64,
    pub tol_neg: f64,
    /// Largest real part outside the zero cluster (the slowest mode).
    pub slowest_re: Option<f64>,
    pub passes: bool,
}

/// Counts the zero cluster and the stable eigenvalues of `eigs`.
pub fn zero_structure(
    eigs: &[Complex64],
    matrix_norm: f64,
    m: usize,
    tol: Tolerances,
) -> ZeroStructureVerdict {
    let tol_zero = tol.zero_rel * matrix_norm;
    let mut zero_count = 0;
    let mut lhp_count = 0;
    let mut slowest_re: Option<f64> = None;
    for l in eigs {
        if l.norm() < tol_zero {
            zero_count += 1;
            continue;
        }
        slowest_re = Some(slowest_re.map_or(l.re, |s| s.max(l.re)));
        if l.re < -tol.neg {
            lhp_count += 1;
        }
    }
    let other_count = eigs.len() - zero_count - lhp_count;
    ZeroStructureVerdict {
        expected_zero: m,
        zero_count,
        lhp_count,
        other_count,
        tol_zero,
        tol_neg: tol.neg,
        slowest_re,
        passes: zero_count == m && lhp_count == eigs.len() - m,
    }
}

/// Eigen-solves `M` and checks for exactly `m` zeros with everything else stable.
pub fn verify_theorem1(
    matrix: &DMatrix<f64>,
    m: usize,
    tol: Tolerances,
) -> Result<ZeroStructureVerdict> {
    let eigs = eigenvalues(matrix)?;
    Ok(zero_structure(&eigs, inf_norm(matrix), m, tol))
}

/// `gamma = ||H||_inf`.
pub fn gamma(h: &DMatrix<f64>) -> f64 {
    inf_norm(h)
}

/// Smallest `|Re|` over the non-zero part of `sigma(Wbar) U sigma(Abar)`:
/// the third-smallest `|Re|` in the union, skipping the two Laplacian zeros.
pub fn lambda_min(wbar: &DMatrix<f64>, abar: &DMatrix<f64>) -> Result<f64> {
    let mut res: Vec<f64> = eigenvalues(wbar)?
        .into_iter()
        .chain(eigenvalues(abar)?)
        .map(|l| l.re.abs())
        .collect();
    if res.len() < 3 {
        return Err(Error::InvalidSpectrum(
            "need at least two agents for a non-zero Laplacian mode".into(),
        ));
    }
    res.sort_by(f64::total_cmp);
    Ok(res[2])
}

/// Which closed form the step-size bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaBarBranch {
    GammaBelowOne,
    GammaAtLeastOne,
}

/// The certified step-size bound and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBar {
    pub value: f64,
    /// `ln(value)`; stays finite where `value` underflows.
    pub ln_value: f64,
    pub branch: AlphaBarBranch,
}

fn ln_objective(ln_alpha: f64, gamma: f64, k: f64) -> f64 {
    let alpha = ln_alpha.exp();
    if gamma < 1.0 {
        let inner = (4.0 + 4.0 * gamma + alpha * gamma).max(4.0 + 2.0 * gamma + alpha);
        4f64.ln() + (1.0 - 1.0 / k) * inner.ln() + ln_alpha / k
    } else {
        let inner = 4.0 + 4.0 * gamma + alpha * gamma;
        4f64.ln() + (1.0 - 1.0 / k) * inner.ln() + (ln_alpha + gamma.ln()) / k
    }
}

/// Left-hand side of the step-size condition, as a function of `alpha`.
///
/// For `gamma < 1`: `4 max{4+4g+a*g, 4+2g+a}^(1-1/nm) a^(1/nm)`;
/// otherwise `4 (4+4g+a*g)^(1-1/nm) (a*g)^(1/nm)`.
pub fn alpha_bar_objective(alpha: f64, gamma: f64, n: usize, m: usize) -> f64 {
    ln_objective(alpha.ln(), gamma, (n * m) as f64).exp()
}

/// Solves `objective(alpha) = lambda_min` for `alpha > 0`.
///
/// The objective is strictly increasing, so the root is bracketed and
/// bisected in `ln(alpha)` (the root can sit far below `f64::MIN_POSITIVE`
/// for large `nm`).
pub fn alpha_bar(gamma: f64, lambda_min: f64, n: usize, m: usize) -> Result<AlphaBar> {
    if !(lambda_min > 0.0 && lambda_min.is_finite()) {
        return Err(Error::InvalidSpectrum(format!(
            "lambda_min must be positive, got {lambda_min}"
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(
            "gamma",
            format!("must be non-negative, got {gamma}"),
        ));
    }
    if n * m == 0 {
        return Err(invalid("n, m", "need n * m >= 1"));
    }
    let k = (n * m) as f64;
    let target = lambda_min.ln();
    let f = |u: f64| ln_objective(u, gamma, k) - target;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) > 0.0 {
        lo *= 2.0;
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * mid.abs().max(1.0) {
            break;
        }
    }
    let ln_value = 0.5 * (lo + hi);
    Ok(AlphaBar {
        value: ln_value.exp(),
        ln_value,
        branch: if gamma < 1.0 {
            AlphaBarBranch::GammaBelowOne
        } else {
            AlphaBarBranch::GammaAtLeastOne
        },
    })
}

/// `4 (||M0|| + ||M||)^(1 - 1/nm) ||alpha M1||^(1/nm)` in the infinity norm,
/// with `nm` half the dimension of `M`.
pub fn matching_distance_bound(
    m0: &DMatrix<f64>,
    m: &DMatrix<f64>,
    m1: &DMatrix<f64>,
    alpha: f64,
) -> f64 {
    let k = (m.nrows() / 2).max(1) as f64;
    let pert = alpha.abs() * inf_norm(m1);
    if pert == 0.0 {
        return 0.0;
    }
    4.0 * (inf_norm(m0) + inf_norm(m)).powf(1.0 - 1.0 / k) * pert.powf(1.0 / k)
}

/// The first-order perturbation matrix of the double zero eigenvalue, in
/// the printed block layout `[[0, 0], [-n I_m, -sum_i Hess f_i]]`.
pub fn perturbation_derivative_matrix(
    h: &DMatrix<f64>,
    n: usize,
    m: usize,
) -> Result<DMatrix<f64>> {
    let sum = sum_diagonal_blocks(h, n, m)?;
    let mut p = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        p[(m + i, i)] = -(n as f64);
    }
    p.view_mut((m, m), (m, m)).copy_from(&(-sum));
    Ok(p)
}

/// `sum_i H_ii` over the `m x m` diagonal blocks of a block-diagonal `H`.
pub fn sum_diagonal_blocks(h: &DMatrix<f64>, n: usize, m: usize) -> Result<DMatrix<f64>> {
    ensure_dim("block Hessian rows", n * m, h.nrows())?;
    ensure_dim("block Hessian cols", n * m, h.ncols())?;
    let mut sum = DMatrix::zeros(m, m);
    for i in 0..n {
        sum += h.view((i * m, i * m), (m, m));
    }
    Ok(sum)
}

/// First-order rates `d lambda / d alpha` at `alpha = 0` of the `m` zero
/// eigenvalues that leave the origin, from the bi-orthogonal left/right
/// null vectors of `M0`: the eigenvalues of `-(1/n) sum_i Hess f_i`,
/// ascending.
pub fn first_order_zero_drift(h: &DMatrix<f64>, n: usize, m: usize) -> Result<Vec<f64>> {
    let s = sum_diagonal_blocks(h, n, m)? / (n as f64);
    let sym = (&s + s.transpose()) * 0.5;
    let mut d: Vec<f64> = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| -v)
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Finite-difference drift rates of the outgoing zero eigenvalues:
/// eigen-solve `M(alpha)` at a small `alpha`, keep the `2m` eigenvalues
/// nearest the origin, drop the `m` that stay put, divide the rest by
/// `alpha`. Real parts, ascending.
pub fn measured_zero_drift(
    wbar: &DMatrix<f64>,
    abar: &DMatrix<f64>,
    h: &DMatrix<f64>,
    m: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    let sys = assemble_system_matrix(wbar, abar, h, alpha, m)?;
    let mut eigs = eigenvalues(&sys.m)?;
    eigs.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut d: Vec<f64> = eigs[m..2 * m].iter().map(|l| l.re / alpha).collect();
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Null vectors `V1 = (1_n; 0_n) (x) I_m`, `V2 = (0_n; 1_n) (x) I_m`, scaled
/// by `1/sqrt(n)` so that `[V1 V2]^T [V1 V2] = I_2m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis {
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
}

impl NullSpaceBasis {
    pub fn new(n: usize, m: usize) -> Self {
        let s = 1.0 / (n as f64).sqrt();
        let mut v1 = DMatrix::zeros(2 * n * m, m);
        let mut v2 = DMatrix::zeros(2 * n * m, m);
        for i in 0..n {
            for j in 0..m {
                v1[(i * m + j, j)] = s;
                v2[(n * m + i * m + j, j)] = s;
            }
        }
        Self { v1, v2 }
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let (r, m) = self.v1.shape();
        let mut v = DMatrix::zeros(r, 2 * m);
        v.view_mut((0, 0), (r, m)).copy_from(&self.v1);
        v.view_mut((0, m), (r, m)).copy_from(&self.v2);
        v
    }
}

/// `||M (1_n; 0_n) (x) I_m||_inf` (unscaled basis).
pub fn null_space_check(matrix: &DMatrix<f64>, n: usize, m: usize) -> Result<f64> {
    ensure_dim("system matrix size", 2 * n * m, matrix.nrows())?;
    let v1 = NullSpaceBasis::new(n, m).v1 * (n as f64).sqrt();
    Ok(inf_norm(&(matrix * v1)))
}

/// Largest `alpha` on `grid` (ascending) such that the zero-structure
/// verdict holds at it and at every smaller grid point. Reported as a
/// diagnostic only.
pub fn empirical_alpha_frontier(
    wbar: &DMatrix<f64>,
    abar: &DMatrix<f64>,
    h: &DMatrix<f64>,
    m: usize,
    grid: &[f64],
    tol: Tolerances,
) -> Result<Option<f64>> {
    let mut best = None;
    for &alpha in grid {
        let sys = assemble_system_matrix(wbar, abar, h, alpha, m)?;
        if verify_theorem1(&sys.m, m, tol)?.passes {
            best = Some(alpha);
        } else {
            break;
        }
    }
    Ok(best)
}

/// Everything known about the spectrum of one assembled system matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub alpha: f64,
    pub eigenvalues: Vec<Complex64>,
    pub zero_multiplicity: usize,
    pub gamma: f64,
    pub lambda_min: f64,
    pub alpha_bar: AlphaBar,
    /// Matching-distance bound at `alpha`.
    pub bound: f64,
    /// Actual optimal matching distance between `sigma(M)` and `sigma(M0)`.
    pub matching_distance: f64,
    pub verdict: ZeroStructureVerdict,
    pub null_space_residual: f64,
}

impl SpectralReport {
    pub fn compute(
        sys: &SystemMatrix,
        wbar: &DMatrix<f64>,
        abar: &DMatrix<f64>,
        tol: Tolerances,
    ) -> Result<Self> {
        let (n, m) = (sys.n, sys.m_dim);
        let eigs = eigenvalues(&sys.m)?;
        let eigs0 = eigenvalues(&sys.m0)?;
        let verdict = zero_structure(&eigs, inf_norm(&sys.m), m, tol);
        let gamma = gamma(&sys.h);
        let lambda_min = lambda_min(wbar, abar)?;
        Ok(Self {
            alpha: sys.alpha,
            zero_multiplicity: verdict.zero_count,
            gamma,
            lambda_min,
            alpha_bar: alpha_bar(gamma, lambda_min, n, m)?,
            bound: matching_distance_bound(&sys.m0, &sys.m, &sys.m1, sys.alpha),
            matching_distance: optimal_matching_distance(&eigs, &eigs0)?,
            null_space_residual: null_space_check(&sys.m, n, m)?,
            verdict,
            eigenvalues: eigs,
        })
    }
}
