use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, invalid, Result};

/// `(L (x) I_m) v` for a stacked vector `v` of `n` blocks of length `m`.
pub fn kron_apply(l: &DMatrix<f64>, v: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = l.nrows();
    let blocks = DMatrix::from_column_slice(m, n, v.as_slice());
    let out = blocks * l.transpose();
    DVector::from_column_slice(out.as_slice())
}

/// `L (x) I_m` as a dense matrix.
pub fn kron_identity(l: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    l.kronecker(&DMatrix::identity(m, m))
}

/// The linearized system matrix and its split `M = M0 + alpha * M1`.
///
/// ```text
/// M  = [[Wbar (x) I, -alpha I], [H (Wbar (x) I), Abar (x) I - alpha H]]
/// M0 = [[Wbar (x) I, 0       ], [H (Wbar (x) I), Abar (x) I          ]]
/// M1 = [[0,          -I      ], [0,              -H                  ]]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub m: DMatrix<f64>,
    pub m0: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub alpha: f64,
    pub n: usize,
    /// Per-agent state dimension.
    pub m_dim: usize,
}

pub fn assemble_system_matrix(
    wbar: &DMatrix<f64>,
    abar: &DMatrix<f64>,
    h: &DMatrix<f64>,
    alpha: f64,
    m: usize,
) -> Result<SystemMatrix> {
    let n = wbar.nrows();
    if m == 0 {
        return Err(invalid("m", "per-agent dimension must be positive"));
    }
    ensure_dim("Wbar columns", n, wbar.ncols())?;
    ensure_dim("Abar rows", n, abar.nrows())?;
    ensure_dim("Abar columns", n, abar.ncols())?;
    ensure_dim("Hessian rows", n * m, h.nrows())?;
    ensure_dim("Hessian columns", n * m, h.ncols())?;
    if !alpha.is_finite() {
        return Err(invalid("alpha", "must be finite"));
    }
    let nm = n * m;
    let wk = kron_identity(wbar, m);
    let ak = kron_identity(abar, m);
    let hw = h * &wk;

    let mut m0 = DMatrix::zeros(2 * nm, 2 * nm);
    m0.view_mut((0, 0), (nm, nm)).copy_from(&wk);
    m0.view_mut((nm, 0), (nm, nm)).copy_from(&hw);
    m0.view_mut((nm, nm), (nm, nm)).copy_from(&ak);

    let mut m1 = DMatrix::zeros(2 * nm, 2 * nm);
    m1.view_mut((0, nm), (nm, nm))
        .copy_from(&(-DMatrix::identity(nm, nm)));
    m1.view_mut((nm, nm), (nm, nm)).copy_from(&(-h));

    let full = &m0 + &m1 * alpha;
    Ok(SystemMatrix {
        m: full,
        m0,
        m1,
        h: h.clone(),
        alpha,
        n,
        m_dim: m,
    })
}
