//! Dense least-squares helpers. Every solve goes through a Householder QR
//! factorization; normal equations are never formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular-value ratio below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Reciprocal condition number `s_min / s_max` in the 2-norm. Returns 0 for an
/// all-zero matrix and 1 for an empty one.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Thin QR factorization of a tall matrix, keeping what the solvers need.
#[derive(Debug, Clone)]
pub struct ThinQr {
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    rows: usize,
}

impl ThinQr {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() < a.ncols() {
            return Err(Error::Dimension(format!(
                "least squares needs rows >= columns, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let rows = a.nrows();
        let qr = a.clone().qr();
        let r = qr.r();
        Ok(Self { qr, r, rows })
    }

    /// Upper triangular factor (k x k).
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn rcond(&self) -> f64 {
        rcond(&self.r)
    }

    /// First k rows of `Q' b`.
    pub fn qt_mul(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.rows, "row mismatch in Q'b");
        let mut full = b.clone();
        self.qr.q_tr_mul(&mut full);
        full.rows(0, self.r.ncols()).into_owned()
    }

    /// Solves `R x = c` for the upper-triangular factor.
    pub fn solve_r(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.r
            .solve_upper_triangular(c)
            .ok_or_else(|| Error::SingularDesign("zero pivot in triangular solve".into()))
    }

    /// Least-squares solution of `A x = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_r(&self.qt_mul(b))
    }
}

/// Least-squares coefficients of `b` on `a`, erroring when `a` is rank deficient.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let qr = ThinQr::new(a)?;
    let rc = qr.rcond();
    if rc < RANK_TOL {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            rcond: rc,
        });
    }
    qr.solve(b)
}

/// Residuals of `b` after projecting on the column space of `on`.
pub fn residualize(b: &DMatrix<f64>, on: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if on.ncols() == 0 {
        return Ok(b.clone());
    }
    let coef = lstsq(on, b, what)?;
    Ok(b - on * coef)
}

/// Columns of `m` selected by `idx`, in the given order.
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Horizontal concatenation of matrices sharing a row count.
pub fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |m| m.nrows());
    let cols: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in parts {
        debug_assert_eq!(m.nrows(), rows);
        out.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    out
}

pub fn column_vector(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Inverse of an upper-triangular matrix via triangular solves.
pub fn upper_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(r.nrows(), r.ncols());
    r.solve_upper_triangular(&id)
        .ok_or_else(|| Error::SingularDesign("zero pivot inverting triangular factor".into()))
}
