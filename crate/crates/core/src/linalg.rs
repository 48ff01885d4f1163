//! Error-truncated SVD and small orthonormal-basis helpers.
//!
//! `svd_trunc` keeps the fewest singular triplets whose discarded Frobenius tail
//! is at most `delta`. The dense factorization runs in `faer`; inputs and
//! outputs stay `nalgebra` matrices.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TruncatedSVD {
    /// `m x r`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, strictly positive.
    pub s: Vec<f64>,
    /// `r x l`, orthonormal rows.
    pub vt: DMatrix<f64>,
    /// Frobenius norm of the discarded part.
    pub tail_norm: f64,
}

impl TruncatedSVD {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `diag(S) * Vt`, the coefficients of the input in the basis `U`.
    pub fn sv(&self) -> DMatrix<f64> {
        let mut out = self.vt.clone();
        for (mut row, &s) in out.row_iter_mut().zip(&self.s) {
            row *= s;
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * self.sv()
    }
}

struct ThinSvd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    vt: DMatrix<f64>,
}

fn matrix_stats(a: &DMatrixView<'_, f64>) -> String {
    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    format!(
        "{}x{} matrix, max |a_ij| = {max:e}, frobenius = {:e}",
        a.nrows(),
        a.ncols(),
        a.norm()
    )
}

/// Thin SVD with descending singular values and the sign convention applied.
fn thin_svd(a: &DMatrixView<'_, f64>) -> Result<ThinSvd> {
    let (m, l) = a.shape();
    if m == 0 || l == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(m, 0),
            s: Vec::new(),
            vt: DMatrix::zeros(0, l),
        });
    }
    let fm = faer::Mat::<f64>::from_fn(m, l, |i, j| a[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD failed ({e:?}) on {}", matrix_stats(a))))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = m.min(l);
    let u = DMatrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let s: Vec<f64> = (0..k).map(|j| fs[j]).collect();
    let vt = DMatrix::from_fn(k, l, |i, j| fv[(j, i)]);

    let p = s.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut uo = DMatrix::zeros(m, p);
    let mut vo = DMatrix::zeros(p, l);
    let mut so = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        uo.set_column(dst, &(col * sign));
        vo.set_row(dst, &(vt.row(src) * sign));
        so.push(s[src].max(0.0));
    }
    Ok(ThinSvd { u: uo, s: so, vt: vo })
}

fn check_input(a: &DMatrixView<'_, f64>, delta: f64) -> Result<()> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Numeric(format!("invalid truncation tolerance {delta}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite entry in {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Smallest `r` with `sqrt(sum_{j>r} s_j^2) <= delta`, plus that tail.
fn truncation_rank(s: &[f64], delta: f64) -> (usize, f64) {
    let mut tail_sq = 0.0;
    let mut r = s.len();
    while r > 0 {
        let next = tail_sq + s[r - 1] * s[r - 1];
        if next.sqrt() > delta {
            break;
        }
        tail_sq = next;
        r -= 1;
    }
    (r, tail_sq.sqrt())
}

fn truncate(full: ThinSvd, keep: usize) -> TruncatedSVD {
    let tail_sq: f64 = full.s[keep..].iter().map(|v| v * v).sum();
    TruncatedSVD {
        u: full.u.columns(0, keep).into_owned(),
        vt: full.vt.rows(0, keep).into_owned(),
        s: full.s[..keep].to_vec(),
        tail_norm: tail_sq.sqrt(),
    }
}

/// Minimal-rank truncated SVD with absolute Frobenius tail `<= delta`.
///
/// A rank-0 result (empty factors) is legal and means the whole matrix fits in
/// the tolerance.
pub fn svd_trunc(a: DMatrixView<'_, f64>, delta: f64) -> Result<TruncatedSVD> {
    check_input(&a, delta)?;
    let norm = a.norm();
    if delta >= norm {
        return Ok(TruncatedSVD {
            u: DMatrix::zeros(a.nrows(), 0),
            s: Vec::new(),
            vt: DMatrix::zeros(0, a.ncols()),
            tail_norm: norm,
        });
    }
    let full = thin_svd(&a)?;
    let (mut r, _) = truncation_rank(&full.s, delta);
    // exact zeros never count as kept directions
    while r > 0 && full.s[r - 1] <= 0.0 {
        r -= 1;
    }
    Ok(truncate(full, r))
}

/// Like [`svd_trunc`] but never returns fewer than `min_rank` columns (when the
/// matrix has that many). Extra columns may carry zero singular values; the
/// returned `u` is still orthonormal.
pub(crate) fn svd_trunc_min_rank(
    a: DMatrixView<'_, f64>,
    delta: f64,
    min_rank: usize,
) -> Result<TruncatedSVD> {
    check_input(&a, delta)?;
    let full = thin_svd(&a)?;
    let (r, _) = truncation_rank(&full.s, delta);
    let keep = r.max(min_rank.min(full.s.len()));
    Ok(truncate(full, keep))
}

/// Thin QR, `a = q r` with `q` having `min(m, n)` orthonormal columns.
pub(crate) fn thin_qr(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.qr();
    (qr.q(), qr.r())
}

/// Largest entry of `|U^T U - I|`.
pub fn orthonormality_error(u: &DMatrixView<'_, f64>) -> f64 {
    let g = u.transpose() * u;
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// `(I - U U^T) Y` computed as `Y - U (U^T Y)`.
pub fn compute_residual(u: DMatrixView<'_, f64>, y: DMatrixView<'_, f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, data has {}",
            u.nrows(),
            y.nrows()
        )));
    }
    if u.ncols() == 0 {
        return Ok(y.clone_owned());
    }
    let coeff = u.transpose() * y;
    Ok(y - u * coeff)
}
