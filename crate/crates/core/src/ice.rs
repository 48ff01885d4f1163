//! Incremental core expansion (TT-ICE).
//!
//! An update never rewrites what the train already stores. For each spatial
//! mode the batch is projected onto the current (zero-padded) core, the part
//! the core misses is compressed with an error-truncated SVD, and its left
//! singular vectors are appended as new columns. The next core is padded with
//! zero rows for the new rank, and the batch's latent coefficients are appended
//! to the last core. With per-mode tolerances `eps_i` the new batch satisfies
//! `||y - y_hat|| <= sqrt(sum eps_i^2)`; earlier observations reconstruct
//! exactly as before.

use std::time::Duration;

use nalgebra::{DMatrix, DMatrixView, Dyn};
use serde::Serialize;

use crate::cputime::Stopwatch;
use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, svd_trunc, thin_qr};
use crate::stream::StreamIncrement;
use crate::tensor::DenseTensor;
use crate::tt::{occupancy, TTCore, TensorTrain};

pub use crate::linalg::compute_residual;

/// Gram deviation above which appended directions are re-orthonormalized.
pub const REORTHO_TOL: f64 = 1e-10;

/// Per-increment record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateReport {
    pub increment_index: usize,
    pub obs_in_batch: usize,
    pub obs_used: usize,
    pub ranks_before: Vec<usize>,
    pub ranks_after: Vec<usize>,
    /// Absolute truncation tolerance handed to each residual SVD.
    pub eps_target: f64,
    /// Relaxed relative tolerance used for a subselected update.
    pub eps_upd: Option<f64>,
    /// Upper estimate of the batch's relative reconstruction error.
    pub batch_rel_error_estimate: f64,
    /// Core updates were bypassed; only coefficients were appended.
    pub skipped: bool,
    /// Spatial modes whose expansion was bypassed by the occupancy test.
    pub occupied_modes: Vec<usize>,
    pub wall_time: Duration,
    pub cpu_seconds: f64,
}

/// How residual SVD tolerances are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum IceTolerance {
    /// Uniform `eps_des * ||y|| / sqrt(d)` for every mode.
    Relative(f64),
    /// Absolute tolerance per spatial mode.
    PerMode(Vec<f64>),
}

/// Inserts `added_rank` zero rows into the left rank of a core unfolding
/// `(r_left * n) x r_right`, returning `((r_left + added_rank) * n) x r_right`.
pub fn pad_core(u_next: DMatrixView<'_, f64>, r_left: usize, added_rank: usize) -> Result<DMatrix<f64>> {
    let rows = u_next.nrows();
    if r_left == 0 || !rows.is_multiple_of(r_left) {
        return Err(Error::Dimension(format!(
            "{rows} rows cannot split into left rank {r_left}"
        )));
    }
    let core = TTCore::from_matrix(r_left, rows / r_left, u_next.ncols(), u_next.clone_owned())?;
    let padded = core.pad_left(added_rank);
    Ok(padded.left_unfolding().clone_owned())
}

pub(crate) struct Expansion {
    /// Updated spatial cores plus the zero-padded (not yet extended) last core.
    pub cores: Vec<TTCore>,
    /// `r_d x n_obs` coefficients of the expanded data.
    pub latent: DMatrix<f64>,
    /// Discarded residual norm per spatial mode.
    pub tails: Vec<f64>,
    pub occupied: Vec<usize>,
}

/// Appends orthonormal `extra` to orthonormal `base`, re-orthonormalizing
/// `extra` against `base` when the combined Gram matrix drifts.
fn append_directions(base: DMatrixView<'_, f64>, extra: DMatrix<f64>) -> DMatrix<f64> {
    let cross = base.tr_mul(&extra).amax();
    let self_err = orthonormality_error(&extra.as_view());
    let extra = if cross.max(self_err) > REORTHO_TOL {
        log::debug!("re-orthonormalizing appended block (drift {:e})", cross.max(self_err));
        let mut v = extra;
        for _ in 0..2 {
            let c = base.tr_mul(&v);
            v -= base * c;
        }
        thin_qr(v).0
    } else {
        extra
    };
    let mut out = DMatrix::zeros(base.nrows(), base.ncols() + extra.ncols());
    out.columns_mut(0, base.ncols()).copy_from(&base);
    out.columns_mut(base.ncols(), extra.ncols()).copy_from(&extra);
    out
}

/// Sweeps the spatial modes, expanding each core with the residual directions
/// of `data`. `skip_at` bypasses modes by occupancy (`None` expands all).
pub(crate) fn expand(
    tt: &TensorTrain,
    data: &DenseTensor,
    tols: &[f64],
    skip_at: Option<f64>,
) -> Result<Expansion> {
    let d = tt.spatial_dims();
    debug_assert_eq!(tols.len(), d);
    let mut cores = tt.cores().to_vec();
    let mut tails = vec![0.0; d];
    let mut occupied = Vec::new();
    let mut rest = data.len();
    let mut y = data.as_matrix(1, rest)?.into_owned();
    for i in 0..d {
        let (r_left, n, r_right) = (cores[i].r_left(), cores[i].n(), cores[i].r_right());
        rest /= n;
        let yi = y.reshape_generic(Dyn(r_left * n), Dyn(rest));
        let resid = compute_residual(cores[i].left_unfolding(), yi.as_view())?;
        if skip_at.is_some_and(|tau| occupancy(&cores[i]) >= tau) {
            tails[i] = resid.norm();
            occupied.push(i);
        } else {
            let svd = svd_trunc(resid.as_view(), tols[i])?;
            let room = r_left * n - r_right;
            let added = svd.rank().min(room);
            let dropped: f64 = svd.s[added..].iter().map(|v| v * v).sum();
            tails[i] = (svd.tail_norm.powi(2) + dropped).sqrt();
            if added > 0 {
                let extra = svd.u.columns(0, added).into_owned();
                let u = append_directions(cores[i].left_unfolding(), extra);
                let r_new = u.ncols();
                cores[i] = TTCore::from_matrix(r_left, n, r_new, u)?;
                cores[i + 1] = cores[i + 1].pad_left(r_new - r_right);
            }
        }
        y = cores[i].left_unfolding().tr_mul(&yi);
    }
    Ok(Expansion {
        cores,
        latent: y,
        tails,
        occupied,
    })
}

/// Appends `latent` columns to the (already padded) last core.
pub(crate) fn append_observations(
    mut cores: Vec<TTCore>,
    latent: &DMatrix<f64>,
    mut boundaries: Vec<usize>,
) -> Result<TensorTrain> {
    let last = cores.pop().expect("train has a last core");
    debug_assert_eq!(last.r_left(), latent.nrows());
    let n = last.n() + latent.ncols();
    let mut data = last.data().to_vec();
    data.extend_from_slice(latent.as_slice());
    cores.push(TTCore::new(last.r_left(), n, 1, data)?);
    boundaries.push(n);
    let d = cores.len() - 1;
    TensorTrain::new(cores, d, boundaries)
}

pub(crate) fn check_update_inputs(tt: &TensorTrain, y: &StreamIncrement) -> Result<()> {
    if !tt.is_left_orthonormal() {
        return Err(Error::State(format!(
            "incremental update needs {} orthonormal cores, train has {}",
            tt.spatial_dims(),
            tt.ortho_count()
        )));
    }
    let spatial = tt.spatial_shape();
    if y.spatial_shape() != spatial.as_slice() {
        return Err(Error::Dimension(format!(
            "increment spatial shape {:?} differs from train {spatial:?}",
            y.spatial_shape()
        )));
    }
    Ok(())
}

pub(crate) fn check_eps(eps_des: f64) -> Result<()> {
    if !(eps_des.is_finite() && eps_des > 0.0) {
        return Err(Error::Argument(format!(
            "relative error bound must be positive, got {eps_des}"
        )));
    }
    Ok(())
}

/// TT-ICE update at relative bound `eps_des`.
pub fn tt_ice_update(
    tt: &TensorTrain,
    y: &StreamIncrement,
    eps_des: f64,
) -> Result<(TensorTrain, UpdateReport)> {
    tt_ice_update_with(tt, y, &IceTolerance::Relative(eps_des))
}

pub fn tt_ice_update_with(
    tt: &TensorTrain,
    y: &StreamIncrement,
    tolerance: &IceTolerance,
) -> Result<(TensorTrain, UpdateReport)> {
    let clock = Stopwatch::start();
    check_update_inputs(tt, y)?;
    let d = tt.spatial_dims();
    let norm = y.tensor.frobenius_norm();
    let tols = match tolerance {
        IceTolerance::Relative(eps) => {
            check_eps(*eps)?;
            vec![eps * norm / (d as f64).sqrt(); d]
        }
        IceTolerance::PerMode(t) => {
            if t.len() != d || t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Argument(format!(
                    "need {d} nonnegative per-mode tolerances, got {t:?}"
                )));
            }
            t.clone()
        }
    };
    let ex = expand(tt, &y.tensor, &tols, None)?;
    let out = append_observations(ex.cores, &ex.latent, tt.batch_boundaries().to_vec())?;
    let bound = ex.tails.iter().map(|t| t * t).sum::<f64>().sqrt();
    let (wall_time, cpu_seconds) = clock.stop();
    let report = UpdateReport {
        increment_index: y.increment_index,
        obs_in_batch: y.n_obs(),
        obs_used: y.n_obs(),
        ranks_before: tt.ranks(),
        ranks_after: out.ranks(),
        eps_target: tols.iter().copied().fold(0.0, f64::max),
        eps_upd: None,
        batch_rel_error_estimate: if norm > 0.0 { bound / norm } else { 0.0 },
        skipped: false,
        occupied_modes: Vec::new(),
        wall_time,
        cpu_seconds,
    };
    Ok((out, report))
}
