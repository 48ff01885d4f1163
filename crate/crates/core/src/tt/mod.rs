//! The tensor-train container and its algebra.
//!
//! A train of `D = d + 1` cores stores an accumulation of observations: the
//! first `d` modes are spatial and the last mode indexes observations. When the
//! first `d` cores are left-orthonormal (`ortho_count == d`) the last core holds
//! the latent coefficients of every observation, which is what the incremental
//! algorithms rely on.

mod core;
mod ttc;

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use rand_distr::StandardNormal;

pub use self::core::{occupancy, TTCore};
pub use self::ttc::{deserialize, read_ttc, serialize, write_ttc, TTC_MAGIC};

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, svd_trunc_min_rank, thin_qr};
use crate::tensor::DenseTensor;

/// Gram deviation accepted when deciding whether a loaded core is orthonormal.
pub const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrain {
    cores: Vec<TTCore>,
    ortho_count: usize,
    batch_boundaries: Vec<usize>,
}

impl TensorTrain {
    pub fn new(cores: Vec<TTCore>, ortho_count: usize, batch_boundaries: Vec<usize>) -> Result<Self> {
        let tt = Self {
            cores,
            ortho_count,
            batch_boundaries,
        };
        tt.validate()?;
        Ok(tt)
    }

    /// Train with a single batch boundary at the full observation count.
    pub fn single_batch(cores: Vec<TTCore>, ortho_count: usize) -> Result<Self> {
        let obs = cores.last().map(|c| c.n()).unwrap_or(0);
        Self::new(cores, ortho_count, vec![obs])
    }

    pub(crate) fn from_parts_unchecked(
        cores: Vec<TTCore>,
        ortho_count: usize,
        batch_boundaries: Vec<usize>,
    ) -> Self {
        let tt = Self {
            cores,
            ortho_count,
            batch_boundaries,
        };
        debug_assert!(tt.validate().is_ok(), "{:?}", tt.validate());
        tt
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .cores
            .first()
            .ok_or_else(|| Error::Dimension("a train needs at least one core".into()))?;
        if first.r_left() != 1 {
            return Err(Error::Dimension(format!(
                "first core has left rank {}",
                first.r_left()
            )));
        }
        let last = self.cores.last().unwrap();
        if last.r_right() != 1 {
            return Err(Error::Dimension(format!(
                "last core has right rank {}",
                last.r_right()
            )));
        }
        for (i, pair) in self.cores.windows(2).enumerate() {
            if pair[0].r_right() != pair[1].r_left() {
                return Err(Error::Dimension(format!(
                    "core {i} right rank {} != core {} left rank {}",
                    pair[0].r_right(),
                    i + 1,
                    pair[1].r_left()
                )));
            }
        }
        if self.ortho_count >= self.cores.len() {
            return Err(Error::State(format!(
                "ortho_count {} with {} cores",
                self.ortho_count,
                self.cores.len()
            )));
        }
        let obs = last.n();
        if self.batch_boundaries.windows(2).any(|w| w[0] > w[1])
            || self.batch_boundaries.last() != Some(&obs)
        {
            return Err(Error::Dimension(format!(
                "batch boundaries {:?} do not end at observation count {obs}",
                self.batch_boundaries
            )));
        }
        Ok(())
    }

    pub fn cores(&self) -> &[TTCore] {
        &self.cores
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    /// Number of spatial modes `d`.
    pub fn spatial_dims(&self) -> usize {
        self.cores.len() - 1
    }

    pub fn ortho_count(&self) -> usize {
        self.ortho_count
    }

    pub fn is_left_orthonormal(&self) -> bool {
        self.ortho_count == self.spatial_dims()
    }

    pub fn batch_boundaries(&self) -> &[usize] {
        &self.batch_boundaries
    }

    pub fn obs_count(&self) -> usize {
        self.cores.last().unwrap().n()
    }

    /// `r_0 .. r_D`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(1);
        r.extend(self.cores.iter().map(|c| c.r_right()));
        r
    }

    /// `n_1 .. n_D`, including the observation mode.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n()).collect()
    }

    pub fn spatial_shape(&self) -> Vec<usize> {
        self.cores[..self.spatial_dims()].iter().map(|c| c.n()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Last core as an `r_d x obs_count` matrix.
    pub fn coefficients(&self) -> DMatrixView<'_, f64> {
        self.cores.last().unwrap().right_unfolding()
    }

    /// Observation range of increment `k` (0-based).
    pub fn batch_range(&self, k: usize) -> Result<Range<usize>> {
        let end = *self
            .batch_boundaries
            .get(k)
            .ok_or_else(|| Error::Index(format!("no increment {k}")))?;
        let start = if k == 0 { 0 } else { self.batch_boundaries[k - 1] };
        Ok(start..end)
    }

    pub(crate) fn into_parts(self) -> (Vec<TTCore>, usize, Vec<usize>) {
        (self.cores, self.ortho_count, self.batch_boundaries)
    }

    pub(crate) fn with_batch_boundaries(mut self, b: Vec<usize>) -> Result<Self> {
        self.batch_boundaries = b;
        self.validate()?;
        Ok(self)
    }

    /// Largest Gram deviation over the cores claimed orthonormal.
    pub fn orthonormality_error(&self) -> f64 {
        self.cores[..self.ortho_count]
            .iter()
            .map(|c| orthonormality_error(&c.left_unfolding()))
            .fold(0.0, f64::max)
    }

    /// Number of leading cores whose left unfolding is orthonormal within `tol`.
    pub fn count_orthonormal_prefix(cores: &[TTCore], tol: f64) -> usize {
        let d = cores.len().saturating_sub(1);
        cores[..d]
            .iter()
            .take_while(|c| {
                c.r_right() <= c.r_left() * c.n() && orthonormality_error(&c.left_unfolding()) <= tol
            })
            .count()
    }

    /// Dense reconstruction, optionally restricted to a range of observations.
    pub fn reconstruct(&self, obs_range: Option<Range<usize>>) -> Result<DenseTensor> {
        let obs = self.obs_count();
        let range = obs_range.unwrap_or(0..obs);
        if range.start >= range.end || range.end > obs {
            return Err(Error::Index(format!(
                "observation range {range:?} outside 0..{obs}"
            )));
        }
        let c = self.coefficients();
        let cols = c.columns(range.start, range.len()).into_owned();
        self.expand_coefficients(&cols)
    }

    /// Contracts the first `d` cores with an `r_d x m` coefficient matrix,
    /// giving an `n_1 x .. x n_d x m` tensor.
    pub fn expand_coefficients(&self, coeffs: &DMatrix<f64>) -> Result<DenseTensor> {
        let d = self.spatial_dims();
        let r_d = self.cores[d].r_left();
        if coeffs.nrows() != r_d {
            return Err(Error::Dimension(format!(
                "coefficients have {} rows, train rank r_d = {r_d}",
                coeffs.nrows()
            )));
        }
        let m = coeffs.ncols();
        let mut acc = coeffs.clone();
        let mut trailing = m;
        for core in self.cores[..d].iter().rev() {
            // (r_l n) x r_r  *  r_r x trailing  ->  r_l x (n trailing)
            let prod = core.left_unfolding() * &acc;
            trailing *= core.n();
            acc = prod.reshape_generic(nalgebra::Dyn(core.r_left()), nalgebra::Dyn(trailing));
        }
        let mut shape = self.spatial_shape();
        shape.push(m);
        DenseTensor::from_matrix(shape, acc)
    }

    /// Latent coefficients `r_d x n_obs` of `y` in the span of the first `d`
    /// cores. `y` is either `n_1 x .. x n_d x n_obs` or a single observation
    /// `n_1 x .. x n_d`.
    pub fn project(&self, y: &DenseTensor) -> Result<DMatrix<f64>> {
        if !self.is_left_orthonormal() {
            return Err(Error::State(format!(
                "projection needs {} orthonormal cores, train has {}",
                self.spatial_dims(),
                self.ortho_count
            )));
        }
        self.check_batch_shape(y)?;
        project_onto(&self.cores[..self.spatial_dims()], y)
    }

    /// Checks `y` against the spatial shape; returns its observation count.
    pub fn check_batch_shape(&self, y: &DenseTensor) -> Result<usize> {
        let spatial = self.spatial_shape();
        let shape = y.shape();
        if shape == spatial.as_slice() {
            return Ok(1);
        }
        if shape.len() == spatial.len() + 1 && shape[..spatial.len()] == spatial[..] {
            return Ok(shape[spatial.len()]);
        }
        Err(Error::Dimension(format!(
            "data shape {shape:?} does not match spatial shape {spatial:?}"
        )))
    }

    /// Left-to-right QR sweep without truncation; the result has every core but
    /// the last left-orthonormal and represents the same tensor.
    pub fn left_orthogonalize(&self) -> TensorTrain {
        let mut cores = Vec::with_capacity(self.cores.len());
        let mut carry = DMatrix::<f64>::identity(1, 1);
        let last = self.cores.len() - 1;
        for (k, core) in self.cores.iter().enumerate() {
            let merged = &carry * core.right_unfolding();
            let r_l = carry.nrows();
            if k == last {
                cores.push(TTCore::from_matrix(r_l, core.n(), 1, merged).expect("shape"));
                break;
            }
            let unf = merged.reshape_generic(nalgebra::Dyn(r_l * core.n()), nalgebra::Dyn(core.r_right()));
            let (q, r) = thin_qr(unf);
            let rank = q.ncols();
            cores.push(TTCore::from_matrix(r_l, core.n(), rank, q).expect("shape"));
            carry = r;
        }
        TensorTrain::from_parts_unchecked(cores, last, self.batch_boundaries.clone())
    }
}

/// Sequential projection of `y` onto left-orthonormal `spatial` cores; the
/// result has one column per observation.
pub(crate) fn project_onto(spatial: &[TTCore], y: &DenseTensor) -> Result<DMatrix<f64>> {
    let mut rest = y.len();
    let mut acc = y.as_matrix(1, rest)?.into_owned();
    for core in spatial {
        rest /= core.n();
        let z = acc.reshape_generic(nalgebra::Dyn(core.r_left() * core.n()), nalgebra::Dyn(rest));
        acc = core.left_unfolding().tr_mul(&z);
    }
    Ok(acc)
}

/// Frobenius norm of the represented tensor without densifying.
pub fn tt_norm(tt: &TensorTrain) -> f64 {
    if tt.is_left_orthonormal() {
        tt.cores.last().unwrap().frobenius_norm()
    } else {
        tt.left_orthogonalize().cores.last().unwrap().frobenius_norm()
    }
}

/// Sum of two trains with equal mode sizes, by block concatenation of slices.
pub fn tt_add(a: &TensorTrain, b: &TensorTrain) -> Result<TensorTrain> {
    if a.mode_sizes() != b.mode_sizes() {
        return Err(Error::Dimension(format!(
            "adding trains with mode sizes {:?} and {:?}",
            a.mode_sizes(),
            b.mode_sizes()
        )));
    }
    let last = a.cores.len() - 1;
    let mut cores = Vec::with_capacity(a.cores.len());
    for (k, (ga, gb)) in a.cores.iter().zip(&b.cores).enumerate() {
        let rl = if k == 0 { 1 } else { ga.r_left() + gb.r_left() };
        let rr = if k == last { 1 } else { ga.r_right() + gb.r_right() };
        let n = ga.n();
        let mut out = TTCore::zeros(rl, n, rr)?;
        let off_l = if k == 0 { 0 } else { ga.r_left() };
        let off_r = if k == last { 0 } else { ga.r_right() };
        let buf = out.data_mut();
        for (src, ol, or) in [(ga, 0, 0), (gb, off_l, off_r)] {
            for bb in 0..src.r_right() {
                for j in 0..n {
                    for aa in 0..src.r_left() {
                        buf[(aa + ol) + rl * (j + n * (bb + or))] += src.get(aa, j, bb);
                    }
                }
            }
        }
        cores.push(out);
    }
    Ok(TensorTrain::from_parts_unchecked(
        cores,
        0,
        a.batch_boundaries.clone(),
    ))
}

/// Reorthogonalizes and recompresses `tt` to relative accuracy `eps`.
///
/// Right-to-left QR sweep, then a left-to-right truncated-SVD sweep with
/// per-step tolerance `eps / sqrt(D - 1) * ||tt||`.
pub fn tt_round(tt: &TensorTrain, eps: f64) -> Result<TensorTrain> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Numeric(format!("invalid rounding tolerance {eps}")));
    }
    let n_cores = tt.cores.len();
    if n_cores == 1 {
        return Ok(TensorTrain::from_parts_unchecked(
            tt.cores.clone(),
            0,
            tt.batch_boundaries.clone(),
        ));
    }

    let mut cores = tt.cores.clone();
    for k in (1..n_cores).rev() {
        let core = &cores[k];
        let (n, rr) = (core.n(), core.r_right());
        // M = R^T Q^T with M = core as r_l x (n r_r)
        let (q, r) = thin_qr(core.right_unfolding().transpose());
        let p = q.ncols();
        cores[k] = TTCore::from_matrix(p, n, rr, q.transpose())?;
        let prev = &cores[k - 1];
        let merged = prev.left_unfolding() * r.transpose();
        cores[k - 1] = TTCore::from_matrix(prev.r_left(), prev.n(), p, merged)?;
    }

    let norm = cores[0].frobenius_norm();
    let delta = eps / ((n_cores - 1) as f64).sqrt() * norm;
    for k in 0..n_cores - 1 {
        let core = &cores[k];
        let (rl, n) = (core.r_left(), core.n());
        let svd = svd_trunc_min_rank(core.left_unfolding(), delta, 1)?;
        let rank = svd.rank();
        let sv = svd.sv();
        cores[k] = TTCore::from_matrix(rl, n, rank, svd.u)?;
        let next = &cores[k + 1];
        let merged = sv * next.right_unfolding();
        cores[k + 1] = TTCore::from_matrix(rank, next.n(), next.r_right(), merged)?;
    }
    Ok(TensorTrain::from_parts_unchecked(
        cores,
        n_cores - 1,
        tt.batch_boundaries.clone(),
    ))
}

/// Train with i.i.d. standard normal core entries and the given ranks
/// `r_0 .. r_D` (`r_0 = r_D = 1`).
pub fn random_train<R: Rng + ?Sized>(
    mode_sizes: &[usize],
    ranks: &[usize],
    rng: &mut R,
) -> Result<TensorTrain> {
    if ranks.len() != mode_sizes.len() + 1 || ranks[0] != 1 || ranks[ranks.len() - 1] != 1 {
        return Err(Error::Dimension(format!(
            "ranks {ranks:?} do not fit {} modes",
            mode_sizes.len()
        )));
    }
    let cores = mode_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let len = ranks[k] * n * ranks[k + 1];
            let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            TTCore::new(ranks[k], n, ranks[k + 1], data)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorTrain::single_batch(cores, 0)
}
