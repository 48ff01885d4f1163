//! Batch TT-SVD.

use nalgebra::Dyn;

use crate::error::{Error, Result};
use crate::linalg::svd_trunc_min_rank;
use crate::tensor::DenseTensor;
use crate::tt::{TTCore, TensorTrain};

/// Compresses `y` into a train with `||y - y_hat||_F <= eps_rel * ||y||_F`.
///
/// Each of the `D - 1` sequential SVDs truncates at
/// `eps_rel / sqrt(D - 1) * ||y||_F`. Ranks never drop below 1; an all-zero
/// input yields unit-vector cores and zero coefficients. The first `D - 1`
/// cores are left-orthonormal.
pub fn tt_svd(y: &DenseTensor, eps_rel: f64) -> Result<TensorTrain> {
    if !(0.0..=1.0).contains(&eps_rel) {
        return Err(Error::Argument(format!(
            "relative tolerance {eps_rel} outside [0, 1]"
        )));
    }
    let shape = y.shape();
    let n_modes = shape.len();
    if n_modes == 0 {
        return Err(Error::Dimension("TT-SVD of a 0-way tensor".into()));
    }
    if n_modes == 1 {
        let core = TTCore::new(1, shape[0], 1, y.data().to_vec())?;
        return TensorTrain::single_batch(vec![core], 0);
    }

    let delta = eps_rel / ((n_modes - 1) as f64).sqrt() * y.frobenius_norm();
    let mut cores = Vec::with_capacity(n_modes);
    let mut rest = y.len();
    let mut r_prev = 1;
    let mut carry = y.as_matrix(1, rest)?.into_owned();
    for &n in &shape[..n_modes - 1] {
        rest /= n;
        let unf = carry.reshape_generic(Dyn(r_prev * n), Dyn(rest));
        let svd = svd_trunc_min_rank(unf.as_view(), delta, 1)?;
        let r = svd.rank();
        carry = svd.sv();
        cores.push(TTCore::from_matrix(r_prev, n, r, svd.u)?);
        r_prev = r;
    }
    cores.push(TTCore::from_matrix(r_prev, shape[n_modes - 1], 1, carry)?);
    TensorTrain::single_batch(cores, n_modes - 1)
}
