//! Compression ratio and relative reconstruction / prediction errors.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stream::StreamIncrement;
use crate::tensor::{sum_of_squares, DenseTensor};
use crate::tt::TensorTrain;

/// Elements of the full tensor over stored parameters.
pub fn compression_ratio(tt: &TensorTrain) -> f64 {
    let elements: f64 = tt.mode_sizes().iter().map(|&n| n as f64).product();
    elements / tt.param_count() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeError {
    pub value: f64,
    /// The reference had zero norm; `value` is then 0.
    pub zero_reference: bool,
}

fn relative_error(reference: &[f64], approx: &[f64]) -> RelativeError {
    let diff: f64 = reference.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm = sum_of_squares(reference);
    if norm > 0.0 {
        RelativeError {
            value: (diff / norm).sqrt(),
            zero_reference: false,
        }
    } else {
        RelativeError {
            value: 0.0,
            zero_reference: true,
        }
    }
}

/// `||x_ref - reconstruct(tt, range)|| / ||x_ref||`.
pub fn rre(tt: &TensorTrain, x_ref: &DenseTensor, obs_range: Option<Range<usize>>) -> Result<RelativeError> {
    let approx = tt.reconstruct(obs_range)?;
    if approx.shape() != x_ref.shape() {
        return Err(Error::Dimension(format!(
            "reference shape {:?} differs from reconstruction {:?}",
            x_ref.shape(),
            approx.shape()
        )));
    }
    Ok(relative_error(x_ref.data(), approx.data()))
}

/// Relative error of projecting `unseen` onto the spatial cores and expanding back.
pub fn rpe(tt: &TensorTrain, unseen: &StreamIncrement) -> Result<RelativeError> {
    let coeffs = tt.project(&unseen.tensor)?;
    let approx = tt.expand_coefficients(&coeffs)?;
    Ok(relative_error(unseen.tensor.data(), approx.data()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementErrors {
    pub per_increment: Vec<RelativeError>,
    /// Arithmetic mean of the per-increment values.
    pub mean: f64,
    /// Error of all increments taken together.
    pub pooled: f64,
}

/// RRE of each stored increment against its reference.
pub fn mean_rre_per_increment(tt: &TensorTrain, refs: &[DenseTensor]) -> Result<IncrementErrors> {
    let batches = tt.batch_boundaries().len();
    if refs.len() != batches {
        return Err(Error::Dimension(format!(
            "{} references for {batches} stored increments",
            refs.len()
        )));
    }
    let mut per_increment = Vec::with_capacity(batches);
    let (mut diff, mut norm) = (0.0, 0.0);
    for (k, x) in refs.iter().enumerate() {
        let range = tt.batch_range(k)?;
        let approx = tt.reconstruct(Some(range))?;
        if approx.shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "reference {k} has shape {:?}, increment holds {:?}",
                x.shape(),
                approx.shape()
            )));
        }
        let e = relative_error(x.data(), approx.data());
        let n2 = sum_of_squares(x.data());
        diff += e.value * e.value * n2;
        norm += n2;
        per_increment.push(e);
    }
    let mean = if batches > 0 {
        per_increment.iter().map(|e| e.value).sum::<f64>() / batches as f64
    } else {
        0.0
    };
    let pooled = if norm > 0.0 { (diff / norm).sqrt() } else { 0.0 };
    Ok(IncrementErrors {
        per_increment,
        mean,
        pooled,
    })
}
