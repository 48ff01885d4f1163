//! The ITTD baseline: TT-SVD each increment on its own, zero-pad the last
//! cores so old and new observations occupy disjoint columns, add the two
//! trains, and round every `k` increments.

use crate::cputime::Stopwatch;
use crate::error::{Error, Result};
use crate::ice::UpdateReport;
use crate::stream::StreamIncrement;
use crate::tt::{tt_add, tt_round, TTCore, TensorTrain};
use crate::tt_svd::tt_svd;

#[derive(Debug, Clone, PartialEq)]
pub struct IttdState {
    /// `None` until the first increment arrives.
    pub accumulation: Option<TensorTrain>,
    pub increments_since_round: usize,
    /// Round after every `k`-th update; `None` never rounds.
    pub round_every_k: Option<usize>,
    pub eps: f64,
    /// Refuse to round once the working set would exceed this many bytes.
    pub memory_limit_bytes: Option<usize>,
}

impl IttdState {
    pub fn new(eps: f64, round_every_k: Option<usize>) -> Result<Self> {
        if !(eps.is_finite() && (0.0..=1.0).contains(&eps)) {
            return Err(Error::Argument(format!("eps {eps} outside [0, 1]")));
        }
        if round_every_k == Some(0) {
            return Err(Error::Argument("round-every-k must be positive".into()));
        }
        Ok(Self {
            accumulation: None,
            increments_since_round: 0,
            round_every_k,
            eps,
            memory_limit_bytes: None,
        })
    }

    pub fn with_memory_limit(mut self, bytes: Option<usize>) -> Self {
        self.memory_limit_bytes = bytes;
        self
    }
}

/// Widens the last core to `total` columns with the existing columns at `offset`.
fn widen_last(tt: TensorTrain, offset: usize, total: usize) -> Result<TensorTrain> {
    let (mut cores, _, _) = tt.into_parts();
    let last = cores.pop().expect("train has a last core");
    let r = last.r_left();
    let mut data = vec![0.0; r * total];
    data[r * offset..r * (offset + last.n())].copy_from_slice(last.data());
    cores.push(TTCore::new(r, total, 1, data)?);
    Ok(TensorTrain::from_parts_unchecked(cores, 0, vec![total]))
}

/// Bytes held while rounding: the train plus QR/SVD workspace for the largest core.
fn rounding_footprint(tt: &TensorTrain) -> usize {
    let largest = tt.cores().iter().map(TTCore::len).max().unwrap_or(0);
    8 * (tt.param_count() + 3 * largest)
}

pub fn ittd_update(state: IttdState, y: &StreamIncrement) -> Result<(IttdState, UpdateReport)> {
    let clock = Stopwatch::start();
    let m = y.n_obs();
    let fresh = tt_svd(&y.tensor, state.eps)?;
    let IttdState {
        accumulation,
        increments_since_round,
        round_every_k,
        eps,
        memory_limit_bytes,
    } = state;

    let (ranks_before, summed) = match accumulation {
        None => (Vec::new(), fresh),
        Some(acc) => {
            if acc.spatial_shape() != y.spatial_shape() {
                return Err(Error::Dimension(format!(
                    "increment spatial shape {:?} differs from train {:?}",
                    y.spatial_shape(),
                    acc.spatial_shape()
                )));
            }
            let before = acc.ranks();
            let n = acc.obs_count();
            let mut boundaries = acc.batch_boundaries().to_vec();
            boundaries.push(n + m);
            let a = widen_last(acc, 0, n + m)?;
            let b = widen_last(fresh, n, n + m)?;
            (before, tt_add(&a, &b)?.with_batch_boundaries(boundaries)?)
        }
    };

    let mut counter = increments_since_round + 1;
    let mut out = summed;
    if round_every_k.is_some_and(|k| counter >= k) {
        let need = rounding_footprint(&out);
        if let Some(limit) = memory_limit_bytes.filter(|&l| need > l) {
            return Err(Error::Resource {
                message: format!("rounding needs about {need} bytes, limit is {limit}"),
                ranks: out.ranks(),
            });
        }
        out = tt_round(&out, eps)?;
        counter = 0;
    }

    let (wall_time, cpu_seconds) = clock.stop();
    let report = UpdateReport {
        increment_index: y.increment_index,
        obs_in_batch: m,
        obs_used: m,
        ranks_before,
        ranks_after: out.ranks(),
        eps_target: eps,
        eps_upd: None,
        batch_rel_error_estimate: eps,
        skipped: false,
        occupied_modes: Vec::new(),
        wall_time,
        cpu_seconds,
    };
    let state = IttdState {
        accumulation: Some(out),
        increments_since_round: counter,
        round_every_k,
        eps,
        memory_limit_bytes,
    };
    Ok((state, report))
}
