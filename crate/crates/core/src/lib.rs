//! Streaming tensor-train compression.
//!
//! A stream of `d`-way observations is compressed into one tensor train whose
//! last core stores a latent coefficient column per observation. New increments
//! are folded in by expanding the existing orthonormal cores with the directions
//! the current basis misses (`ice`), optionally with cost-saving heuristics
//! (`ice_star`). Each increment is reconstructed within a user-chosen relative
//! error, and earlier increments are never disturbed.
//!
//! Also included: batch TT-SVD, TT addition and rounding, the ITTD baseline,
//! evaluation metrics, a binary batch format with synthetic stream generators,
//! and the pipeline driving the `ttice` command-line tool.

mod cputime;
pub mod error;
pub mod ice;
pub mod ice_star;
pub mod ittd;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod stream;
pub mod tensor;
pub mod tt;
pub mod tt_svd;

pub use error::{Error, Result};
pub use ice::{tt_ice_update, tt_ice_update_with, IceTolerance, UpdateReport};
pub use ice_star::{tt_ice_star_update, HeuristicConfig, SkipStatistic};
pub use ittd::{ittd_update, IttdState};
pub use stream::StreamIncrement;
pub use tensor::DenseTensor;
pub use tt::{TTCore, TensorTrain};
pub use tt_svd::tt_svd;
