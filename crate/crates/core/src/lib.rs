//! Capacity quantities of MIMO optical intensity channels with per-antenna
//! peak and average intensity constraints.
//!
//! The input `X` of an `n_r × n_t` channel `Y = H X + Z` is confined to the
//! unit cube, and its per-antenna mean is either pinned to a profile `α`
//! (equal cost, EC) or bounded by it (bounded cost, BC). The crate provides:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`channel`] | validation, SVD reduction to a full-row-rank model, ε-rank |
//! | [`zonotope`] | parallelepiped tiling of the admissible region, fiber bounds |
//! | [`maxent`] | moment-constrained maximum-entropy duals, `γ_E`, `γ_B`, signaling |
//! | [`rank_one`] | rank-one reduction to a scalar channel with stop-loss constraints |
//! | [`low_snr`] | maximum output-covariance trace, BC allocation, ladder heuristic |
//! | [`scenarios`] | indoor Lambertian and lognormal channel ensembles |
//! | [`io`] | channel files (JSON/CSV) and table output |
//!
//! All entropies are in nats.

pub mod channel;
pub mod io;
pub mod low_snr;
pub mod maxent;
pub mod rank_one;
pub mod scenarios;
pub mod zonotope;

use thiserror::Error;

pub use channel::{ChannelMatrix, IntensityProfile, NoiseLevel, ReducedChannel};
pub use maxent::{MaxEntSolution, MomentSpec, QuadratureConfig, SolveStatus};
pub use zonotope::{Fiber, ZonotopeDecomposition};

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("negative gain {value} at ({row}, {col})")]
    NegativeGain { row: usize, col: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("alpha[{index}] = {value} is outside [0, 1]")]
    AlphaOutOfRange { index: usize, value: f64 },

    #[error("channel matrix is identically zero")]
    ZeroChannel,

    #[error("ambiguous sign convention: 1ᵀv₁ = {0:e}")]
    AmbiguousSign(f64),

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("point is outside the admissible region")]
    OutsideRegion,

    #[error("lambda = {lambda} outside fiber interval [{lo}, {hi}]")]
    LambdaOutOfRange { lambda: f64, lo: f64, hi: f64 },

    #[error("alpha must be sorted in non-increasing order")]
    Unsorted,

    #[error("n_t = {n_t} exceeds the supported maximum of {max}")]
    TooManyTransmitters { n_t: usize, max: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
