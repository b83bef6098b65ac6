//! Sparse signal recovery with VAMP / expectation-consistent message passing,
//! stabilized by damping, fractional updates and precision clipping.
//!
//! The estimation code is generic over [`Real`] (`f32`, `f64`); the
//! experiment harness and CLI work in `f64`.

pub mod cli;
pub mod denoise;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod linear;
pub mod quadrature;
pub mod scalar;
pub mod solver;

pub use denoise::{denoise, denoise_numeric, BernoulliGaussPrior, TiltedMoments};
pub use error::{Error, Result};
pub use gaussian::{ClipBounds, Interval, MomentParams, NaturalParams, PrecisionKind};
pub use linear::{lmmse_fractional, ChannelModel, LinearEstimate};
pub use scalar::Real;
pub use solver::{
    initialize, run, step, ClipPlacement, DampingCase, IterateHistory, RunOutcome, SolverConfig,
    SolverState, VarianceMode,
};

pub type NaturalParamsF64 = NaturalParams<f64>;
pub type MomentParamsF64 = MomentParams<f64>;
pub type ClipBoundsF64 = ClipBounds<f64>;
pub type BernoulliGaussPriorF64 = BernoulliGaussPrior<f64>;
pub type ChannelModelF64 = ChannelModel<f64>;
pub type SolverConfigF64 = SolverConfig<f64>;
pub type SolverStateF64 = SolverState<f64>;
pub type IterateHistoryF64 = IterateHistory<f64>;

pub type NaturalParamsF32 = NaturalParams<f32>;
pub type ChannelModelF32 = ChannelModel<f32>;
pub type SolverConfigF32 = SolverConfig<f32>;
