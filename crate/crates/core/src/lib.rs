//! Turbo message passing for joint activity detection and channel estimation
//! (JADCE) in grant-free MIMO-OFDM random access.
//!
//! The crate is generic over the real scalar type (`f32` or `f64`, see
//! [`Real`]); the `*64` aliases below fix it to `f64`, which the harness and
//! the CLI use.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops follow the (k, n, m) tensor notation
#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod config;
pub mod denoise;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod pilot;
pub mod scalar;

pub use channel::{ChannelKind, ChannelParams, PathSet, PowerProfile};
pub use config::RunConfig;
pub use denoise::{ChannelDenoiser, DenoiserOutput, GaussianScore, GmComponent, GmScore, ScoreDenoiser, ScoreModel};
pub use engine::{EngineOutput, IterationTrace, Problem, RunOptions};
pub use error::{Error, Result};
pub use model::{
    ActivityPosterior, ChannelRealization, DenoiserKind, Dims, EngineConfig, GaussianMessageSet, SystemConfig,
};
pub use pilot::PilotOperator;
pub use scalar::Real;

pub type C64 = num_complex::Complex<f64>;
pub type PilotOperator64 = PilotOperator<f64>;
pub type GaussianMessageSet64 = GaussianMessageSet<f64>;
pub type ChannelRealization64 = ChannelRealization<f64>;
pub type GaussianScore64 = GaussianScore<f64>;
pub type GmScore64 = GmScore<f64>;
pub type EngineOutput64 = EngineOutput<f64>;
