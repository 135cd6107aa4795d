//! Identification of partially observed bilinear dynamical systems
//!
//! ```text
//! x_{t+1} = (A_0 + sum_k u_{t,k} A_k) x_t + B u_t + w_t
//! y_t     = C x_t + D u_t + z_t
//! ```
//!
//! from a single input/output trajectory. Outputs are regressed on Kronecker
//! products of past inputs ([`features`]) by minimum-norm least squares
//! ([`estimate`]); the fitted Markov-like parameters are turned back into a
//! state-space realization with Ho-Kalman ([`recover`]).
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below fix the scalar.

// `!(x >= 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod recover;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod stability;

pub use error::{Error, Result};
pub use estimate::{fit_markov, lse, GramReport, LseFit, MarkovParams};
pub use features::{FeatureConfig, MultiIndex};
pub use model::{random_system, Dims, SystemParams};
pub use recover::{ho_kalman, true_markov, Realization};
pub use scalar::Real;
pub use simulate::{generate_trajectory, simulate, InputDistribution, NoiseConfig, Trajectory};
pub use stability::{JsrEstimate, StabilityReport};

pub use faer::Mat;

pub type SystemParamsF64 = SystemParams<f64>;
pub type SystemParamsF32 = SystemParams<f32>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type TrajectoryF32 = Trajectory<f32>;
pub type MarkovParamsF64 = MarkovParams<f64>;
pub type MarkovParamsF32 = MarkovParams<f32>;
pub type RealizationF64 = Realization<f64>;
pub type RealizationF32 = Realization<f32>;
