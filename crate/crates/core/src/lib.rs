//! Laplace-Gaussian filtering for state-space models with linear-Gaussian
//! dynamics and arbitrary log-concave observation densities.
//!
//! The crate provides the filter at first and second order ([`filter`]), the
//! Laplace machinery it is built on ([`laplace`]), a bootstrap particle filter
//! baseline ([`pf`]), a Poisson population model for neural decoding
//! ([`neural`]) and a seeded experiment harness ([`harness`]).

pub mod error;
pub mod filter;
pub mod harness;
pub mod io;
pub mod laplace;
pub mod linalg;
pub mod model;
pub mod neural;
pub mod pf;
pub mod rng;

pub use nalgebra;

pub use error::{Error, Result};
pub use filter::{lgf_filter, lgf_smooth, lgf_step, FilterOutput, LgfConfig, SmoothOutput};
pub use laplace::LaplaceOrder;
pub use model::{GaussianBelief, LinearGaussianTransition, ObservationModel, StateSpaceModel, Trajectory};
pub use neural::PoissonPopulation;
