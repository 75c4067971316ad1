//! EM for balanced two-component Gaussian mixtures with known covariance.
//!
//! The mixture is `½·N(μ₁, Σ) + ½·N(μ₂, Σ)`. After centering at `(μ₁+μ₂)/2`
//! the EM iteration collapses to the single operator
//! `M(λ, μ) = E_{x~N(μ,Σ)}[tanh(⟨λ, x⟩_Σ)·x]`.
//!
//! * [`geometry`]: Mahalanobis inner products and whitening.
//! * [`quadrature`]: expectations under the standard normal weight.
//! * [`population`]: the exact (population) operator, its contraction
//!   certificates and trajectories.
//! * [`sampling`]: seeded mixture draws, stabilization and the Monte-Carlo oracle.
//! * [`finite`]: the finite-sample estimator (centering, bootstrap
//!   initialization, stabilized sample EM).
//! * [`experiments`]: the ten-step table, the update vector field and the
//!   error-vs-n scaling study.
//!
//! The crate is `no_std` (with `alloc`); IO lives in the `em2gauss` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod experiments;
pub mod finite;
pub mod geometry;
pub mod population;
pub mod quadrature;
pub mod sampling;
mod stats;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use geometry::CovarianceModel;
pub use nalgebra::{DMatrix, DVector};
pub use population::{Iterate, MixtureSpec, RateCertificate, Trajectory};
pub use quadrature::Quadrature;
pub use sampling::SampleBatch;
