//! Theta-functional solutions of the multi-component nonlinear Schrödinger
//! and Davey–Stewartson equations on real Riemann surfaces, with Fay-identity
//! and spectral residual certificates.

pub mod cli;
pub mod error;
pub mod fay;
pub mod hyperelliptic;
pub mod quadrature;
pub mod solutions;
pub mod theta;
pub mod vinnikov;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CVec = nalgebra::DVector<C64>;
pub type CMat = nalgebra::DMatrix<C64>;

pub(crate) const I: C64 = C64::new(0.0, 1.0);
pub(crate) const TWO_PI_I: C64 = C64::new(0.0, 2.0 * std::f64::consts::PI);
