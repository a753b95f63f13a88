//! Hermite-Fourier laboratory for the diffusively scaled Vlasov-Poisson-Boltzmann
//! fluctuation system, its hypocoercive energy functionals, the spectral structure
//! of the linearized generator and the incompressible Navier-Stokes-Fourier-Poisson
//! (NSFP) limit.
//!
//! Velocity space is three dimensional and discretized with normalized
//! probabilists' Hermite functions; physical space is a `d`-dimensional
//! 2π-periodic torus (`d` is 1 or 2) discretized with Fourier modes.

pub mod collision;
pub mod error;
pub mod hermite;
pub mod hypocoercivity;
pub mod io;
pub mod limit;
pub mod linalg;
pub mod nsfp;
pub mod spectral;
pub mod torus;
pub mod uq;
pub mod vpb;

pub use error::{Error, Result};
pub use num_complex::Complex64;
