//! Numerical multiplicative ergodic theory.
//!
//! Lyapunov spectra and Oseledets data of matrix cocycles, geometry of the
//! symmetric space of SPD matrices, horofunctions and drift of isometry
//! cocycles, and geodesic tracking in CAT(0) spaces.

pub mod cat0;
pub mod cocycle;
pub mod dynsys;
pub mod error;
pub mod horofunctions;
pub mod linalg;
pub mod oseledets;
pub mod symspace;

pub use error::{Error, Result};
