//! Geodesics on step-two Carnot groups via the end-point map of horizontal
//! loops.
//!
//! A structure is a list of linearly independent skew-symmetric matrices
//! `A_1..A_l` on `R^d`.  The crate computes the canonical form of `omega A`
//! for covectors `omega`, evaluates the end-point map on Fourier-truncated
//! controls, enumerates the critical manifolds of the energy restricted to a
//! vertical fiber, and estimates Betti numbers of sublevel sets of the
//! energy through index profiles of quadric pencils.

pub mod census;
pub mod coarea;
pub mod endpoint;
pub mod error;
pub mod io;
pub mod operator;
pub mod par;
pub mod sampling;
pub mod structure;
pub mod topology;

pub use error::CarnotError;
pub use structure::{CarnotStructure, Covector, GenericityReport, SkewSpectrum, VerticalPoint};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CarnotError>;
