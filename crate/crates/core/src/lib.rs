//! Singular quadrature for layer potentials on doubly-periodic toroidal
//! surfaces.
//!
//! The crate provides two on-surface quadrature schemes for Laplace layer
//! potentials and the Biot-Savart-like virtual-casing kernel:
//!
//! * [`quad_merkel`]: the classical low-order (second order) singularity
//!   subtraction built on the first fundamental form.
//! * [`quad_pou`]: a partition-of-unity split into a globally smooth part
//!   (trapezoidal rule) and a compactly supported singular part evaluated in
//!   local polar coordinates with Lagrange interpolation of the density.
//!
//! On top of these sit a matrix-free GMRES solver for the exterior Neumann
//! problem ([`solver`]) and the virtual-casing pipelines ([`physics`]).

pub mod error;
pub mod experiments;
pub mod geom;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod oracle;
pub mod physics;
pub mod quad_merkel;
pub mod quad_pou;
pub mod solver;
pub mod vec3;

mod farfield;
mod par;
mod simd;

pub use error::{Error, Result};
pub use par::set_threads;
pub use geom::{BuiltinSurface, FourierMode, FourierSurface, SurfaceGrid};
pub use grid::{Axis, GridFunction, QuadRule1D};
pub use kernels::CurrentLoop;
pub use quad_pou::{CutoffShape, EtaRule, LayerKernel, PouConfig};
pub use solver::{GmresConfig, SolveReport};
