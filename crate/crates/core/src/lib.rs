//! Continuation toolkit for the mean field equation
//! `-Δψ = e^{λψ} / ∫_Ω e^{λψ}` with `ψ = 0` on `∂Ω`, on the disk and on
//! rectangles: Newton and pseudo-arclength continuation of the solution
//! branch, the mean-constrained linearized spectrum, second-variation checks
//! on the energy-constrained subspace, and the microcanonical entropy curve.

pub mod error;
pub mod mesh;
pub mod meanfield;
pub mod spectral;
pub mod continuation;
pub mod thermo;
pub mod cli;

pub(crate) mod linalg;

pub use error::{Error, Result};
pub use mesh::{build_mesh, build_polar_mesh, mean_green_energy, DomainSpec, Field, Mesh};
pub use meanfield::{newton_solve, Solution, WeightedGeometry};
