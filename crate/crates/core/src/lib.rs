//! Lattice simulator of stochastic semiclassical Newtonian gravity sourced by
//! continuously monitored (spontaneously localised) matter.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod gravity;
pub mod jobs;
pub mod kernels;
pub mod lattice;
pub mod presets;
pub mod spectral;
pub mod wire;

pub use error::{EngineError, KernelError, LatticeError, ModelError, SimError};
pub use lattice::{
    ConfigSpace, DensityMatrix, DiagonalField, Hamiltonian, LaplacianSymbol, LatticeGrid, Particle, ParticleSet,
    StateVector, C64,
};
