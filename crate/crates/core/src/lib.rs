//! Linearized phonon transport in diffusive scaling: discretization, kinetic
//! solver, closed-form ballistic part and the measurement/inversion harness
//! for the interface reflection coefficient.

pub mod ballistic;
pub mod experiments;
pub mod grid;
pub mod material;
pub mod measurement;
pub mod quadrature;
pub mod reflection;
pub mod solver;
pub mod source;
pub mod stats;
pub mod studies;

pub use grid::{GridSpec, PhaseSpaceGrid};
pub use material::MaterialModel;
pub use reflection::ReflectionModel;
pub use solver::{solve, SolveOutput, SolverConfig};
pub use source::SourceSpec;
