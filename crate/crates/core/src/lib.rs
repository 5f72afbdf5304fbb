//! Polarized radiative transfer in media with a spatially varying refractive
//! index.
//!
//! The unknown is a field of 2×2 Hermitian coherence matrices over phase
//! space `(x, k)`. Transport follows the rays of `H(x, k) = ν(x)|k|`; the
//! local physics is a polarization rotation, direction-changing scattering and
//! absorption. Every step is checked against the invariants it should
//! preserve.

pub mod algebra;
pub mod config;
pub mod diagnostics;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod operators;
pub mod quadrature;
pub mod solver;
pub mod verify;

pub use algebra::{CoherenceMatrix, GeneralMatrix2, SchattenOrder};
pub use flow::{FlowConfig, PhasePoint, Vec3, VelocityField};
pub use geometry::{MomentumGrid, PhaseGrid, SpatialDomain};
pub use solver::{Scenario, SimulationState, Solver, SolverConfig, SolverError};
