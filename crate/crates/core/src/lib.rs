//! Simulation toolkit for dissipative XYZ Heisenberg spin-1/2 lattices.
//!
//! Spins on a chain or rectangular lattice interact through an anisotropic
//! Heisenberg coupling and relax towards spin-down at rate γ. The crate
//! provides:
//!
//! - [`lattice`]: periodic chains and rectangles with nearest-neighbor bonds;
//! - [`operators`]: Pauli strings, the XYZ Hamiltonian, the effective
//!   non-Hermitian Hamiltonian and the Z₂ rotation;
//! - [`liouville`]: the vectorized Lindblad generator, its spectrum, gap and
//!   steady state;
//! - [`integrate`]: fourth-order Runge-Kutta evolution of the density matrix;
//! - [`trajectories`]: quantum-jump and homodyne unravelings and ensembles;
//! - [`analysis`]: exponential decay fits, magnetization histograms and the
//!   bimodality coefficient.

pub mod analysis;
pub mod error;
pub mod integrate;
pub mod lattice;
pub mod liouville;
pub mod operators;
pub mod state;
pub mod trajectories;

pub use error::{Error, Result};
pub use integrate::{EvolveSettings, Observable, TimeSeries};
pub use lattice::{BondMultiplicity, LatticeGeometry};
pub use operators::{Axis, Couplings, PauliString, SparseOperator, C64};
pub use state::{DensityMatrix, Direction, PureState};
