//! Numerical laboratory for phase-field energies with two periodic microscales `η ≪ δ ≪ ε`.
//!
//! The pieces, from the bottom up:
//!
//! * [`potential`]: two-scale double-well potentials `W(y1, y2, z)`, their cell average `W^h`,
//!   truncation and sampled hypothesis checks.
//! * [`grid`]: cell-centred fields on boxes and their binary file format.
//! * [`unfolding`]: first and second unfolding operators, integral identities, defect norms.
//! * [`cell_problem`]: the relaxed cell potential `W^ξ` via alternating projected gradients.
//! * [`geodesic`]: surface tensions as geodesic energies in the metric `2√W |γ'|`.
//! * [`profile`]: optimal transition profiles, signed distances, recovery fields, mass repair.
//! * [`energy`]: the discrete functional, its gradient, perimeters and minimization.
//! * [`harness`]: scale schedules, configs, experiment reports and plots.

pub mod cell_problem;
pub mod energy;
pub mod error;
pub mod geodesic;
pub mod grid;
pub mod harness;
pub mod lattice;
pub mod numeric;
pub mod potential;
pub mod profile;
pub mod unfolding;

pub use error::{Error, Result};
pub use geodesic::{Curve, TensionResult};
pub use grid::GridField;
pub use lattice::Lattice;
pub use potential::{
    HomogenizedPotential, PotentialSpec, ScalarField, SharedPotential, TwoScalePotential, WellPotential,
};
pub use harness::ScaleSchedule;
pub use unfolding::{DomainDecomposition, UnfoldedField};
