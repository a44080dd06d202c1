//! Forward modal analysis and Rayleigh-damped transient simulation.

pub mod damping;
pub mod eigen;
pub mod transient;

pub use damping::{rayleigh_from_ratios, RayleighDamping};
pub use eigen::{solve_modes, solve_modes_with, EigenMethod, EigenOptions, ModalBasis};
pub use transient::{modal_coordinate, pluck_shape, simulate_transient, DisplacementSeries};
