//! Vibration tomography: forward modal simulation of voxelized elastic
//! objects, image-space mode observation, and inversion of spatially varying
//! Young's modulus and density from projected surface vibration.

pub mod error;
pub mod eval;
pub mod fem;
pub mod linalg;
pub mod modal;
pub mod inverse;
pub mod io;
pub mod observation;
pub mod pipeline;

pub use error::{Error, Result};
