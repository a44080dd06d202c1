//! Meshes, voxel grids, element matrices, and assembly of global
//! stiffness/mass systems as linear functions of per-voxel material values.

pub mod assemble;
pub mod element;
pub mod grid;
pub mod mesh;

pub use assemble::{
    assemble_global, assemble_unit_matrices, GlobalSystem, MaterialField, UnitMatrixSet,
};
pub use grid::VoxelGrid;
pub use mesh::{build_cube_mesh, build_membrane_mesh, Face, Mesh, MeshKind};
