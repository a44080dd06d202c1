//! Voxel grid over which material fields are defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular voxel grid. Fields (Young's modulus, density) hold one value per
/// voxel, stored row-major with x varying fastest:
/// `index = ix + nx * (iy + ny * iz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    /// Number of voxels along each axis; membranes use `(nx, ny, 1)`.
    pub dims: [usize; 3],
    /// Voxel edge length in meters.
    pub spacing: f64,
    /// Position of the grid corner in meters.
    pub origin: [f64; 3],
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!(
                "grid dims must all be >= 1, got {dims:?}"
            )));
        }
        if !(spacing > 0.0) {
            return Err(Error::Validation(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Total voxel count `m = nx * ny * nz`.
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn voxel_coords(&self, e: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [e % nx, (e / nx) % ny, e / (nx * ny)]
    }

    /// Center of voxel `e` in meters.
    pub fn voxel_center(&self, e: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.voxel_coords(e);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.spacing,
            self.origin[1] + (iy as f64 + 0.5) * self.spacing,
            self.origin[2] + (iz as f64 + 0.5) * self.spacing,
        ]
    }

    /// Voxel containing `p`, clamped to the grid bounds.
    pub fn voxel_containing(&self, p: [f64; 3]) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (p[a] - self.origin[a]) / self.spacing;
            idx[a] = (t.floor().max(0.0) as usize).min(self.dims[a] - 1);
        }
        self.voxel_index(idx[0], idx[1], idx[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = VoxelGrid::new([3, 4, 5], 0.1, [0.0; 3]).unwrap();
        assert_eq!(g.voxel_count(), 60);
        for e in 0..g.voxel_count() {
            let [ix, iy, iz] = g.voxel_coords(e);
            assert_eq!(g.voxel_index(ix, iy, iz), e);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(VoxelGrid::new([0, 1, 1], 0.1, [0.0; 3]).is_err());
        assert!(VoxelGrid::new([1, 1, 1], 0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn containing_voxel_is_clamped() {
        let g = VoxelGrid::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        assert_eq!(g.voxel_containing([0.5, 0.5, 0.5]), 0);
        assert_eq!(g.voxel_containing([1.5, 1.5, 1.5]), 7);
        assert_eq!(g.voxel_containing([-3.0, 5.0, 0.2]), g.voxel_index(0, 1, 0));
    }
}
