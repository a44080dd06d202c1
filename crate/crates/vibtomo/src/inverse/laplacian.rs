//! Discrete Laplacian on the voxel grid for the smoothness regularizers.

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::fem::VoxelGrid;

/// Second-difference operator on the voxel grid: 6-neighbor stencil in 3D,
/// 4-neighbor on single-layer (membrane) grids, with mirrored boundaries
/// (`f[-1] := f[0]`). Rows sum to zero, so constant fields are in the null
/// space, and the matrix is symmetric.
#[derive(Debug, Clone)]
pub struct LaplacianOp {
    pub matrix: CsrMatrix<f64>,
}

impl LaplacianOp {
    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, field: &DVector<f64>) -> DVector<f64> {
        crate::linalg::csr_mul_vec(&self.matrix, field)
    }
}

/// Builds the grid Laplacian in index space (spacing-free).
pub fn build_laplacian(grid: &VoxelGrid) -> LaplacianOp {
    let m = grid.voxel_count();
    let mut coo = CooMatrix::new(m, m);
    for e in 0..m {
        let idx = grid.voxel_coords(e);
        for axis in 0..3 {
            if grid.dims[axis] < 2 {
                continue;
            }
            for side in [-1i64, 1i64] {
                let pos = idx[axis] as i64 + side;
                let neighbor = if pos < 0 || pos >= grid.dims[axis] as i64 {
                    e // mirrored boundary
                } else {
                    let mut nidx = idx;
                    nidx[axis] = pos as usize;
                    grid.voxel_index(nidx[0], nidx[1], nidx[2])
                };
                coo.push(e, neighbor, 1.0);
                coo.push(e, e, -1.0);
            }
        }
    }
    LaplacianOp {
        matrix: CsrMatrix::from(&coo),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new(dims, 1.0, [0.0; 3]).unwrap()
    }

    #[test]
    fn constant_fields_are_annihilated() {
        let lap = build_laplacian(&grid([4, 3, 2]));
        let c = DVector::from_element(24, 7.5);
        assert_eq!(lap.apply(&c).amax(), 0.0);
    }

    #[test]
    fn interior_row_is_standard_second_difference() {
        let lap = build_laplacian(&grid([6, 1, 1]));
        let row = lap.matrix.row(3);
        let mut entries: Vec<(usize, f64)> = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&c, &v)| (c, v))
            .collect();
        entries.sort_by_key(|&(c, _)| c);
        assert_eq!(entries, vec![(2, 1.0), (3, -2.0), (4, 1.0)]);
    }

    #[test]
    fn quadratic_field_has_constant_interior_laplacian() {
        let g = grid([8, 1, 1]);
        let lap = build_laplacian(&g);
        let f = DVector::from_fn(8, |i, _| (i * i) as f64);
        let out = lap.apply(&f);
        for i in 1..7 {
            assert!((out[i] - 2.0).abs() < 1e-12, "entry {i} = {}", out[i]);
        }
    }

    #[test]
    fn symmetric_with_zero_row_sums() {
        let lap = build_laplacian(&grid([3, 4, 2]));
        let m = lap.m();
        for i in 0..m {
            let row_sum: f64 = lap.matrix.row(i).values().iter().sum();
            assert!(row_sum.abs() < 1e-14);
        }
        for (i, j, &v) in lap.matrix.triplet_iter() {
            let vt = lap
                .matrix
                .get_entry(j, i)
                .map_or(0.0, |e| e.into_value());
            assert!((v - vt).abs() < 1e-14);
        }
    }

    #[test]
    fn membrane_grid_uses_four_neighbors() {
        let lap = build_laplacian(&grid([3, 3, 1]));
        // Center voxel of the 3x3 layer.
        let row = lap.matrix.row(4);
        let diag = lap.matrix.get_entry(4, 4).unwrap().into_value();
        assert_eq!(diag, -4.0);
        assert_eq!(row.nnz(), 5);
    }
}
