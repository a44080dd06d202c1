//! Element stiffness and mass matrices at unit material values.
//!
//! Solid elements use isotropic linear elasticity at E = 1 with the supplied
//! Poisson's ratio and 2x2x2 Gauss quadrature (exact for trilinear geometry).
//! Membrane elements use the scalar transverse-displacement model: unit-modulus
//! Laplacian stiffness and consistent mass, both at unit thickness. Mass
//! matrices are consistent (not lumped) at unit density.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Reference corner signs of the hex8 element.
const HEX8_CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_76, 0.577_350_269_189_625_76];

/// Shape function values at a reference point.
fn hex8_shape(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, c) in HEX8_CORNERS.iter().enumerate() {
        n[a] = 0.125 * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]) * (1.0 + c[2] * xi[2]);
    }
    n
}

/// Reference-space shape gradients dN_a/dxi at a reference point.
fn hex8_shape_grad(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, c) in HEX8_CORNERS.iter().enumerate() {
        g[a][0] = 0.125 * c[0] * (1.0 + c[1] * xi[1]) * (1.0 + c[2] * xi[2]);
        g[a][1] = 0.125 * (1.0 + c[0] * xi[0]) * c[1] * (1.0 + c[2] * xi[2]);
        g[a][2] = 0.125 * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]) * c[2];
    }
    g
}

/// Isotropic elasticity matrix (Voigt order xx, yy, zz, yz, xz, xy) at E = 1.
fn elasticity_unit(nu: f64) -> DMatrix<f64> {
    let c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mut d = DMatrix::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = if i == j { c * (1.0 - nu) } else { c * nu };
        }
    }
    let g = 0.5 / (1.0 + nu);
    for i in 3..6 {
        d[(i, i)] = g;
    }
    d
}

/// Unit stiffness and consistent unit mass of a hex8 element (24x24 each).
///
/// DOF ordering is vertex-major: `(v0x, v0y, v0z, v1x, ...)`.
pub fn hex8_unit_matrices(
    coords: &[[f64; 3]; 8],
    nu: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Validation(format!(
            "Poisson's ratio must be in [0, 0.5), got {nu}"
        )));
    }
    let d_mat = elasticity_unit(nu);
    let mut k = DMatrix::zeros(24, 24);
    let mut m = DMatrix::zeros(24, 24);
    let mut b = DMatrix::zeros(6, 24);

    for &gx in &GAUSS_2 {
        for &gy in &GAUSS_2 {
            for &gz in &GAUSS_2 {
                let xi = [gx, gy, gz];
                let grad_ref = hex8_shape_grad(xi);
                // Jacobian J[r][c] = d x_c / d xi_r.
                let mut jac = [[0.0f64; 3]; 3];
                for a in 0..8 {
                    for r in 0..3 {
                        for c in 0..3 {
                            jac[r][c] += grad_ref[a][r] * coords[a][c];
                        }
                    }
                }
                let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
                if !(det > 0.0) {
                    return Err(Error::MeshQuality(format!(
                        "non-positive Jacobian {det:.3e} in hex8 element"
                    )));
                }
                let inv_det = 1.0 / det;
                // Inverse of J, cofactor form.
                let inv = [
                    [
                        (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1]) * inv_det,
                        (jac[0][2] * jac[2][1] - jac[0][1] * jac[2][2]) * inv_det,
                        (jac[0][1] * jac[1][2] - jac[0][2] * jac[1][1]) * inv_det,
                    ],
                    [
                        (jac[1][2] * jac[2][0] - jac[1][0] * jac[2][2]) * inv_det,
                        (jac[0][0] * jac[2][2] - jac[0][2] * jac[2][0]) * inv_det,
                        (jac[0][2] * jac[1][0] - jac[0][0] * jac[1][2]) * inv_det,
                    ],
                    [
                        (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]) * inv_det,
                        (jac[0][1] * jac[2][0] - jac[0][0] * jac[2][1]) * inv_det,
                        (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]) * inv_det,
                    ],
                ];
                // Physical-space gradients dN_a/dx_c = inv[c][r] * grad_ref[a][r].
                let mut grad = [[0.0f64; 3]; 8];
                for a in 0..8 {
                    for c in 0..3 {
                        grad[a][c] = (0..3).map(|r| inv[c][r] * grad_ref[a][r]).sum();
                    }
                }
                b.fill(0.0);
                for a in 0..8 {
                    let (gx, gy, gz) = (grad[a][0], grad[a][1], grad[a][2]);
                    b[(0, 3 * a)] = gx;
                    b[(1, 3 * a + 1)] = gy;
                    b[(2, 3 * a + 2)] = gz;
                    b[(3, 3 * a + 1)] = gz;
                    b[(3, 3 * a + 2)] = gy;
                    b[(4, 3 * a)] = gz;
                    b[(4, 3 * a + 2)] = gx;
                    b[(5, 3 * a)] = gy;
                    b[(5, 3 * a + 1)] = gx;
                }
                k += det * b.transpose() * &d_mat * &b;

                let n = hex8_shape(xi);
                for a in 0..8 {
                    for bb in 0..8 {
                        let v = det * n[a] * n[bb];
                        for c in 0..3 {
                            m[(3 * a + c, 3 * bb + c)] += v;
                        }
                    }
                }
            }
        }
    }
    // Symmetrize away quadrature round-off so downstream symmetry is exact.
    let kt = k.transpose();
    k = 0.5 * (k + kt);
    let mt = m.transpose();
    m = 0.5 * (m + mt);
    Ok((k, m))
}

/// Unit stiffness (Laplacian) and consistent unit mass of a linear triangle
/// membrane element (3x3 each), one transverse DOF per vertex, unit thickness.
pub fn tri3_unit_matrices(coords: &[[f64; 3]; 3]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (x1, y1) = (coords[0][0], coords[0][1]);
    let (x2, y2) = (coords[1][0], coords[1][1]);
    let (x3, y3) = (coords[2][0], coords[2][1]);
    let det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1);
    if !(det > 0.0) {
        return Err(Error::MeshQuality(format!(
            "non-positive triangle area {:.3e}",
            det / 2.0
        )));
    }
    let area = det / 2.0;
    // Gradients of the linear shape functions are constant.
    let bvec = [
        [(y2 - y3) / det, (x3 - x2) / det],
        [(y3 - y1) / det, (x1 - x3) / det],
        [(y1 - y2) / det, (x2 - x1) / det],
    ];
    let mut k = DMatrix::zeros(3, 3);
    for a in 0..3 {
        for b in 0..3 {
            k[(a, b)] = area * (bvec[a][0] * bvec[b][0] + bvec[a][1] * bvec[b][1]);
        }
    }
    let mut m = DMatrix::from_element(3, 3, area / 12.0);
    for a in 0..3 {
        m[(a, a)] = area / 6.0;
    }
    Ok((k, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube_coords() -> [[f64; 3]; 8] {
        let mut c = [[0.0; 3]; 8];
        for (a, s) in HEX8_CORNERS.iter().enumerate() {
            for d in 0..3 {
                c[a][d] = 0.5 * (s[d] + 1.0);
            }
        }
        c
    }

    #[test]
    fn hex8_mass_rows_sum_to_volume_per_direction() {
        let (_, m) = hex8_unit_matrices(&unit_cube_coords(), 0.3).unwrap();
        // Unit density, unit volume: total mass 1 kg per displacement direction.
        for c in 0..3 {
            let total: f64 = (0..8)
                .flat_map(|a| (0..8).map(move |b| (a, b)))
                .map(|(a, b)| m[(3 * a + c, 3 * b + c)])
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "direction {c}: {total}");
        }
    }

    #[test]
    fn hex8_stiffness_annihilates_rigid_translations() {
        let (k, _) = hex8_unit_matrices(&unit_cube_coords(), 0.25).unwrap();
        for c in 0..3 {
            let mut r = nalgebra::DVector::zeros(24);
            for a in 0..8 {
                r[3 * a + c] = 1.0;
            }
            let res = (&k * &r).amax();
            assert!(res < 1e-12, "direction {c}: residual {res}");
        }
    }

    #[test]
    fn hex8_rejects_inverted_element() {
        let mut coords = unit_cube_coords();
        coords.swap(0, 1);
        coords.swap(3, 2);
        coords.swap(4, 5);
        coords.swap(7, 6);
        assert!(matches!(
            hex8_unit_matrices(&coords, 0.3),
            Err(Error::MeshQuality(_))
        ));
    }

    #[test]
    fn tri3_matrices_match_hand_values() {
        // Right triangle with legs 1 along x and y.
        let coords = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (k, m) = tri3_unit_matrices(&coords).unwrap();
        // Known P1 Laplacian stiffness for this triangle.
        let k_ref = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[(a, b)] - k_ref[a][b]).abs() < 1e-14);
            }
        }
        let total_mass: f64 = m.iter().sum();
        assert!((total_mass - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tri3_rejects_flipped_triangle() {
        let coords = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(matches!(
            tri3_unit_matrices(&coords),
            Err(Error::MeshQuality(_))
        ));
    }
}
