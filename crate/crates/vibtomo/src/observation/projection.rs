//! Affine camera model and its least-squares fit from point correspondences.

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine camera `p = A X + b` mapping meters to pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    /// 2x3 linear map in pixels per meter, row-major.
    pub a: [[f64; 3]; 2],
    /// Pixel offset.
    pub b: [f64; 2],
}

impl ProjectionModel {
    pub fn new(a: [[f64; 3]; 2], b: [f64; 2]) -> Result<Self> {
        let model = Self { a, b };
        let m = model.a_matrix();
        if m.rank(1e-12 * m.amax().max(1.0)) < 2 {
            return Err(Error::Validation(
                "projection matrix A must have rank 2".into(),
            ));
        }
        Ok(model)
    }

    /// Orthographic camera looking along `view_dir` with `scale` pixels per
    /// meter. The image axes are an orthonormal pair perpendicular to the
    /// view direction, chosen deterministically.
    pub fn orthographic(view_dir: [f64; 3], scale: f64, offset: [f64; 2]) -> Result<Self> {
        let d = Vector3::from(view_dir);
        if d.norm() == 0.0 || !(scale > 0.0) {
            return Err(Error::Validation(
                "view direction must be nonzero and scale positive".into(),
            ));
        }
        let d = d.normalize();
        // Pick the axis least aligned with the view to seed the image frame.
        let seed = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
            Vector3::x()
        } else if d.y.abs() <= d.z.abs() {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let right = seed.cross(&d).normalize();
        let up = d.cross(&right);
        Ok(Self {
            a: [
                [scale * right.x, scale * right.y, scale * right.z],
                [scale * up.x, scale * up.y, scale * up.z],
            ],
            b: offset,
        })
    }

    pub fn a_matrix(&self) -> Matrix2x3<f64> {
        Matrix2x3::from_rows(&[self.a[0].into(), self.a[1].into()])
    }

    pub fn project(&self, x: [f64; 3]) -> [f64; 2] {
        let p = self.a_matrix() * Vector3::from(x) + Vector2::from(self.b);
        [p.x, p.y]
    }

    /// Direction that projects to zero (the viewing ray of an affine camera),
    /// normalized with its first nonzero component positive. The physical
    /// view direction is this vector or its negation.
    pub fn null_direction(&self) -> [f64; 3] {
        let a = self.a_matrix();
        let r0 = Vector3::from(self.a[0]);
        let r1 = Vector3::from(self.a[1]);
        let mut d = r0.cross(&r1);
        if d.norm() < 1e-14 * a.amax().powi(2) {
            // Degenerate A; fall back to SVD null space.
            let svd = a.svd(true, true);
            let vt = svd.v_t.unwrap();
            d = Vector3::new(vt[(2, 0)], vt[(2, 1)], vt[(2, 2)]);
        }
        let d = d.normalize();
        let flip = d.iter().find(|&&c| c.abs() > 1e-12).map_or(1.0, |&c| c.signum());
        [d.x * flip, d.y * flip, d.z * flip]
    }
}

/// Least-squares affine fit from >= 4 non-coplanar 3D-to-pixel correspondences.
pub fn fit_projection(points3d: &[[f64; 3]], pixels: &[[f64; 2]]) -> Result<ProjectionModel> {
    let p = points3d.len();
    if pixels.len() != p {
        return Err(Error::Shape(format!(
            "{p} reference points but {} pixel locations",
            pixels.len()
        )));
    }
    if p < 4 {
        return Err(Error::Validation(format!(
            "affine fit needs at least 4 correspondences, got {p}"
        )));
    }
    // Shared design matrix [X Y Z 1]; two independent 4-parameter fits.
    let mut g = DMatrix::zeros(p, 4);
    for (r, x) in points3d.iter().enumerate() {
        g[(r, 0)] = x[0];
        g[(r, 1)] = x[1];
        g[(r, 2)] = x[2];
        g[(r, 3)] = 1.0;
    }
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        // Points span an affine subspace; name its normal from the centered cloud.
        let centroid = [
            points3d.iter().map(|x| x[0]).sum::<f64>() / p as f64,
            points3d.iter().map(|x| x[1]).sum::<f64>() / p as f64,
            points3d.iter().map(|x| x[2]).sum::<f64>() / p as f64,
        ];
        let mut c = DMatrix::zeros(p, 3);
        for (r, x) in points3d.iter().enumerate() {
            for d in 0..3 {
                c[(r, d)] = x[d] - centroid[d];
            }
        }
        let csvd = c.svd(false, true);
        let vt = csvd.v_t.unwrap();
        let normal = vt.row(2);
        return Err(Error::RankDeficient(format!(
            "reference points are coplanar; no depth along direction [{:.4}, {:.4}, {:.4}]",
            normal[0], normal[1], normal[2]
        )));
    }
    let px = DVector::from_iterator(p, pixels.iter().map(|q| q[0]));
    let py = DVector::from_iterator(p, pixels.iter().map(|q| q[1]));
    let cx = svd
        .solve(&px, 1e-12 * smax)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let cy = svd
        .solve(&py, 1e-12 * smax)
        .map_err(|e| Error::Singular(e.to_string()))?;
    ProjectionModel::new(
        [[cx[0], cx[1], cx[2]], [cy[0], cy[1], cy[2]]],
        [cx[3], cy[3]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_orthographic_is_recovered_from_cube_corners() {
        let s = 640.0;
        let truth = ProjectionModel {
            a: [[s, 0.0, 0.0], [0.0, 0.0, -s]],
            b: [320.0, 240.0],
        };
        let corners = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ];
        let pixels: Vec<[f64; 2]> = corners.iter().map(|&x| truth.project(x)).collect();
        let fit = fit_projection(&corners, &pixels).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((fit.a[r][c] - truth.a[r][c]).abs() < 1e-9);
            }
            assert!((fit.b[r] - truth.b[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn random_affine_round_trips() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..20 {
            let a = [
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
            ];
            let Ok(truth) = ProjectionModel::new(a, [rng.gen_range(-10.0..10.0), 3.0]) else {
                continue;
            };
            let pts: Vec<[f64; 3]> = (0..8)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let px: Vec<[f64; 2]> = pts.iter().map(|&x| truth.project(x)).collect();
            let fit = fit_projection(&pts, &px).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    assert!((fit.a[r][c] - truth.a[r][c]).abs() < 1e-10);
                }
                assert!((fit.b[r] - truth.b[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coplanar_points_name_the_missing_direction() {
        let pts = [
            [0.0, 0.0, 0.5],
            [1.0, 0.0, 0.5],
            [0.0, 1.0, 0.5],
            [1.0, 1.0, 0.5],
        ];
        let px = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        match fit_projection(&pts, &px) {
            Err(Error::RankDeficient(msg)) => {
                // The deficient direction is the plane normal, +-z here.
                assert!(msg.contains("1.0000") || msg.contains("-1.0000"), "{msg}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn orthographic_camera_null_direction_is_the_view() {
        let cam = ProjectionModel::orthographic([-1.0, -1.0, -1.0], 100.0, [0.0, 0.0]).unwrap();
        let d = cam.null_direction();
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        assert!((len - 1.0).abs() < 1e-12);
        // Null direction is parallel to (1,1,1)/sqrt(3).
        let dot = (d[0] + d[1] + d[2]).abs() / 3.0f64.sqrt();
        assert!((dot - 1.0).abs() < 1e-12);
        // Projection of any multiple of the view direction is constant.
        let p0 = cam.project([0.0, 0.0, 0.0]);
        let p1 = cam.project([2.0 * d[0], 2.0 * d[1], 2.0 * d[2]]);
        assert!((p0[0] - p1[0]).abs() < 1e-10 && (p0[1] - p1[1]).abs() < 1e-10);
    }
}
