//! Sampling operator mapping free-DOF displacement to image-space
//! per-vertex pixel displacement.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::fem::{Mesh, MeshKind};
use crate::modal::DisplacementSeries;
use crate::observation::projection::ProjectionModel;

/// Which mesh vertices the camera sees.
#[derive(Debug, Clone)]
pub enum Visibility {
    /// Every vertex.
    All,
    /// Vertices on the camera-facing faces of a structured box mesh
    /// (outward normal dot view direction < 0). Membranes are fully visible.
    Auto { view_dir: [f64; 3] },
    /// Explicit vertex set.
    Set(Vec<usize>),
}

/// Sparse operator `P` of shape `2q x n`: rows `2i, 2i+1` carry the pixel
/// displacement of vertex `i`; rows of unseen (or fixed) vertices are zero.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    pub p: CsrMatrix<f64>,
    /// Sorted indices of visible vertices.
    pub visible: Vec<usize>,
    /// Total vertex count of the observed mesh.
    pub q: usize,
}

impl SamplingOperator {
    pub fn rows(&self) -> usize {
        2 * self.q
    }

    pub fn n(&self) -> usize {
        self.p.ncols()
    }

    /// Count of rows with at least one structural nonzero.
    pub fn nonzero_row_count(&self) -> usize {
        (0..self.p.nrows())
            .filter(|&r| self.p.row(r).nnz() > 0)
            .count()
    }

    /// `P u` for a free-DOF vector.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        crate::linalg::csr_mul_vec(&self.p, u)
    }

    /// Samples a whole displacement history into image space.
    pub fn sample_series(&self, series: &DisplacementSeries) -> ImageSeries {
        let t = series.frame_count();
        let mut data = DMatrix::zeros(t, self.rows());
        for r in 0..self.p.nrows() {
            let row = self.p.row(r);
            if row.nnz() == 0 {
                continue;
            }
            let mut acc = DVector::zeros(t);
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                acc.axpy(v, &series.data.column(j).into_owned(), 1.0);
            }
            data.set_column(r, &acc);
        }
        ImageSeries {
            data,
            fps: series.fps,
        }
    }
}

/// Image-space motion history: `T x 2q`, pixel displacements per frame.
#[derive(Debug, Clone)]
pub struct ImageSeries {
    pub data: DMatrix<f64>,
    pub fps: f64,
}

impl ImageSeries {
    pub fn frame_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dof_count(&self) -> usize {
        self.data.ncols()
    }
}

fn resolve_visibility(mesh: &Mesh, visibility: &Visibility) -> Result<Vec<usize>> {
    let q = mesh.vertex_count();
    let mut visible = match visibility {
        Visibility::All => (0..q).collect::<Vec<_>>(),
        Visibility::Set(set) => {
            let mut v = set.clone();
            v.sort_unstable();
            v.dedup();
            if let Some(&bad) = v.iter().find(|&&i| i >= q) {
                return Err(Error::Shape(format!("visible vertex {bad} out of {q}")));
            }
            v
        }
        Visibility::Auto { view_dir } => match mesh.kind {
            MeshKind::MembraneTri3 => (0..q).collect(),
            MeshKind::SolidHex8 => auto_visible_box(mesh, *view_dir)?,
        },
    };
    visible.dedup();
    if visible.is_empty() {
        return Err(Error::Validation("visible vertex set is empty".into()));
    }
    Ok(visible)
}

/// Vertices on the up-to-three camera-facing faces of a structured box mesh.
fn auto_visible_box(mesh: &Mesh, view_dir: [f64; 3]) -> Result<Vec<usize>> {
    let norm = view_dir.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Validation("view direction is zero".into()));
    }
    let [nx, ny, nz] = mesh.grid.dims;
    let lat = [nx + 1, ny + 1, nz + 1];
    if mesh.vertex_count() != lat[0] * lat[1] * lat[2] {
        return Err(Error::Validation(
            "auto visibility requires a structured box mesh".into(),
        ));
    }
    // Face with outward normal +e_a is visible when view_dir[a] < 0 and
    // vice versa; a generic view direction exposes three faces.
    let mut visible = Vec::new();
    for k in 0..lat[2] {
        for j in 0..lat[1] {
            for i in 0..lat[0] {
                let idx = [i, j, k];
                let seen = (0..3).any(|a| {
                    (idx[a] == lat[a] - 1 && view_dir[a] < 0.0)
                        || (idx[a] == 0 && view_dir[a] > 0.0)
                });
                if seen {
                    visible.push(i + lat[0] * (j + lat[1] * k));
                }
            }
        }
    }
    Ok(visible)
}

/// Builds `P` for a mesh observed by `proj`.
pub fn build_sampling_operator(
    mesh: &Mesh,
    proj: &ProjectionModel,
    visibility: &Visibility,
) -> Result<SamplingOperator> {
    let visible = resolve_visibility(mesh, visibility)?;
    let q = mesh.vertex_count();
    let n = mesh.free_dof_count();
    let mut coo = CooMatrix::new(2 * q, n);
    match mesh.kind {
        MeshKind::SolidHex8 => {
            for &v in &visible {
                if let Some(slot) = mesh.free_vertex_slot(v) {
                    for c in 0..3 {
                        coo.push(2 * v, 3 * slot + c, proj.a[0][c]);
                        coo.push(2 * v + 1, 3 * slot + c, proj.a[1][c]);
                    }
                }
            }
        }
        MeshKind::MembraneTri3 => {
            // Transverse motion along +z maps through A's third column.
            let an = [proj.a[0][2], proj.a[1][2]];
            for &v in &visible {
                if let Some(slot) = mesh.free_vertex_slot(v) {
                    coo.push(2 * v, slot, an[0]);
                    coo.push(2 * v + 1, slot, an[1]);
                }
            }
        }
    }
    Ok(SamplingOperator {
        p: CsrMatrix::from(&coo),
        visible,
        q,
    })
}

/// Builds a cross-mesh operator: image-space displacement at the vertices of
/// `obs_mesh` expressed in the free DOFs of the structured `forward_mesh`,
/// using the forward elements' (tri)linear interpolation. With
/// `obs_mesh == forward_mesh` this reduces to [`build_sampling_operator`].
pub fn build_cross_sampling_operator(
    forward_mesh: &Mesh,
    obs_mesh: &Mesh,
    proj: &ProjectionModel,
    visibility: &Visibility,
) -> Result<SamplingOperator> {
    if forward_mesh.kind != obs_mesh.kind {
        return Err(Error::Shape(
            "forward and observation meshes must share the same kind".into(),
        ));
    }
    let visible = resolve_visibility(obs_mesh, visibility)?;
    let q = obs_mesh.vertex_count();
    let n = forward_mesh.free_dof_count();
    let grid = &forward_mesh.grid;
    let [nx, ny, nz] = grid.dims;
    let lat = [nx + 1, ny + 1, nz + 1];
    if forward_mesh.vertex_count() != lat[0] * lat[1] * lat[2] {
        return Err(Error::Validation(
            "cross-mesh sampling requires a structured forward mesh".into(),
        ));
    }
    let h = grid.spacing;
    let dims_3d = forward_mesh.kind == MeshKind::SolidHex8;

    let mut coo = CooMatrix::new(2 * q, n);
    for &v in &visible {
        let x = obs_mesh.vertices[v];
        // Containing forward cell and local coordinates, clamped to the box.
        let mut cell = [0usize; 3];
        let mut loc = [0.0f64; 3];
        for a in 0..3 {
            if !dims_3d && a == 2 {
                continue;
            }
            let t = (x[a] - grid.origin[a]) / h;
            let c = (t.floor().max(0.0) as usize).min(grid.dims[a] - 1);
            cell[a] = c;
            loc[a] = (t - c as f64).clamp(0.0, 1.0);
        }
        let axes = if dims_3d { 3 } else { 2 };
        let corners = 1usize << axes;
        for corner in 0..corners {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..axes {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { loc[a] } else { 1.0 - loc[a] };
                idx[a] = cell[a] + usize::from(hi);
            }
            if w == 0.0 {
                continue;
            }
            let fv = idx[0] + lat[0] * (idx[1] + lat[1] * idx[2]);
            let Some(slot) = forward_mesh.free_vertex_slot(fv) else {
                continue;
            };
            if dims_3d {
                for c in 0..3 {
                    coo.push(2 * v, 3 * slot + c, w * proj.a[0][c]);
                    coo.push(2 * v + 1, 3 * slot + c, w * proj.a[1][c]);
                }
            } else {
                coo.push(2 * v, slot, w * proj.a[0][2]);
                coo.push(2 * v + 1, slot, w * proj.a[1][2]);
            }
        }
    }
    Ok(SamplingOperator {
        p: CsrMatrix::from(&coo),
        visible,
        q,
    })
}
