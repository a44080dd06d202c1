//! Mesh construction for voxelized solids and rectangular membranes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::grid::VoxelGrid;

/// Element/DOF family of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    /// 8-node hexahedra, 3 displacement DOFs per vertex.
    SolidHex8,
    /// 3-node triangles with one transverse DOF per vertex.
    MembraneTri3,
}

impl MeshKind {
    pub fn dofs_per_vertex(self) -> usize {
        match self {
            MeshKind::SolidHex8 => 3,
            MeshKind::MembraneTri3 => 1,
        }
    }

    pub fn vertices_per_element(self) -> usize {
        match self {
            MeshKind::SolidHex8 => 8,
            MeshKind::MembraneTri3 => 3,
        }
    }
}

/// Face of an axis-aligned box, used to pin vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

/// Finite element mesh with Dirichlet constraints and a voxel map.
///
/// Free DOFs are numbered by walking vertices in index order, skipping fixed
/// vertices, and emitting `dofs_per_vertex` consecutive DOFs per free vertex.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub kind: MeshKind,
    /// Vertex coordinates in meters.
    pub vertices: Vec<[f64; 3]>,
    /// Element connectivity, `vertices_per_element` indices each.
    pub elements: Vec<Vec<usize>>,
    /// Vertices with prescribed zero displacement.
    pub fixed_vertices: BTreeSet<usize>,
    /// Voxel index owning each element.
    pub voxel_of_element: Vec<usize>,
    /// Grid the voxel map refers to.
    pub grid: VoxelGrid,
    free_slot: Vec<Option<usize>>,
    free_count: usize,
}

impl Mesh {
    pub fn new(
        kind: MeshKind,
        vertices: Vec<[f64; 3]>,
        elements: Vec<Vec<usize>>,
        fixed_vertices: BTreeSet<usize>,
        voxel_of_element: Vec<usize>,
        grid: VoxelGrid,
    ) -> Result<Self> {
        let q = vertices.len();
        if elements.len() != voxel_of_element.len() {
            return Err(Error::Shape(format!(
                "{} elements but {} voxel assignments",
                elements.len(),
                voxel_of_element.len()
            )));
        }
        for (i, el) in elements.iter().enumerate() {
            if el.len() != kind.vertices_per_element() {
                return Err(Error::Shape(format!(
                    "element {i} has {} vertices, expected {}",
                    el.len(),
                    kind.vertices_per_element()
                )));
            }
            if let Some(&bad) = el.iter().find(|&&v| v >= q) {
                return Err(Error::Shape(format!(
                    "element {i} references vertex {bad} out of {q}"
                )));
            }
        }
        let m = grid.voxel_count();
        if let Some(&bad) = voxel_of_element.iter().find(|&&e| e >= m) {
            return Err(Error::Shape(format!(
                "element mapped to voxel {bad} out of {m}"
            )));
        }
        if let Some(&bad) = fixed_vertices.iter().find(|&&v| v >= q) {
            return Err(Error::Shape(format!("fixed vertex {bad} out of {q}")));
        }
        let mut free_slot = vec![None; q];
        let mut free_count = 0;
        for (v, slot) in free_slot.iter_mut().enumerate() {
            if !fixed_vertices.contains(&v) {
                *slot = Some(free_count);
                free_count += 1;
            }
        }
        Ok(Self {
            kind,
            vertices,
            elements,
            fixed_vertices,
            voxel_of_element,
            grid,
            free_slot,
            free_count,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn dofs_per_vertex(&self) -> usize {
        self.kind.dofs_per_vertex()
    }

    /// Number of unconstrained DOFs `n`.
    pub fn free_dof_count(&self) -> usize {
        self.free_count * self.kind.dofs_per_vertex()
    }

    /// Slot of a free vertex among free vertices, or `None` if fixed.
    pub fn free_vertex_slot(&self, v: usize) -> Option<usize> {
        self.free_slot[v]
    }

    /// Free-DOF index of `(vertex, component)`, or `None` if the vertex is fixed.
    pub fn free_dof(&self, v: usize, comp: usize) -> Option<usize> {
        debug_assert!(comp < self.dofs_per_vertex());
        self.free_slot[v].map(|s| s * self.dofs_per_vertex() + comp)
    }

    /// Free-DOF indices of an element's vertices (`None` for fixed vertices),
    /// flattened vertex-major.
    pub fn element_free_dofs(&self, el: usize) -> Vec<Option<usize>> {
        let dpv = self.dofs_per_vertex();
        self.elements[el]
            .iter()
            .flat_map(|&v| (0..dpv).map(move |c| self.free_dof(v, c)))
            .collect()
    }
}

/// Builds a structured hex8 mesh with one element per voxel.
///
/// Vertices live on the `(nx+1)×(ny+1)×(nz+1)` lattice with x varying
/// fastest. With `fixed_face = Some(Face::ZMin)` all vertices on the bottom
/// plane are constrained.
pub fn build_cube_mesh(grid: &VoxelGrid, fixed_face: Option<Face>) -> Mesh {
    let [nx, ny, nz] = grid.dims;
    let h = grid.spacing;
    let o = grid.origin;
    let vx = nx + 1;
    let vy = ny + 1;
    let vz = nz + 1;
    let vid = |i: usize, j: usize, k: usize| i + vx * (j + vy * k);

    let mut vertices = Vec::with_capacity(vx * vy * vz);
    for k in 0..vz {
        for j in 0..vy {
            for i in 0..vx {
                vertices.push([
                    o[0] + i as f64 * h,
                    o[1] + j as f64 * h,
                    o[2] + k as f64 * h,
                ]);
            }
        }
    }

    let mut elements = Vec::with_capacity(grid.voxel_count());
    let mut voxel_of_element = Vec::with_capacity(grid.voxel_count());
    for kz in 0..nz {
        for jy in 0..ny {
            for ix in 0..nx {
                // Standard hex8 ordering: bottom face counterclockwise, then top.
                elements.push(vec![
                    vid(ix, jy, kz),
                    vid(ix + 1, jy, kz),
                    vid(ix + 1, jy + 1, kz),
                    vid(ix, jy + 1, kz),
                    vid(ix, jy, kz + 1),
                    vid(ix + 1, jy, kz + 1),
                    vid(ix + 1, jy + 1, kz + 1),
                    vid(ix, jy + 1, kz + 1),
                ]);
                voxel_of_element.push(grid.voxel_index(ix, jy, kz));
            }
        }
    }

    let mut fixed = BTreeSet::new();
    if let Some(face) = fixed_face {
        for k in 0..vz {
            for j in 0..vy {
                for i in 0..vx {
                    let on_face = match face {
                        Face::XMin => i == 0,
                        Face::XMax => i == vx - 1,
                        Face::YMin => j == 0,
                        Face::YMax => j == vy - 1,
                        Face::ZMin => k == 0,
                        Face::ZMax => k == vz - 1,
                    };
                    if on_face {
                        fixed.insert(vid(i, j, k));
                    }
                }
            }
        }
    }

    Mesh::new(
        MeshKind::SolidHex8,
        vertices,
        elements,
        fixed,
        voxel_of_element,
        grid.clone(),
    )
    .expect("structured cube mesh is always consistent")
}

/// Builds a structured triangulated membrane over an `(nx, ny, 1)` grid,
/// two triangles per cell, one transverse DOF per vertex.
pub fn build_membrane_mesh(grid: &VoxelGrid, boundary_fixed: bool) -> Result<Mesh> {
    let [nx, ny, nz] = grid.dims;
    if nz != 1 {
        return Err(Error::Shape(format!(
            "membrane grid must have nz = 1, got {nz}"
        )));
    }
    let h = grid.spacing;
    let o = grid.origin;
    let vx = nx + 1;
    let vy = ny + 1;
    let vid = |i: usize, j: usize| i + vx * j;

    let mut vertices = Vec::with_capacity(vx * vy);
    for j in 0..vy {
        for i in 0..vx {
            vertices.push([o[0] + i as f64 * h, o[1] + j as f64 * h, o[2]]);
        }
    }

    let mut elements = Vec::with_capacity(2 * nx * ny);
    let mut voxel_of_element = Vec::with_capacity(2 * nx * ny);
    for jy in 0..ny {
        for ix in 0..nx {
            let a = vid(ix, jy);
            let b = vid(ix + 1, jy);
            let c = vid(ix + 1, jy + 1);
            let d = vid(ix, jy + 1);
            elements.push(vec![a, b, c]);
            elements.push(vec![a, c, d]);
            let e = grid.voxel_index(ix, jy, 0);
            voxel_of_element.push(e);
            voxel_of_element.push(e);
        }
    }

    let mut fixed = BTreeSet::new();
    if boundary_fixed {
        for j in 0..vy {
            for i in 0..vx {
                if i == 0 || i == vx - 1 || j == 0 || j == vy - 1 {
                    fixed.insert(vid(i, j));
                }
            }
        }
    }

    Mesh::new(
        MeshKind::MembraneTri3,
        vertices,
        elements,
        fixed,
        voxel_of_element,
        grid.clone(),
    )
}
