//! Per-voxel unit matrices and global assembly.
//!
//! Global matrices are linear in the material fields:
//! `K = sum_e w_e K_e`, `M = sum_e v_e M_e`, where `K_e`/`M_e` are assembled
//! at unit Young's modulus and unit density with Dirichlet rows and columns
//! removed. The inversion reassembles `K` and `M` every iteration, so the
//! scatter positions into the global sparsity pattern are precomputed once.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::fem::element::{hex8_unit_matrices, tri3_unit_matrices};
use crate::fem::mesh::{Mesh, MeshKind};

/// Unit stiffness/mass restricted to one voxel's free DOFs.
#[derive(Debug, Clone)]
pub struct VoxelLocal {
    /// Sorted free-DOF indices touched by this voxel's elements.
    pub dofs: Vec<usize>,
    /// Unit stiffness on `dofs` (E = 1).
    pub k: DMatrix<f64>,
    /// Unit consistent mass on `dofs` (rho = 1).
    pub m: DMatrix<f64>,
}

/// Set of per-voxel unit matrices plus the global assembly plan.
#[derive(Debug, Clone)]
pub struct UnitMatrixSet {
    n: usize,
    nu: f64,
    kind: MeshKind,
    locals: Vec<VoxelLocal>,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    /// Per voxel: flattened (csr value index, k value, m value) triples.
    scatter: Vec<Vec<(usize, f64, f64)>>,
}

impl UnitMatrixSet {
    /// Free DOF count of the underlying mesh.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Voxel count `m`.
    pub fn voxel_count(&self) -> usize {
        self.locals.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn local(&self, e: usize) -> &VoxelLocal {
        &self.locals[e]
    }

    /// `out += scale * K_e u`, touching only the voxel's DOFs.
    pub fn add_k_times(&self, e: usize, u: &[f64], scale: f64, out: &mut [f64]) {
        let loc = &self.locals[e];
        add_local_times(&loc.k, &loc.dofs, u, scale, out);
    }

    /// `out += scale * M_e u`, touching only the voxel's DOFs.
    pub fn add_m_times(&self, e: usize, u: &[f64], scale: f64, out: &mut [f64]) {
        let loc = &self.locals[e];
        add_local_times(&loc.m, &loc.dofs, u, scale, out);
    }

    /// `K_e u` and `M_e u` restricted to the voxel's DOFs, returned as
    /// `(dofs, k_vals, m_vals)`.
    pub fn local_products(&self, e: usize, u: &[f64]) -> (&[usize], Vec<f64>, Vec<f64>) {
        let loc = &self.locals[e];
        let nd = loc.dofs.len();
        let mut uu = DVector::zeros(nd);
        for (r, &d) in loc.dofs.iter().enumerate() {
            uu[r] = u[d];
        }
        let kv = &loc.k * &uu;
        let mv = &loc.m * &uu;
        (
            &loc.dofs,
            kv.as_slice().to_vec(),
            mv.as_slice().to_vec(),
        )
    }

    /// Assembles `K = sum_e w_e K_e`, `M = sum_e v_e M_e`.
    pub fn assemble(&self, field: &MaterialField) -> Result<GlobalSystem> {
        let m_count = self.voxel_count();
        if field.w.len() != m_count || field.v.len() != m_count {
            return Err(Error::Shape(format!(
                "material field length {}/{} does not match voxel count {}",
                field.w.len(),
                field.v.len(),
                m_count
            )));
        }
        let nnz = self.col_indices.len();
        let mut kv = vec![0.0f64; nnz];
        let mut mv = vec![0.0f64; nnz];
        for (e, entries) in self.scatter.iter().enumerate() {
            let we = field.w[e];
            let ve = field.v[e];
            for &(idx, k, m) in entries {
                kv[idx] += we * k;
                mv[idx] += ve * m;
            }
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(
            self.n,
            self.n,
            self.row_offsets.clone(),
            self.col_indices.clone(),
        )
        .expect("assembly pattern is valid by construction");
        let k = CsrMatrix::try_from_pattern_and_values(pattern.clone(), kv)
            .expect("value count matches pattern");
        let m = CsrMatrix::try_from_pattern_and_values(pattern, mv)
            .expect("value count matches pattern");
        Ok(GlobalSystem { k, m })
    }
}

fn add_local_times(mat: &DMatrix<f64>, dofs: &[usize], u: &[f64], scale: f64, out: &mut [f64]) {
    let nd = dofs.len();
    for r in 0..nd {
        let mut s = 0.0;
        for c in 0..nd {
            s += mat[(r, c)] * u[dofs[c]];
        }
        out[dofs[r]] += scale * s;
    }
}

/// Spatial material parameters: per-voxel Young's modulus `w` (Pa), per-voxel
/// density `v` (kg/m^3), and the homogeneous Poisson's ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    pub nu: f64,
}

impl MaterialField {
    pub fn homogeneous(m: usize, youngs: f64, density: f64, nu: f64) -> Result<Self> {
        let field = Self {
            w: DVector::from_element(m, youngs),
            v: DVector::from_element(m, density),
            nu,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.v.len() {
            return Err(Error::Shape(format!(
                "w has {} entries, v has {}",
                self.w.len(),
                self.v.len()
            )));
        }
        if self.w.iter().any(|&x| !(x > 0.0)) || self.v.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Validation(
                "material fields must be strictly positive".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::Validation(format!(
                "Poisson's ratio must be in [0, 0.5), got {}",
                self.nu
            )));
        }
        Ok(())
    }
}

/// Assembled global stiffness and mass on the free DOFs.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub k: CsrMatrix<f64>,
    pub m: CsrMatrix<f64>,
}

impl GlobalSystem {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

/// Computes per-voxel unit matrices for a mesh, removing fixed DOFs and
/// summing the elements mapped to each voxel.
pub fn assemble_unit_matrices(mesh: &Mesh, nu: f64) -> Result<UnitMatrixSet> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Validation(format!(
            "Poisson's ratio must be in [0, 0.5), got {nu}"
        )));
    }
    let n = mesh.free_dof_count();
    let m_count = mesh.grid.voxel_count();
    let dpv = mesh.dofs_per_vertex();

    // Group elements by voxel, preserving element order for determinism.
    let mut by_voxel: Vec<Vec<usize>> = vec![Vec::new(); m_count];
    for (el, &vox) in mesh.voxel_of_element.iter().enumerate() {
        by_voxel[vox].push(el);
    }

    let mut locals = Vec::with_capacity(m_count);
    for elems in &by_voxel {
        // Union of free DOFs over the voxel's elements, sorted.
        let mut dofs: Vec<usize> = elems
            .iter()
            .flat_map(|&el| mesh.element_free_dofs(el).into_iter().flatten())
            .collect();
        dofs.sort_unstable();
        dofs.dedup();
        let nd = dofs.len();
        let mut k = DMatrix::zeros(nd, nd);
        let mut m = DMatrix::zeros(nd, nd);
        for &el in elems {
            let (ke, me) = match mesh.kind {
                MeshKind::SolidHex8 => {
                    let mut coords = [[0.0; 3]; 8];
                    for (a, &v) in mesh.elements[el].iter().enumerate() {
                        coords[a] = mesh.vertices[v];
                    }
                    hex8_unit_matrices(&coords, nu)?
                }
                MeshKind::MembraneTri3 => {
                    let mut coords = [[0.0; 3]; 3];
                    for (a, &v) in mesh.elements[el].iter().enumerate() {
                        coords[a] = mesh.vertices[v];
                    }
                    tri3_unit_matrices(&coords)?
                }
            };
            let el_dofs = mesh.element_free_dofs(el);
            debug_assert_eq!(el_dofs.len(), mesh.elements[el].len() * dpv);
            // Map element-local rows to voxel-local rows, skipping fixed DOFs.
            let map: Vec<Option<usize>> = el_dofs
                .iter()
                .map(|d| d.map(|d| dofs.binary_search(&d).unwrap()))
                .collect();
            for (r, &mr) in map.iter().enumerate() {
                let Some(mr) = mr else { continue };
                for (c, &mc) in map.iter().enumerate() {
                    let Some(mc) = mc else { continue };
                    k[(mr, mc)] += ke[(r, c)];
                    m[(mr, mc)] += me[(r, c)];
                }
            }
        }
        locals.push(VoxelLocal { dofs, k, m });
    }

    // Global sparsity pattern: union of all voxel blocks.
    let mut coo = CooMatrix::new(n, n);
    for loc in &locals {
        for &r in &loc.dofs {
            for &c in &loc.dofs {
                coo.push(r, c, 1.0);
            }
        }
    }
    let pattern_csr = CsrMatrix::from(&coo);
    let row_offsets = pattern_csr.row_offsets().to_vec();
    let col_indices = pattern_csr.col_indices().to_vec();

    // Scatter plan: value index of each local entry in the global pattern.
    let mut scatter = Vec::with_capacity(m_count);
    for loc in &locals {
        let nd = loc.dofs.len();
        let mut entries = Vec::with_capacity(nd * nd);
        for (r, &gr) in loc.dofs.iter().enumerate() {
            let cols = &col_indices[row_offsets[gr]..row_offsets[gr + 1]];
            for (c, &gc) in loc.dofs.iter().enumerate() {
                let off = cols.binary_search(&gc).expect("entry in pattern");
                entries.push((row_offsets[gr] + off, loc.k[(r, c)], loc.m[(r, c)]));
            }
        }
        scatter.push(entries);
    }

    Ok(UnitMatrixSet {
        n,
        nu,
        kind: mesh.kind,
        locals,
        row_offsets,
        col_indices,
        scatter,
    })
}

/// Convenience: unit matrices assembled and scaled in one step.
pub fn assemble_global(units: &UnitMatrixSet, field: &MaterialField) -> Result<GlobalSystem> {
    units.assemble(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::grid::VoxelGrid;
    use crate::fem::mesh::{build_cube_mesh, build_membrane_mesh, Face};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn csr_to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(a.nrows(), a.ncols());
        for (i, j, &v) in a.triplet_iter() {
            d[(i, j)] = v;
        }
        d
    }

    #[test]
    fn zero_modulus_gives_zero_stiffness() {
        let grid = VoxelGrid::new([2, 2, 2], 0.5, [0.0; 3]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
        // Bypass MaterialField validation: linearity at w = 0 is structural.
        let field = MaterialField {
            w: DVector::zeros(8),
            v: DVector::from_element(8, 1.0),
            nu: 0.3,
        };
        let sys = units.assemble(&field).unwrap();
        assert_eq!(csr_to_dense(&sys.k).amax(), 0.0);
        assert!(csr_to_dense(&sys.m).amax() > 0.0);
    }

    #[test]
    fn homogeneous_assembly_scales_unit_sum() {
        let grid = VoxelGrid::new([2, 2, 1], 0.5, [0.0; 3]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
        let unit_field = MaterialField::homogeneous(4, 1.0, 1.0, 0.3).unwrap();
        let jello = MaterialField::homogeneous(4, 9000.0, 1270.0, 0.3).unwrap();
        let s1 = units.assemble(&unit_field).unwrap();
        let sj = units.assemble(&jello).unwrap();
        let diff = (csr_to_dense(&sj.k) - 9000.0 * csr_to_dense(&s1.k)).amax();
        assert!(diff < 1e-9 * csr_to_dense(&sj.k).amax());
        let diffm = (csr_to_dense(&sj.m) - 1270.0 * csr_to_dense(&s1.m)).amax();
        assert!(diffm < 1e-9 * csr_to_dense(&sj.m).amax());
    }

    #[test]
    fn assembly_matches_direct_per_element_oracle() {
        // Direct assembly that never forms unit matrices: scale each element
        // matrix by its voxel's material value and scatter into a dense global.
        let grid = VoxelGrid::new([2, 2, 2], 0.3, [0.1, -0.2, 0.0]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let nu = 0.3;
        let mut rng = StdRng::seed_from_u64(11);
        let w = DVector::from_fn(8, |_, _| rng.gen_range(1000.0..10000.0));
        let v = DVector::from_fn(8, |_, _| rng.gen_range(500.0..2000.0));

        let n = mesh.free_dof_count();
        let mut k_ref = DMatrix::zeros(n, n);
        let mut m_ref = DMatrix::zeros(n, n);
        for (el, conn) in mesh.elements.iter().enumerate() {
            let mut coords = [[0.0; 3]; 8];
            for (a, &vv) in conn.iter().enumerate() {
                coords[a] = mesh.vertices[vv];
            }
            let (ke, me) = hex8_unit_matrices(&coords, nu).unwrap();
            let e = mesh.voxel_of_element[el];
            let dofs = mesh.element_free_dofs(el);
            for (r, &dr) in dofs.iter().enumerate() {
                let Some(dr) = dr else { continue };
                for (c, &dc) in dofs.iter().enumerate() {
                    let Some(dc) = dc else { continue };
                    k_ref[(dr, dc)] += w[e] * ke[(r, c)];
                    m_ref[(dr, dc)] += v[e] * me[(r, c)];
                }
            }
        }

        let units = assemble_unit_matrices(&mesh, nu).unwrap();
        let sys = units
            .assemble(&MaterialField { w, v, nu })
            .unwrap();
        let kerr = (csr_to_dense(&sys.k) - &k_ref).amax() / k_ref.amax();
        let merr = (csr_to_dense(&sys.m) - &m_ref).amax() / m_ref.amax();
        assert!(kerr < 1e-12, "K mismatch {kerr}");
        assert!(merr < 1e-12, "M mismatch {merr}");
    }

    #[test]
    fn assembly_is_linear_in_fields() {
        let grid = VoxelGrid::new([2, 2, 2], 0.4, [0.0; 3]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let units = assemble_unit_matrices(&mesh, 0.25).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let f1 = MaterialField {
                w: DVector::from_fn(8, |_, _| rng.gen_range(1.0..10.0)),
                v: DVector::from_fn(8, |_, _| rng.gen_range(1.0..10.0)),
                nu: 0.25,
            };
            let f2 = MaterialField {
                w: DVector::from_fn(8, |_, _| rng.gen_range(1.0..10.0)),
                v: DVector::from_fn(8, |_, _| rng.gen_range(1.0..10.0)),
                nu: 0.25,
            };
            let (a, b) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
            let mix = MaterialField {
                w: a * &f1.w + b * &f2.w,
                v: a * &f1.v + b * &f2.v,
                nu: 0.25,
            };
            let s1 = units.assemble(&f1).unwrap();
            let s2 = units.assemble(&f2).unwrap();
            let sm = units.assemble(&mix).unwrap();
            let k_lin = a * csr_to_dense(&s1.k) + b * csr_to_dense(&s2.k);
            let m_lin = a * csr_to_dense(&s1.m) + b * csr_to_dense(&s2.m);
            assert!((csr_to_dense(&sm.k) - &k_lin).amax() <= 1e-12 * k_lin.amax());
            assert!((csr_to_dense(&sm.m) - &m_lin).amax() <= 1e-12 * m_lin.amax());
        }
    }

    #[test]
    fn assembled_matrices_are_exactly_symmetric() {
        let grid = VoxelGrid::new([3, 2, 2], 0.25, [0.0; 3]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
        let field = MaterialField::homogeneous(12, 9000.0, 1270.0, 0.3).unwrap();
        let sys = units.assemble(&field).unwrap();
        for dm in [csr_to_dense(&sys.k), csr_to_dense(&sys.m)] {
            assert_eq!((&dm - dm.transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn membrane_units_assemble() {
        let grid = VoxelGrid::new([4, 4, 1], 0.1, [0.0; 3]).unwrap();
        let mesh = build_membrane_mesh(&grid, true).unwrap();
        let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
        assert_eq!(units.n(), 9);
        assert_eq!(units.voxel_count(), 16);
        let field = MaterialField::homogeneous(16, 1e6, 1e3, 0.3).unwrap();
        let sys = units.assemble(&field).unwrap();
        let kd = csr_to_dense(&sys.k);
        assert_eq!((&kd - kd.transpose()).amax(), 0.0);
    }

    #[test]
    fn local_products_match_dense() {
        let grid = VoxelGrid::new([2, 1, 1], 0.5, [0.0; 3]).unwrap();
        let mesh = build_cube_mesh(&grid, Some(Face::ZMin));
        let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
        let n = units.n();
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * 0.17).cos()).collect();
        for e in 0..units.voxel_count() {
            let (dofs, kv, _) = units.local_products(e, &u);
            let mut out = vec![0.0; n];
            units.add_k_times(e, &u, 1.0, &mut out);
            for (i, &d) in dofs.iter().enumerate() {
                assert!((out[d] - kv[i]).abs() < 1e-14);
            }
        }
    }
}
