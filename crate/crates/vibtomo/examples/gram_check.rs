// Temporary diagnostic: scale balance of the alternating scheme.
use nalgebra::DVector;
use vibtomo::fem::{assemble_unit_matrices, build_cube_mesh, Face, MaterialField, VoxelGrid};
use vibtomo::inverse::{InversionConfig, InversionProblem};
use vibtomo::modal::{solve_modes_with, EigenMethod, EigenOptions};
use vibtomo::observation::{build_sampling_operator, ObservedMode, ProjectionModel, Visibility};

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    num / (da.sqrt() * db.sqrt())
}

const DIMS: [usize; 3] = [2, 2, 2];

fn trial(contrast: f64, chi: f64, wbar_mean: bool, iters: usize, k: usize, prox: bool, eta: f64, refine: usize, alpha_u: f64, y0: f64) {
    let dims = DIMS;
    let grid = VoxelGrid::new(dims, 0.1 / dims[0] as f64, [0.0; 3]).unwrap();
    // Mesh refined by `refine` per voxel axis, mapped back to the 3x3x3 grid.
    let fine = VoxelGrid::new(
        [dims[0] * refine, dims[1] * refine, dims[2] * refine],
        grid.spacing / refine as f64,
        grid.origin,
    )
    .unwrap();
    let mut mesh = build_cube_mesh(&fine, Some(Face::ZMin));
    for (el, vox) in mesh.voxel_of_element.iter_mut().enumerate() {
        let center_el = el; let _ = center_el;
        let c = fine.voxel_coords(*vox);
        *vox = grid.voxel_index(c[0] / refine, c[1] / refine, c[2] / refine);
    }
    let mesh = vibtomo::fem::Mesh::new(
        mesh.kind, mesh.vertices.clone(), mesh.elements.clone(), mesh.fixed_vertices.clone(),
        mesh.voxel_of_element.clone(), grid.clone(),
    ).unwrap();
    let units = assemble_unit_matrices(&mesh, 0.3).unwrap();
    let m = grid.voxel_count();
    let mut truth = MaterialField::homogeneous(m, 9000.0, 1270.0, 0.3).unwrap();
    truth.w[m - 1] = 9000.0 * contrast;
    truth.v[m - 1] = 1270.0 * contrast.min(6.0);
    let system = units.assemble(&truth).unwrap();
    let basis = solve_modes_with(&system, k, None, &EigenOptions { method: EigenMethod::Dense, ..Default::default() }).unwrap();
    // Stiffness scale of the homogeneous background system.
    let bg = units.assemble(&MaterialField::homogeneous(m, 9000.0, 1270.0, 0.3).unwrap()).unwrap();
    let kscale = bg.k.values().iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let cam = kscale / chi;
    let proj = ProjectionModel::orthographic([-1.0, -1.0, -1.0], cam, [0.0, 0.0]).unwrap();
    let sampler = build_sampling_operator(&mesh, &proj, &Visibility::All).unwrap();
    let observations: Vec<ObservedMode> = (0..k).map(|i| {
        let u = basis.modes.column(i).into_owned();
        let mut gamma = sampler.apply(&u);
        let nn = gamma.norm(); gamma /= nn;
        ObservedMode { gamma, omega: basis.omega_sq[i].sqrt(), bin: i + 1, power: 1.0 }
    }).collect();
    let mut config = InversionConfig {
        w_bar: if wbar_mean { truth.w.sum() / m as f64 } else { 9000.0 },
        max_iters: iters,
        rel_tol: 1e-7,
        ..InversionConfig::cube_defaults(m, k)
    };
    config.v_proximal = prox;
    config.eta = eta;
    config.alpha_u = alpha_u;
    config.y_init = y0;
    let prob = InversionProblem::new(&observations, &sampler, &units, &grid, config).unwrap();
    let (field, state) = prob.run().unwrap();
    let corr_w = pearson(&field.w, &truth.w);
    let corr_v = pearson(&field.v, &truth.v);
    println!(
        "c {contrast:4.0} chi {chi:5.1} k {k:2} prox {prox} eta {eta:3.1} ref {refine} au {alpha_u:5.0} cam {:8.1} it {:3} conv {} corr_w {corr_w:+.6} corr_v {corr_v:+.6} y0 {:8.2}",
        cam, state.iterations, state.converged, state.y[0]
    );
}

fn main() {
    trial(3.0, 40.0, true, 100, 24, false, 10.0, 1, 300.0, 10.0);
    trial(3.0, 40.0, true, 100, 30, false, 10.0, 1, 300.0, 10.0);
    trial(3.0, 30.0, true, 100, 24, false, 10.0, 1, 300.0, 10.0);
}
