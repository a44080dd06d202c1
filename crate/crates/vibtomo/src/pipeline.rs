//! End-to-end synthetic observation generation: forward modal simulation of
//! plucked free vibration, image-space sampling, spectral peak picking, and
//! mode extraction, with optional multi-pluck merging and noise injection.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_unit_matrices, build_cube_mesh, build_membrane_mesh, Face, MaterialField, Mesh,
    MeshKind, VoxelGrid,
};
use crate::modal::{
    pluck_shape, simulate_transient, solve_modes_with, EigenOptions, ModalBasis, RayleighDamping,
};
use crate::observation::{
    add_mode_noise, build_cross_sampling_operator, extract_modes, find_peaks, merge_modes,
    power_spectrum, ObservedMode, PeakOptions, ProjectionModel, SamplingOperator, Visibility,
    Window,
};

/// Where to pluck the object.
#[derive(Debug, Clone, Copy)]
pub enum PluckSite {
    /// Explicit vertex index on the forward mesh.
    Vertex(usize),
    /// Lattice corner of a structured box mesh; `true` selects the max side.
    Corner([bool; 3]),
}

#[derive(Debug, Clone, Copy)]
pub struct Pluck {
    pub site: PluckSite,
    /// Initial displacement vector in meters (z component for membranes).
    pub displacement: [f64; 3],
}

/// Additive white Gaussian noise on extracted gammas.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Signal-to-noise power ratio.
    pub snr: f64,
    pub seed: u64,
}

/// Full description of a synthetic observation experiment.
pub struct SynthesisSpec {
    /// Forward-model grid; the mesh has one element per voxel.
    pub grid: VoxelGrid,
    pub kind: MeshKind,
    /// Fixed face for solids.
    pub fixed_face: Option<Face>,
    /// Clamped perimeter for membranes.
    pub boundary_fixed: bool,
    /// True material fields on the forward grid.
    pub truth: MaterialField,
    pub camera: ProjectionModel,
    pub visibility: Visibility,
    /// Observation mesh grid; defaults to the forward grid. A coarser grid
    /// emulates inference-mesh mismatch: motion is interpolated from the
    /// forward elements at the observation mesh's vertices.
    pub observation_grid: Option<VoxelGrid>,
    pub plucks: Vec<Pluck>,
    pub damping: RayleighDamping,
    pub fps: f64,
    pub duration: f64,
    /// Number of forward modes carried by the simulation.
    pub mode_count: usize,
    /// Truncate forward modes above this frequency; defaults to the camera
    /// Nyquist rate `fps / 2`.
    pub freq_ceiling_hz: Option<f64>,
    pub peaks: PeakOptions,
    pub window: Window,
    pub noise: Option<NoiseSpec>,
    pub eigen: EigenOptions,
}

/// Everything the synthesis produced.
pub struct SynthesisOutput {
    pub forward_mesh: Mesh,
    pub observation_mesh: Mesh,
    /// Operator from forward free DOFs to observation-mesh image space.
    pub cross_sampler: SamplingOperator,
    pub basis: ModalBasis,
    pub observations: Vec<ObservedMode>,
    /// Peaks found per pluck before merging.
    pub peak_counts: Vec<usize>,
    /// FFT bin width in Hz (also the merge tolerance).
    pub bin_width_hz: f64,
}

pub fn resolve_pluck_vertex(mesh: &Mesh, site: PluckSite) -> Result<usize> {
    match site {
        PluckSite::Vertex(v) => {
            if v >= mesh.vertex_count() {
                return Err(Error::Validation(format!(
                    "pluck vertex {v} out of {}",
                    mesh.vertex_count()
                )));
            }
            Ok(v)
        }
        PluckSite::Corner(c) => {
            let [nx, ny, nz] = mesh.grid.dims;
            let lat = [nx + 1, ny + 1, nz + 1];
            if mesh.vertex_count() != lat[0] * lat[1] * lat[2] {
                return Err(Error::Validation(
                    "corner plucks need a structured box mesh".into(),
                ));
            }
            let i = if c[0] { lat[0] - 1 } else { 0 };
            let j = if c[1] { lat[1] - 1 } else { 0 };
            let k = if c[2] { lat[2] - 1 } else { 0 };
            Ok(i + lat[0] * (j + lat[1] * k))
        }
    }
}

fn build_mesh(
    grid: &VoxelGrid,
    kind: MeshKind,
    fixed_face: Option<Face>,
    boundary_fixed: bool,
) -> Result<Mesh> {
    match kind {
        MeshKind::SolidHex8 => Ok(build_cube_mesh(grid, fixed_face)),
        MeshKind::MembraneTri3 => build_membrane_mesh(grid, boundary_fixed),
    }
}

/// Runs the forward pipeline and extracts merged image-space modes.
pub fn synthesize(spec: &SynthesisSpec) -> Result<SynthesisOutput> {
    if spec.plucks.is_empty() {
        return Err(Error::Validation("at least one pluck is required".into()));
    }
    if !(spec.duration > 0.0) || !(spec.fps > 0.0) {
        return Err(Error::Validation(format!(
            "duration {} s at {} FPS is not a valid simulation window",
            spec.duration, spec.fps
        )));
    }
    let forward_mesh = build_mesh(&spec.grid, spec.kind, spec.fixed_face, spec.boundary_fixed)?;
    if spec.truth.w.len() != spec.grid.voxel_count() {
        return Err(Error::Shape(format!(
            "truth field has {} voxels, grid has {}",
            spec.truth.w.len(),
            spec.grid.voxel_count()
        )));
    }
    let units = assemble_unit_matrices(&forward_mesh, spec.truth.nu)?;
    let system = units.assemble(&spec.truth)?;
    let ceiling = spec.freq_ceiling_hz.unwrap_or(spec.fps / 2.0);
    if 2.0 * ceiling > spec.fps {
        return Err(Error::Validation(format!(
            "frequency ceiling {ceiling} Hz exceeds the Nyquist rate of {} FPS",
            spec.fps
        )));
    }
    let mode_count = spec.mode_count.min(units.n());
    let basis = solve_modes_with(&system, mode_count, Some(ceiling), &spec.eigen)?;
    if basis.is_empty() {
        return Err(Error::Validation(
            "no forward modes below the frequency ceiling".into(),
        ));
    }

    let observation_mesh = match &spec.observation_grid {
        Some(grid) => build_mesh(grid, spec.kind, spec.fixed_face, spec.boundary_fixed)?,
        None => forward_mesh.clone(),
    };
    let cross_sampler = build_cross_sampling_operator(
        &forward_mesh,
        &observation_mesh,
        &spec.camera,
        &spec.visibility,
    )?;

    let t_frames = (spec.duration * spec.fps).round() as usize;
    let bin_width_hz = spec.fps / t_frames as f64;
    let mut lists = Vec::with_capacity(spec.plucks.len());
    let mut peak_counts = Vec::with_capacity(spec.plucks.len());
    for pluck in &spec.plucks {
        let vertex = resolve_pluck_vertex(&forward_mesh, pluck.site)?;
        let d0 = pluck_shape(&system, &forward_mesh, vertex, pluck.displacement)?;
        let series = simulate_transient(
            &basis,
            &spec.damping,
            &d0,
            None,
            spec.fps,
            spec.duration,
        )?;
        let image = cross_sampler.sample_series(&series);
        let spectrum = power_spectrum(&image, spec.window)?;
        let peaks = find_peaks(&spectrum, &spec.peaks);
        peak_counts.push(peaks.len());
        lists.push(extract_modes(&spectrum, &peaks, &cross_sampler)?);
    }
    let mut observations = merge_modes(&lists, bin_width_hz);
    if let Some(noise) = &spec.noise {
        add_mode_noise(&mut observations, noise.snr, noise.seed)?;
    }
    Ok(SynthesisOutput {
        forward_mesh,
        observation_mesh,
        cross_sampler,
        basis,
        observations,
        peak_counts,
        bin_width_hz,
    })
}

/// Largest stiffness entry of a homogeneous background assembly; fixture
/// cameras are scaled against this so the data and eigen penalties start
/// within a few orders of each other.
pub fn stiffness_scale(mesh: &Mesh, youngs: f64, density: f64, nu: f64) -> Result<f64> {
    let units = assemble_unit_matrices(mesh, nu)?;
    let m = units.voxel_count();
    let field = MaterialField::homogeneous(m, youngs, density, nu)?;
    let system = units.assemble(&field)?;
    Ok(system
        .k
        .values()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs())))
}
