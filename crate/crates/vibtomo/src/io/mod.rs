//! File formats: mesh JSON, displacement-series binary container,
//! observations JSON, volume JSON, and the inversion config/result documents.
//!
//! All 64-bit float payloads round-trip losslessly: JSON numbers are written
//! with enough precision via serde_json's shortest-round-trip formatting, and
//! the series container stores raw little-endian f64.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{build_cube_mesh, build_membrane_mesh, Face, Mesh, MeshKind, VoxelGrid};
use crate::inverse::InversionConfig;
use crate::modal::DisplacementSeries;
use crate::observation::{ImageSeries, ObservedMode, ProjectionModel};

// ---------------------------------------------------------------------------
// Mesh document
// ---------------------------------------------------------------------------

/// Mesh on disk. Structured meshes (`fixed_face` / `boundary_fixed` present,
/// no explicit vertex list) regenerate their geometry on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshDoc {
    pub format: String,
    pub version: u32,
    pub kind: MeshKind,
    pub grid: VoxelGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_face: Option<Face>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_fixed: Option<bool>,
    pub fixed_vertices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_of_element: Option<Vec<usize>>,
}

pub const MESH_FORMAT: &str = "vibtomo-mesh";

/// Describes how a structured mesh was built, for compact serialization.
#[derive(Debug, Clone, Copy)]
pub enum MeshBuild {
    Cube { fixed_face: Option<Face> },
    Membrane { boundary_fixed: bool },
    Explicit,
}

pub fn mesh_to_doc(mesh: &Mesh, build: MeshBuild) -> MeshDoc {
    let mut doc = MeshDoc {
        format: MESH_FORMAT.into(),
        version: 1,
        kind: mesh.kind,
        grid: mesh.grid.clone(),
        fixed_face: None,
        boundary_fixed: None,
        fixed_vertices: mesh.fixed_vertices.iter().copied().collect(),
        vertices: None,
        elements: None,
        voxel_of_element: None,
    };
    match build {
        MeshBuild::Cube { fixed_face } => doc.fixed_face = fixed_face,
        MeshBuild::Membrane { boundary_fixed } => doc.boundary_fixed = Some(boundary_fixed),
        MeshBuild::Explicit => {
            doc.vertices = Some(mesh.vertices.clone());
            doc.elements = Some(mesh.elements.clone());
            doc.voxel_of_element = Some(mesh.voxel_of_element.clone());
        }
    }
    doc
}

pub fn mesh_from_doc(doc: &MeshDoc) -> Result<Mesh> {
    if doc.format != MESH_FORMAT {
        return Err(Error::Format(format!("not a mesh document: {}", doc.format)));
    }
    if let (Some(vertices), Some(elements), Some(voxels)) =
        (&doc.vertices, &doc.elements, &doc.voxel_of_element)
    {
        let fixed: BTreeSet<usize> = doc.fixed_vertices.iter().copied().collect();
        return Mesh::new(
            doc.kind,
            vertices.clone(),
            elements.clone(),
            fixed,
            voxels.clone(),
            doc.grid.clone(),
        );
    }
    let mesh = match doc.kind {
        MeshKind::SolidHex8 => build_cube_mesh(&doc.grid, doc.fixed_face),
        MeshKind::MembraneTri3 => {
            build_membrane_mesh(&doc.grid, doc.boundary_fixed.unwrap_or(false))?
        }
    };
    // Guard against stale documents edited by hand.
    let expect: Vec<usize> = mesh.fixed_vertices.iter().copied().collect();
    if expect != doc.fixed_vertices {
        return Err(Error::Format(
            "fixed_vertices in the document do not match the regenerated mesh".into(),
        ));
    }
    Ok(mesh)
}

pub fn write_mesh(path: &Path, mesh: &Mesh, build: MeshBuild) -> Result<()> {
    write_json(path, &mesh_to_doc(mesh, build))
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let doc: MeshDoc = read_json(path)?;
    mesh_from_doc(&doc)
}

// ---------------------------------------------------------------------------
// Displacement / image series container
// ---------------------------------------------------------------------------

const SERIES_MAGIC: &[u8; 4] = b"VTSB";
const SERIES_VERSION: u32 = 1;
const DTYPE_F64_LE: u32 = 0;

/// Sidecar naming the mesh a series belongs to and its space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesSidecar {
    pub format: String,
    pub mesh: String,
    /// "model" (free DOFs) or "image" (2q pixel DOFs).
    pub space: String,
    pub file: String,
}

pub const SERIES_SIDECAR_FORMAT: &str = "vibtomo-series";

/// Writes the binary container: magic, version, dtype, dof count, frame
/// count, fps, then row-major (frame-major) little-endian f64 frames.
pub fn write_series_data(path: &Path, data: &DMatrix<f64>, fps: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(SERIES_MAGIC)?;
    f.write_all(&SERIES_VERSION.to_le_bytes())?;
    f.write_all(&DTYPE_F64_LE.to_le_bytes())?;
    f.write_all(&(data.ncols() as u64).to_le_bytes())?;
    f.write_all(&(data.nrows() as u64).to_le_bytes())?;
    f.write_all(&fps.to_le_bytes())?;
    for t in 0..data.nrows() {
        for d in 0..data.ncols() {
            f.write_all(&data[(t, d)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_series_data(path: &Path) -> Result<(DMatrix<f64>, f64)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != SERIES_MAGIC {
        return Err(Error::Format("bad series magic".into()));
    }
    let mut buf4 = [0u8; 4];
    f.read_exact(&mut buf4)?;
    if u32::from_le_bytes(buf4) != SERIES_VERSION {
        return Err(Error::Format("unsupported series version".into()));
    }
    f.read_exact(&mut buf4)?;
    if u32::from_le_bytes(buf4) != DTYPE_F64_LE {
        return Err(Error::Format("unsupported series dtype".into()));
    }
    let mut buf8 = [0u8; 8];
    f.read_exact(&mut buf8)?;
    let n = u64::from_le_bytes(buf8) as usize;
    f.read_exact(&mut buf8)?;
    let t = u64::from_le_bytes(buf8) as usize;
    f.read_exact(&mut buf8)?;
    let fps = f64::from_le_bytes(buf8);
    let mut data = DMatrix::zeros(t, n);
    for r in 0..t {
        for d in 0..n {
            f.read_exact(&mut buf8)?;
            data[(r, d)] = f64::from_le_bytes(buf8);
        }
    }
    Ok((data, fps))
}

pub fn write_displacement_series(
    path: &Path,
    series: &DisplacementSeries,
    mesh_file: &str,
) -> Result<()> {
    write_series_data(path, &series.data, series.fps)?;
    let sidecar = SeriesSidecar {
        format: SERIES_SIDECAR_FORMAT.into(),
        mesh: mesh_file.into(),
        space: "model".into(),
        file: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_json(&path.with_extension("json"), &sidecar)
}

pub fn write_image_series(path: &Path, series: &ImageSeries, mesh_file: &str) -> Result<()> {
    write_series_data(path, &series.data, series.fps)?;
    let sidecar = SeriesSidecar {
        format: SERIES_SIDECAR_FORMAT.into(),
        mesh: mesh_file.into(),
        space: "image".into(),
        file: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_json(&path.with_extension("json"), &sidecar)
}

pub fn read_image_series(path: &Path) -> Result<ImageSeries> {
    let (data, fps) = read_series_data(path)?;
    Ok(ImageSeries { data, fps })
}

// ---------------------------------------------------------------------------
// Observations document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationsDoc {
    pub format: String,
    pub version: u32,
    /// Vertex count of the observed mesh; gammas have length `2q`.
    pub q: usize,
    pub projection: ProjectionModel,
    pub visible_vertices: Vec<usize>,
    pub modes: Vec<ObservedModeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservedModeDoc {
    pub omega_rad_s: f64,
    pub bin: usize,
    pub power: f64,
    pub gamma: Vec<f64>,
}

pub const OBSERVATIONS_FORMAT: &str = "vibtomo-observations";

pub fn observations_to_doc(
    modes: &[ObservedMode],
    projection: &ProjectionModel,
    visible: &[usize],
    q: usize,
) -> ObservationsDoc {
    ObservationsDoc {
        format: OBSERVATIONS_FORMAT.into(),
        version: 1,
        q,
        projection: projection.clone(),
        visible_vertices: visible.to_vec(),
        modes: modes
            .iter()
            .map(|m| ObservedModeDoc {
                omega_rad_s: m.omega,
                bin: m.bin,
                power: m.power,
                gamma: m.gamma.as_slice().to_vec(),
            })
            .collect(),
    }
}

pub fn observations_from_doc(doc: &ObservationsDoc) -> Result<Vec<ObservedMode>> {
    if doc.format != OBSERVATIONS_FORMAT {
        return Err(Error::Format(format!(
            "not an observations document: {}",
            doc.format
        )));
    }
    doc.modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.gamma.len() != 2 * doc.q {
                return Err(Error::Shape(format!(
                    "mode {i} gamma has {} entries, expected {}",
                    m.gamma.len(),
                    2 * doc.q
                )));
            }
            Ok(ObservedMode {
                gamma: DVector::from_column_slice(&m.gamma),
                omega: m.omega_rad_s,
                bin: m.bin,
                power: m.power,
            })
        })
        .collect()
}

pub fn write_observations(
    path: &Path,
    modes: &[ObservedMode],
    projection: &ProjectionModel,
    visible: &[usize],
    q: usize,
) -> Result<()> {
    write_json(path, &observations_to_doc(modes, projection, visible, q))
}

pub fn read_observations(path: &Path) -> Result<ObservationsDoc> {
    let doc: ObservationsDoc = read_json(path)?;
    if doc.format != OBSERVATIONS_FORMAT {
        return Err(Error::Format(format!(
            "not an observations document: {}",
            doc.format
        )));
    }
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Volume document
// ---------------------------------------------------------------------------

/// Scalar voxel field on disk, row-major with x varying fastest:
/// `values[(iz * ny + iy) * nx + ix]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeFile {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub field: String,
    pub units: String,
    pub values: Vec<f64>,
}

pub const VOLUME_FORMAT: &str = "vibtomo-volume";

impl VolumeFile {
    pub fn new(dims: [usize; 3], spacing: f64, field: &str, units: &str, values: Vec<f64>) -> Result<Self> {
        let m = dims[0] * dims[1] * dims[2];
        if values.len() != m {
            return Err(Error::Shape(format!(
                "volume has {} values, dims give {m}",
                values.len()
            )));
        }
        Ok(Self {
            format: VOLUME_FORMAT.into(),
            version: 1,
            dims,
            spacing,
            field: field.into(),
            units: units.into(),
            values,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != VOLUME_FORMAT {
            return Err(Error::Format(format!("not a volume document: {}", self.format)));
        }
        let m = self.dims[0] * self.dims[1] * self.dims[2];
        if self.values.len() != m {
            return Err(Error::Shape(format!(
                "volume has {} values, dims give {m}",
                self.values.len()
            )));
        }
        Ok(())
    }
}

pub fn write_volume(path: &Path, volume: &VolumeFile) -> Result<()> {
    volume.validate()?;
    write_json(path, volume)
}

pub fn read_volume(path: &Path) -> Result<VolumeFile> {
    let v: VolumeFile = read_json(path)?;
    v.validate()?;
    Ok(v)
}

// ---------------------------------------------------------------------------
// Inversion config document
// ---------------------------------------------------------------------------

/// On-disk mirror of [`InversionConfig`] plus the Poisson's ratio used to
/// assemble unit matrices. Scalar `w_init`/`v_init` mean homogeneous fields;
/// `alpha_u = null` selects the mode-count default (10 if k >= 10 else 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionConfigDoc {
    #[serde(default)]
    pub alpha_u: Option<f64>,
    pub alpha_w: f64,
    pub alpha_v: f64,
    pub eta: f64,
    pub w_bar: f64,
    pub w_init: ScalarOrField,
    pub v_init: ScalarOrField,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub nu: f64,
    #[serde(default = "default_y_init")]
    pub y_init: f64,
    #[serde(default = "default_true")]
    pub v_proximal: bool,
    #[serde(default = "default_true")]
    pub positivity_floor: bool,
}

fn default_y_init() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrField {
    Scalar(f64),
    Field(Vec<f64>),
}

impl ScalarOrField {
    pub fn to_field(&self, m: usize) -> Result<DVector<f64>> {
        match self {
            ScalarOrField::Scalar(s) => Ok(DVector::from_element(m, *s)),
            ScalarOrField::Field(f) => {
                if f.len() != m {
                    return Err(Error::Shape(format!(
                        "initial field has {} entries, expected {m}",
                        f.len()
                    )));
                }
                Ok(DVector::from_column_slice(f))
            }
        }
    }
}

impl InversionConfigDoc {
    /// Resolves the document into a runnable config for `m` voxels and
    /// `mode_count` observations.
    pub fn resolve(&self, m: usize, mode_count: usize) -> Result<InversionConfig> {
        Ok(InversionConfig {
            alpha_u: self
                .alpha_u
                .unwrap_or_else(|| crate::inverse::default_alpha_u(mode_count)),
            alpha_w: self.alpha_w,
            alpha_v: self.alpha_v,
            eta: self.eta,
            w_bar: self.w_bar,
            w_init: self.w_init.to_field(m)?,
            v_init: self.v_init.to_field(m)?,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            y_init: self.y_init,
            v_proximal: self.v_proximal,
            positivity_floor: self.positivity_floor,
        })
    }

    pub fn cube_defaults() -> Self {
        Self {
            alpha_u: None,
            alpha_w: 1e-10,
            alpha_v: 1e-7,
            eta: 1.0,
            w_bar: 9000.0,
            w_init: ScalarOrField::Scalar(9000.0),
            v_init: ScalarOrField::Scalar(1270.0),
            max_iters: 100,
            rel_tol: 1e-4,
            nu: 0.3,
            y_init: 1.0,
            v_proximal: true,
            positivity_floor: true,
        }
    }

    pub fn drum_defaults() -> Self {
        Self {
            alpha_u: Some(1e12),
            alpha_w: 0.1,
            alpha_v: 0.1,
            eta: 1.0,
            w_bar: 1e6,
            w_init: ScalarOrField::Scalar(1e6),
            v_init: ScalarOrField::Scalar(1e3),
            max_iters: 100,
            rel_tol: 1e-4,
            nu: 0.3,
            y_init: 1.0,
            v_proximal: true,
            positivity_floor: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Inversion result document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionResultDoc {
    pub iterations: usize,
    pub converged: bool,
    pub objective_history: Vec<f64>,
    pub residuals: Vec<f64>,
    pub clamp_count: usize,
    pub v_rank_deficient: bool,
    pub y: Vec<f64>,
}

impl InversionResultDoc {
    pub fn from_state(state: &crate::inverse::SolverState) -> Self {
        Self {
            iterations: state.iterations,
            converged: state.converged,
            objective_history: state.objective_history.clone(),
            residuals: state.residuals.clone(),
            clamp_count: state.clamp_count,
            v_rank_deficient: state.v_rank_deficient,
            y: state.y.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}
