//! Free-vibration transient response by exact modal superposition.
//!
//! Each modal coordinate evolves in closed form as a damped harmonic
//! oscillator, so there is no time-integration error; truncation to the
//! supplied basis is the only approximation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{GlobalSystem, Mesh};
use crate::linalg::BandMatrix;
use crate::modal::damping::RayleighDamping;
use crate::modal::eigen::ModalBasis;

/// Sampled free-DOF displacement history. `data` is T x n with each DOF's
/// trace stored contiguously (column-major), `data[(t, dof)]` in meters.
#[derive(Debug, Clone)]
pub struct DisplacementSeries {
    pub data: DMatrix<f64>,
    pub fps: f64,
}

impl DisplacementSeries {
    pub fn frame_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dof_count(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.fps
    }

    pub fn frame(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }
}

/// Closed-form modal coordinate and velocity at time `t` for initial
/// conditions `(q0, qd0)`.
pub fn modal_coordinate(omega: f64, zeta: f64, q0: f64, qd0: f64, t: f64) -> (f64, f64) {
    if omega == 0.0 {
        // Rigid mode: uniform drift.
        return (q0 + qd0 * t, qd0);
    }
    let wd = omega * (1.0 - zeta * zeta).max(0.0).sqrt();
    let decay = (-zeta * omega * t).exp();
    let c = (qd0 + zeta * omega * q0) / wd;
    let (s, co) = (wd * t).sin_cos();
    let q = decay * (q0 * co + c * s);
    let qd = decay * ((-zeta * omega) * (q0 * co + c * s) + wd * (c * co - q0 * s));
    (q, qd)
}

/// Simulates free vibration from an initial displacement (and optional
/// velocity), sampling `round(duration * fps)` frames at `fps`.
pub fn simulate_transient(
    basis: &ModalBasis,
    damping: &RayleighDamping,
    d0: &DVector<f64>,
    v0: Option<&DVector<f64>>,
    fps: f64,
    duration: f64,
) -> Result<DisplacementSeries> {
    let n = basis.n();
    if d0.len() != n {
        return Err(Error::Shape(format!(
            "initial displacement has {} entries, expected {n}",
            d0.len()
        )));
    }
    if let Some(v) = v0 {
        if v.len() != n {
            return Err(Error::Shape(format!(
                "initial velocity has {} entries, expected {n}",
                v.len()
            )));
        }
    }
    if !(fps > 0.0) {
        return Err(Error::Validation(format!("fps must be positive, got {fps}")));
    }
    let frames = (duration * fps).round() as i64;
    if frames < 2 {
        return Err(Error::Validation(format!(
            "duration {duration} s at {fps} FPS yields {frames} frames, need at least 2"
        )));
    }
    let t_count = frames as usize;
    let k = basis.len();

    // Project initial conditions: q_i(0) = u_i' M d0.
    let q0 = basis.m_modes.transpose() * d0;
    let qd0 = match v0 {
        Some(v) => basis.m_modes.transpose() * v,
        None => DVector::zeros(k),
    };

    let omegas = basis.omegas();
    let mut zetas = Vec::with_capacity(k);
    for (i, &w) in omegas.iter().enumerate() {
        let z = damping.zeta(w);
        if z >= 1.0 {
            return Err(Error::UnsupportedDamping(format!(
                "mode {i} at {:.3} Hz has damping ratio {z:.4} >= 1",
                w / (2.0 * std::f64::consts::PI)
            )));
        }
        zetas.push(z);
    }

    // Modal coordinates, T x k.
    let mut q = DMatrix::zeros(t_count, k);
    for i in 0..k {
        for t in 0..t_count {
            let time = t as f64 / fps;
            let (qi, _) = modal_coordinate(omegas[i], zetas[i], q0[i], qd0[i], time);
            q[(t, i)] = qi;
        }
    }
    // x(t) = sum_i q_i(t) u_i, laid out T x n.
    let data = &q * basis.modes.transpose();
    Ok(DisplacementSeries { data, fps })
}

/// Static pluck shape: a unit load along `displacement` at `vertex`, diffused
/// by solving `K x = f` and rescaled so the plucked vertex moves by exactly
/// `displacement`'s magnitude.
pub fn pluck_shape(
    system: &GlobalSystem,
    mesh: &Mesh,
    vertex: usize,
    displacement: [f64; 3],
) -> Result<DVector<f64>> {
    if vertex >= mesh.vertex_count() {
        return Err(Error::Validation(format!(
            "pluck vertex {vertex} out of {}",
            mesh.vertex_count()
        )));
    }
    let dpv = mesh.dofs_per_vertex();
    let dofs: Vec<usize> = (0..dpv)
        .filter_map(|c| mesh.free_dof(vertex, c))
        .collect();
    if dofs.is_empty() {
        return Err(Error::Validation(format!(
            "pluck vertex {vertex} is fixed"
        )));
    }
    let dir: Vec<f64> = if dpv == 3 {
        displacement.to_vec()
    } else {
        // Membrane: transverse component only.
        vec![displacement[2]]
    };
    let mag = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if !(mag > 0.0) {
        return Err(Error::Validation("pluck displacement is zero".into()));
    }

    let n = system.n();
    let mut f = DVector::zeros(n);
    for (c, &d) in dofs.iter().enumerate() {
        f[d] = dir[c] / mag;
    }
    let chol = BandMatrix::from_csr(&system.k)
        .cholesky()
        .map_err(|_| Error::Singular("stiffness is singular; pluck needs a constrained mesh".into()))?;
    let mut x = f;
    chol.solve_in_place(x.as_mut_slice());

    let at_vertex: f64 = dofs.iter().map(|&d| x[d] * x[d]).sum::<f64>().sqrt();
    if !(at_vertex > 0.0) {
        return Err(Error::Singular(
            "static solve produced no displacement at the plucked vertex".into(),
        ));
    }
    Ok(x * (mag / at_vertex))
}
