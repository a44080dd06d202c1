//! Generalized eigensolver for `K u = omega^2 M u`.
//!
//! The iterative path is inverse (shift-invert) subspace iteration with
//! M-orthonormalization and a Rayleigh-Ritz projection each sweep, backed by
//! a banded Cholesky factorization of `K` (shifted by a small multiple of `M`
//! when `K` is only semi-definite). Small systems fall back to a dense solve.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::fem::GlobalSystem;
use crate::linalg::{csr_mul_mat, csr_mul_vec, BandMatrix};

/// Which eigensolver path to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below `dense_threshold` DOFs, iterative above.
    Auto,
    Dense,
    ShiftInvert,
}

/// Eigensolver configuration.
#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub method: EigenMethod,
    /// Relative residual target `|K u - l M u| / (l |M u|)`.
    pub residual_tol: f64,
    /// Maximum subspace-iteration sweeps.
    pub max_sweeps: usize,
    /// Systems at or below this size use the dense path under `Auto`.
    pub dense_threshold: usize,
    /// Seed of the deterministic start block.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            method: EigenMethod::Auto,
            residual_tol: 1e-10,
            max_sweeps: 500,
            dense_threshold: 500,
            seed: 0x5eed,
        }
    }
}

/// Mass-normalized modes and eigenvalues, sorted by ascending frequency.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// n x k mode matrix; column i satisfies `u_i' M u_i = 1`.
    pub modes: DMatrix<f64>,
    /// `M * modes`, kept for projections and orthonormality checks.
    pub m_modes: DMatrix<f64>,
    /// Eigenvalues omega_i^2 in (rad/s)^2, ascending.
    pub omega_sq: Vec<f64>,
}

impl ModalBasis {
    pub fn len(&self) -> usize {
        self.omega_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_sq.is_empty()
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    /// Angular frequencies in rad/s.
    pub fn omegas(&self) -> Vec<f64> {
        self.omega_sq.iter().map(|&l| l.max(0.0).sqrt()).collect()
    }

    /// Natural frequencies in Hz.
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.omegas()
            .iter()
            .map(|w| w / (2.0 * std::f64::consts::PI))
            .collect()
    }

    /// Relative eigen-residuals `|K u - l M u| / (l |M u|)` per mode.
    pub fn residuals(&self, system: &GlobalSystem) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let u = DVector::from_column_slice(self.modes.column(i).as_slice());
                let ku = csr_mul_vec(&system.k, &u);
                let mu = csr_mul_vec(&system.m, &u);
                let l = self.omega_sq[i];
                (&ku - l * &mu).norm() / (l.abs().max(f64::MIN_POSITIVE) * mu.norm())
            })
            .collect()
    }
}

/// Computes the `k` lowest eigenpairs of `(K, M)`, optionally truncated to
/// frequencies at or below `freq_ceiling_hz`.
pub fn solve_modes(
    system: &GlobalSystem,
    k: usize,
    freq_ceiling_hz: Option<f64>,
) -> Result<ModalBasis> {
    solve_modes_with(system, k, freq_ceiling_hz, &EigenOptions::default())
}

/// [`solve_modes`] with explicit solver options.
pub fn solve_modes_with(
    system: &GlobalSystem,
    k: usize,
    freq_ceiling_hz: Option<f64>,
    opts: &EigenOptions,
) -> Result<ModalBasis> {
    let n = system.n();
    if k == 0 || k > n {
        return Err(Error::Validation(format!(
            "requested {k} modes from a system with {n} DOFs"
        )));
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::ShiftInvert => false,
        EigenMethod::Auto => n <= opts.dense_threshold,
    };
    let (modes, omega_sq) = if dense {
        dense_lowest(system, k)?
    } else {
        subspace_lowest(system, k, opts)?
    };
    let mut basis = finalize(system, modes, omega_sq);
    if let Some(ceiling) = freq_ceiling_hz {
        let keep = basis
            .frequencies_hz()
            .iter()
            .take_while(|&&f| f <= ceiling)
            .count();
        basis.modes = basis.modes.columns(0, keep).into_owned();
        basis.m_modes = basis.m_modes.columns(0, keep).into_owned();
        basis.omega_sq.truncate(keep);
    }
    Ok(basis)
}

/// Sign-fixes columns (largest-magnitude entry positive) and attaches `M U`.
fn finalize(system: &GlobalSystem, mut modes: DMatrix<f64>, omega_sq: Vec<f64>) -> ModalBasis {
    for mut col in modes.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let m_modes = csr_mul_mat(&system.m, &modes);
    ModalBasis {
        modes,
        m_modes,
        omega_sq,
    }
}

fn dense_lowest(system: &GlobalSystem, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = system.n();
    let mut kd = DMatrix::zeros(n, n);
    let mut md = DMatrix::zeros(n, n);
    for (i, j, &v) in system.k.triplet_iter() {
        kd[(i, j)] = v;
    }
    for (i, j, &v) in system.m.triplet_iter() {
        md[(i, j)] = v;
    }
    let chol = md
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // A = L^-1 K L^-T via two triangular solves.
    let y = l
        .solve_lower_triangular(&kd)
        .ok_or_else(|| Error::Singular("mass Cholesky factor is singular".into()))?;
    let a = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Singular("mass Cholesky factor is singular".into()))?;
    let a = 0.5 * (&a + a.transpose());
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut modes = DMatrix::zeros(n, k);
    let mut omega_sq = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let q = eig.eigenvectors.column(idx).into_owned();
        let u = lt
            .solve_upper_triangular(&q)
            .ok_or_else(|| Error::Singular("mass Cholesky factor is singular".into()))?;
        modes.set_column(c, &u);
        omega_sq.push(eig.eigenvalues[idx]);
    }
    Ok((modes, omega_sq))
}

fn subspace_lowest(
    system: &GlobalSystem,
    k: usize,
    opts: &EigenOptions,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = system.n();
    let kb = BandMatrix::from_csr(&system.k);
    let mb = BandMatrix::from_csr(&system.m);
    // PD check on M; the factor itself is not needed further.
    mb.clone()
        .cholesky()
        .map_err(|_| Error::Singular("mass matrix is not positive definite".into()))?;

    // Factor K, shifting toward K + delta*M if K is only semi-definite.
    let scale = kb.trace().abs().max(f64::MIN_POSITIVE) / mb.trace().abs().max(f64::MIN_POSITIVE);
    let mut delta = 0.0;
    let factor = loop {
        let mut shifted = kb.clone();
        if delta > 0.0 {
            let mshift = BandMatrix::from_csr(&system.m);
            for i in 0..n {
                for j in i.saturating_sub(mshift.bandwidth())..=i {
                    let v = mshift.get(i, j);
                    if v != 0.0 {
                        shifted.add(i, j, delta * v);
                    }
                }
            }
        }
        match shifted.cholesky() {
            Ok(f) => break f,
            Err(_) if delta == 0.0 => delta = 1e-8 * scale,
            Err(_) if delta < scale => delta *= 1e4,
            Err(e) => return Err(e),
        }
    };

    let s = (2 * k + 8).min(n);
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, s, |_, _| rng.gen_range(-1.0..1.0));
    let mut theta = vec![0.0f64; s];

    for sweep in 0..opts.max_sweeps {
        // Inverse iteration step: Y = (K + delta M)^-1 (M X).
        let mut y = csr_mul_mat(&system.m, &x);
        factor.solve_matrix_in_place(&mut y);

        // M-orthonormalize Y (modified Gram-Schmidt, two passes).
        let mut my = DMatrix::zeros(n, s);
        for j in 0..s {
            let mut yj = y.column(j).into_owned();
            let mut myj = csr_mul_vec(&system.m, &yj);
            for _pass in 0..2 {
                for i in 0..j {
                    let c = y.column(i).dot(&myj);
                    yj.axpy(-c, &y.column(i).into_owned(), 1.0);
                    myj.axpy(-c, &my.column(i).into_owned(), 1.0);
                }
            }
            let nrm = yj.dot(&myj).max(0.0).sqrt();
            if nrm < 1e-300 {
                // Replace a collapsed direction with fresh randomness.
                yj = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                myj = csr_mul_vec(&system.m, &yj);
                let nrm2 = yj.dot(&myj).sqrt();
                yj /= nrm2;
                myj /= nrm2;
            } else {
                yj /= nrm;
                myj /= nrm;
            }
            y.set_column(j, &yj);
            my.set_column(j, &myj);
        }

        // Rayleigh-Ritz on the subspace with the true (unshifted) K.
        let ky = csr_mul_mat(&system.k, &y);
        let kred = y.transpose() * &ky;
        let mred = y.transpose() * &my;
        let kred = 0.5 * (&kred + kred.transpose());
        let mred = 0.5 * (&mred + mred.transpose());
        let chol = mred
            .cholesky()
            .ok_or_else(|| Error::Singular("reduced mass matrix lost definiteness".into()))?;
        let l = chol.l();
        let a = l.solve_lower_triangular(&kred).unwrap();
        let a = l.solve_lower_triangular(&a.transpose()).unwrap();
        let a = 0.5 * (&a + a.transpose());
        let eig = a.symmetric_eigen();
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let lt = l.transpose();
        let mut rot = DMatrix::zeros(s, s);
        for (c, &idx) in order.iter().enumerate() {
            let q = eig.eigenvectors.column(idx).into_owned();
            let v = lt.solve_upper_triangular(&q).unwrap();
            rot.set_column(c, &v);
            theta[c] = eig.eigenvalues[idx];
        }
        x = &y * &rot;

        // Convergence of the k requested pairs.
        let kx = csr_mul_mat(&system.k, &x.columns(0, k).into_owned());
        let mx = csr_mul_mat(&system.m, &x.columns(0, k).into_owned());
        let floor = delta.max(1e-12 * scale);
        let converged = (0..k).all(|i| {
            let r = (kx.column(i) - theta[i] * mx.column(i)).norm();
            r <= opts.residual_tol * theta[i].abs().max(floor) * mx.column(i).norm()
        });
        if converged {
            return Ok((x.columns(0, k).into_owned(), theta[..k].to_vec()));
        }
        if sweep + 1 == opts.max_sweeps {
            return Err(Error::EigenConvergence(format!(
                "subspace iteration did not reach residual {} within {} sweeps",
                opts.residual_tol, opts.max_sweeps
            )));
        }
    }
    unreachable!("loop either returns or errors")
}
