//! Dual-penalty inversion: alternating closed-form block solves for the
//! full-field modes `U` and the material fields `z = (w, v)`, with dual
//! ascent on the per-mode eigen-residual weights `y`.
//!
//! The objective at weights `y` is
//!
//! ```text
//! (1/2k) sum_i y_i |K u_i - omega_i^2 M u_i|^2
//!   + (alpha_u/2k) sum_i |P u_i - gamma_i|^2
//!   + (alpha_w/2m) |lap w|^2 + (alpha_v/2m) |lap v|^2
//!   + (mean(w) - w_bar)^2
//! ```
//!
//! with `K = sum_e w_e K_e`, `M = sum_e v_e M_e`. Both block solves are exact
//! minimizers of this objective in their variables, so the objective is
//! non-increasing at fixed `y`; the dual update then raises each `y_i` by
//! `eta` times the (non-squared) eigen-residual norm.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{GlobalSystem, MaterialField, UnitMatrixSet, VoxelGrid};
use crate::inverse::laplacian::{build_laplacian, LaplacianOp};
use crate::linalg::{
    accumulate_ata_band, accumulate_csr_band, csr_bandwidth, csr_mul_vec, BandMatrix,
};
use crate::observation::{ObservedMode, SamplingOperator};

/// Weights, anchors, initial fields, and stopping rules of the inversion.
#[derive(Debug, Clone)]
pub struct InversionConfig {
    /// Data-term weight.
    pub alpha_u: f64,
    /// Smoothness weight on Young's modulus.
    pub alpha_w: f64,
    /// Smoothness weight on density.
    pub alpha_v: f64,
    /// Dual-variable update rate.
    pub eta: f64,
    /// Anchor for the mean Young's modulus, Pa.
    pub w_bar: f64,
    pub w_init: DVector<f64>,
    pub v_init: DVector<f64>,
    pub max_iters: usize,
    /// Convergence threshold on the relative change of (w, v).
    pub rel_tol: f64,
    /// Initial dual weight for every mode.
    pub y_init: f64,
    /// Keep the density block well-posed with a proximal ridge
    /// `eps_v |v - v_current|^2`, `eps_v = 1e-8 (alpha_v + sum_i y_i)`.
    pub v_proximal: bool,
    /// Clamp (w, v) to small positive floors after each material solve.
    pub positivity_floor: bool,
}

/// `alpha_u` choice by available mode count: 10 with ten or more modes,
/// otherwise 1.
pub fn default_alpha_u(mode_count: usize) -> f64 {
    if mode_count >= 10 {
        10.0
    } else {
        1.0
    }
}

impl InversionConfig {
    /// Defaults for synthetic gelatin-like cubes.
    pub fn cube_defaults(m: usize, mode_count: usize) -> Self {
        Self {
            alpha_u: default_alpha_u(mode_count),
            alpha_w: 1e-10,
            alpha_v: 1e-7,
            eta: 1.0,
            w_bar: 9000.0,
            w_init: DVector::from_element(m, 9000.0),
            v_init: DVector::from_element(m, 1270.0),
            max_iters: 100,
            rel_tol: 1e-4,
            y_init: 1.0,
            v_proximal: true,
            positivity_floor: true,
        }
    }

    /// Defaults for latex drum membranes.
    pub fn drum_defaults(m: usize) -> Self {
        Self {
            alpha_u: 1e12,
            alpha_w: 0.1,
            alpha_v: 0.1,
            eta: 1.0,
            w_bar: 1e6,
            w_init: DVector::from_element(m, 1e6),
            v_init: DVector::from_element(m, 1e3),
            max_iters: 100,
            rel_tol: 1e-4,
            y_init: 1.0,
            v_proximal: true,
            positivity_floor: true,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.alpha_u < 0.0 || self.alpha_w < 0.0 || self.alpha_v < 0.0 {
            return Err(Error::Validation("weights must be nonnegative".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Validation(format!(
                "dual rate eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.w_bar > 0.0) {
            return Err(Error::Validation(format!(
                "w_bar must be positive, got {}",
                self.w_bar
            )));
        }
        if self.w_init.len() != m || self.v_init.len() != m {
            return Err(Error::Shape(format!(
                "initial fields have {}/{} entries, expected {m}",
                self.w_init.len(),
                self.v_init.len()
            )));
        }
        if self.max_iters == 0 || !(self.rel_tol > 0.0) {
            return Err(Error::Validation(
                "max_iters must be >= 1 and rel_tol > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Objective values recorded within one outer iteration, all at that
/// iteration's dual weights.
#[derive(Debug, Clone, Copy)]
pub struct BlockObjectives {
    pub start: f64,
    pub after_modes: f64,
    pub after_materials: f64,
}

/// Decision variables and diagnostics of the inversion.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    /// Current full-field mode estimates, n x k.
    pub modes: DMatrix<f64>,
    /// Dual weights, one per observed mode; non-decreasing across iterations.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the material block of each iteration.
    pub objective_history: Vec<f64>,
    pub block_objectives: Vec<BlockObjectives>,
    /// Final per-mode eigen-residual norms.
    pub residuals: Vec<f64>,
    /// Entries raised to the positivity floor across the run.
    pub clamp_count: usize,
    /// Set when the density sub-block was only determined by the proximal ridge.
    pub v_rank_deficient: bool,
}

/// A fully validated inversion instance with precomputed operators.
pub struct InversionProblem<'a> {
    units: &'a UnitMatrixSet,
    sampler: &'a SamplingOperator,
    observations: &'a [ObservedMode],
    pub config: InversionConfig,
    pub laplacian: LaplacianOp,
    ltl: CsrMatrix<f64>,
    ptp: CsrMatrix<f64>,
    /// Columns `alpha_u P' gamma_i`.
    ptg: DMatrix<f64>,
    /// Bandwidth of the mode-block normal matrices.
    band_h: usize,
    /// Voxels sharing at least one DOF, per voxel (sorted, includes self).
    neighbors: Vec<Vec<usize>>,
}

impl<'a> InversionProblem<'a> {
    pub fn new(
        observations: &'a [ObservedMode],
        sampler: &'a SamplingOperator,
        units: &'a UnitMatrixSet,
        grid: &VoxelGrid,
        config: InversionConfig,
    ) -> Result<Self> {
        let n = units.n();
        let m = units.voxel_count();
        if grid.voxel_count() != m {
            return Err(Error::Shape(format!(
                "grid has {} voxels but the unit set has {m}",
                grid.voxel_count()
            )));
        }
        if sampler.n() != n {
            return Err(Error::Shape(format!(
                "sampler expects {} DOFs but the unit set has {n}",
                sampler.n()
            )));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.gamma.len() != sampler.rows() {
                return Err(Error::Shape(format!(
                    "observation {i} has gamma of length {}, expected {}",
                    obs.gamma.len(),
                    sampler.rows()
                )));
            }
            if !(obs.omega > 0.0) {
                return Err(Error::Validation(format!(
                    "observation {i} has non-positive frequency"
                )));
            }
        }
        config.validate(m)?;

        let laplacian = build_laplacian(grid);
        let ltl = &laplacian.matrix * &laplacian.matrix;
        let pt = sampler.p.transpose();
        let ptp = &pt * &sampler.p;
        let k = observations.len();
        let mut ptg = DMatrix::zeros(n, k);
        for (i, obs) in observations.iter().enumerate() {
            let col = csr_mul_vec(&pt, &obs.gamma) * config.alpha_u;
            ptg.set_column(i, &col);
        }

        // Bandwidth of y A'A + alpha_u P'P: A shares the assembly pattern.
        let probe = units.assemble(&MaterialField {
            w: DVector::from_element(m, 1.0),
            v: DVector::from_element(m, 1.0),
            nu: units.nu(),
        })?;
        let band_a = csr_bandwidth(&probe.k);
        let band_h = (2 * band_a).max(csr_bandwidth(&ptp)).min(n.saturating_sub(1));

        // Voxel adjacency through shared DOFs.
        let mut voxels_of_dof: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..m {
            for &d in &units.local(e).dofs {
                voxels_of_dof[d].push(e);
            }
        }
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); m];
        for e in 0..m {
            let mut set: Vec<usize> = units
                .local(e)
                .dofs
                .iter()
                .flat_map(|&d| voxels_of_dof[d].iter().copied())
                .collect();
            set.sort_unstable();
            set.dedup();
            neighbors[e] = set;
        }

        Ok(Self {
            units,
            sampler,
            observations,
            config,
            laplacian,
            ltl,
            ptp,
            ptg,
            band_h,
            neighbors,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.observations.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.units.voxel_count()
    }

    pub fn n(&self) -> usize {
        self.units.n()
    }

    /// Fresh state at the configured initial fields.
    pub fn initial_state(&self) -> SolverState {
        SolverState {
            w: self.config.w_init.clone(),
            v: self.config.v_init.clone(),
            modes: DMatrix::zeros(self.n(), self.mode_count()),
            y: vec![self.config.y_init; self.mode_count()],
            iterations: 0,
            converged: false,
            objective_history: Vec::new(),
            block_objectives: Vec::new(),
            residuals: vec![0.0; self.mode_count()],
            clamp_count: 0,
            v_rank_deficient: false,
        }
    }

    pub fn assemble(&self, state: &SolverState) -> Result<GlobalSystem> {
        self.units.assemble(&MaterialField {
            w: state.w.clone(),
            v: state.v.clone(),
            nu: self.units.nu(),
        })
    }

    /// Per-mode eigen-residual norms `|K u_i - omega_i^2 M u_i|`.
    pub fn eigen_residuals(&self, system: &GlobalSystem, state: &SolverState) -> Vec<f64> {
        (0..self.mode_count())
            .map(|i| {
                let u = state.modes.column(i).into_owned();
                let ku = csr_mul_vec(&system.k, &u);
                let mu = csr_mul_vec(&system.m, &u);
                let w2 = self.observations[i].omega * self.observations[i].omega;
                (&ku - w2 * &mu).norm()
            })
            .collect()
    }

    /// Full objective at the state's `(w, v, U, y)`.
    pub fn objective(&self, state: &SolverState) -> Result<f64> {
        let system = self.assemble(state)?;
        Ok(self.objective_with_system(&system, state))
    }

    pub fn objective_with_system(&self, system: &GlobalSystem, state: &SolverState) -> f64 {
        let k = self.mode_count();
        let m = self.voxel_count() as f64;
        let cfg = &self.config;
        let mut obj = 0.0;
        if k > 0 {
            let residuals = self.eigen_residuals(system, state);
            let kf = k as f64;
            for (i, obs) in self.observations.iter().enumerate() {
                let u = state.modes.column(i).into_owned();
                let data = (self.sampler.apply(&u) - &obs.gamma).norm_squared();
                obj += state.y[i] * residuals[i] * residuals[i] / (2.0 * kf);
                obj += cfg.alpha_u * data / (2.0 * kf);
            }
        }
        let lw = self.laplacian.apply(&state.w);
        let lv = self.laplacian.apply(&state.v);
        obj += cfg.alpha_w * lw.norm_squared() / (2.0 * m);
        obj += cfg.alpha_v * lv.norm_squared() / (2.0 * m);
        let mean_w = state.w.sum() / m;
        obj += (mean_w - cfg.w_bar) * (mean_w - cfg.w_bar);
        obj
    }

    /// Gradient of the objective with respect to mode `i`'s coefficients.
    pub fn mode_gradient(
        &self,
        system: &GlobalSystem,
        state: &SolverState,
        i: usize,
    ) -> DVector<f64> {
        let kf = self.mode_count() as f64;
        let u = state.modes.column(i).into_owned();
        let w2 = self.observations[i].omega * self.observations[i].omega;
        let au = csr_mul_vec(&system.k, &u) - w2 * csr_mul_vec(&system.m, &u);
        let ata_u = {
            let kau = csr_mul_vec(&system.k, &au);
            let mau = csr_mul_vec(&system.m, &au);
            kau - w2 * mau
        };
        let pu = self.sampler.apply(&u) - &self.observations[i].gamma;
        let ptpu = csr_mul_vec(&self.sampler.p.transpose(), &pu);
        (state.y[i] * ata_u + self.config.alpha_u * ptpu) / kf
    }

    /// Closed-form update of every mode at fixed `(w, v, y)`: solves
    /// `(y_i A_i' A_i + alpha_u P'P) u = alpha_u P' gamma_i` with
    /// `A_i = K - omega_i^2 M`, retrying with a trace-scaled ridge of
    /// `1e-12 tr(H)/n` when the system is numerically singular.
    pub fn solve_modes_block(&self, system: &GlobalSystem, state: &mut SolverState) -> Result<()> {
        let k = self.mode_count();
        if k == 0 {
            return Ok(());
        }
        let n = self.n();
        let columns: Result<Vec<DVector<f64>>> = (0..k)
            .into_par_iter()
            .map(|i| self.solve_one_mode(system, state.y[i], i))
            .collect();
        let columns = columns?;
        let mut modes = DMatrix::zeros(n, k);
        for (i, col) in columns.iter().enumerate() {
            modes.set_column(i, col);
        }
        state.modes = modes;
        Ok(())
    }

    fn solve_one_mode(&self, system: &GlobalSystem, y: f64, i: usize) -> Result<DVector<f64>> {
        let n = self.n();
        let w2 = self.observations[i].omega * self.observations[i].omega;
        // A_i = K - omega^2 M on the shared assembly pattern.
        let mut a = system.k.clone();
        for (av, &mv) in a.values_mut().iter_mut().zip(system.m.values()) {
            *av -= w2 * mv;
        }
        let build = |ridge: f64| {
            let mut h = BandMatrix::zeros(n, self.band_h);
            if y != 0.0 {
                accumulate_ata_band(&mut h, &a, y);
            }
            if self.config.alpha_u != 0.0 {
                accumulate_csr_band(&mut h, &self.ptp, self.config.alpha_u);
            }
            if ridge != 0.0 {
                h.add_diagonal(ridge);
            }
            h
        };
        let h0 = build(0.0);
        let trace = h0.trace();
        let rhs = self.ptg.column(i).into_owned();
        if trace == 0.0 {
            // Degenerate weights; the zero vector minimizes the (zero) form.
            return Ok(DVector::zeros(n));
        }
        let mut factor = h0.cholesky();
        for ridge_scale in [1e-12, 1e-6] {
            if factor.is_ok() {
                break;
            }
            factor = build(ridge_scale * trace / n as f64).cholesky();
        }
        let factor = factor.map_err(|e| {
            Error::Singular(format!("mode {i} block system is singular: {e}"))
        })?;
        Ok(factor.solve(&rhs))
    }

    /// Dense normal system of the material block over `z = [w; v]`.
    ///
    /// Rows of the underlying least-squares problem: per mode,
    /// `sqrt(y_i/k) [K_1 u_i ... K_m u_i | -omega_i^2 M_1 u_i ... ]`;
    /// smoothness rows `sqrt(alpha_w/m) [lap | 0]`, `sqrt(alpha_v/m) [0 | lap]`;
    /// anchor row `sqrt(2) [1'/m | 0]` with target `sqrt(2) w_bar`.
    /// With `include_prox`, the proximal density ridge is added on top.
    pub fn material_normal_system(
        &self,
        state: &SolverState,
        include_prox: bool,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.voxel_count();
        let n = self.n();
        let k = self.mode_count();
        let cfg = &self.config;
        let mut g = DMatrix::zeros(2 * m, 2 * m);
        let mut rhs = DVector::zeros(2 * m);

        // Eigen-penalty Gram blocks, voxel pair by voxel pair.
        if k > 0 {
            let kf = k as f64;
            let mut cw = vec![0.0f64; n];
            let mut dw = vec![0.0f64; n];
            for (i, obs) in self.observations.iter().enumerate() {
                let s = state.y[i] / kf;
                if s == 0.0 {
                    continue;
                }
                let w2 = obs.omega * obs.omega;
                let u = state.modes.column(i);
                let u_slice: &[f64] = u.as_slice();
                // Per-voxel products c_e = K_e u, d_e = -omega^2 M_e u.
                let mut prods: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(m);
                for e in 0..m {
                    let (_, kv, mut mv) = self.units.local_products(e, u_slice);
                    for x in &mut mv {
                        *x *= -w2;
                    }
                    prods.push((kv, mv));
                }
                for e in 0..m {
                    let dofs_e = &self.units.local(e).dofs;
                    let (ce, de) = &prods[e];
                    for (j, &d) in dofs_e.iter().enumerate() {
                        cw[d] = ce[j];
                        dw[d] = de[j];
                    }
                    for &f in &self.neighbors[e] {
                        if f < e {
                            continue;
                        }
                        let dofs_f = &self.units.local(f).dofs;
                        let (cf, df) = &prods[f];
                        let mut cc = 0.0;
                        let mut dd = 0.0;
                        let mut cd = 0.0;
                        let mut dc = 0.0;
                        for (j, &d) in dofs_f.iter().enumerate() {
                            cc += cf[j] * cw[d];
                            dd += df[j] * dw[d];
                            cd += df[j] * cw[d];
                            dc += cf[j] * dw[d];
                        }
                        g[(e, f)] += s * cc;
                        g[(m + e, m + f)] += s * dd;
                        g[(e, m + f)] += s * cd;
                        g[(m + f, e)] += s * cd;
                        if f != e {
                            g[(f, e)] += s * cc;
                            g[(m + f, m + e)] += s * dd;
                            g[(f, m + e)] += s * dc;
                            g[(m + e, f)] += s * dc;
                        }
                    }
                    for &d in dofs_e {
                        cw[d] = 0.0;
                        dw[d] = 0.0;
                    }
                }
            }
        }

        // Smoothness: (alpha/m) lap' lap on each field block.
        let mf = m as f64;
        for (r, c, &val) in self.ltl.triplet_iter() {
            g[(r, c)] += cfg.alpha_w / mf * val;
            g[(m + r, m + c)] += cfg.alpha_v / mf * val;
        }

        // Mean anchor on w: gradient of (1'w/m - w_bar)^2.
        let a2 = 2.0 / (mf * mf);
        for e in 0..m {
            for f in 0..m {
                g[(e, f)] += a2;
            }
            rhs[e] += 2.0 * cfg.w_bar / mf;
        }

        if include_prox && cfg.v_proximal {
            let eps = 1e-8 * (cfg.alpha_v + state.y.iter().sum::<f64>());
            for e in 0..m {
                g[(m + e, m + e)] += 2.0 * eps;
                rhs[m + e] += 2.0 * eps * state.v[e];
            }
        }
        (g, rhs)
    }

    /// Gradient of the objective with respect to `z = [w; v]` at the state.
    pub fn material_gradient(&self, state: &SolverState) -> DVector<f64> {
        let (g, rhs) = self.material_normal_system(state, false);
        let m = self.voxel_count();
        let mut z = DVector::zeros(2 * m);
        z.rows_mut(0, m).copy_from(&state.w);
        z.rows_mut(m, m).copy_from(&state.v);
        &g * &z - &rhs
    }

    /// Closed-form update of `(w, v)` at fixed `(U, y)`.
    pub fn solve_material_block(&self, state: &mut SolverState) -> Result<()> {
        let m = self.voxel_count();
        let cfg = &self.config;
        let eigen_active =
            self.mode_count() > 0 && state.modes.amax() > 0.0 && state.y.iter().any(|&y| y > 0.0);

        if !eigen_active {
            if !cfg.v_proximal {
                return Err(Error::AnchorMissing(
                    "density sub-block is rank deficient without modes; \
                     enable the proximal v ridge or provide observations"
                        .into(),
                ));
            }
            // Only the anchor and smoothness act on w: the exact minimizer is
            // the uniform field at w_bar. The density block is held by the
            // proximal ridge alone.
            state.w = DVector::from_element(m, cfg.w_bar);
            let eps = 1e-8 * (cfg.alpha_v + state.y.iter().sum::<f64>());
            if !(eps > 0.0) {
                return Err(Error::AnchorMissing(
                    "density sub-block has no anchor and the proximal ridge is zero".into(),
                ));
            }
            let mf = m as f64;
            // (alpha_v/m) L'L + 2 eps I, solved in band form.
            let mut h = BandMatrix::zeros(m, csr_bandwidth(&self.ltl).min(m.saturating_sub(1)));
            accumulate_csr_band(&mut h, &self.ltl, cfg.alpha_v / mf);
            h.add_diagonal(2.0 * eps);
            let chol = h.cholesky()?;
            let mut v = state.v.clone() * (2.0 * eps);
            chol.solve_in_place(v.as_mut_slice());
            state.v = v;
            state.v_rank_deficient = true;
            return Ok(());
        }

        let (g, rhs) = self.material_normal_system(state, true);
        let z = solve_dense_spd(g, &rhs).map_err(|e| {
            Error::Singular(format!("material normal system is singular: {e}"))
        })?;
        let mut w = z.rows(0, m).into_owned();
        let mut v = z.rows(m, m).into_owned();

        if cfg.positivity_floor {
            let floor_w = 1e-6 * cfg.w_bar;
            let floor_v = 1e-6 * (cfg.v_init.sum() / m as f64);
            for x in w.iter_mut() {
                if *x < floor_w {
                    *x = floor_w;
                    state.clamp_count += 1;
                }
            }
            for x in v.iter_mut() {
                if *x < floor_v {
                    *x = floor_v;
                    state.clamp_count += 1;
                }
            }
        }
        state.w = w;
        state.v = v;
        Ok(())
    }

    /// Dual ascent: `y_i += eta |K u_i - omega_i^2 M u_i|` (non-squared norm).
    pub fn dual_update(&self, system: &GlobalSystem, state: &mut SolverState) {
        let residuals = self.eigen_residuals(system, state);
        for (yi, ri) in state.y.iter_mut().zip(&residuals) {
            *yi += self.config.eta * ri;
        }
        state.residuals = residuals;
    }

    /// Runs the full alternating loop until the relative change of `(w, v)`
    /// drops below `rel_tol` or `max_iters` is reached.
    pub fn run(&self) -> Result<(MaterialField, SolverState)> {
        let mut state = self.initial_state();
        if self.mode_count() == 0 {
            return Err(Error::AnchorMissing(
                "inversion needs at least one observed mode".into(),
            ));
        }
        for iter in 0..self.config.max_iters {
            let system = self.assemble(&state)?;
            let start = self.objective_with_system(&system, &state);
            self.solve_modes_block(&system, &mut state)?;
            let after_modes = self.objective_with_system(&system, &state);

            let w_prev = state.w.clone();
            let v_prev = state.v.clone();
            self.solve_material_block(&mut state)?;
            let system = self.assemble(&state)?;
            let after_materials = self.objective_with_system(&system, &state);

            if !after_materials.is_finite() {
                return Err(Error::Divergence(format!(
                    "objective became non-finite at iteration {iter}; history tail: {:?}",
                    state
                        .objective_history
                        .iter()
                        .rev()
                        .take(5)
                        .collect::<Vec<_>>()
                )));
            }
            state.block_objectives.push(BlockObjectives {
                start,
                after_modes,
                after_materials,
            });
            state.objective_history.push(after_materials);
            self.dual_update(&system, &mut state);
            state.iterations = iter + 1;

            let dw = (&state.w - &w_prev).amax() / w_prev.amax().max(f64::MIN_POSITIVE);
            let dv = (&state.v - &v_prev).amax() / v_prev.amax().max(f64::MIN_POSITIVE);
            if dw.max(dv) < self.config.rel_tol {
                state.converged = true;
                break;
            }
        }
        let field = MaterialField {
            w: state.w.clone(),
            v: state.v.clone(),
            nu: self.units.nu(),
        };
        Ok((field, state))
    }
}

/// Solves a dense SPD system through the banded kernel at full bandwidth.
fn solve_dense_spd(g: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    let mut band = BandMatrix::zeros(n, n.saturating_sub(1));
    for j in 0..n {
        for i in j..n {
            let v = g[(i, j)];
            if v != 0.0 {
                band.add(i, j, v);
            }
        }
    }
    let trace = band.trace();
    let chol = match band.clone().cholesky() {
        Ok(c) => c,
        Err(_) => {
            band.add_diagonal(1e-12 * trace / n as f64);
            band.cholesky()?
        }
    };
    let mut x = rhs.clone();
    chol.solve_in_place(x.as_mut_slice());
    Ok(x)
}

/// One-call entry point matching the pipeline: builds the problem and runs it.
pub fn run_inversion(
    observations: &[ObservedMode],
    sampler: &SamplingOperator,
    units: &UnitMatrixSet,
    grid: &VoxelGrid,
    config: InversionConfig,
) -> Result<(MaterialField, SolverState)> {
    InversionProblem::new(observations, sampler, units, grid, config)?.run()
}
