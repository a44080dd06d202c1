//! Image-space mode extraction from spectral peaks.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::observation::sampling::SamplingOperator;
use crate::observation::spectrum::Spectrum;

/// One observed image-space mode.
#[derive(Debug, Clone)]
pub struct ObservedMode {
    /// Unit-normalized pixel-displacement pattern of length `2q`; entries of
    /// unseen vertices are exactly zero.
    pub gamma: DVector<f64>,
    /// Angular frequency in rad/s.
    pub omega: f64,
    /// Source FFT bin.
    pub bin: usize,
    /// Peak power at the source bin.
    pub power: f64,
}

impl ObservedMode {
    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * std::f64::consts::PI)
    }
}

/// Extracts one mode per peak: the coefficient vector at the peak bin is
/// phase-rotated to maximize the energy of its real part, then the real part
/// is unit-normalized and sign-fixed (first nonzero entry positive). With a
/// zero global phase the rotation is the identity and this reduces to taking
/// plain real parts.
pub fn extract_modes(
    spectrum: &Spectrum,
    peaks: &[usize],
    sampler: &SamplingOperator,
) -> Result<Vec<ObservedMode>> {
    let rows = sampler.rows();
    if spectrum.coeffs.ncols() != rows {
        return Err(Error::Shape(format!(
            "spectrum has {} DOFs but the sampler expects {rows}",
            spectrum.coeffs.ncols()
        )));
    }
    let mut modes = Vec::with_capacity(peaks.len());
    for &peak in peaks {
        if peak >= spectrum.bin_count() {
            return Err(Error::Shape(format!(
                "peak index {peak} out of {} bins",
                spectrum.bin_count()
            )));
        }
        let coeffs = spectrum.coeffs.row(peak);

        // Global phase maximizing |Re(e^{-i theta} c)|^2: leading eigenvector
        // of the 2x2 Gram of (Re c, Im c).
        let mut g00 = 0.0;
        let mut g11 = 0.0;
        let mut g01 = 0.0;
        for c in coeffs.iter() {
            g00 += c.re * c.re;
            g11 += c.im * c.im;
            g01 += c.re * c.im;
        }
        let theta = 0.5 * (2.0 * g01).atan2(g00 - g11);
        let rot = Complex64::from_polar(1.0, -theta);

        let mut gamma = DVector::zeros(rows);
        for (i, c) in coeffs.iter().enumerate() {
            gamma[i] = (rot * c).re;
        }
        let norm = gamma.norm();
        if !(norm > 0.0) {
            return Err(Error::FitQuality(format!(
                "peak at bin {} has a zero mode vector",
                spectrum.fft_bin(peak)
            )));
        }
        gamma /= norm;
        sign_fix(&mut gamma);
        modes.push(ObservedMode {
            gamma,
            omega: 2.0 * std::f64::consts::PI * spectrum.freqs[peak],
            bin: spectrum.fft_bin(peak),
            power: spectrum.power[peak],
        });
    }
    Ok(modes)
}

fn sign_fix(gamma: &mut DVector<f64>) {
    if let Some(&first) = gamma.iter().find(|&&x| x != 0.0) {
        if first < 0.0 {
            gamma.neg_mut();
        }
    }
}

/// Merges mode lists from multiple runs: modes whose frequencies fall within
/// `freq_tol_hz` are combined into one by sign-aligned averaging of their
/// gammas (renormalized); the merged frequency is the plain mean and the
/// power is the maximum. The result is sorted by frequency.
pub fn merge_modes(lists: &[Vec<ObservedMode>], freq_tol_hz: f64) -> Vec<ObservedMode> {
    let mut all: Vec<&ObservedMode> = lists.iter().flatten().collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.sort_by(|a, b| a.omega.total_cmp(&b.omega).then(b.power.total_cmp(&a.power)));
    let tol = 2.0 * std::f64::consts::PI * freq_tol_hz;

    let mut merged = Vec::new();
    let mut cluster: Vec<&ObservedMode> = vec![all[0]];
    for m in all.into_iter().skip(1) {
        if m.omega - cluster.last().unwrap().omega <= tol {
            cluster.push(m);
        } else {
            merged.push(merge_cluster(&cluster));
            cluster = vec![m];
        }
    }
    merged.push(merge_cluster(&cluster));
    merged
}

fn merge_cluster(cluster: &[&ObservedMode]) -> ObservedMode {
    let reference = cluster
        .iter()
        .max_by(|a, b| a.power.total_cmp(&b.power))
        .unwrap();
    let mut gamma = DVector::zeros(reference.gamma.len());
    for m in cluster {
        let sign = if m.gamma.dot(&reference.gamma) < 0.0 {
            -1.0
        } else {
            1.0
        };
        gamma.axpy(sign, &m.gamma, 1.0);
    }
    let norm = gamma.norm();
    if norm > 0.0 {
        gamma /= norm;
    }
    sign_fix(&mut gamma);
    ObservedMode {
        gamma,
        omega: cluster.iter().map(|m| m.omega).sum::<f64>() / cluster.len() as f64,
        bin: reference.bin,
        power: cluster.iter().map(|m| m.power).fold(0.0, f64::max),
    }
}

/// Adds white Gaussian noise to the visible entries of each mode's gamma at
/// the given signal-to-noise power ratio, then renormalizes and re-fixes the
/// sign. Deterministic for a fixed seed.
pub fn add_mode_noise(modes: &mut [ObservedMode], snr: f64, seed: u64) -> Result<()> {
    if !(snr > 0.0) {
        return Err(Error::Validation(format!(
            "signal-to-noise ratio must be positive, got {snr}"
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    for mode in modes.iter_mut() {
        let active: Vec<usize> = (0..mode.gamma.len())
            .filter(|&i| mode.gamma[i] != 0.0)
            .collect();
        if active.is_empty() {
            continue;
        }
        let signal_rms = (mode.gamma.norm_squared() / active.len() as f64).sqrt();
        let sigma = signal_rms / snr.sqrt();
        let normal = Normal::new(0.0, sigma).expect("sigma is finite");
        for &i in &active {
            mode.gamma[i] += normal.sample(&mut rng);
        }
        let norm = mode.gamma.norm();
        if norm > 0.0 {
            mode.gamma /= norm;
        }
        sign_fix(&mut mode.gamma);
    }
    Ok(())
}
