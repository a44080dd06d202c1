//! Reconstruction metrics: normalized correlation, intrinsic resolution via a
//! Gaussian-blur sweep, and predicted-vs-reference frequency comparison.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{MaterialField, UnitMatrixSet};
use crate::modal::{solve_modes_with, EigenOptions};
use crate::observation::{ObservedMode, SamplingOperator};

/// Summary of a reconstruction against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconReport {
    pub corr_w: f64,
    pub corr_v: f64,
    /// Blur scale (in voxels) at which the blurred truth best matches the
    /// estimated Young's modulus.
    pub sigma_star: f64,
    /// Correlation-vs-sigma curve of the Young's modulus sweep.
    pub sigma_curve: Vec<(f64, f64)>,
    pub freq_table: Vec<FreqPair>,
    /// Per-mode |cosine| between predicted and reference image-space modes.
    pub mode_similarity: Vec<f64>,
}

/// One matched frequency pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreqPair {
    pub reference_hz: f64,
    pub predicted_hz: f64,
    pub rel_error: f64,
}

/// Pearson correlation of two mean-removed, variance-normalized fields.
pub fn normalized_correlation(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Shape(format!(
            "fields have {} and {} entries",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Shape("fields are empty".into()));
    }
    let n = est.len() as f64;
    let mean_e = est.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_e = 0.0;
    let mut var_t = 0.0;
    for (&e, &t) in est.iter().zip(truth) {
        cov += (e - mean_e) * (t - mean_t);
        var_e += (e - mean_e) * (e - mean_e);
        var_t += (t - mean_t) * (t - mean_t);
    }
    let scale_e = est.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let scale_t = truth.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    if var_e <= (1e-14 * scale_e) * (1e-14 * scale_e) * n
        || var_t <= (1e-14 * scale_t) * (1e-14 * scale_t) * n
    {
        return Err(Error::Validation(
            "correlation is undefined for a constant field".into(),
        ));
    }
    Ok(cov / (var_e.sqrt() * var_t.sqrt()))
}

/// Separable Gaussian blur on a voxel field with symmetric (half-sample
/// reflected) boundaries and kernel radius `ceil(3 sigma)`. Preserves the
/// field mean. `sigma` is in voxels; `sigma = 0` is the identity.
pub fn gaussian_blur(field: &[f64], dims: [usize; 3], sigma: f64) -> Result<Vec<f64>> {
    let m = dims[0] * dims[1] * dims[2];
    if field.len() != m {
        return Err(Error::Shape(format!(
            "field has {} entries, dims give {m}",
            field.len()
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Validation(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.to_vec());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for o in -radius..=radius {
        kernel.push((-(o as f64) * (o as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    let mut src = field.to_vec();
    let mut dst = vec![0.0f64; m];
    let strides = [1usize, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let len = dims[axis] as i64;
        if len == 1 {
            continue;
        }
        let stride = strides[axis];
        // Iterate over all lines along `axis`.
        let other = [(axis + 1) % 3, (axis + 2) % 3];
        for a in 0..dims[other[0]] {
            for b in 0..dims[other[1]] {
                let base = a * strides[other[0]] + b * strides[other[1]];
                for i in 0..len {
                    let mut acc = 0.0;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let mut pos = i + (ki as i64 - radius);
                        // Symmetric reflection, folded for wide kernels.
                        loop {
                            if pos < 0 {
                                pos = -1 - pos;
                            } else if pos >= len {
                                pos = 2 * len - 1 - pos;
                            } else {
                                break;
                            }
                        }
                        acc += kv * src[base + pos as usize * stride];
                    }
                    dst[base + i as usize * stride] = acc;
                }
            }
        }
        std::mem::swap(&mut src, &mut dst);
    }
    Ok(src)
}

/// Sweeps blur scales, correlating the blurred truth against the estimate.
/// Returns the best sigma (first maximum) and the full curve.
pub fn intrinsic_resolution(
    est: &[f64],
    truth: &[f64],
    dims: [usize; 3],
    sigmas: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if sigmas.is_empty() {
        return Err(Error::Validation("sigma sweep is empty".into()));
    }
    let mut curve = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let blurred = gaussian_blur(truth, dims, sigma)?;
        let corr = normalized_correlation(est, &blurred)?;
        curve.push((sigma, corr));
    }
    let best = curve
        .iter()
        .cloned()
        .fold((curve[0].0, f64::NEG_INFINITY), |acc, (s, c)| {
            if c > acc.1 {
                (s, c)
            } else {
                acc
            }
        });
    Ok((best.0, curve))
}

/// Reference spectrum to compare a reconstruction against.
pub enum FrequencyReference<'a> {
    /// Solve the reference field's modes with the same unit matrices.
    Field(&'a MaterialField),
    /// Reference natural frequencies in Hz.
    FrequenciesHz(&'a [f64]),
    /// Observed modes; enables image-space mode similarity.
    Modes(&'a [ObservedMode]),
}

/// Solves the estimated field's modes and pairs them with the reference by
/// sorted order, reporting relative frequency errors; with observed modes and
/// a sampler, also reports |cosine| similarity of the image-space modes.
pub fn compare_frequencies(
    estimate: &MaterialField,
    units: &UnitMatrixSet,
    reference: FrequencyReference<'_>,
    count: usize,
    sampler: Option<&SamplingOperator>,
    eigen: &EigenOptions,
) -> Result<(Vec<FreqPair>, Vec<f64>)> {
    let system = units.assemble(estimate)?;
    let k = count.min(units.n());
    let basis = solve_modes_with(&system, k, None, eigen)?;
    let predicted = basis.frequencies_hz();

    let reference_hz: Vec<f64> = match &reference {
        FrequencyReference::Field(field) => {
            let ref_system = units.assemble(field)?;
            solve_modes_with(&ref_system, k, None, eigen)?.frequencies_hz()
        }
        FrequencyReference::FrequenciesHz(f) => f.to_vec(),
        FrequencyReference::Modes(modes) => modes.iter().map(|m| m.frequency_hz()).collect(),
    };
    let mut reference_sorted = reference_hz;
    reference_sorted.sort_by(f64::total_cmp);

    // Pair sorted reference frequencies with sorted predictions index-wise.
    let pairs = reference_sorted.len().min(predicted.len());
    let mut table = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let r = reference_sorted[i];
        let p = predicted[i];
        table.push(FreqPair {
            reference_hz: r,
            predicted_hz: p,
            rel_error: (p - r).abs() / r.abs().max(f64::MIN_POSITIVE),
        });
    }

    let mut similarity = Vec::new();
    if let (FrequencyReference::Modes(modes), Some(op)) = (&reference, sampler) {
        // Match each observed mode to the nearest predicted frequency.
        for obs in modes.iter() {
            let target = obs.frequency_hz();
            let Some(best) = (0..predicted.len())
                .min_by(|&a, &b| (predicted[a] - target).abs().total_cmp(&(predicted[b] - target).abs()))
            else {
                continue;
            };
            let pu = op.apply(&basis.modes.column(best).into_owned());
            let denom = pu.norm() * obs.gamma.norm();
            similarity.push(if denom > 0.0 {
                (pu.dot(&obs.gamma) / denom).abs()
            } else {
                0.0
            });
        }
    }
    Ok((table, similarity))
}

/// Coefficient of variation (std / mean) of a field.
pub fn coefficient_of_variation(field: &DVector<f64>) -> f64 {
    let mean = field.mean();
    let var = field.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / field.len() as f64;
    var.sqrt() / mean.abs().max(f64::MIN_POSITIVE)
}
