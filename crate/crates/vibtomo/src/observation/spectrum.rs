//! Motion power spectra, peak picking, and Lorentzian damping fits.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::observation::sampling::ImageSeries;

/// Optional window applied before the FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    None,
    /// Periodic Hann window.
    Hann,
}

/// One-sided spectrum of an image-space motion series.
///
/// Bin `idx` holds FFT bin `idx + 1` (DC is excluded) at frequency
/// `freqs[idx] = fps * (idx + 1) / T`. `power` uses the one-sided convention
/// `c_l * sum_dofs |X|^2 / T^2` with `c_l = 2` except at the Nyquist bin, so
/// the powers of an unwindowed series sum to its total per-DOF variance.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// FFT coefficients, `bins x dofs`.
    pub coeffs: DMatrix<Complex64>,
    /// Total motion power per bin.
    pub power: Vec<f64>,
    pub fps: f64,
    /// Frame count of the source series.
    pub frame_count: usize,
}

impl Spectrum {
    pub fn bin_count(&self) -> usize {
        self.freqs.len()
    }

    /// Spacing between adjacent bins in Hz.
    pub fn bin_width(&self) -> f64 {
        self.fps / self.frame_count as f64
    }

    /// FFT bin number (1-based over the full FFT) of spectrum index `idx`.
    pub fn fft_bin(&self, idx: usize) -> usize {
        idx + 1
    }
}

/// Per-DOF FFT over time and the total motion power per frequency bin.
pub fn power_spectrum(series: &ImageSeries, window: Window) -> Result<Spectrum> {
    let t = series.frame_count();
    let d = series.dof_count();
    if t < 4 {
        return Err(Error::Validation(format!(
            "spectrum needs at least 4 frames, got {t}"
        )));
    }
    let half = t / 2;
    let win: Option<Vec<f64>> = match window {
        Window::None => None,
        Window::Hann => Some(
            (0..t)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / t as f64).cos()))
                .collect(),
        ),
    };
    let fft = FftPlanner::new().plan_fft_forward(t);
    let mut coeffs = DMatrix::from_element(half, d, Complex64::new(0.0, 0.0));
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for c in 0..d {
        let col = series.data.column(c);
        for (i, b) in buf.iter_mut().enumerate() {
            let x = match &win {
                Some(w) => col[i] * w[i],
                None => col[i],
            };
            *b = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        for l in 0..half {
            coeffs[(l, c)] = buf[l + 1];
        }
    }
    let norm = 1.0 / (t as f64 * t as f64);
    let mut power = Vec::with_capacity(half);
    for l in 0..half {
        let one_sided = if t % 2 == 0 && l == half - 1 { 1.0 } else { 2.0 };
        let s: f64 = (0..d).map(|c| coeffs[(l, c)].norm_sqr()).sum();
        power.push(one_sided * norm * s);
    }
    let freqs = (0..half)
        .map(|l| series.fps * (l + 1) as f64 / t as f64)
        .collect();
    Ok(Spectrum {
        freqs,
        coeffs,
        power,
        fps: series.fps,
        frame_count: t,
    })
}

/// Peak-picking configuration over the log-power spectrum.
#[derive(Debug, Clone)]
pub struct PeakOptions {
    /// Minimum peak prominence in natural-log power units.
    pub min_prominence: f64,
    /// Minimum spacing between kept peaks, in bins.
    pub min_separation: usize,
    pub max_peaks: usize,
    /// Bins below this fraction of the maximum power are never peaks;
    /// this suppresses round-off-level maxima in near-silent bands.
    pub min_power_ratio: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            min_prominence: 2.0,
            min_separation: 2,
            max_peaks: 40,
            min_power_ratio: 1e-12,
        }
    }
}

/// Local maxima of the log-power spectrum with prominence filtering, kept
/// greedily in descending prominence under the separation constraint, then
/// sorted by frequency. Returns spectrum indices.
pub fn find_peaks(spectrum: &Spectrum, opts: &PeakOptions) -> Vec<usize> {
    let n = spectrum.power.len();
    if n == 0 {
        return Vec::new();
    }
    let max_power = spectrum.power.iter().cloned().fold(0.0f64, f64::max);
    if max_power <= 0.0 {
        return Vec::new();
    }
    let floor = max_power * opts.min_power_ratio;
    let logp: Vec<f64> = spectrum
        .power
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();

    // Candidate local maxima above the power floor.
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        if spectrum.power[i] < floor {
            continue;
        }
        let left_ok = i == 0 || logp[i] > logp[i - 1];
        let right_ok = i + 1 == n || logp[i] >= logp[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        // Prominence: drop to the lowest valley before a higher bin on each side.
        let mut left_min = f64::INFINITY;
        let mut j = i;
        while j > 0 {
            j -= 1;
            if logp[j] > logp[i] {
                break;
            }
            left_min = left_min.min(logp[j]);
        }
        if left_min == f64::INFINITY {
            left_min = logp[i];
        }
        let mut right_min = f64::INFINITY;
        let mut j = i;
        while j + 1 < n {
            j += 1;
            if logp[j] > logp[i] {
                break;
            }
            right_min = right_min.min(logp[j]);
        }
        if right_min == f64::INFINITY {
            right_min = logp[i];
        }
        let prominence = logp[i] - left_min.max(right_min);
        if prominence >= opts.min_prominence {
            candidates.push((i, prominence));
        }
    }

    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = Vec::new();
    for (i, _) in candidates {
        if kept.len() >= opts.max_peaks {
            break;
        }
        if kept.iter().all(|&k| k.abs_diff(i) >= opts.min_separation) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Result of a Lorentzian fit around a spectral peak.
#[derive(Debug, Clone, Copy)]
pub struct DampingEstimate {
    /// Fitted damping ratio.
    pub zeta: f64,
    /// Fitted resonance frequency in Hz.
    pub freq_hz: f64,
    /// Fitted amplitude scale.
    pub amplitude: f64,
}

/// Fits `L(f) = a / ((f^2 - f0^2)^2 + (2 zeta f0 f)^2)` to the power around
/// `peak` (a spectrum index) and returns the damping ratio at that resonance.
pub fn estimate_damping_ratio(spectrum: &Spectrum, peak: usize) -> Result<DampingEstimate> {
    let n = spectrum.power.len();
    if peak >= n {
        return Err(Error::Shape(format!("peak index {peak} out of {n} bins")));
    }
    if peak < 2 || peak + 2 >= n {
        return Err(Error::Validation(
            "peak needs at least 2 bins of support on each side".into(),
        ));
    }
    let p0 = spectrum.power[peak];
    if !(p0 > 0.0) {
        return Err(Error::FitQuality("peak has zero power".into()));
    }
    // A resolution-limited line (side bins at round-off level) has no
    // measurable width; the window degenerates and the ratio reads as zero.
    if spectrum.power[peak - 1] < 1e-6 * p0 && spectrum.power[peak + 1] < 1e-6 * p0 {
        return Ok(DampingEstimate {
            zeta: 0.0,
            freq_hz: spectrum.freqs[peak],
            amplitude: p0,
        });
    }
    // Fit window: walk outward while bins stay below the peak and above a
    // power floor; always include two bins per side.
    let floor = p0 * 1e-2;
    let mut lo = peak;
    while lo > 0 && peak - (lo - 1) <= 200 {
        let cand = lo - 1;
        if spectrum.power[cand] >= p0 || (spectrum.power[cand] < floor && peak - cand >= 2) {
            break;
        }
        lo = cand;
    }
    let mut hi = peak;
    while hi + 1 < n && (hi + 1) - peak <= 200 {
        let cand = hi + 1;
        if spectrum.power[cand] >= p0 || (spectrum.power[cand] < floor && cand - peak >= 2) {
            break;
        }
        hi = cand;
    }
    lo = lo.min(peak.saturating_sub(2));
    hi = hi.max((peak + 2).min(n - 1));

    let fs: Vec<f64> = (lo..=hi).map(|i| spectrum.freqs[i]).collect();
    let ps: Vec<f64> = (lo..=hi).map(|i| spectrum.power[i]).collect();

    // Linearized initialization: 1/L is quadratic in x = f^2,
    // 1/L = (x^2 + c1 x + c0)/a with c1 = (4 zeta^2 - 2) f0^2, c0 = f0^4.
    // Rows are weighted by the power so strong bins dominate; the weighted
    // right-hand side p * (1/p) is exactly 1.
    let mut g = DMatrix::zeros(fs.len(), 3);
    let mut rhs = nalgebra::DVector::zeros(fs.len());
    for (r, (&f, &p)) in fs.iter().zip(&ps).enumerate() {
        let x = f * f;
        g[(r, 0)] = p * x * x;
        g[(r, 1)] = p * x;
        g[(r, 2)] = p;
        rhs[r] = 1.0;
    }
    // Solve weighted LSQ for (p2, p1, p0) in 1/L = p2 x^2 + p1 x + p0.
    let svd = g.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-13 * svd.singular_values.max())
        .map_err(|e| Error::FitQuality(format!("linearized fit failed: {e}")))?;
    let (p2, p1, p0c) = (sol[0], sol[1], sol[2]);
    if !(p2 > 0.0) || !(p0c > 0.0) {
        return Err(Error::FitQuality(
            "linearized Lorentzian fit produced a non-physical curvature".into(),
        ));
    }
    let mut a = 1.0 / p2;
    let mut f0 = (p0c / p2).powf(0.25);
    let zeta_sq = (p1 / (p2 * f0 * f0) + 2.0) / 4.0;
    if zeta_sq < -0.25 {
        return Err(Error::FitQuality(format!(
            "fitted zeta^2 = {zeta_sq:.3e} is negative"
        )));
    }
    let mut zeta = zeta_sq.max(0.0).sqrt();
    if !f0.is_finite() || !zeta.is_finite() {
        return Err(Error::FitQuality("linearized fit diverged".into()));
    }
    // Re-anchor amplitude to the observed peak.
    let model_peak = lorentz(a, f0, zeta.max(1e-9), spectrum.freqs[peak]);
    if model_peak > 0.0 {
        a *= p0 / model_peak;
    }

    // Gauss-Newton polish on the nonlinear least squares in (a, f0, zeta).
    let mut lambda = 1e-6;
    let mut cost = fit_cost(a, f0, zeta, &fs, &ps);
    for _ in 0..100 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (&f, &p) in fs.iter().zip(&ps) {
            let denom = denom(f0, zeta, f);
            if denom <= 0.0 {
                continue;
            }
            let model = a / denom;
            let r = model - p;
            // Partials of model.
            let x = f * f;
            let d_df0 = -a / (denom * denom)
                * (2.0 * (x - f0 * f0) * (-2.0 * f0) + 8.0 * zeta * zeta * f0 * x);
            let d_dz = -a / (denom * denom) * (8.0 * zeta * f0 * f0 * x);
            let d_da = 1.0 / denom;
            let jrow = nalgebra::Vector3::new(d_da, d_df0, d_dz);
            jtj += jrow * jrow.transpose();
            jtr += jrow * r;
        }
        for i in 0..3 {
            jtj[(i, i)] *= 1.0 + lambda;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        let (na, nf0, nz) = (
            a + step[0],
            (f0 + step[1]).max(spectrum.freqs[0] * 0.5),
            (zeta + step[2]).max(0.0),
        );
        let new_cost = fit_cost(na, nf0, nz, &fs, &ps);
        if new_cost.is_finite() && new_cost <= cost {
            let rel_step = (step.amax()) / (a.abs() + f0.abs() + zeta.abs()).max(1e-300);
            a = na;
            f0 = nf0;
            zeta = nz;
            cost = new_cost;
            lambda = (lambda * 0.5).max(1e-12);
            if rel_step < 1e-12 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !(zeta.is_finite() && f0.is_finite()) {
        return Err(Error::FitQuality("Lorentzian polish diverged".into()));
    }
    if zeta < 0.0 {
        return Err(Error::FitQuality(format!("fitted zeta = {zeta:.3e} < 0")));
    }
    Ok(DampingEstimate {
        zeta,
        freq_hz: f0,
        amplitude: a,
    })
}

fn denom(f0: f64, zeta: f64, f: f64) -> f64 {
    let x = f * f;
    let d = x - f0 * f0;
    d * d + 4.0 * zeta * zeta * f0 * f0 * x
}

fn lorentz(a: f64, f0: f64, zeta: f64, f: f64) -> f64 {
    a / denom(f0, zeta, f)
}

fn fit_cost(a: f64, f0: f64, zeta: f64, fs: &[f64], ps: &[f64]) -> f64 {
    fs.iter()
        .zip(ps)
        .map(|(&f, &p)| {
            let d = denom(f0, zeta, f);
            if d <= 0.0 {
                return f64::INFINITY;
            }
            let r = a / d - p;
            r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn series_from_fn(t: usize, d: usize, fps: f64, f: impl Fn(usize, usize) -> f64) -> ImageSeries {
        ImageSeries {
            data: DMatrix::from_fn(t, d, |r, c| f(r, c)),
            fps,
        }
    }

    #[test]
    fn constant_series_has_zero_power() {
        let s = series_from_fn(64, 3, 100.0, |_, c| c as f64 + 1.0);
        let spec = power_spectrum(&s, Window::None).unwrap();
        assert!(spec.power.iter().all(|&p| p < 1e-24));
        assert!(find_peaks(&spec, &PeakOptions::default()).is_empty());
    }

    #[test]
    fn bin_centered_tone_concentrates_in_one_bin() {
        let t = 256;
        let fps = 128.0;
        let bin = 17; // FFT bin 17 => frequency 17 * fps / t
        let f = bin as f64 * fps / t as f64;
        let s = series_from_fn(t, 2, fps, |r, c| {
            let phase = if c == 0 { 0.0 } else { 0.7 };
            (2.0 * std::f64::consts::PI * f * r as f64 / fps + phase).sin()
        });
        let spec = power_spectrum(&s, Window::None).unwrap();
        let idx = bin - 1;
        let peak_power = spec.power[idx];
        for (i, &p) in spec.power.iter().enumerate() {
            if i != idx {
                assert!(p <= 1e-10 * peak_power, "bin {i} leaks {p:.3e}");
            }
        }
        let peaks = find_peaks(&spec, &PeakOptions::default());
        assert_eq!(peaks, vec![idx]);
    }

    #[test]
    fn two_tones_give_two_peaks() {
        let t = 512;
        let fps = 256.0;
        let (b1, b2) = (20usize, 90usize);
        let s = series_from_fn(t, 1, fps, |r, _| {
            let tt = r as f64 / fps;
            (2.0 * std::f64::consts::PI * (b1 as f64 * fps / t as f64) * tt).sin()
                + 0.5 * (2.0 * std::f64::consts::PI * (b2 as f64 * fps / t as f64) * tt).cos()
        });
        let spec = power_spectrum(&s, Window::None).unwrap();
        let peaks = find_peaks(&spec, &PeakOptions::default());
        assert_eq!(peaks, vec![b1 - 1, b2 - 1]);
    }

    #[test]
    fn parseval_total_power_equals_variance() {
        let t = 300;
        let s = series_from_fn(t, 4, 150.0, |r, c| {
            ((r * (c + 3)) as f64 * 0.37).sin() + 0.2 * (r as f64 * 0.011).cos()
        });
        let spec = power_spectrum(&s, Window::None).unwrap();
        let total: f64 = spec.power.iter().sum();
        let mut var = 0.0;
        for c in 0..4 {
            let col = s.data.column(c);
            let mean = col.mean();
            var += col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / t as f64;
        }
        assert!((total - var).abs() < 1e-9 * var, "{total} vs {var}");
    }

    #[test]
    fn damping_fit_recovers_synthetic_lorentzian() {
        // Sample the model itself on a fine grid and refit it.
        let t = 4096;
        let fps = 200.0;
        let f0 = 12.5;
        let zeta = 0.02;
        let a = 3.0e-4;
        let freqs: Vec<f64> = (0..t / 2).map(|l| fps * (l + 1) as f64 / t as f64).collect();
        let power: Vec<f64> = freqs.iter().map(|&f| lorentz(a, f0, zeta, f)).collect();
        let peak = freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f0).abs().total_cmp(&(b.1 - f0).abs()))
            .unwrap()
            .0;
        let spec = Spectrum {
            freqs,
            coeffs: DMatrix::from_element(t / 2, 1, Complex64::new(0.0, 0.0)),
            power,
            fps,
            frame_count: t,
        };
        let est = estimate_damping_ratio(&spec, peak).unwrap();
        assert!((est.zeta - zeta).abs() < 1e-3, "zeta {}", est.zeta);
        assert!((est.freq_hz - f0).abs() < 0.05, "f0 {}", est.freq_hz);
    }

    #[test]
    fn undamped_tone_fits_to_tiny_zeta() {
        let t = 1024;
        let fps = 128.0;
        let bin = 100;
        let f = bin as f64 * fps / t as f64;
        let s = series_from_fn(t, 1, fps, |r, _| {
            (2.0 * std::f64::consts::PI * f * r as f64 / fps).sin()
        });
        let spec = power_spectrum(&s, Window::None).unwrap();
        let est = estimate_damping_ratio(&spec, bin - 1).unwrap();
        assert!(est.zeta <= 1e-3, "zeta {}", est.zeta);
    }
}
