//! Camera model, visibility-aware sampling, motion spectra, and image-space
//! mode extraction.

pub mod extract;
pub mod projection;
pub mod sampling;
pub mod spectrum;

pub use extract::{add_mode_noise, extract_modes, merge_modes, ObservedMode};
pub use projection::{fit_projection, ProjectionModel};
pub use sampling::{
    build_cross_sampling_operator, build_sampling_operator, ImageSeries, SamplingOperator,
    Visibility,
};
pub use spectrum::{
    estimate_damping_ratio, find_peaks, power_spectrum, DampingEstimate, PeakOptions, Spectrum,
    Window,
};
