//! CT physics: unit conversions, parallel-beam projection and
//! reconstruction, and Poisson low-dose simulation.

pub mod image;
pub mod phantom;
pub mod poisson;
pub mod radon;
pub mod simulate;

pub use image::{
    hu_to_mu, hu_to_pixels, mu_to_hu, pixels_to_hu, Calibration, CtImage, HuConvention, Unit,
    DEFAULT_MU_WATER, DEFAULT_PADDING_PIXEL, PADDING_HU,
};
pub use poisson::poisson_sample;
pub use radon::{
    default_bins, equispaced_angles, filter_projections, iradon, radon, RampFilter, Reconstruction,
    Sinogram,
};
pub use simulate::{
    noisy_projection, normal_dose_projection, simulate_low_dose, NoiseModel, NoisyProjection,
    SimulationConfig, SimulationOutput,
};
