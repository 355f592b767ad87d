//! Low-dose simulation by Poisson noise injection in the projection domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{
    hu_to_mu, hu_to_pixels, pixels_to_hu, CtImage, HuConvention, Unit, DEFAULT_MU_WATER,
    DEFAULT_PADDING_PIXEL,
};
use super::poisson::poisson_sample;
use super::radon::{default_bins, equispaced_angles, iradon, radon, RampFilter, Sinogram};
use crate::error::{invalid, Result};

/// Fraction of clamped detector bins above which a warning is raised.
pub const CLAMP_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Transmitted counts drawn from a Poisson distribution.
    #[default]
    Poisson,
    /// Transmitted counts replaced by their expectation (noise-free).
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Incident photons per detector bin.
    pub i0: f64,
    pub seed: u64,
    pub angles: usize,
    /// 1/mm.
    pub mu_water: f64,
    pub convention: HuConvention,
    /// Stored value treated as padding; `None` disables the check.
    pub padding: Option<f64>,
    pub noise: NoiseModel,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            i0: 2e3,
            seed: 0,
            angles: 720,
            mu_water: DEFAULT_MU_WATER,
            convention: HuConvention::Rescale,
            padding: Some(DEFAULT_PADDING_PIXEL),
            noise: NoiseModel::Poisson,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoisyProjection {
    pub rho: Sinogram,
    /// Bins whose sampled count was 0 and was raised to 1 photon.
    pub clamped: usize,
}

impl NoisyProjection {
    pub fn clamp_fraction(&self) -> f64 {
        self.clamped as f64 / self.rho.data().len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// Stored pixel values of the low-dose slice.
    pub image: CtImage,
    pub clamp_fraction: f64,
    pub warning: Option<String>,
}

/// Transmission `T_nd = exp(-rho_nd)`, counts `T_ld ~ Poisson(I0 T_nd)`
/// (zero counts raised to 1), and `rho_ld = ln(I0 / T_ld)`.
///
/// Bins are sampled sequentially in row-major order from `rng`.
pub fn noisy_projection(
    rho_nd: &Sinogram,
    i0: f64,
    model: NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<NoisyProjection> {
    if !(i0 > 0.0) || !i0.is_finite() {
        return Err(invalid(format!("incident flux must be > 0, got {i0}")));
    }
    let mut clamped = 0;
    let mut data = Vec::with_capacity(rho_nd.data().len());
    for &rho in rho_nd.data() {
        let expected = i0 * (-rho).exp();
        let counts = match model {
            NoiseModel::Poisson => poisson_sample(expected, rng)? as f64,
            NoiseModel::Mean => expected,
        };
        let counts = if counts < 1.0 {
            clamped += 1;
            1.0
        } else {
            counts
        };
        data.push((i0 / counts).ln());
    }
    Ok(NoisyProjection {
        rho: rho_nd.with_data(data)?,
        clamped,
    })
}

/// Projection data of a stored-pixel slice: pixels to HU to attenuation,
/// then the voxel-scaled Radon transform.
pub fn normal_dose_projection(nd: &CtImage, cfg: &SimulationConfig) -> Result<(CtImage, Sinogram)> {
    let hu = pixels_to_hu(nd, cfg.convention, cfg.padding)?;
    let mu = hu_to_mu(&hu, cfg.mu_water)?;
    let angles = equispaced_angles(cfg.angles);
    let rho = radon(&mu, &angles, default_bins(nd.height(), nd.width()))?;
    Ok((hu, rho))
}

/// Simulates a low-dose acquisition of the stored-pixel slice `nd`.
///
/// The reconstructed noise increment `iradon(rho_nd - rho_ld)` is added to
/// the attenuation map and mapped back through the HU and pixel rescales.
/// The increment is applied in HU space, which is identical to re-deriving
/// HU from the noisy attenuation except where the normal-dose attenuation
/// was clamped at zero; those sub-air values are kept.
pub fn simulate_low_dose(nd: &CtImage, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    if nd.unit() != Unit::Pixel {
        return Err(invalid(format!(
            "simulate_low_dose expects stored pixels, got {:?}",
            nd.unit()
        )));
    }
    if cfg.angles == 0 {
        return Err(invalid("angle count must be >= 1"));
    }
    let (hu_nd, rho_nd) = normal_dose_projection(nd, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy = noisy_projection(&rho_nd, cfg.i0, cfg.noise, &mut rng)?;
    let noise = rho_nd.lin_comb(1.0, &noisy.rho, -1.0)?;
    let delta_mu = iradon(&noise, RampFilter::RamLak, nd.height(), nd.width())?.image;

    let hu_per_mu = 1000.0 / cfg.mu_water;
    let hu_ld: Vec<f64> = hu_nd
        .data()
        .iter()
        .zip(delta_mu.data())
        .map(|(&h, &d)| h + hu_per_mu * d)
        .collect();
    let hu_ld = CtImage::new(nd.height(), nd.width(), hu_ld, Unit::Hu, nd.calibration())?;
    let image = hu_to_pixels(&hu_ld, cfg.convention)?;

    let clamp_fraction = noisy.clamp_fraction();
    let warning = (clamp_fraction > CLAMP_WARN_FRACTION).then(|| {
        let msg = format!(
            "I0 = {} clamped {:.2}% of detector bins to 1 photon",
            cfg.i0,
            100.0 * clamp_fraction
        );
        log::warn!("{msg}");
        msg
    });
    Ok(SimulationOutput {
        image,
        clamp_fraction,
        warning,
    })
}
