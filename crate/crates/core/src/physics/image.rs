use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// What the values of a [`CtImage`] grid mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Stored scanner values before the rescale.
    Pixel,
    /// Hounsfield units.
    Hu,
    /// Linear attenuation coefficient, 1/mm.
    Mu,
}

/// How stored pixels map to Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HuConvention {
    /// `HU = pixel * slope + intercept`, the usual scanner rescale.
    #[default]
    Rescale,
    /// `HU = pixel / slope + intercept`.
    Literal,
}

/// Rescale metadata carried alongside a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: f64,
    /// HU.
    pub intercept: f64,
    /// In-plane voxel size, mm.
    pub voxel: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            slope: 1.0,
            intercept: -1024.0,
            voxel: 1.0,
        }
    }
}

/// HU assigned to padding pixels outside the scanned field.
pub const PADDING_HU: f64 = -1024.0;
/// Stored value conventionally marking padding.
pub const DEFAULT_PADDING_PIXEL: f64 = -2000.0;
/// Attenuation of water at typical CT effective energies, 1/mm.
pub const DEFAULT_MU_WATER: f64 = 0.0192;

#[derive(Debug, Clone, PartialEq)]
pub struct CtImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    unit: Unit,
    cal: Calibration,
}

impl CtImage {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f64>,
        unit: Unit,
        cal: Calibration,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image dimensions must be >= 1"));
        }
        if data.len() != height * width {
            return Err(invalid(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if !(cal.voxel > 0.0) || !cal.voxel.is_finite() {
            return Err(invalid(format!(
                "voxel size must be > 0, got {}",
                cal.voxel
            )));
        }
        Ok(CtImage {
            height,
            width,
            data,
            unit,
            cal,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn calibration(&self) -> Calibration {
        self.cal
    }

    pub fn voxel(&self) -> f64 {
        self.cal.voxel
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn with_data(&self, data: Vec<f64>, unit: Unit) -> CtImage {
        CtImage {
            height: self.height,
            width: self.width,
            data,
            unit,
            cal: self.cal,
        }
    }

    fn expect_unit(&self, unit: Unit, op: &str) -> Result<()> {
        if self.unit != unit {
            return Err(invalid(format!(
                "{op} expects a {unit:?} image, got {:?}",
                self.unit
            )));
        }
        Ok(())
    }
}

/// Stored pixels to HU. Pixels equal to `padding` become [`PADDING_HU`].
pub fn pixels_to_hu(
    img: &CtImage,
    convention: HuConvention,
    padding: Option<f64>,
) -> Result<CtImage> {
    img.expect_unit(Unit::Pixel, "pixels_to_hu")?;
    let Calibration {
        slope, intercept, ..
    } = img.cal;
    if slope == 0.0 || !slope.is_finite() {
        return Err(invalid(format!(
            "rescale slope must be non-zero, got {slope}"
        )));
    }
    let data = img
        .data
        .iter()
        .map(|&p| {
            if padding == Some(p) {
                PADDING_HU
            } else {
                match convention {
                    HuConvention::Rescale => p * slope + intercept,
                    HuConvention::Literal => p / slope + intercept,
                }
            }
        })
        .collect();
    Ok(img.with_data(data, Unit::Hu))
}

/// Exact inverse of [`pixels_to_hu`] for non-padding values.
pub fn hu_to_pixels(img: &CtImage, convention: HuConvention) -> Result<CtImage> {
    img.expect_unit(Unit::Hu, "hu_to_pixels")?;
    let Calibration {
        slope, intercept, ..
    } = img.cal;
    if slope == 0.0 || !slope.is_finite() {
        return Err(invalid(format!(
            "rescale slope must be non-zero, got {slope}"
        )));
    }
    let data = img
        .data
        .iter()
        .map(|&h| match convention {
            HuConvention::Rescale => (h - intercept) / slope,
            HuConvention::Literal => (h - intercept) * slope,
        })
        .collect();
    Ok(img.with_data(data, Unit::Pixel))
}

/// `mu = mu_water / 1000 * HU + mu_water`, clamped at 0.
pub fn hu_to_mu(img: &CtImage, mu_water: f64) -> Result<CtImage> {
    img.expect_unit(Unit::Hu, "hu_to_mu")?;
    check_mu_water(mu_water)?;
    let data = img
        .data
        .iter()
        .map(|&h| (mu_water / 1000.0 * h + mu_water).max(0.0))
        .collect();
    Ok(img.with_data(data, Unit::Mu))
}

/// Algebraic inverse of the attenuation map; negative input is not clamped.
pub fn mu_to_hu(img: &CtImage, mu_water: f64) -> Result<CtImage> {
    img.expect_unit(Unit::Mu, "mu_to_hu")?;
    check_mu_water(mu_water)?;
    let data = img
        .data
        .iter()
        .map(|&m| (m - mu_water) * 1000.0 / mu_water)
        .collect();
    Ok(img.with_data(data, Unit::Hu))
}

fn check_mu_water(mu_water: f64) -> Result<()> {
    if !(mu_water > 0.0) || !mu_water.is_finite() {
        return Err(invalid(format!("mu_water must be > 0, got {mu_water}")));
    }
    Ok(())
}
