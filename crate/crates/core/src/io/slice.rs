//! CT slices on disk: a 16-bit PGM plus an optional JSON sidecar with the
//! rescale and voxel metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_pgm, write_pgm};
use crate::error::{invalid, Error, Result};
use crate::physics::{Calibration, CtImage, SimulationConfig, Unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceMeta {
    pub slope: f64,
    pub intercept: f64,
    /// mm
    pub voxel: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SliceMeta {
    pub fn from_calibration(cal: Calibration) -> Self {
        SliceMeta {
            slope: cal.slope,
            intercept: cal.intercept,
            voxel: cal.voxel,
            simulation: None,
            clamp_fraction: None,
            source: None,
        }
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            slope: self.slope,
            intercept: self.intercept,
            voxel: self.voxel,
        }
    }
}

/// `dir/name.pgm` -> `dir/name.json`
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Sorted `.pgm` files directly inside `dir`.
pub fn list_slices(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_meta(pgm: &Path) -> Result<Option<SliceMeta>> {
    let p = sidecar_path(pgm);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|source| Error::File {
        path: p.clone(),
        source,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

/// Loads stored pixels; without a sidecar the default calibration applies.
pub fn load_slice(pgm: &Path) -> Result<(CtImage, SliceMeta)> {
    let img = read_pgm(pgm)?;
    let meta =
        read_meta(pgm)?.unwrap_or_else(|| SliceMeta::from_calibration(Calibration::default()));
    let data = img.data.iter().map(|&v| v as f64).collect();
    let ct = CtImage::new(img.height, img.width, data, Unit::Pixel, meta.calibration())?;
    Ok((ct, meta))
}

/// Rounds to the nearest integer and clamps into the 16-bit range. Returns
/// the number of samples that were clamped.
pub fn quantize(values: &[f64]) -> (Vec<u16>, usize) {
    let mut clamped = 0;
    let data = values
        .iter()
        .map(|&v| {
            let r = v.round();
            if !(0.0..=65535.0).contains(&r) {
                clamped += 1;
            }
            r.clamp(0.0, 65535.0) as u16
        })
        .collect();
    (data, clamped)
}

/// Writes the PGM and its sidecar. Returns the count of clamped samples.
pub fn save_slice(pgm: &Path, img: &CtImage, meta: &SliceMeta) -> Result<usize> {
    if img.unit() != Unit::Pixel {
        return Err(invalid(format!(
            "slices are stored as pixels, got {:?}",
            img.unit()
        )));
    }
    let (data, clamped) = quantize(img.data());
    write_pgm(pgm, img.width(), img.height(), &data)?;
    let json = serde_json::to_string_pretty(meta)?;
    super::container::write_atomic(&sidecar_path(pgm), json.as_bytes())?;
    Ok(clamped)
}
