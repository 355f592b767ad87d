//! Parallel-beam projection and filtered backprojection.
//!
//! Geometry: the rotation centre is the image centre `((h-1)/2, (w-1)/2)`;
//! a pixel at `(x, y)` (columns right, rows up, pixel units) projects to the
//! detector coordinate `t = x cos(theta) + y sin(theta)`, measured from the
//! central bin `(n_bins - 1) / 2`. Detector bins are spaced one voxel apart.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::image::{Calibration, CtImage, Unit};
use crate::error::{invalid, Result};

/// Per-angle line integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_bins: usize,
    /// Row-major `n_angles x n_bins`.
    data: Vec<f64>,
    /// Degrees, strictly increasing in `[0, 180)`.
    angles: Vec<f64>,
    /// mm.
    bin_spacing: f64,
}

impl Sinogram {
    pub fn new(data: Vec<f64>, angles: Vec<f64>, n_bins: usize, bin_spacing: f64) -> Result<Self> {
        validate_angles(&angles)?;
        if n_bins == 0 {
            return Err(invalid("sinogram needs at least one detector bin"));
        }
        if !(bin_spacing > 0.0) || !bin_spacing.is_finite() {
            return Err(invalid(format!(
                "bin spacing must be > 0, got {bin_spacing}"
            )));
        }
        if data.len() != angles.len() * n_bins {
            return Err(invalid(format!(
                "{} values for {} angles x {n_bins} bins",
                data.len(),
                angles.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("sinogram contains non-finite value {v}")));
        }
        Ok(Sinogram {
            n_angles: angles.len(),
            n_bins,
            data,
            angles,
            bin_spacing,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_spacing
    }

    pub fn projection(&self, a: usize) -> &[f64] {
        &self.data[a * self.n_bins..(a + 1) * self.n_bins]
    }

    /// Same geometry, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Sinogram::new(data, self.angles.clone(), self.n_bins, self.bin_spacing)
    }

    /// `a * self + b * other`, for sinograms of identical geometry.
    pub fn lin_comb(&self, a: f64, other: &Sinogram, b: f64) -> Result<Self> {
        if self.angles != other.angles || self.n_bins != other.n_bins {
            return Err(invalid("sinogram geometries differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&p, &q)| a * p + b * q)
            .collect();
        self.with_data(data)
    }
}

fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(invalid("angle list is empty"));
    }
    if angles.iter().any(|a| !(0.0..180.0).contains(a)) {
        return Err(invalid("angles must lie in [0, 180) degrees"));
    }
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("angles must be strictly increasing"));
    }
    Ok(())
}

/// `n` equispaced angles in `[0, 180)` degrees.
pub fn equispaced_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * 180.0 / n as f64).collect()
}

/// Detector bins covering the image diagonal: `ceil(sqrt(2) * max(h, w))`,
/// rounded up to odd.
pub fn default_bins(height: usize, width: usize) -> usize {
    let n = (std::f64::consts::SQRT_2 * height.max(width) as f64).ceil() as usize;
    n | 1
}

fn max_radius(height: usize, width: usize) -> f64 {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    (cx * cx + cy * cy).sqrt()
}

/// Line integrals of an attenuation map, multiplied by the voxel size so the
/// result is a dimensionless optical path length.
///
/// Each pixel's mass is deposited on the two detector bins nearest to its
/// projected centre with linear weights (the transpose of linear
/// interpolation), so every projection carries exactly `voxel * sum(mu)`.
pub fn radon(img: &CtImage, angles: &[f64], n_bins: usize) -> Result<Sinogram> {
    if img.unit() != Unit::Mu {
        return Err(invalid(format!(
            "radon expects an attenuation image, got {:?}",
            img.unit()
        )));
    }
    validate_angles(angles)?;
    let (h, w) = (img.height(), img.width());
    let centre = (n_bins as f64 - 1.0) / 2.0;
    if n_bins == 0 || centre < max_radius(h, w) {
        return Err(invalid(format!(
            "{n_bins} detector bins do not cover the {h}x{w} image diagonal (need >= {})",
            default_bins(h, w)
        )));
    }
    let voxel = img.voxel();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut data = vec![0.0; angles.len() * n_bins];
    data.par_chunks_mut(n_bins)
        .zip(angles.par_iter())
        .for_each(|(row, &deg)| {
            let (s, c) = deg.to_radians().sin_cos();
            for i in 0..h {
                let y = cy - i as f64;
                for j in 0..w {
                    let v = img.get(i, j);
                    if v == 0.0 {
                        continue;
                    }
                    let x = j as f64 - cx;
                    let pos = x * c + y * s + centre;
                    let k = pos.floor();
                    let frac = pos - k;
                    let k = k as usize;
                    row[k] += v * (1.0 - frac);
                    if frac > 0.0 {
                        row[k + 1] += v * frac;
                    }
                }
            }
            for v in row.iter_mut() {
                *v *= voxel;
            }
        });
    Sinogram::new(data, angles.to_vec(), n_bins, voxel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RampFilter {
    /// Band-limited ramp derived from its discrete spatial kernel.
    #[default]
    RamLak,
}

/// Result of [`iradon`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: CtImage,
    /// Set when the sinogram cannot support a meaningful reconstruction.
    pub note: Option<String>,
}

/// Frequency response of the Ram-Lak filter for a zero-padded length `m`,
/// including the factor 2 that pairs with the `pi / (2 n_angles)` scaling.
fn ramp_response(m: usize, fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let mut kernel: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let d = k.min(m - k);
            let v = if d == 0 {
                0.25
            } else if d % 2 == 1 {
                -1.0 / (PI * d as f64).powi(2)
            } else {
                0.0
            };
            Complex::new(v, 0.0)
        })
        .collect();
    fft.process(&mut kernel);
    kernel.iter().map(|c| 2.0 * c.re).collect()
}

/// Ramp-filters every projection in the frequency domain.
pub fn filter_projections(sino: &Sinogram, _filter: RampFilter) -> Vec<f64> {
    let nb = sino.n_bins();
    let m = (2 * nb).next_power_of_two().max(64);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let response = ramp_response(m, &fwd);
    let mut out = vec![0.0; sino.data().len()];
    out.par_chunks_mut(nb).enumerate().for_each(|(a, row)| {
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for (b, &v) in buf.iter_mut().zip(sino.projection(a)) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&response) {
            *b *= r;
        }
        inv.process(&mut buf);
        let norm = 1.0 / m as f64;
        for (o, b) in row.iter_mut().zip(&buf) {
            *o = b.re * norm;
        }
    });
    out
}

/// Filtered backprojection onto an `out_h x out_w` grid, divided by the bin
/// spacing so the result is attenuation in 1/mm.
pub fn iradon(
    sino: &Sinogram,
    filter: RampFilter,
    out_h: usize,
    out_w: usize,
) -> Result<Reconstruction> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("reconstruction grid must be non-empty"));
    }
    let filtered = filter_projections(sino, filter);
    let nb = sino.n_bins();
    let centre = (nb as f64 - 1.0) / 2.0;
    let trig: Vec<(f64, f64)> = sino
        .angles()
        .iter()
        .map(|d| d.to_radians().sin_cos())
        .collect();
    let cy = (out_h as f64 - 1.0) / 2.0;
    let cx = (out_w as f64 - 1.0) / 2.0;
    let scale = PI / (2.0 * sino.n_angles() as f64) / sino.bin_spacing();

    let mut data = vec![0.0; out_h * out_w];
    data.par_chunks_mut(out_w).enumerate().for_each(|(i, row)| {
        let y = cy - i as f64;
        for (j, px) in row.iter_mut().enumerate() {
            let x = j as f64 - cx;
            let mut acc = 0.0;
            for (a, &(s, c)) in trig.iter().enumerate() {
                let pos = x * c + y * s + centre;
                if pos < 0.0 || pos > (nb - 1) as f64 {
                    continue;
                }
                let k = pos.floor() as usize;
                let frac = pos - k as f64;
                let p = &filtered[a * nb..(a + 1) * nb];
                let hi = if k + 1 < nb { p[k + 1] } else { 0.0 };
                acc += p[k] * (1.0 - frac) + hi * frac;
            }
            *px = acc * scale;
        }
    });

    let note = (sino.n_angles() == 1)
        .then(|| "single projection angle: reconstruction is a smeared backprojection".to_string());
    let cal = Calibration {
        voxel: sino.bin_spacing(),
        ..Calibration::default()
    };
    Ok(Reconstruction {
        image: CtImage::new(out_h, out_w, data, Unit::Mu, cal)?,
        note,
    })
}
