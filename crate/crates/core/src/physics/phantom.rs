//! Analytic ellipse phantoms for tests and desk-scale datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{Calibration, CtImage, Unit};
use crate::error::Result;

/// Ellipse in normalized coordinates: the image spans `[-1, 1]` on both axes,
/// `y` pointing up. Values are additive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub value: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub cx: f64,
    pub cy: f64,
    /// Counter-clockwise rotation, degrees.
    pub angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

/// Sub-samples per pixel axis used by [`rasterize`].
pub const OVERSAMPLE: usize = 4;

/// Area-averaged ellipse values on a `size x size` grid, estimated from
/// `OVERSAMPLE x OVERSAMPLE` sub-samples per pixel.
pub fn rasterize(ellipses: &[Ellipse], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let half = size as f64 / 2.0;
    let k = OVERSAMPLE;
    let w = 1.0 / (k * k) as f64;
    for i in 0..size {
        for j in 0..size {
            let mut acc = 0.0;
            for si in 0..k {
                let y = (half - (i as f64 + (si as f64 + 0.5) / k as f64)) / half;
                for sj in 0..k {
                    let x = (j as f64 + (sj as f64 + 0.5) / k as f64 - half) / half;
                    acc += ellipses
                        .iter()
                        .filter(|e| e.contains(x, y))
                        .map(|e| e.value)
                        .sum::<f64>();
                }
            }
            out[i * size + j] = acc * w;
        }
    }
    out
}

/// Modified (high-contrast) Shepp-Logan ellipses, values in `[0, 1]`.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    let e = |value, semi_x, semi_y, cx, cy, angle| Ellipse {
        value,
        semi_x,
        semi_y,
        cx,
        cy,
        angle,
    };
    vec![
        e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        e(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        e(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        e(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        e(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        e(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        e(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        e(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ]
}

/// Shepp-Logan phantom as an attenuation-like image in `[0, 1]`.
pub fn shepp_logan(size: usize) -> Vec<f64> {
    rasterize(&shepp_logan_ellipses(), size)
}

/// Random body-like slice in HU: an air background, a soft-tissue torso,
/// and randomly placed lungs, organs, bones and small lesions.
pub fn body_phantom_hu(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut ellipses = Vec::new();
    let (bx, by) = (r(0.72, 0.9), r(0.55, 0.8));
    // torso at 40 HU over an air floor of -1000
    ellipses.push(Ellipse {
        value: 1040.0,
        semi_x: bx,
        semi_y: by,
        cx: r(-0.05, 0.05),
        cy: r(-0.05, 0.05),
        angle: r(-10.0, 10.0),
    });
    // fat rim
    ellipses.push(Ellipse {
        value: -130.0,
        semi_x: bx * 0.97,
        semi_y: by * 0.95,
        cx: ellipses[0].cx,
        cy: ellipses[0].cy,
        angle: ellipses[0].angle,
    });
    ellipses.push(Ellipse {
        value: 130.0,
        semi_x: bx * 0.9,
        semi_y: by * 0.86,
        cx: ellipses[0].cx,
        cy: ellipses[0].cy,
        angle: ellipses[0].angle,
    });
    if r(0.0, 1.0) < 0.6 {
        for side in [-1.0, 1.0] {
            ellipses.push(Ellipse {
                value: -820.0,
                semi_x: r(0.18, 0.28) * bx,
                semi_y: r(0.3, 0.5) * by,
                cx: side * r(0.35, 0.5) * bx,
                cy: r(-0.1, 0.2),
                angle: r(-15.0, 15.0),
            });
        }
    }
    for _ in 0..(2 + (r(0.0, 3.0) as usize)) {
        ellipses.push(Ellipse {
            value: r(-30.0, 60.0),
            semi_x: r(0.08, 0.25),
            semi_y: r(0.08, 0.25),
            cx: r(-0.4, 0.4) * bx,
            cy: r(-0.4, 0.4) * by,
            angle: r(0.0, 180.0),
        });
    }
    // spine and a couple of ribs
    ellipses.push(Ellipse {
        value: r(500.0, 900.0),
        semi_x: r(0.06, 0.1),
        semi_y: r(0.06, 0.1),
        cx: r(-0.05, 0.05),
        cy: -by * r(0.55, 0.7),
        angle: 0.0,
    });
    for _ in 0..2 {
        let t = r(0.0, std::f64::consts::TAU);
        ellipses.push(Ellipse {
            value: r(300.0, 700.0),
            semi_x: 0.04,
            semi_y: 0.025,
            cx: 0.8 * bx * t.cos(),
            cy: 0.8 * by * t.sin(),
            angle: t.to_degrees(),
        });
    }
    for _ in 0..(1 + (r(0.0, 3.0) as usize)) {
        let rad = r(0.02, 0.05);
        ellipses.push(Ellipse {
            value: r(-60.0, 80.0),
            semi_x: rad,
            semi_y: rad,
            cx: r(-0.5, 0.5) * bx,
            cy: r(-0.5, 0.5) * by,
            angle: 0.0,
        });
    }
    rasterize(&ellipses, size)
        .into_iter()
        .map(|v| v - 1000.0)
        .collect()
}

/// [`body_phantom_hu`] as stored pixels with the given calibration, clamped
/// to the 12-bit range.
pub fn body_phantom(size: usize, seed: u64, cal: Calibration) -> Result<CtImage> {
    let pixels = body_phantom_hu(size, seed)
        .into_iter()
        .map(|h| ((h - cal.intercept) / cal.slope).clamp(0.0, 4095.0))
        .collect();
    CtImage::new(size, size, pixels, Unit::Pixel, cal)
}
