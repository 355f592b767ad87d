//! Image-quality metrics, display windowing, and dataset reports.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::io::{list_slices, load_slice};
use crate::physics::{CtImage, Unit};
use crate::tensor::{Real, Tensor};
use crate::trainer::normalize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    /// Zero mean squared error.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v}"),
        }
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Psnr> {
    same_shape("psnr", a, b)?;
    if !(peak > 0.0) {
        return Err(invalid(format!("peak must be > 0, got {peak}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (Real::to_f64(x) - Real::to_f64(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("psnr".into()));
    }
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (peak * peak / mse).log10())
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| g[k] * x[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW)
                .map(|k| g[k] * rows[(i + k) * ow + j])
                .sum();
        }
    }
    out
}

/// Mean SSIM over the valid map of every `h x w` plane, dynamic range 1.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(shape_err(
            "ssim",
            format!(
                "{}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                s.h, s.w
            ),
        ));
    }
    let g = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = a.plane(n, c).iter().map(|&v| Real::to_f64(v)).collect();
            let y: Vec<f64> = b.plane(n, c).iter().map(|&v| Real::to_f64(v)).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            let [mx, my, sxx, syy, sxy] =
                [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, s.h, s.w, &g));
            for k in 0..mx.len() {
                let (ux, uy) = (mx[k], my[k]);
                let vx = sxx[k] - ux * ux;
                let vy = syy[k] - uy * uy;
                let cov = sxy[k] - ux * uy;
                total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
            count += mx.len();
        }
    }
    let v = total / count as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite("ssim".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// HU
    pub center: f64,
    /// HU, > 0
    pub width: f64,
}

impl WindowSpec {
    pub const ABDOMEN: WindowSpec = WindowSpec {
        center: 50.0,
        width: 400.0,
    };
    pub const LUNG: WindowSpec = WindowSpec {
        center: -600.0,
        width: 1500.0,
    };

    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() || !center.is_finite() {
            return Err(invalid(format!("window width must be > 0, got {width}")));
        }
        Ok(WindowSpec { center, width })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "abdomen" => Some(Self::ABDOMEN),
            "lung" => Some(Self::LUNG),
            _ => None,
        }
    }

    /// One HU value to a gray level, rounding halves up.
    pub fn map(&self, hu: f64) -> u8 {
        let lo = self.center - self.width / 2.0;
        let v = (hu - lo) / self.width * 255.0;
        (v + 0.5).floor().clamp(0.0, 255.0) as u8
    }
}

pub fn apply_window(img: &CtImage, win: WindowSpec) -> Result<Vec<u8>> {
    if img.unit() != Unit::Hu {
        return Err(invalid(format!(
            "windowing expects HU, got {:?}",
            img.unit()
        )));
    }
    WindowSpec::new(win.center, win.width)?;
    Ok(img.data().iter().map(|&h| win.map(h)).collect())
}

pub fn save_png(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, gray.to_vec())
        .ok_or_else(|| invalid(format!("{} bytes for a {width}x{height} image", gray.len())))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub psnr: Psnr,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub filename: String,
    pub lowdose: Option<Metrics>,
    pub pred: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Sorted by filename.
    pub rows: Vec<ReportRow>,
    pub mean_lowdose: Option<Metrics>,
    pub mean_pred: Option<Metrics>,
    /// Files without a counterpart, as `"<dir>: <name>"`.
    pub missing: Vec<String>,
}

/// Arithmetic means. A single identical pair makes the PSNR mean identical.
pub fn mean_metrics(items: &[Metrics]) -> Option<Metrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let psnr = if items.iter().any(|m| m.psnr == Psnr::Identical) {
        Psnr::Identical
    } else {
        Psnr::Db(items.iter().filter_map(|m| m.psnr.db()).sum::<f64>() / n)
    };
    Some(Metrics {
        psnr,
        ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
    })
}

/// PSNR (peak 1) and SSIM on `[0, 1]`-normalized stored pixels.
pub fn image_metrics(a: &CtImage, b: &CtImage) -> Result<Metrics> {
    let (x, y) = (normalize(a)?.tensor, normalize(b)?.tensor);
    Ok(Metrics {
        psnr: psnr(&x, &y, 1.0)?,
        ssim: ssim(&x, &y)?,
    })
}

fn names(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(list_slices(dir)?
        .into_iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Compares every prediction with the same-named reference, and the
/// low-dose input when `low_dir` is given. Unmatched files are listed in
/// `missing` and skipped.
pub fn eval_dataset(
    pred_dir: &Path,
    ref_dir: &Path,
    low_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let pred = names(pred_dir)?;
    let refs = names(ref_dir)?;
    let low = low_dir.map(names).transpose()?;
    let mut all: BTreeSet<String> = pred.union(&refs).cloned().collect();
    if let Some(l) = &low {
        all.extend(l.iter().cloned());
    }
    let mut missing = Vec::new();
    let mut matched = Vec::new();
    for name in all {
        let mut ok = true;
        let mut check = |set: &BTreeSet<String>, dir: &Path| {
            if !set.contains(&name) {
                missing.push(format!("{}: {name}", dir.display()));
                ok = false;
            }
        };
        check(&pred, pred_dir);
        check(&refs, ref_dir);
        if let (Some(l), Some(d)) = (&low, low_dir) {
            check(l, d);
        }
        if ok {
            matched.push(name);
        }
    }
    let rows: Vec<ReportRow> = matched
        .par_iter()
        .map(|name| -> Result<ReportRow> {
            let path = |d: &Path| -> PathBuf { d.join(name) };
            let (r, _) = load_slice(&path(ref_dir))?;
            let (p, _) = load_slice(&path(pred_dir))?;
            let lowdose = match low_dir {
                Some(d) => Some(image_metrics(&load_slice(&path(d))?.0, &r)?),
                None => None,
            };
            Ok(ReportRow {
                filename: name.clone(),
                lowdose,
                pred: image_metrics(&p, &r)?,
            })
        })
        .collect::<Result<_>>()?;
    let preds: Vec<Metrics> = rows.iter().map(|r| r.pred).collect();
    let lows: Vec<Metrics> = rows.iter().filter_map(|r| r.lowdose).collect();
    Ok(MetricsReport {
        mean_pred: mean_metrics(&preds),
        mean_lowdose: mean_metrics(&lows),
        rows,
        missing,
    })
}

/// Columns `filename, psnr_lowdose, ssim_lowdose, psnr_pred, ssim_pred`,
/// one row per image and a final `MEAN` row.
pub fn report_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "filename",
        "psnr_lowdose",
        "ssim_lowdose",
        "psnr_pred",
        "ssim_pred",
    ])?;
    let cells = |m: Option<Metrics>| match m {
        Some(m) => [m.psnr.to_string(), m.ssim.to_string()],
        None => [String::new(), String::new()],
    };
    for r in &report.rows {
        let [lp, ls] = cells(r.lowdose);
        let [pp, ps] = cells(Some(r.pred));
        w.write_record([r.filename.clone(), lp, ls, pp, ps])?;
    }
    let [lp, ls] = cells(report.mean_lowdose);
    let [pp, ps] = cells(report.mean_pred);
    w.write_record(["MEAN".to_string(), lp, ls, pp, ps])?;
    w.into_inner().map_err(|e| invalid(e.to_string()))
}
