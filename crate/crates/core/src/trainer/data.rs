use crate::error::{invalid, Result};
use crate::physics::{CtImage, Unit};
use crate::tensor::{Shape, Tensor};

/// Stored-pixel full scale.
pub const PIXEL_SCALE: f64 = 4095.0;

#[derive(Debug, Clone)]
pub struct Normalized {
    /// `[1, 1, h, w]` in `[0, 1]`.
    pub tensor: Tensor<f32>,
    /// Pixels outside `[0, 4095]` that were clamped.
    pub clamped: usize,
}

/// `pixel / 4095`, clamped into `[0, 1]` with a warning when anything was
/// out of range.
pub fn normalize(img: &CtImage) -> Result<Normalized> {
    if img.unit() != Unit::Pixel {
        return Err(invalid(format!(
            "normalize expects stored pixels, got {:?}",
            img.unit()
        )));
    }
    let mut clamped = 0;
    let data = img
        .data()
        .iter()
        .map(|&p| {
            let v = p / PIXEL_SCALE;
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} pixels outside [0, 4095] clamped during normalization");
    }
    Ok(Normalized {
        tensor: Tensor::new(Shape::new(1, 1, img.height(), img.width()), data)?,
        clamped,
    })
}

pub fn denormalize(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64 * PIXEL_SCALE).collect()
}

/// Number of leading items that go to training: `ceil(0.7 N)`.
pub fn split_index(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(invalid(format!("need at least 2 images to split, got {n}")));
    }
    let k = (7 * n).div_ceil(10);
    if k >= n {
        return Err(invalid(format!("{n} images leave an empty test split")));
    }
    Ok(k)
}

/// First `ceil(0.7 N)` items train, the rest test, order kept.
pub fn split_dataset<T>(mut items: Vec<T>) -> Result<(Vec<T>, Vec<T>)> {
    let k = split_index(items.len())?;
    let test = items.split_off(k);
    Ok((items, test))
}

/// `0, stride, 2 stride, ...` plus `dim - patch` when that is off-grid.
pub fn patch_positions(dim: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || patch == 0 {
        return Err(invalid("patch size and stride must be >= 1"));
    }
    if patch > dim {
        return Err(invalid(format!(
            "patch {patch} larger than image dimension {dim}"
        )));
    }
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// Aligned low-dose / normal-dose patch pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    patch: usize,
    low: Vec<f32>,
    normal: Vec<f32>,
    provenance: Vec<Provenance>,
}

impl PatchSet {
    pub fn new(patch: usize) -> Self {
        PatchSet {
            patch,
            low: Vec::new(),
            normal: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    fn slot(&self, k: usize) -> std::ops::Range<usize> {
        let n = self.patch * self.patch;
        k * n..(k + 1) * n
    }

    pub fn low(&self, k: usize) -> &[f32] {
        &self.low[self.slot(k)]
    }

    pub fn normal(&self, k: usize) -> &[f32] {
        &self.normal[self.slot(k)]
    }

    /// Adds one pair directly.
    pub fn push(&mut self, low: &[f32], normal: &[f32], prov: Provenance) -> Result<()> {
        let n = self.patch * self.patch;
        if low.len() != n || normal.len() != n {
            return Err(invalid(format!("patch pair needs {n} values per side")));
        }
        self.low.extend_from_slice(low);
        self.normal.extend_from_slice(normal);
        self.provenance.push(prov);
        Ok(())
    }

    /// Cuts every grid patch out of an aligned `[1, 1, h, w]` pair.
    pub fn extract(
        &mut self,
        image: usize,
        low: &Tensor<f32>,
        normal: &Tensor<f32>,
        stride: usize,
    ) -> Result<usize> {
        let s = low.shape();
        if s != normal.shape() || s.n != 1 || s.c != 1 {
            return Err(invalid(format!(
                "unaligned pair: {} vs {}",
                s,
                normal.shape()
            )));
        }
        let p = self.patch;
        let ys = patch_positions(s.h, p, stride)?;
        let xs = patch_positions(s.w, p, stride)?;
        for &y in &ys {
            for &x in &xs {
                for i in 0..p {
                    let row = (y + i) * s.w + x;
                    self.low.extend_from_slice(&low.data()[row..row + p]);
                    self.normal.extend_from_slice(&normal.data()[row..row + p]);
                }
                self.provenance.push(Provenance { image, y, x });
            }
        }
        Ok(ys.len() * xs.len())
    }

    /// `[k, 1, p, p]` tensors of the listed pairs.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let shape = Shape::new(indices.len(), 1, self.patch, self.patch);
        let mut low = Vec::with_capacity(shape.numel());
        let mut normal = Vec::with_capacity(shape.numel());
        for &k in indices {
            if k >= self.len() {
                return Err(invalid(format!("patch index {k} out of range")));
            }
            low.extend_from_slice(self.low(k));
            normal.extend_from_slice(self.normal(k));
        }
        Ok((Tensor::new(shape, low)?, Tensor::new(shape, normal)?))
    }
}

/// Convenience: patches of several aligned image pairs.
pub fn extract_patches(
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    patch: usize,
    stride: usize,
) -> Result<PatchSet> {
    let mut set = PatchSet::new(patch);
    for (i, (low, normal)) in pairs.iter().enumerate() {
        set.extract(i, low, normal, stride)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Calibration;

    #[test]
    fn normalize_examples() {
        let img = CtImage::new(
            1,
            4,
            vec![0.0, 4095.0, 5000.0, -1.0],
            Unit::Pixel,
            Calibration::default(),
        )
        .unwrap();
        let n = normalize(&img).unwrap();
        assert_eq!(n.tensor.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(n.clamped, 2);
        let img = CtImage::new(
            1,
            3,
            vec![17.0, 2048.0, 4000.0],
            Unit::Pixel,
            Calibration::default(),
        )
        .unwrap();
        let back = denormalize(&normalize(&img).unwrap().tensor);
        for (a, b) in back.iter().zip(img.data()) {
            assert!((a - b).abs() / 4095.0 < 1e-6);
        }
    }

    #[test]
    fn split_examples() {
        let (tr, te) = split_dataset((1..=10).collect()).unwrap();
        assert_eq!(tr.len(), 7);
        assert_eq!(te, vec![8, 9, 10]);
        assert_eq!(split_index(663).unwrap(), 465);
        assert!(split_index(2).is_err());
        assert!(split_index(1).is_err());
        assert!(split_index(3).is_err());
        assert_eq!(split_index(4).unwrap(), 3);
    }

    #[test]
    fn position_examples() {
        assert_eq!(patch_positions(100, 40, 20).unwrap(), vec![0, 20, 40, 60]);
        let p = patch_positions(512, 40, 20).unwrap();
        assert_eq!(p.len(), 25);
        assert_eq!(p[23], 460);
        assert_eq!(p[24], 472);
        assert_eq!(patch_positions(60, 40, 21).unwrap(), vec![0, 20]);
        assert_eq!(patch_positions(40, 40, 5).unwrap(), vec![0]);
        assert!(patch_positions(30, 40, 5).is_err());
        assert!(patch_positions(50, 40, 0).is_err());
    }

    #[test]
    fn patches_map_back_to_source() {
        let (h, w) = (50, 70);
        let low = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| (i * w + j) as f32);
        let normal = low.map(|v| -v);
        let set = extract_patches(&[(low.clone(), normal)], 10, 10).unwrap();
        assert_eq!(set.len(), 35);
        for k in 0..set.len() {
            let pr = set.provenance()[k];
            for i in 0..10 {
                for j in 0..10 {
                    let v = low.at(0, 0, pr.y + i, pr.x + j);
                    assert_eq!(set.low(k)[i * 10 + j], v);
                    assert_eq!(set.normal(k)[i * 10 + j], -v);
                }
            }
        }
        // non-overlapping grid reassembles the source exactly
        let mut canvas = vec![f32::NAN; h * w];
        for k in 0..set.len() {
            let pr = set.provenance()[k];
            for i in 0..10 {
                for j in 0..10 {
                    canvas[(pr.y + i) * w + pr.x + j] = set.low(k)[i * 10 + j];
                }
            }
        }
        assert_eq!(canvas, low.data());
        let (b, _) = set.batch(&[3, 0]).unwrap();
        assert_eq!(b.shape(), Shape::new(2, 1, 10, 10));
        assert_eq!(&b.data()[..100], set.low(3));
    }
}
