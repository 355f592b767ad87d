//! Frozen four-block feature extractor and the combined MSE + feature loss.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, shape_err, ContainerError, Result};
use crate::io::Container;
use crate::tensor::{lit, Real, Shape, Tensor};

/// Per-channel means subtracted after scaling by 255.
pub const IMAGENET_MEANS: [f64; 3] = [123.68, 116.779, 103.939];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    /// `(conv count, channels)` per block.
    pub blocks: Vec<(usize, usize)>,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        FeatureExtractorSpec {
            blocks: vec![(2, 64), (2, 128), (3, 256), (3, 512)],
        }
    }
}

impl FeatureExtractorSpec {
    /// Same topology with narrower blocks, for tests and quick runs.
    pub fn with_widths(widths: [usize; 4]) -> Self {
        let mut s = Self::default();
        for (b, w) in s.blocks.iter_mut().zip(widths) {
            b.1 = w;
        }
        s
    }

    /// Spatial divisor required by the pools before the last tap.
    pub fn divisor(&self) -> usize {
        1 << self.blocks.len().saturating_sub(1)
    }

    /// `(weight name, bias name, out, in)` per conv, numbered like the
    /// torchvision `features` sequence (conv and ReLU each take an index,
    /// pools take one).
    pub fn convs(&self) -> Vec<(String, String, usize, usize)> {
        let mut out = Vec::new();
        let mut idx = 0;
        let mut cin = 3;
        for &(count, ch) in &self.blocks {
            for _ in 0..count {
                out.push((
                    format!("features.{idx}.weight"),
                    format!("features.{idx}.bias"),
                    ch,
                    cin,
                ));
                cin = ch;
                idx += 2;
            }
            idx += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    /// Gray replicated to three channels, nothing else.
    #[default]
    Identity,
    /// Replicated, scaled by 255, per-channel means subtracted.
    Imagenet,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    spec: FeatureExtractorSpec,
    convs: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> FeatureExtractor<T> {
    /// Validates every tensor against the spec. Missing and extra names are
    /// both rejected.
    pub fn from_container(spec: FeatureExtractorSpec, c: &Container) -> Result<Self> {
        let layout = spec.convs();
        for name in c.names() {
            if !layout.iter().any(|(w, b, _, _)| w == name || b == name) {
                return Err(ContainerError::Unexpected(name.to_string()).into());
            }
        }
        let mut convs = Vec::new();
        for (wn, bn, out, cin) in &layout {
            let w = c.tensor(wn, Shape::new(*out, *cin, 3, 3))?;
            let b = c.tensor(bn, Shape::vector(*out))?;
            convs.push((w, b));
        }
        Ok(FeatureExtractor { spec, convs })
    }

    pub fn load(spec: FeatureExtractorSpec, path: &Path) -> Result<Self> {
        Self::from_container(spec, &Container::load(path)?)
    }

    /// He-normal kernels and small random biases.
    pub fn random(spec: FeatureExtractorSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        for (_, _, out, cin) in spec.convs() {
            let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt())
                .map_err(|e| invalid(e.to_string()))?;
            let bias = Normal::new(0.0, 0.01).map_err(|e| invalid(e.to_string()))?;
            let w = Tensor::from_fn(Shape::new(out, cin, 3, 3), |_, _, _, _| {
                lit(normal.sample(&mut rng))
            });
            let b = Tensor::from_fn(Shape::vector(out), |_, _, _, _| lit(bias.sample(&mut rng)));
            convs.push((w, b));
        }
        Ok(FeatureExtractor { spec, convs })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        for ((wn, bn, out, _), (w, b)) in self.spec.convs().into_iter().zip(&self.convs) {
            c.insert_tensor(wn, w)?;
            let data = b.data().iter().map(|&v| Real::to_f64(v) as f32).collect();
            c.insert(bn, vec![out], data)?;
        }
        Ok(c)
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.spec.blocks.iter().map(|b| b.1).collect()
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            spec: self.spec.clone(),
            convs: self
                .convs
                .iter()
                .map(|(w, b)| (w.cast(), b.cast()))
                .collect(),
        }
    }

    /// Records the extractor on `tape` and returns one tap per block, taken
    /// after the block's last ReLU. Weights enter as constants.
    pub fn features_on_tape(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        adapter: Adapter,
    ) -> Result<Vec<Var>> {
        let s = tape.shape(x);
        if s.c != 1 {
            return Err(shape_err(
                "extract_features",
                format!("expects 1 channel, got {}", s.c),
            ));
        }
        let d = self.spec.divisor();
        if !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
            let pad = |v: usize| (d - v % d) % d;
            return Err(shape_err(
                "extract_features",
                format!(
                    "{}x{} is not divisible by {d}; pad by {} rows and {} columns",
                    s.h,
                    s.w,
                    pad(s.h),
                    pad(s.w)
                ),
            ));
        }
        let two = tape.concat_channels(x, x)?;
        let mut h = tape.concat_channels(two, x)?;
        if adapter == Adapter::Imagenet {
            let shift: Vec<T> = IMAGENET_MEANS.iter().map(|&m| lit(m)).collect();
            h = tape.channel_affine(h, lit(255.0), &shift)?;
        }
        let mut taps = Vec::with_capacity(self.spec.blocks.len());
        let mut k = 0;
        for (bi, &(count, _)) in self.spec.blocks.iter().enumerate() {
            if bi > 0 {
                h = tape.max_pool_2x2(h)?;
            }
            for _ in 0..count {
                let (w, b) = &self.convs[k];
                let wv = tape.constant(w.clone());
                let bv = tape.constant(b.clone());
                h = tape.conv2d_dilated(h, wv, Some(bv), 1)?;
                h = tape.relu(h);
                k += 1;
            }
            taps.push(h);
        }
        Ok(taps)
    }

    /// Tap tensors of `x`.
    pub fn extract_features(&self, x: &Tensor<T>, adapter: Adapter) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let taps = self.features_on_tape(&mut tape, v, adapter)?;
        Ok(taps.into_iter().map(|t| tape.value(t).clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_mse: f64,
    pub lambda_p: f64,
    pub adapter: Adapter,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_mse: 1.0,
            lambda_p: 0.01,
            adapter: Adapter::Identity,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_mse) || !ok(self.lambda_p) {
            return Err(invalid(format!(
                "loss weights must be finite and >= 0, got ({}, {})",
                self.lambda_mse, self.lambda_p
            )));
        }
        if self.lambda_mse + self.lambda_p <= 0.0 {
            return Err(invalid("at least one loss weight must be > 0"));
        }
        Ok(())
    }

    pub fn needs_extractor(&self) -> bool {
        self.lambda_p > 0.0
    }
}

/// `sum_i mean((phi_i(pred) - phi_i(target))^2)`. The target path is built
/// from a constant, so gradients reach `pred` only.
pub fn perceptual_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    ext: &FeatureExtractor<T>,
    pred: Var,
    target: Var,
    adapter: Adapter,
) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(shape_err(
            "perceptual_loss",
            format!("{} vs {}", tape.shape(pred), tape.shape(target)),
        ));
    }
    let target = tape.constant(tape.value(target).clone());
    let a = ext.features_on_tape(tape, pred, adapter)?;
    let b = ext.features_on_tape(tape, target, adapter)?;
    let mut total: Option<Var> = None;
    for (ta, tb) in a.into_iter().zip(b) {
        let li = tape.mse_loss(ta, tb)?;
        total = Some(match total {
            None => li,
            Some(t) => tape.add(t, li)?,
        });
    }
    total.ok_or_else(|| invalid("extractor has no blocks"))
}

/// Handles of the weighted loss terms. `perceptual` is `None` when its
/// weight is zero.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Option<Var>,
    pub perceptual: Option<Var>,
}

/// `lambda_mse * mse(pred, target) + lambda_p * perceptual(pred, target)`.
/// A zero-weighted term is not computed.
pub fn combined_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &LossConfig,
    ext: Option<&FeatureExtractor<T>>,
    pred: Var,
    target: Var,
) -> Result<LossTerms> {
    cfg.validate()?;
    let mse = if cfg.lambda_mse > 0.0 {
        let m = tape.mse_loss(pred, target)?;
        Some(tape.scale(m, lit(cfg.lambda_mse)))
    } else {
        None
    };
    let perceptual = if cfg.lambda_p > 0.0 {
        let ext =
            ext.ok_or_else(|| invalid("perceptual term requested without extractor weights"))?;
        let p = perceptual_loss_on_tape(tape, ext, pred, target, cfg.adapter)?;
        Some(tape.scale(p, lit(cfg.lambda_p)))
    } else {
        None
    };
    let total = match (mse, perceptual) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("validated"),
    };
    Ok(LossTerms {
        total,
        mse,
        perceptual,
    })
}

/// Unweighted feature loss of two tensors.
pub fn perceptual_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    ext: &FeatureExtractor<T>,
    adapter: Adapter,
) -> Result<T> {
    let mut tape = Tape::new();
    let a = tape.constant(pred.clone());
    let b = tape.constant(target.clone());
    let l = perceptual_loss_on_tape(&mut tape, ext, a, b, adapter)?;
    Ok(tape.value(l).item())
}

/// Weighted terms `(mse_term, perceptual_term, total)`.
pub fn combined_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
    ext: Option<&FeatureExtractor<T>>,
) -> Result<(T, T, T)> {
    let mut tape = Tape::new();
    let a = tape.constant(pred.clone());
    let b = tape.constant(target.clone());
    let t = combined_loss_on_tape(&mut tape, cfg, ext, a, b)?;
    let get = |v: Option<Var>| v.map_or(T::zero(), |v| tape.value(v).item());
    Ok((get(t.mse), get(t.perceptual), tape.value(t.total).item()))
}
