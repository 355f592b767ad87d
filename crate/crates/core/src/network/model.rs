use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{Activation, ArchSpec, Source};
use super::sobel::sobel_on_tape;
use crate::autodiff::{BnConfig, BnMode, BnState, Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

/// Trainable tensors of one layer. `gamma`/`beta` exist iff the layer has BN.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `[out, in, f, f]`
    pub weight: Tensor<T>,
    /// `[1, out, 1, 1]`
    pub bias: Tensor<T>,
    pub gamma: Option<Tensor<T>>,
    pub beta: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub layers: Vec<LayerParams<T>>,
    /// Running statistics, `Some` for BN layers.
    pub running: Vec<Option<BnState<T>>>,
}

impl<T: Real> NetParams<T> {
    /// All weights zero, BN at unit scale and unit running statistics.
    pub fn zeros(arch: &ArchSpec) -> Self {
        let mut layers = Vec::new();
        let mut running = Vec::new();
        for l in &arch.layers {
            layers.push(LayerParams {
                weight: Tensor::zeros(Shape::new(
                    l.out_channels,
                    l.in_channels,
                    l.filter,
                    l.filter,
                )),
                bias: Tensor::zeros(Shape::vector(l.out_channels)),
                gamma: l
                    .batch_norm
                    .then(|| Tensor::full(Shape::vector(l.out_channels), T::one())),
                beta: l
                    .batch_norm
                    .then(|| Tensor::zeros(Shape::vector(l.out_channels))),
            });
            running.push(l.batch_norm.then(|| BnState::new(l.out_channels)));
        }
        NetParams { layers, running }
    }

    /// Rejects any tensor whose shape disagrees with `arch`.
    pub fn check(&self, arch: &ArchSpec) -> Result<()> {
        let expected = NetParams::<T>::zeros(arch);
        if self.layers.len() != expected.layers.len()
            || self.running.len() != expected.running.len()
        {
            return Err(shape_err(
                "params",
                format!(
                    "{} layers for an architecture with {}",
                    self.layers.len(),
                    arch.layers.len()
                ),
            ));
        }
        let got = self.named_trainables();
        let want = expected.named_trainables();
        if got.len() != want.len() {
            return Err(shape_err(
                "params",
                "batch-norm layout differs from architecture",
            ));
        }
        for ((name, g), (_, w)) in got.iter().zip(&want) {
            if g.shape() != w.shape() {
                return Err(shape_err(
                    "params",
                    format!(
                        "{name} has shape {} but the architecture needs {}",
                        g.shape(),
                        w.shape()
                    ),
                ));
            }
        }
        for (i, (r, e)) in self.running.iter().zip(&expected.running).enumerate() {
            let ok = match (r, e) {
                (Some(r), Some(e)) => r.mean.len() == e.mean.len() && r.var.len() == e.var.len(),
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(shape_err(
                    "params",
                    format!("running statistics of layer {} mismatch", i + 1),
                ));
            }
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order with names `param.<layer>.<w|b|gamma|beta>`.
    pub fn named_trainables(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let d = i + 1;
            out.push((format!("param.{d}.w"), &l.weight));
            out.push((format!("param.{d}.b"), &l.bias));
            if let Some(g) = &l.gamma {
                out.push((format!("param.{d}.gamma"), g));
            }
            if let Some(b) = &l.beta {
                out.push((format!("param.{d}.beta"), b));
            }
        }
        out
    }

    /// Same order as [`NetParams::named_trainables`].
    pub fn trainables_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(g) = &mut l.gamma {
                out.push(g);
            }
            if let Some(b) = &mut l.beta {
                out.push(b);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        let c = |t: &Option<Tensor<T>>| t.as_ref().map(|t| t.cast());
        NetParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    gamma: c(&l.gamma),
                    beta: c(&l.beta),
                })
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| r.as_ref().map(BnState::cast))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_trainables().iter().all(|(_, t)| t.all_finite())
            && self
                .running
                .iter()
                .flatten()
                .all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }
}

/// Glorot-normal kernels (variance `2 / (fan_in + fan_out)` with
/// `fan = channels * f^2`), zero biases, BN at unit scale. Layers are drawn
/// in order from one ChaCha8 stream seeded with `seed`.
pub fn init_glorot<T: Real>(arch: &ArchSpec, seed: u64) -> Result<NetParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetParams::<T>::zeros(arch);
    for (l, p) in arch.layers.iter().zip(&mut params.layers) {
        let f2 = l.filter * l.filter;
        let fan = (l.in_channels * f2 + l.out_channels * f2) as f64;
        let normal = Normal::new(0.0, (2.0 / fan).sqrt()).map_err(|e| invalid(e.to_string()))?;
        for v in p.weight.data_mut() {
            *v = lit(normal.sample(&mut rng));
        }
    }
    Ok(params)
}

/// Tape handles of every trainable tensor.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub bn: Option<(Var, Var)>,
}

impl ParamVars {
    /// Same order as [`NetParams::named_trainables`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight);
            out.push(l.bias);
            if let Some((g, b)) = l.bn {
                out.push(g);
                out.push(b);
            }
        }
        out
    }
}

/// Records the parameters as leaves; `trainable` decides whether they
/// collect gradients.
pub fn register<T: Real>(tape: &mut Tape<T>, params: &NetParams<T>, trainable: bool) -> ParamVars {
    let layers = params
        .layers
        .iter()
        .map(|l| LayerVars {
            weight: tape.leaf(l.weight.clone(), trainable),
            bias: tape.leaf(l.bias.clone(), trainable),
            bn: match (&l.gamma, &l.beta) {
                (Some(g), Some(b)) => Some((
                    tape.leaf(g.clone(), trainable),
                    tape.leaf(b.clone(), trainable),
                )),
                _ => None,
            },
        })
        .collect();
    ParamVars { layers }
}

/// Batch-norm statistics source for a forward pass.
pub enum Stats<'a, T> {
    /// Batch statistics, folded into the running values.
    Train(&'a mut [Option<BnState<T>>]),
    Infer(&'a [Option<BnState<T>>]),
}

/// Records the network on `tape`. `x` is `[n, 1, h, w]`; so is the result.
pub fn forward_tape<T: Real>(
    tape: &mut Tape<T>,
    arch: &ArchSpec,
    vars: &ParamVars,
    mut stats: Stats<'_, T>,
    x: Var,
) -> Result<Var> {
    let c = tape.shape(x).c;
    if c != 1 {
        return Err(shape_err(
            "forward",
            format!("expects a single-channel input, got {c} channels"),
        ));
    }
    if vars.layers.len() != arch.layers.len() {
        return Err(shape_err(
            "forward",
            format!(
                "{} parameter layers for {} architecture layers",
                vars.layers.len(),
                arch.layers.len()
            ),
        ));
    }
    let stem = if arch.edge_layer {
        let e = sobel_on_tape(tape, x)?;
        tape.concat_channels(x, e)?
    } else {
        x
    };
    let mut outs: Vec<Var> = vec![x];
    let mut h = stem;
    for (i, (spec, v)) in arch.layers.iter().zip(&vars.layers).enumerate() {
        let d = i + 1;
        let mut input = h;
        if let Some(src) = arch.shortcut_into(d) {
            let s = match src {
                Source::Image => outs[0],
                Source::Layer(k) => outs[k],
            };
            input = tape.concat_channels(h, s)?;
        }
        let mut y = tape.conv2d_dilated(input, v.weight, Some(v.bias), spec.dilation)?;
        if spec.batch_norm {
            let (g, b) = v.bn.ok_or_else(|| {
                shape_err("forward", format!("layer {d} lacks batch-norm parameters"))
            })?;
            let mode = match &mut stats {
                Stats::Train(s) => {
                    BnMode::Train(s.get_mut(i).and_then(Option::as_mut).ok_or_else(|| {
                        shape_err("forward", format!("layer {d} lacks running statistics"))
                    })?)
                }
                Stats::Infer(s) => {
                    BnMode::Infer(s.get(i).and_then(Option::as_ref).ok_or_else(|| {
                        shape_err("forward", format!("layer {d} lacks running statistics"))
                    })?)
                }
            };
            y = tape.batch_norm(y, g, b, mode, BnConfig::default())?;
        }
        if spec.activation == Activation::Relu {
            y = tape.relu(y);
        }
        outs.push(y);
        h = y;
    }
    Ok(h)
}

/// Inference-mode forward pass without gradients.
pub fn forward<T: Real>(
    arch: &ArchSpec,
    params: &NetParams<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    params.check(arch)?;
    let mut tape = Tape::new();
    let vars = register(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let out = forward_tape(&mut tape, arch, &vars, Stats::Infer(&params.running), xv)?;
    Ok(tape.value(out).clone())
}
