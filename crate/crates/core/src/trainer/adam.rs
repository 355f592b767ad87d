use crate::error::{shape_err, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[Shape]) -> Self {
        AdamState {
            m: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment tensors",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape()
            || p.shape() != state.m[k].shape()
            || p.shape() != state.v[k].shape()
        {
            return Err(shape_err(
                "adam_step",
                format!(
                    "tensor {k}: param {} grad {} moment {}",
                    p.shape(),
                    g.shape(),
                    state.m[k].shape()
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2): (T, T) = (lit(cfg.beta1), lit(cfg.beta2));
    let (c1, c2): (T, T) = (lit(1.0 - cfg.beta1), lit(1.0 - cfg.beta2));
    let bc1: T = lit(1.0 - cfg.beta1.powf(t));
    let bc2: T = lit(1.0 - cfg.beta2.powf(t));
    let (lr, eps): (T, T) = (lit(lr), lit(cfg.eps));
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
