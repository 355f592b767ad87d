//! The dilated residual denoising network.

mod arch;
mod model;
mod sobel;

pub use arch::{
    build_arch, count_weights, describe, receptive_field, receptive_fields, Activation, ArchSpec,
    LayerSpec, Shortcut, Source, Variant, DILATIONS, EDGE_MAPS,
};
pub use model::{
    forward, forward_tape, init_glorot, register, LayerParams, LayerVars, NetParams, ParamVars,
    Stats,
};
pub use sobel::{sobel_edge_maps, sobel_on_tape, sobel_weights, KD1, KD2, KERNELS, KH, KV};
