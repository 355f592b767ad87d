use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

/// Horizontal-gradient kernel; the other three follow it in [`KERNELS`].
pub const KH: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const KV: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const KD1: [[f64; 3]; 3] = [[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]];
pub const KD2: [[f64; 3]; 3] = [[-2.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 2.0]];

/// Output channel order of [`sobel_edge_maps`].
pub const KERNELS: [[[f64; 3]; 3]; 4] = [KH, KV, KD1, KD2];

/// The fixed `[4, 1, 3, 3]` edge kernel bank.
pub fn sobel_weights<T: Real>() -> Tensor<T> {
    Tensor::from_fn(Shape::new(4, 1, 3, 3), |o, _, i, j| lit(KERNELS[o][i][j]))
}

/// Records the edge layer on `tape`: four fixed kernels, zero padding, no
/// bias. The kernels are a constant leaf so no optimizer ever sees them.
pub fn sobel_on_tape<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let c = tape.shape(x).c;
    if c != 1 {
        return Err(shape_err(
            "sobel_edge_maps",
            format!("expects a single-channel input, got {c} channels"),
        ));
    }
    let w = tape.constant(sobel_weights());
    tape.conv2d_dilated(x, w, None, 1)
}

/// `[n, 1, h, w] -> [n, 4, h, w]` in the order Kh, Kv, Kd1, Kd2.
pub fn sobel_edge_maps<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = sobel_on_tape(&mut tape, v)?;
    Ok(tape.value(out).clone())
}
