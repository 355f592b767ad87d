//! Dilated 2-D convolution kernels with centered anchoring and symmetric zero
//! padding of `(f - 1) * r / 2` per side, so spatial size is preserved.
//!
//! Every output element is reduced in a fixed order independent of how work
//! is split across threads, so results are bitwise reproducible.

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Below this many multiply-adds the kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

pub(crate) fn check_conv_shapes(
    x: Shape,
    w: Shape,
    b: Option<Shape>,
    dilation: usize,
) -> Result<()> {
    if dilation == 0 {
        return Err(invalid("dilation rate must be >= 1"));
    }
    if w.h != w.w {
        return Err(shape_err(
            "conv2d_dilated",
            format!("kernel must be square, got {}x{}", w.h, w.w),
        ));
    }
    if w.h.is_multiple_of(2) {
        return Err(shape_err(
            "conv2d_dilated",
            format!("kernel size must be odd, got {}", w.h),
        ));
    }
    if x.c != w.c {
        return Err(shape_err(
            "conv2d_dilated",
            format!("input channels {} != kernel in_channels {}", x.c, w.c),
        ));
    }
    if let Some(b) = b {
        if b.numel() != w.n {
            return Err(shape_err(
                "conv2d_dilated",
                format!("bias length {} != kernel out_channels {}", b.numel(), w.n),
            ));
        }
    }
    Ok(())
}

/// Signed offset of kernel tap `k` for a centered kernel of size `f`.
#[inline]
fn tap_offset(k: usize, f: usize, r: usize) -> isize {
    (k as isize - (f / 2) as isize) * r as isize
}

/// Output index range `[lo, hi)` along one axis for which `i + off` is in bounds.
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // 4 independent accumulators, combined in a fixed order.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y[n,o] = b[o] + sum_ci sum_k w[o,ci,k] * shift(x[n,ci], k)`.
pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    dilation: usize,
) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape();
    let (out_c, f) = (ws.n, ws.h);
    let (h, wd) = (xs.h, xs.w);
    let plane = h * wd;
    let mut out = Tensor::zeros(Shape::new(xs.n, out_c, h, wd));
    let xd = x.data();
    let wdat = w.data();

    let compute = |idx: usize, y: &mut [T]| {
        let (n, o) = (idx / out_c, idx % out_c);
        if let Some(b) = b {
            y.fill(b.data()[o]);
        }
        for ci in 0..xs.c {
            let xp = &xd[(n * xs.c + ci) * plane..][..plane];
            for k1 in 0..f {
                let oy = tap_offset(k1, f, dilation);
                let (i0, i1) = valid_range(h, oy);
                for k2 in 0..f {
                    let ox = tap_offset(k2, f, dilation);
                    let (j0, j1) = valid_range(wd, ox);
                    if j0 >= j1 {
                        continue;
                    }
                    let wv = wdat[((o * ws.c + ci) * f + k1) * f + k2];
                    for i in i0..i1 {
                        let src_row = (i as isize + oy) as usize * wd;
                        let src = &xp[(src_row as isize + j0 as isize + ox) as usize..][..j1 - j0];
                        let dst = &mut y[i * wd + j0..i * wd + j1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    };

    let work = xs.numel() * out_c * f * f;
    if work >= PAR_THRESHOLD {
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, y)| compute(idx, y));
    } else {
        out.data_mut()
            .chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, y)| compute(idx, y));
    }
    out
}

/// Gradient with respect to the input.
pub(crate) fn backward_input<T: Real>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: Shape,
    dilation: usize,
) -> Tensor<T> {
    let ws = w.shape();
    let (out_c, in_c, f) = (ws.n, ws.c, ws.h);
    let (h, wd) = (x_shape.h, x_shape.w);
    let plane = h * wd;
    let mut dx = Tensor::zeros(x_shape);
    let dyd = dy.data();
    let wdat = w.data();

    let compute = |idx: usize, g: &mut [T]| {
        let (n, ci) = (idx / in_c, idx % in_c);
        for o in 0..out_c {
            let gp = &dyd[(n * out_c + o) * plane..][..plane];
            for k1 in 0..f {
                let oy = tap_offset(k1, f, dilation);
                let (i0, i1) = valid_range(h, oy);
                for k2 in 0..f {
                    let ox = tap_offset(k2, f, dilation);
                    let (j0, j1) = valid_range(wd, ox);
                    if j0 >= j1 {
                        continue;
                    }
                    let wv = wdat[((o * in_c + ci) * f + k1) * f + k2];
                    for i in i0..i1 {
                        let dst_row = (i as isize + oy) as usize * wd;
                        let src = &gp[i * wd + j0..i * wd + j1];
                        let dst =
                            &mut g[(dst_row as isize + j0 as isize + ox) as usize..][..j1 - j0];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    };

    let work = x_shape.numel() * out_c * f * f;
    if work >= PAR_THRESHOLD {
        dx.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, g)| compute(idx, g));
    } else {
        dx.data_mut()
            .chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, g)| compute(idx, g));
    }
    dx
}

/// Gradient with respect to the kernel.
pub(crate) fn backward_weight<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: Shape,
    dilation: usize,
) -> Tensor<T> {
    let xs = x.shape();
    let (out_c, in_c, f) = (w_shape.n, w_shape.c, w_shape.h);
    let (h, wd) = (xs.h, xs.w);
    let plane = h * wd;
    let mut dw = Tensor::zeros(w_shape);
    let dyd = dy.data();
    let xd = x.data();

    let compute = |o: usize, g: &mut [T]| {
        for ci in 0..in_c {
            for k1 in 0..f {
                let oy = tap_offset(k1, f, dilation);
                let (i0, i1) = valid_range(h, oy);
                for k2 in 0..f {
                    let ox = tap_offset(k2, f, dilation);
                    let (j0, j1) = valid_range(wd, ox);
                    let mut acc = T::zero();
                    if j0 < j1 {
                        for n in 0..xs.n {
                            let gp = &dyd[(n * out_c + o) * plane..][..plane];
                            let xp = &xd[(n * in_c + ci) * plane..][..plane];
                            for i in i0..i1 {
                                let src_row = (i as isize + oy) as usize * wd;
                                let a = &gp[i * wd + j0..i * wd + j1];
                                let b = &xp[(src_row as isize + j0 as isize + ox) as usize..]
                                    [..j1 - j0];
                                acc += dot(a, b);
                            }
                        }
                    }
                    g[(ci * f + k1) * f + k2] = acc;
                }
            }
        }
    };

    let per_out = in_c * f * f;
    let work = xs.numel() * out_c * f * f;
    if work >= PAR_THRESHOLD {
        dw.data_mut()
            .par_chunks_mut(per_out)
            .enumerate()
            .for_each(|(o, g)| compute(o, g));
    } else {
        dw.data_mut()
            .chunks_mut(per_out)
            .enumerate()
            .for_each(|(o, g)| compute(o, g));
    }
    dw
}

/// Gradient with respect to the bias: per-output-channel sum of `dy`.
pub(crate) fn backward_bias<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let mut db = Tensor::zeros(Shape::vector(s.c));
    for n in 0..s.n {
        for o in 0..s.c {
            db.data_mut()[o] += dy.plane(n, o).iter().copied().sum::<T>();
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_clamps_both_sides() {
        assert_eq!(valid_range(5, 0), (0, 5));
        assert_eq!(valid_range(5, 2), (0, 3));
        assert_eq!(valid_range(5, -2), (2, 5));
        assert_eq!(valid_range(5, 7), (0, 0));
        assert_eq!(valid_range(5, -7), (5, 5));
    }

    #[test]
    fn offsets_are_centered() {
        let offs: Vec<isize> = (0..3).map(|k| tap_offset(k, 3, 2)).collect();
        assert_eq!(offs, vec![-2, 0, 2]);
        let offs: Vec<isize> = (0..5).map(|k| tap_offset(k, 5, 1)).collect();
        assert_eq!(offs, vec![-2, -1, 0, 1, 2]);
    }

    #[test]
    fn even_kernel_rejected() {
        let err = check_conv_shapes(Shape::new(1, 1, 4, 4), Shape::new(1, 1, 2, 2), None, 1);
        assert!(err.unwrap_err().to_string().contains("odd"));
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let err = check_conv_shapes(Shape::new(1, 2, 4, 4), Shape::new(1, 3, 3, 3), None, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("in_channels"), "{err}");
    }
}
