//! Bilinear resizing with the align-corners convention: sample `i` of an
//! `n`-sample axis sits at normalized position `i / (n - 1)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Source index pair and fractional weight for each destination sample.
pub(crate) fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (math::floor(pos) as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Resizes each channel of `[C, h, w]` to `[C, rows, cols]`.
pub fn resize_bilinear(x: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("resize_bilinear")?;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("resize_bilinear", "target extent must be positive".into()));
    }
    let ty = axis_taps(h, rows);
    let tx = axis_taps(w, cols);
    let mut out = vec![0.0; c * rows * cols];
    for ch in 0..c {
        let src = x.channel(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                out[(ch * rows + oy) * cols + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[c, rows, cols], out)
}

pub fn resize_bilinear_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (c, rows, cols) = grad_out.dims3("resize_bilinear_backward")?;
    let (h, w) = match *input_shape {
        [ic, h, w] if ic == c => (h, w),
        _ => {
            return Err(Error::shape(
                "resize_bilinear_backward",
                "channels",
                alloc::format!("input shape {input_shape:?} vs gradient {:?}", grad_out.shape()),
            ))
        }
    };
    let ty = axis_taps(h, rows);
    let tx = axis_taps(w, cols);
    let mut g = vec![0.0; c * h * w];
    let go = grad_out.data();
    for ch in 0..c {
        let dst = &mut g[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = go[(ch * rows + oy) * cols + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::new(input_shape, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_fn(&[2, 5, 7], |i| (i as f64).sqrt());
        let y = resize_bilinear(&x, 5, 7).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| (i % 4) as f64 / 3.0 + 2.0 * (i / 4) as f64 / 3.0);
        let y = resize_bilinear(&x, 10, 7).unwrap();
        for r in 0..10 {
            for c in 0..7 {
                let want = c as f64 / 6.0 + 2.0 * r as f64 / 9.0;
                assert!((y.data()[r * 7 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn doubling_minus_one_hits_midpoints() {
        let x = Tensor::new(&[1, 1, 3], vec![0.0, 2.0, 4.0]).unwrap();
        let y = resize_bilinear(&x, 1, 5).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
