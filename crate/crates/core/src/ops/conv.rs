//! 2-D cross-correlation over `[C, H, W]` feature maps.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn check(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        let (c_in, h, w) = input.dims3(OP)?;
        let (c_out, wc_in, kh, kw) = weight.dims4(OP)?;
        if wc_in != c_in {
            return Err(Error::shape(
                OP,
                "input channels",
                format!("input has {c_in} channels but weights expect {wc_in}"),
            ));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(
                OP,
                "output channels",
                format!("bias shape {:?} does not match {c_out} output channels", bias.shape()),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                OP,
                "kernel size",
                format!("kernel {kh}x{kw} must have odd extents"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be >= 1".into()));
        }
        let out_h = out_extent(h, kh, stride, pad).ok_or_else(|| {
            Error::shape(
                OP,
                "height",
                format!("kernel exceeds padded input for H={h}, kh={kh}, pad={pad}, stride={stride}"),
            )
        })?;
        let out_w = out_extent(w, kw, stride, pad).ok_or_else(|| {
            Error::shape(
                OP,
                "width",
                format!("kernel exceeds padded input for W={w}, kw={kw}, pad={pad}, stride={stride}"),
            )
        })?;
        Ok(Geometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            out_h,
            out_w,
            stride,
            pad,
        })
    }

    /// Range of output columns whose tap `kx` lands inside the input row.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        range_for_tap(kx, self.pad, self.stride, self.w, self.out_w)
    }

    fn row_range(&self, ky: usize) -> (usize, usize) {
        range_for_tap(ky, self.pad, self.stride, self.h, self.out_h)
    }
}

fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (n + 2 * pad).checked_sub(k)?;
    Some(span / stride + 1)
}

/// Output indices `o` in `[lo, hi)` such that `o * stride + tap - pad` is in `[0, n)`.
fn range_for_tap(tap: usize, pad: usize, stride: usize, n: usize, out_n: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    // o * stride + tap - pad <= n - 1
    let limit = n + pad;
    let hi = if limit <= tap {
        0
    } else {
        ((limit - tap - 1) / stride + 1).min(out_n)
    };
    (lo.min(hi), hi)
}

/// Cross-correlation of `input: [C_in, H, W]` with `weight: [C_out, C_in, kh, kw]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = Geometry::check(input, weight, bias, stride, pad)?;
    let plane_out = g.out_h * g.out_w;
    let mut out = vec![0.0; g.c_out * plane_out];
    let x = input.data();
    let wt = weight.data();

    for oc in 0..g.c_out {
        let dst = &mut out[oc * plane_out..(oc + 1) * plane_out];
        dst.fill(bias.data()[oc]);
        for ic in 0..g.c_in {
            let src = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.row_range(ky);
                for kx in 0..g.kw {
                    let wv = wt[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    let (ox0, ox1) = g.col_range(kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            let n = ox1 - ox0;
                            for (o, i) in row_out[ox0..ox1].iter_mut().zip(&row_in[ix0..ix0 + n]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[g.c_out, g.out_h, g.out_w], out)
}

/// Vector-Jacobian product of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let g = Geometry::check(input, weight, bias, stride, pad)?;
    if grad_out.shape() != [g.c_out, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            "output gradient",
            format!(
                "expected {:?}, got {:?}",
                [g.c_out, g.out_h, g.out_w],
                grad_out.shape()
            ),
        ));
    }
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.h * g.w;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; g.c_out];

    for oc in 0..g.c_out {
        let gsrc = &go[oc * plane_out..(oc + 1) * plane_out];
        gb[oc] = gsrc.iter().sum();
        for ic in 0..g.c_in {
            let xin = &x[ic * plane_in..(ic + 1) * plane_in];
            let gin = &mut gx[ic * plane_in..(ic + 1) * plane_in];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.row_range(ky);
                for kx in 0..g.kw {
                    let widx = ((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx;
                    let wv = wt[widx];
                    let (ox0, ox1) = g.col_range(kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gsrc[oy * g.out_w..(oy + 1) * g.out_w];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        let girow = &mut gin[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            let n = ox1 - ox0;
                            let gs = &grow[ox0..ox1];
                            for (gv, xv) in gs.iter().zip(&xrow[ix0..ix0 + n]) {
                                acc += gv * xv;
                            }
                            for (gi, gv) in girow[ix0..ix0 + n].iter_mut().zip(gs) {
                                *gi += wv * gv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                acc += grow[ox] * xrow[ix];
                                girow[ix] += wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[g.c_out], gb)?,
    })
}
