//! Separable Gaussian blur used for the training warm-up.
//!
//! Borders are extended by half-sample symmetric reflection (`c b a | a b c`),
//! which repeats the edge pixel first. With a symmetric normalized kernel the
//! resulting operator is doubly stochastic, so per-channel means are kept.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

fn check_sigma(sigma_px: f64) -> Result<()> {
    if !(sigma_px >= 0.0) || !sigma_px.is_finite() {
        return Err(Error::invalid(
            "gaussian_blur",
            format!("sigma must be finite and >= 0, got {sigma_px}"),
        ));
    }
    Ok(())
}

/// Normalized taps for `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn blur_taps(sigma_px: f64) -> Vec<f64> {
    let r = math::ceil(3.0 * sigma_px) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|d| math::exp(-((d * d) as f64) / (2.0 * sigma_px * sigma_px)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / total).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Applies a 1-D kernel along one axis of a `rows x cols` plane.
/// `adjoint` scatters instead of gathers.
fn pass(src: &[f64], rows: usize, cols: usize, taps: &[f64], along_rows: bool, adjoint: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    let n = if along_rows { cols } else { rows };
    // Source index for each (position, tap) pair along the filtered axis.
    let index: Vec<usize> = (0..n as isize)
        .flat_map(|p| (-r..=r).map(move |d| reflect(p + d, n)))
        .collect();
    for a in 0..rows {
        for b in 0..cols {
            let (p, base) = if along_rows { (b, a * cols) } else { (a, b) };
            let stride = if along_rows { 1 } else { cols };
            let at = |q: usize| base + q * stride;
            let dst = at(p);
            for (t, &k) in taps.iter().enumerate() {
                let q = index[p * taps.len() + t];
                if adjoint {
                    out[at(q)] += k * src[dst];
                } else {
                    out[dst] += k * src[at(q)];
                }
            }
        }
    }
    out
}

fn apply(x: &Tensor, sigma_px: f64, adjoint: bool) -> Result<Tensor> {
    check_sigma(sigma_px)?;
    let (c, h, w) = x.dims3("gaussian_blur")?;
    if sigma_px == 0.0 {
        return Ok(x.clone());
    }
    let taps = blur_taps(sigma_px);
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        let plane = x.channel(ch);
        // the adjoint of (vertical . horizontal) is horizontal^T . vertical^T
        let res = if adjoint {
            pass(&pass(plane, h, w, &taps, false, true), h, w, &taps, true, true)
        } else {
            pass(&pass(plane, h, w, &taps, true, false), h, w, &taps, false, false)
        };
        out.extend_from_slice(&res);
    }
    Tensor::new(x.shape(), out)
}

/// Blurs every channel of `[C, H, W]`; `sigma_px = 0` returns the input unchanged.
pub fn gaussian_blur(x: &Tensor, sigma_px: f64) -> Result<Tensor> {
    apply(x, sigma_px, false)
}

pub fn gaussian_blur_backward(grad_out: &Tensor, sigma_px: f64) -> Result<Tensor> {
    apply(grad_out, sigma_px, true)
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianBlur {
    pub sigma_px: f64,
}

impl DifferentiableOp for GaussianBlur {
    fn name(&self) -> &'static str {
        "gaussian_blur"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        gaussian_blur(inputs[0], self.sigma_px)
    }

    fn backward(&self, _inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![gaussian_blur_backward(grad_out, self.sigma_px)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let x = Tensor::from_fn(&[2, 5, 4], |i| i as f64);
        assert_eq!(gaussian_blur(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn constant_image_unchanged() {
        let x = Tensor::full(&[1, 9, 6], 0.7);
        for s in [0.5, 1.5, 4.0] {
            let y = gaussian_blur(&x, s).unwrap();
            assert!(y.max_abs_diff(&x) < 1e-14);
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_blur(&Tensor::zeros(&[1, 2, 2]), -0.1).is_err());
    }

    #[test]
    fn reflection_indices() {
        let n = 3;
        let got: Vec<usize> = (-4..7).map(|i| reflect(i, n)).collect();
        assert_eq!(got, [2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0]);
    }

    #[test]
    fn taps_are_normalized() {
        let t = blur_taps(1.5);
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
