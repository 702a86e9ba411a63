use alloc::format;
use alloc::vec::Vec;

use super::SaliencyMap;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Gaussian attraction kernel over saliency cells.
///
/// `sigma` is measured in saliency cells; the kernel is truncated to a square
/// window of half-width `radius` and the map is replicate-padded by `pad`
/// cells before the weighted sums are taken.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelSpec {
    pub sigma: f64,
    pub radius: usize,
    pub pad: usize,
}

impl KernelSpec {
    pub fn new(sigma: f64, radius: usize, pad: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("kernel_spec", format!("sigma must be positive, got {sigma}")));
        }
        if radius < 1 {
            return Err(Error::invalid("kernel_spec", "radius must be >= 1".into()));
        }
        if pad < radius {
            return Err(Error::invalid(
                "kernel_spec",
                format!("pad {pad} is smaller than radius {radius}"),
            ));
        }
        Ok(KernelSpec { sigma, radius, pad })
    }

    /// Truncation at `ceil(2 sigma)` cells, padded by the same amount.
    pub fn with_sigma(sigma: f64) -> Result<Self> {
        let radius = (math::ceil(2.0 * sigma) as usize).max(1);
        Self::new(sigma, radius, radius)
    }

    /// Sigma as a fraction of the map width (default one third).
    pub fn from_width_fraction(fraction: f64, width: usize) -> Result<Self> {
        Self::with_sigma(fraction * width as f64)
    }

    pub fn for_map_width(width: usize) -> Self {
        Self::from_width_fraction(1.0 / 3.0, width).expect("positive width")
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }
}

/// One axis of the kernel: `exp(-d^2 / (2 sigma^2))` for `d` in `-radius..=radius`.
pub fn gaussian_kernel_1d(spec: &KernelSpec) -> Vec<f64> {
    let r = spec.radius as isize;
    (-r..=r)
        .map(|d| {
            let d = d as f64;
            math::exp(-d * d / (2.0 * spec.sigma * spec.sigma))
        })
        .collect()
}

/// Unnormalized 2-D kernel evaluated at integer cell offsets.
pub fn gaussian_kernel(spec: &KernelSpec) -> Tensor {
    let n = spec.window();
    let r = spec.radius as f64;
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    Tensor::from_fn(&[n, n], |i| {
        let dy = (i / n) as f64 - r;
        let dx = (i % n) as f64 - r;
        math::exp(-(dx * dx + dy * dy) / two_s2)
    })
}

/// Replicate padding: each new cell copies its nearest interior cell.
pub fn pad_saliency(s: &SaliencyMap, pad: usize) -> Tensor {
    let (h, w) = (s.rows(), s.cols());
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let src = s.weights().data();
    Tensor::from_fn(&[ph, pw], |i| {
        let r = (i / pw).saturating_sub(pad).min(h - 1);
        let c = (i % pw).saturating_sub(pad).min(w - 1);
        src[r * w + c]
    })
}

/// Coordinates of the padded lattice along one axis: `(j - pad) / (n - 1)`.
///
/// Padded cells extend the interior spacing beyond `[0, 1]`.
pub fn padded_coordinates(n: usize, pad: usize) -> Vec<f64> {
    let step = if n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
    (0..n + 2 * pad)
        .map(|j| (j as f64 - pad as f64) * step)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_center_and_symmetry() {
        let spec = KernelSpec::new(1.7, 4, 4).unwrap();
        let k = gaussian_kernel(&spec);
        let n = spec.window();
        assert_eq!(k.data()[4 * n + 4], 1.0);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(k.data()[i * n + j], k.data()[(n - 1 - i) * n + (n - 1 - j)]);
                assert_eq!(k.data()[i * n + j], k.data()[j * n + i]);
            }
        }
    }

    #[test]
    fn unit_sigma_neighbor() {
        let spec = KernelSpec::new(1.0, 2, 2).unwrap();
        let k = gaussian_kernel(&spec);
        assert!((k.data()[2 * 5 + 3] - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn separable_rows_match_2d() {
        let spec = KernelSpec::with_sigma(2.3).unwrap();
        let k1 = gaussian_kernel_1d(&spec);
        let k2 = gaussian_kernel(&spec);
        let n = spec.window();
        for i in 0..n {
            for j in 0..n {
                assert!((k1[i] * k1[j] - k2.data()[i * n + j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn default_spec_for_31_cells() {
        let spec = KernelSpec::for_map_width(31);
        assert!((spec.sigma - 31.0 / 3.0).abs() < 1e-12);
        assert_eq!(spec.radius, 21);
        assert_eq!(spec.pad, 21);
    }

    #[test]
    fn invalid_specs() {
        assert!(KernelSpec::new(0.0, 1, 1).is_err());
        assert!(KernelSpec::new(1.0, 0, 1).is_err());
        assert!(KernelSpec::new(1.0, 3, 2).is_err());
    }

    #[test]
    fn padding_cases() {
        let s = SaliencyMap::from_raw(Tensor::from_fn(&[2, 3], |i| i as f64 + 1.0)).unwrap();
        assert_eq!(pad_saliency(&s, 0), *s.weights());

        let one = SaliencyMap::from_raw(Tensor::full(&[1, 1], 0.5)).unwrap();
        let p = pad_saliency(&one, 2);
        assert_eq!(p.shape(), &[5, 5]);
        assert!(p.data().iter().all(|&v| v == 0.5));

        let p = pad_saliency(&s, 2);
        assert_eq!(p.shape(), &[6, 7]);
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(p.data()[6], 3.0);
        assert_eq!(p.data()[5 * 7], 4.0);
        assert_eq!(p.data()[6 * 7 - 1], 6.0);
        // interior untouched
        assert_eq!(p.data()[2 * 7 + 2..2 * 7 + 5], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn padded_lattice_extends_spacing() {
        let c = padded_coordinates(5, 2);
        assert_eq!(c, [-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5]);
    }
}
