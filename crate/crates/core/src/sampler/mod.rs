//! Saliency-driven sampling grids.
//!
//! A saliency map `S` over an `h x w` lattice acts as a mass field: every
//! cell pulls sample positions toward itself with a force proportional to its
//! mass, attenuated by a Gaussian distance kernel. The resulting grid
//! `(u, v)` says, for each output pixel, where to read the high-resolution
//! source. Cells sit at `i / (n - 1)` on each axis (align-corners).

mod blur;
mod diagnostics;
mod grid;
mod kernel;
mod warp;

use alloc::format;
use alloc::vec::Vec;

pub use blur::{gaussian_blur, gaussian_blur_backward, GaussianBlur};
pub use diagnostics::{
    count_within_radius, foldover_stats, mean_displacement, transport_residual, FoldoverStats,
};
pub use grid::{
    attraction_field_bruteforce, attraction_field_conv, compute_grid_bruteforce, compute_grid_conv,
    grid_backward, GridGenerator, DENOMINATOR_EPS,
};
pub use kernel::{gaussian_kernel, gaussian_kernel_1d, pad_saliency, padded_coordinates, KernelSpec};
pub use warp::{grid_sample, grid_sample_backward, upsample_grid, upsample_grid_backward, GridSample, GridSampleGrads, UpsampleGrid};

use crate::error::{Error, Result};
use crate::ops::spatial_softmax;
use crate::tensor::Tensor;

/// Non-negative weights over the saliency lattice.
///
/// Maps built with [`SaliencyMap::new`] are normalized (sum to one within
/// `1e-9`); [`SaliencyMap::from_raw`] only requires finite non-negative mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap(Tensor);

impl SaliencyMap {
    pub fn new(weights: Tensor) -> Result<Self> {
        let map = Self::from_raw(weights)?;
        let total = map.0.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "saliency_map",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        Ok(map)
    }

    pub fn from_raw(weights: Tensor) -> Result<Self> {
        weights.dims2("saliency_map")?;
        if let Some((i, v)) = weights
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(
                "saliency_map",
                format!("weight {v} at index {i} is negative or non-finite"),
            ));
        }
        Ok(SaliencyMap(weights))
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        SaliencyMap(Tensor::full(&[rows, cols], 1.0 / (rows * cols) as f64))
    }

    /// Spatial softmax of a logit field.
    pub fn from_logits(logits: &Tensor, temperature: f64) -> Result<Self> {
        logits.dims2("saliency_map")?;
        Ok(SaliencyMap(spatial_softmax(logits, temperature)?))
    }

    pub fn weights(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0.data()[row * self.cols() + col]
    }

    /// `(row, col)` of the heaviest cell; ties resolve to the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::ops::argmax(self.0.data());
        (i / self.cols(), i % self.cols())
    }

    pub fn flip_horizontal(&self) -> Self {
        SaliencyMap(flip_cols(&self.0))
    }

    pub fn flip_vertical(&self) -> Self {
        SaliencyMap(flip_rows(&self.0))
    }

    pub fn transpose(&self) -> Self {
        SaliencyMap(transpose(&self.0))
    }
}

/// Normalized source coordinates for every output cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    pub u: Tensor,
    pub v: Tensor,
}

impl SamplingGrid {
    pub fn new(u: Tensor, v: Tensor) -> Result<Self> {
        u.dims2("sampling_grid")?;
        u.ensure_same_shape(&v, "sampling_grid")?;
        Ok(SamplingGrid { u, v })
    }

    /// `u(x, y) = x`, `v(x, y) = y`.
    pub fn identity(rows: usize, cols: usize) -> Self {
        SamplingGrid {
            u: Tensor::from_fn(&[rows, cols], |i| lattice(i % cols, cols)),
            v: Tensor::from_fn(&[rows, cols], |i| lattice(i / cols, rows)),
        }
    }

    pub fn rows(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.u.shape()[1]
    }

    /// `[2, rows, cols]` with `u` in channel 0 and `v` in channel 1.
    pub fn stacked(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.u.len());
        data.extend_from_slice(self.u.data());
        data.extend_from_slice(self.v.data());
        Tensor::new(&[2, self.rows(), self.cols()], data).expect("grid fields share a shape")
    }

    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3("sampling_grid")?;
        if c != 2 {
            return Err(Error::shape(
                "sampling_grid",
                "channels",
                format!("stacked grid needs 2 channels, got {c}"),
            ));
        }
        Ok(SamplingGrid {
            u: Tensor::new(&[h, w], t.channel(0).to_vec())?,
            v: Tensor::new(&[h, w], t.channel(1).to_vec())?,
        })
    }

    pub fn clamped(&self) -> Self {
        SamplingGrid {
            u: self.u.map(|x| x.clamp(0.0, 1.0)),
            v: self.v.map(|x| x.clamp(0.0, 1.0)),
        }
    }

    pub fn max_abs_diff(&self, other: &SamplingGrid) -> f64 {
        self.u.max_abs_diff(&other.u).max(self.v.max_abs_diff(&other.v))
    }
}

/// Normalized position of sample `i` on an `n`-sample axis.
pub fn lattice(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

pub(crate) fn flip_cols(t: &Tensor) -> Tensor {
    let (h, w) = t.dims2("flip").expect("rank-2");
    Tensor::from_fn(&[h, w], |i| t.data()[(i / w) * w + (w - 1 - i % w)])
}

pub(crate) fn flip_rows(t: &Tensor) -> Tensor {
    let (h, w) = t.dims2("flip").expect("rank-2");
    Tensor::from_fn(&[h, w], |i| t.data()[(h - 1 - i / w) * w + i % w])
}

pub(crate) fn transpose(t: &Tensor) -> Tensor {
    let (h, w) = t.dims2("transpose").expect("rank-2");
    Tensor::from_fn(&[w, h], |i| t.data()[(i % h) * w + i / h])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saliency_validation() {
        assert!(SaliencyMap::new(Tensor::full(&[2, 2], 0.25)).is_ok());
        assert!(SaliencyMap::new(Tensor::full(&[2, 2], 0.3)).is_err());
        let mut neg = Tensor::full(&[2, 2], 0.25);
        neg.data_mut()[0] = -0.1;
        assert!(SaliencyMap::from_raw(neg).is_err());
        assert!(SaliencyMap::from_raw(Tensor::full(&[2, 2], 3.0)).is_ok());
    }

    #[test]
    fn stacking_round_trips() {
        let g = SamplingGrid::identity(3, 4);
        assert_eq!(SamplingGrid::from_stacked(&g.stacked()).unwrap(), g);
    }

    #[test]
    fn flips_and_transpose() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(flip_cols(&t).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(flip_rows(&t).data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
        let tt = transpose(&t);
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }
}
