//! Grid statistics that are reported but never optimized.

use alloc::format;
use alloc::vec;

use super::{lattice, SaliencyMap, SamplingGrid};
use crate::error::{Error, Result};
use crate::math;

/// Mean `|F(u, v) - x y|` over grid cells, where `F` is the saliency mass in
/// `[0, u] x [0, v]`.
///
/// Cell `(a, b)` of an `h x w` map owns the bin `[b / w, (b + 1) / w] x
/// [a / h, (a + 1) / h]` with its mass spread evenly, so `F` is the bilinear
/// interpolation of the summed-area table at `(u w, v h)` and a uniform map
/// gives `F(u, v) = u v` exactly.
pub fn transport_residual(s: &SaliencyMap, grid: &SamplingGrid) -> Result<f64> {
    let (h, w) = (s.rows(), s.cols());
    let total = s.weights().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("transport_residual", format!("saliency mass is {total}")));
    }
    // cdf[a][b] = mass of rows < a and cols < b
    let mut cdf = vec![0.0; (h + 1) * (w + 1)];
    for a in 0..h {
        let mut row = 0.0;
        for b in 0..w {
            row += s.at(a, b) / total;
            cdf[(a + 1) * (w + 1) + b + 1] = cdf[a * (w + 1) + b + 1] + row;
        }
    }
    let lookup = |px: f64, py: f64| {
        let x0 = (math::floor(px) as usize).min(w - 1);
        let y0 = (math::floor(py) as usize).min(h - 1);
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let at = |y: usize, x: usize| cdf[y * (w + 1) + x];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    };
    let (gh, gw) = (grid.rows(), grid.cols());
    let mut acc = 0.0;
    for i in 0..gh {
        for j in 0..gw {
            let idx = i * gw + j;
            let u = grid.u.data()[idx].clamp(0.0, 1.0);
            let v = grid.v.data()[idx].clamp(0.0, 1.0);
            let f = lookup(u * w as f64, v * h as f64);
            acc += (f - lattice(j, gw) * lattice(i, gh)).abs();
        }
    }
    Ok(acc / (gh * gw) as f64)
}

/// Mean Euclidean distance between each sample position and its identity position.
pub fn mean_displacement(grid: &SamplingGrid) -> f64 {
    let (h, w) = (grid.rows(), grid.cols());
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let du = grid.u.data()[i * w + j] - lattice(j, w);
            let dv = grid.v.data()[i * w + j] - lattice(i, h);
            acc += math::sqrt(du * du + dv * dv);
        }
    }
    acc / (h * w) as f64
}

/// Monotonicity violations of a grid: `u` decreasing along a row or `v`
/// decreasing down a column.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FoldoverStats {
    pub inversions: usize,
    pub pairs: usize,
}

impl FoldoverStats {
    pub fn fraction(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.inversions as f64 / self.pairs as f64
        }
    }
}

pub fn foldover_stats(grid: &SamplingGrid) -> FoldoverStats {
    let (h, w) = (grid.rows(), grid.cols());
    let (u, v) = (grid.u.data(), grid.v.data());
    let mut inversions = 0;
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            if u[i * w + j + 1] < u[i * w + j] {
                inversions += 1;
            }
        }
    }
    for i in 0..h.saturating_sub(1) {
        for j in 0..w {
            if v[(i + 1) * w + j] < v[i * w + j] {
                inversions += 1;
            }
        }
    }
    FoldoverStats {
        inversions,
        pairs: h * w.saturating_sub(1) + h.saturating_sub(1) * w,
    }
}

/// Number of grid samples within `radius` (normalized units) of `(x, y)`.
pub fn count_within_radius(grid: &SamplingGrid, x: f64, y: f64, radius: f64) -> usize {
    grid.u
        .data()
        .iter()
        .zip(grid.v.data())
        .filter(|(&u, &v)| (u - x) * (u - x) + (v - y) * (v - y) <= radius * radius)
        .count()
}
