//! Grid generation: `u = sum(S k x') / sum(S k)`, `v = sum(S k y') / sum(S k)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernel::{gaussian_kernel, gaussian_kernel_1d, pad_saliency, padded_coordinates, KernelSpec};
use super::{SaliencyMap, SamplingGrid};
use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

/// Added to every denominator of the weighted averages.
pub const DENOMINATOR_EPS: f64 = 1e-12;

fn map_dims(s: &SaliencyMap) -> Result<(usize, usize)> {
    let (h, w) = (s.rows(), s.cols());
    if h < 2 || w < 2 {
        return Err(Error::invalid(
            "compute_grid",
            format!("saliency map must be at least 2x2, got {h}x{w}"),
        ));
    }
    Ok((h, w))
}

/// Reference evaluation by a direct double sum over the truncation window.
/// Returns the unclamped field.
pub fn attraction_field_bruteforce(s: &SaliencyMap, spec: &KernelSpec) -> Result<SamplingGrid> {
    let (h, w) = map_dims(s)?;
    let k = gaussian_kernel(spec);
    let n = spec.window();
    let padded = pad_saliency(s, spec.pad);
    let pw = w + 2 * spec.pad;
    let xs = padded_coordinates(w, spec.pad);
    let ys = padded_coordinates(h, spec.pad);
    let r = spec.radius;
    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (mut nu, mut nv, mut den) = (0.0, 0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let py = i + spec.pad + dy - r;
                    let px = j + spec.pad + dx - r;
                    let mass = padded.data()[py * pw + px] * k.data()[dy * n + dx];
                    nu += mass * xs[px];
                    nv += mass * ys[py];
                    den += mass;
                }
            }
            if den == 0.0 {
                return Err(Error::ZeroDenominator { row: i, col: j });
            }
            u[i * w + j] = nu / (den + DENOMINATOR_EPS);
            v[i * w + j] = nv / (den + DENOMINATOR_EPS);
        }
    }
    SamplingGrid::new(Tensor::new(&[h, w], u)?, Tensor::new(&[h, w], v)?)
}

pub fn compute_grid_bruteforce(s: &SaliencyMap, spec: &KernelSpec) -> Result<SamplingGrid> {
    Ok(attraction_field_bruteforce(s, spec)?.clamped())
}

/// Numerators and denominator of the attraction field, computed as separable
/// convolutions of `S x'`, `S y'` and `S` with the kernel.
struct ConvParts {
    rows: usize,
    cols: usize,
    num_u: Vec<f64>,
    num_v: Vec<f64>,
    den: Vec<f64>,
}

struct Layout {
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    /// Padded index of the first tap for output cell 0.
    offset: usize,
    taps: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Layout {
    fn new(s: &SaliencyMap, spec: &KernelSpec) -> Result<Self> {
        let (h, w) = map_dims(s)?;
        Ok(Layout {
            h,
            w,
            ph: h + 2 * spec.pad,
            pw: w + 2 * spec.pad,
            offset: spec.pad - spec.radius,
            taps: gaussian_kernel_1d(spec),
            xs: padded_coordinates(w, spec.pad),
            ys: padded_coordinates(h, spec.pad),
        })
    }
}

fn conv_parts(s: &SaliencyMap, spec: &KernelSpec, lay: &Layout) -> ConvParts {
    let padded = pad_saliency(s, spec.pad);
    let p = padded.data();
    let (h, w, ph, pw, off) = (lay.h, lay.w, lay.ph, lay.pw, lay.offset);

    // Horizontal pass over every padded row. `S y'` is constant along a row,
    // so its horizontal response is `y'` times that of `S`.
    let mut hx = vec![0.0; ph * w];
    let mut hd = vec![0.0; ph * w];
    for py in 0..ph {
        let row = &p[py * pw..(py + 1) * pw];
        for j in 0..w {
            let (mut ax, mut ad) = (0.0, 0.0);
            for (t, &kt) in lay.taps.iter().enumerate() {
                let q = j + off + t;
                let m = kt * row[q];
                ax += m * lay.xs[q];
                ad += m;
            }
            hx[py * w + j] = ax;
            hd[py * w + j] = ad;
        }
    }

    let mut num_u = vec![0.0; h * w];
    let mut num_v = vec![0.0; h * w];
    let mut den = vec![0.0; h * w];
    for i in 0..h {
        for (t, &kt) in lay.taps.iter().enumerate() {
            let py = i + off + t;
            let y = lay.ys[py];
            let (rx, rd) = (&hx[py * w..(py + 1) * w], &hd[py * w..(py + 1) * w]);
            for j in 0..w {
                num_u[i * w + j] += kt * rx[j];
                num_v[i * w + j] += kt * y * rd[j];
                den[i * w + j] += kt * rd[j];
            }
        }
    }
    ConvParts {
        rows: h,
        cols: w,
        num_u,
        num_v,
        den,
    }
}

impl ConvParts {
    fn field(&self) -> Result<SamplingGrid> {
        let n = self.rows * self.cols;
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        for idx in 0..n {
            let d = self.den[idx];
            if d == 0.0 {
                return Err(Error::ZeroDenominator {
                    row: idx / self.cols,
                    col: idx % self.cols,
                });
            }
            u[idx] = self.num_u[idx] / (d + DENOMINATOR_EPS);
            v[idx] = self.num_v[idx] / (d + DENOMINATOR_EPS);
        }
        let shape = [self.rows, self.cols];
        SamplingGrid::new(Tensor::new(&shape, u)?, Tensor::new(&shape, v)?)
    }
}

/// Convolutional evaluation of the attraction field, unclamped.
pub fn attraction_field_conv(s: &SaliencyMap, spec: &KernelSpec) -> Result<SamplingGrid> {
    let lay = Layout::new(s, spec)?;
    conv_parts(s, spec, &lay).field()
}

/// Sampling grid from a saliency map, clamped to `[0, 1]`.
pub fn compute_grid_conv(s: &SaliencyMap, spec: &KernelSpec) -> Result<SamplingGrid> {
    Ok(attraction_field_conv(s, spec)?.clamped())
}

/// Vector-Jacobian product of [`compute_grid_conv`] with respect to `S`.
///
/// Clamped cells pass no gradient. Gradient reaching padded cells is folded
/// back onto the border cell each one replicates.
pub fn grid_backward(s: &SaliencyMap, spec: &KernelSpec, grad_u: &Tensor, grad_v: &Tensor) -> Result<Tensor> {
    let lay = Layout::new(s, spec)?;
    let (h, w, ph, pw, off) = (lay.h, lay.w, lay.ph, lay.pw, lay.offset);
    for (g, name) in [(grad_u, "u gradient"), (grad_v, "v gradient")] {
        if g.shape() != [h, w] {
            return Err(Error::shape(
                "grid_backward",
                name,
                format!("expected {:?}, got {:?}", [h, w], g.shape()),
            ));
        }
    }
    let parts = conv_parts(s, spec, &lay);
    let field = parts.field()?;

    // d/dnum_u, d/dnum_v and d/dden of the loss at each output cell.
    let n = h * w;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    for idx in 0..n {
        let (u, v) = (field.u.data()[idx], field.v.data()[idx]);
        let gu = if (0.0..=1.0).contains(&u) { grad_u.data()[idx] } else { 0.0 };
        let gv = if (0.0..=1.0).contains(&v) { grad_v.data()[idx] } else { 0.0 };
        let d = parts.den[idx] + DENOMINATOR_EPS;
        a[idx] = gu / d;
        b[idx] = gv / d;
        c[idx] = -(gu * u + gv * v) / d;
    }

    // Adjoint of the vertical pass.
    let mut g_hx = vec![0.0; ph * w];
    let mut g_hd = vec![0.0; ph * w];
    for i in 0..h {
        for (t, &kt) in lay.taps.iter().enumerate() {
            let py = i + off + t;
            let y = lay.ys[py];
            for j in 0..w {
                let idx = i * w + j;
                g_hx[py * w + j] += kt * a[idx];
                g_hd[py * w + j] += kt * (y * b[idx] + c[idx]);
            }
        }
    }

    // Adjoint of the horizontal pass onto the padded map.
    let mut g_pad = vec![0.0; ph * pw];
    for py in 0..ph {
        let dst = &mut g_pad[py * pw..(py + 1) * pw];
        for j in 0..w {
            let (gx, gd) = (g_hx[py * w + j], g_hd[py * w + j]);
            for (t, &kt) in lay.taps.iter().enumerate() {
                let q = j + off + t;
                dst[q] += kt * (gx * lay.xs[q] + gd);
            }
        }
    }

    // Adjoint of replicate padding.
    let mut g = vec![0.0; n];
    for py in 0..ph {
        let r = py.saturating_sub(spec.pad).min(h - 1);
        for px in 0..pw {
            let col = px.saturating_sub(spec.pad).min(w - 1);
            g[r * w + col] += g_pad[py * pw + px];
        }
    }
    Tensor::new(&[h, w], g)
}

/// [`compute_grid_conv`] as a differentiable op: `[h, w]` map to a stacked `[2, h, w]` grid.
#[derive(Clone, Copy, Debug)]
pub struct GridGenerator {
    pub spec: KernelSpec,
}

impl DifferentiableOp for GridGenerator {
    fn name(&self) -> &'static str {
        "compute_grid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let s = SaliencyMap::from_raw(inputs[0].clone())?;
        Ok(compute_grid_conv(&s, &self.spec)?.stacked())
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let s = SaliencyMap::from_raw(inputs[0].clone())?;
        let g = SamplingGrid::from_stacked(grad_out)?;
        Ok(vec![grid_backward(&s, &self.spec, &g.u, &g.v)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::lattice;

    fn peak_map(n: usize, row: usize, col: usize) -> SaliencyMap {
        let logits = Tensor::from_fn(&[n, n], |i| if i == row * n + col { 10.0 } else { 0.0 });
        SaliencyMap::from_logits(&logits, 1.0).unwrap()
    }

    #[test]
    fn uniform_map_gives_identity() {
        for n in [5usize, 9, 31] {
            let s = SaliencyMap::uniform(n, n);
            let spec = KernelSpec::for_map_width(n);
            let id = SamplingGrid::identity(n, n);
            assert!(compute_grid_bruteforce(&s, &spec).unwrap().max_abs_diff(&id) < 1e-6);
            assert!(compute_grid_conv(&s, &spec).unwrap().max_abs_diff(&id) < 1e-6);
        }
    }

    #[test]
    fn center_peak_pulls_quarter_point_inward() {
        let s = peak_map(9, 4, 4);
        let spec = KernelSpec::for_map_width(9);
        let g = compute_grid_bruteforce(&s, &spec).unwrap();
        // cell (row 4, col 2) sits at (x, y) = (0.25, 0.5)
        assert_eq!(lattice(2, 9), 0.25);
        let u = g.u.data()[4 * 9 + 2];
        assert!(u > 0.25, "u = {u}");
        let conv = compute_grid_conv(&s, &spec).unwrap();
        assert!(conv.max_abs_diff(&g) < 1e-9);
    }

    #[test]
    fn zero_map_rejected() {
        let s = SaliencyMap::from_raw(Tensor::zeros(&[4, 4])).unwrap();
        let spec = KernelSpec::for_map_width(4);
        assert!(matches!(
            compute_grid_bruteforce(&s, &spec),
            Err(Error::ZeroDenominator { .. })
        ));
        assert!(matches!(compute_grid_conv(&s, &spec), Err(Error::ZeroDenominator { .. })));
    }

    #[test]
    fn degenerate_map_rejected() {
        let s = SaliencyMap::uniform(1, 5);
        assert!(compute_grid_conv(&s, &KernelSpec::for_map_width(5)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let s = peak_map(7, 2, 5);
        let spec = KernelSpec::for_map_width(7);
        let z = Tensor::zeros(&[7, 7]);
        let g = grid_backward(&s, &spec, &z, &z).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_checked() {
        let s = SaliencyMap::uniform(5, 5);
        let spec = KernelSpec::for_map_width(5);
        let bad = Tensor::zeros(&[4, 5]);
        assert!(matches!(
            grid_backward(&s, &spec, &bad, &Tensor::zeros(&[5, 5])),
            Err(Error::Shape { dim: "u gradient", .. })
        ));
    }

    #[test]
    fn wide_padding_matches_bruteforce() {
        let s = SaliencyMap::from_raw(Tensor::from_fn(&[6, 8], |i| 0.1 + ((i * 13) % 7) as f64)).unwrap();
        let spec = KernelSpec::new(1.5, 3, 5).unwrap();
        let a = attraction_field_bruteforce(&s, &spec).unwrap();
        let b = attraction_field_conv(&s, &spec).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
