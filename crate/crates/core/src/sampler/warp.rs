use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::SamplingGrid;
use crate::error::{Error, Result};
use crate::ops::{resize_bilinear, resize_bilinear_backward, DifferentiableOp};
use crate::tensor::Tensor;

/// Bilinear (align-corners) upsampling of both grid fields to `rows x cols`.
pub fn upsample_grid(grid: &SamplingGrid, rows: usize, cols: usize) -> Result<SamplingGrid> {
    if rows < grid.rows() || cols < grid.cols() {
        return Err(Error::invalid(
            "upsample_grid",
            format!(
                "target {rows}x{cols} is smaller than grid {}x{}",
                grid.rows(),
                grid.cols()
            ),
        ));
    }
    SamplingGrid::from_stacked(&resize_bilinear(&grid.stacked(), rows, cols)?)
}

/// Gradient of [`upsample_grid`] with respect to the coarse grid fields.
pub fn upsample_grid_backward(coarse_rows: usize, coarse_cols: usize, grad: &SamplingGrid) -> Result<SamplingGrid> {
    SamplingGrid::from_stacked(&resize_bilinear_backward(&[2, coarse_rows, coarse_cols], &grad.stacked())?)
}

#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

fn taps(grid: &SamplingGrid, h: usize, w: usize) -> Result<Vec<Tap>> {
    let (sx, sy) = ((w - 1) as f64, (h - 1) as f64);
    grid.u
        .data()
        .iter()
        .zip(grid.v.data())
        .enumerate()
        .map(|(i, (&u, &v))| {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::GridOutOfRange { index: i, value: u });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::GridOutOfRange { index: i, value: v });
            }
            let (px, py) = (u * sx, v * sy);
            let x0 = (crate::math::floor(px) as usize).min(w - 1);
            let y0 = (crate::math::floor(py) as usize).min(h - 1);
            Ok(Tap {
                x0,
                y0,
                x1: (x0 + 1).min(w - 1),
                y1: (y0 + 1).min(h - 1),
                fx: px - x0 as f64,
                fy: py - y0 as f64,
            })
        })
        .collect()
}

/// Bilinear sampling of `image: [C, H, W]` at normalized positions
/// `(u * (W - 1), v * (H - 1))`. Output is `[C, grid rows, grid cols]`.
pub fn grid_sample(image: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (c, h, w) = image.dims3("grid_sample")?;
    let taps = taps(grid, h, w)?;
    let n = taps.len();
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        let src = image.channel(ch);
        for (o, t) in out[ch * n..(ch + 1) * n].iter_mut().zip(&taps) {
            let top = src[t.y0 * w + t.x0] * (1.0 - t.fx) + src[t.y0 * w + t.x1] * t.fx;
            let bot = src[t.y1 * w + t.x0] * (1.0 - t.fx) + src[t.y1 * w + t.x1] * t.fx;
            *o = top * (1.0 - t.fy) + bot * t.fy;
        }
    }
    Tensor::new(&[c, grid.rows(), grid.cols()], out)
}

#[derive(Clone, Debug)]
pub struct GridSampleGrads {
    pub image: Tensor,
    pub grid: SamplingGrid,
}

pub fn grid_sample_backward(image: &Tensor, grid: &SamplingGrid, grad_out: &Tensor) -> Result<GridSampleGrads> {
    let (c, h, w) = image.dims3("grid_sample_backward")?;
    if grad_out.shape() != [c, grid.rows(), grid.cols()] {
        return Err(Error::shape(
            "grid_sample_backward",
            "output gradient",
            format!(
                "expected {:?}, got {:?}",
                [c, grid.rows(), grid.cols()],
                grad_out.shape()
            ),
        ));
    }
    let taps = taps(grid, h, w)?;
    let n = taps.len();
    let (sx, sy) = ((w - 1) as f64, (h - 1) as f64);
    let mut gi = vec![0.0; image.len()];
    let mut gu = vec![0.0; n];
    let mut gv = vec![0.0; n];
    for ch in 0..c {
        let src = image.channel(ch);
        let dst = &mut gi[ch * h * w..(ch + 1) * h * w];
        let go = &grad_out.data()[ch * n..(ch + 1) * n];
        for (k, t) in taps.iter().enumerate() {
            let g = go[k];
            let (a, b) = (src[t.y0 * w + t.x0], src[t.y0 * w + t.x1]);
            let (cc, d) = (src[t.y1 * w + t.x0], src[t.y1 * w + t.x1]);
            dst[t.y0 * w + t.x0] += g * (1.0 - t.fx) * (1.0 - t.fy);
            dst[t.y0 * w + t.x1] += g * t.fx * (1.0 - t.fy);
            dst[t.y1 * w + t.x0] += g * (1.0 - t.fx) * t.fy;
            dst[t.y1 * w + t.x1] += g * t.fx * t.fy;
            gu[k] += g * sx * ((b - a) * (1.0 - t.fy) + (d - cc) * t.fy);
            gv[k] += g * sy * ((cc - a) * (1.0 - t.fx) + (d - b) * t.fx);
        }
    }
    let shape = [grid.rows(), grid.cols()];
    Ok(GridSampleGrads {
        image: Tensor::new(image.shape(), gi)?,
        grid: SamplingGrid::new(Tensor::new(&shape, gu)?, Tensor::new(&shape, gv)?)?,
    })
}

/// [`upsample_grid`] on a stacked `[2, h, w]` grid.
#[derive(Clone, Copy, Debug)]
pub struct UpsampleGrid {
    pub rows: usize,
    pub cols: usize,
}

impl DifferentiableOp for UpsampleGrid {
    fn name(&self) -> &'static str {
        "upsample_grid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let g = SamplingGrid::from_stacked(inputs[0])?;
        Ok(upsample_grid(&g, self.rows, self.cols)?.stacked())
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let (_, h, w) = inputs[0].dims3("upsample_grid")?;
        let g = upsample_grid_backward(h, w, &SamplingGrid::from_stacked(grad_out)?)?;
        Ok(vec![g.stacked()])
    }
}

/// [`grid_sample`] with inputs `(image, stacked grid)`.
#[derive(Clone, Copy, Debug)]
pub struct GridSample;

impl DifferentiableOp for GridSample {
    fn name(&self) -> &'static str {
        "grid_sample"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        grid_sample(inputs[0], &SamplingGrid::from_stacked(inputs[1])?)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let g = grid_sample_backward(inputs[0], &SamplingGrid::from_stacked(inputs[1])?, grad_out)?;
        Ok(vec![g.image, g.grid.stacked()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_reproduces_image() {
        let img = Tensor::from_fn(&[2, 6, 9], |i| ((i * 7) % 11) as f64 / 11.0);
        let j = grid_sample(&img, &SamplingGrid::identity(6, 9)).unwrap();
        assert!(j.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(&[1, 8, 8], 0.3);
        let grid = SamplingGrid::new(
            Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.137) % 1.0),
            Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.291) % 1.0),
        )
        .unwrap();
        let j = grid_sample(&img, &grid).unwrap();
        assert!(j.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn out_of_range_rejected() {
        let img = Tensor::zeros(&[1, 4, 4]);
        let mut grid = SamplingGrid::identity(2, 2);
        grid.u.data_mut()[3] = 1.0 + 1e-9;
        assert!(matches!(
            grid_sample(&img, &grid),
            Err(Error::GridOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn identity_upsamples_to_identity() {
        let g = upsample_grid(&SamplingGrid::identity(31, 31), 32, 40).unwrap();
        assert!(g.max_abs_diff(&SamplingGrid::identity(32, 40)) < 1e-12);
        let same = upsample_grid(&SamplingGrid::identity(7, 5), 7, 5).unwrap();
        assert_eq!(same, SamplingGrid::identity(7, 5));
        assert!(upsample_grid(&SamplingGrid::identity(7, 5), 6, 5).is_err());
    }
}
