//! The four-panel figure: original, saliency, distortion grid and resampled image.

use std::path::Path;

use zoomnet_core::ops::resize_bilinear;
use zoomnet_core::sampler::{gaussian_blur, SamplingGrid};
use zoomnet_core::{Mode, Model, Tensor};

use crate::error::{Error, Result};

/// Grid lines are drawn through every `LINE_STEP`-th saliency cell.
pub const LINE_STEP: usize = 2;
const LINE_RGB: [u8; 3] = [255, 64, 32];

/// An 8-bit image with one (gray) or three (RGB) channels, row major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        Raster {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale };
        write_png(path, self.width, self.height, color, &self.data)
    }
}

pub fn to_u8(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Min-max normalization; a constant input maps to zeros.
pub fn normalize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let out = values
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    (out, lo, hi)
}

pub fn write_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let dims = |v: usize| u32::try_from(v).map_err(|_| Error::format("png", "image too large"));
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), dims(width)?, dims(height)?);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Reads an 8-bit grayscale or RGB PNG as a `[1, H, W]` image in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Tensor> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let stride = info.color_type.samples();
    let px: Vec<f64> = buf[..info.buffer_size()]
        .chunks(stride)
        .map(|c| {
            let rgb = if stride >= 3 { &c[..3] } else { &c[..1] };
            rgb.iter().map(|&v| f64::from(v)).sum::<f64>() / (rgb.len() as f64 * 255.0)
        })
        .collect();
    Ok(Tensor::new(&[1, info.height as usize, info.width as usize], px)?)
}

/// Every panel of the figure for one input.
#[derive(Clone, Debug)]
pub struct Figure {
    pub original: Raster,
    pub saliency: Raster,
    /// Smallest and largest saliency weight before normalization.
    pub saliency_range: (f64, f64),
    pub grid: Raster,
    pub sampled: Raster,
    /// Pixels covered by grid lines, row major over the original image.
    pub line_mask: Vec<bool>,
    /// Source pixel `(row, col)` read by every output pixel of the resampled image.
    pub samples: Vec<(f64, f64)>,
}

impl Figure {
    pub fn render(model: &Model, image: &Tensor) -> Result<Self> {
        let fwd = model.forward(image, Mode::Eval)?;
        let (_, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        let gray = image.channel(0);
        let (hs, ws) = model.config.map;
        let weights = match &fwd.saliency {
            Some(t) => t.map.weights().data().to_vec(),
            None => vec![1.0 / (hs * ws) as f64; hs * ws],
        };
        let up = resize_bilinear(&Tensor::new(&[1, hs, ws], weights.clone())?, h, w)?;
        let (norm, _, _) = normalize(up.data());
        let (_, lo, hi) = normalize(&weights);

        let line_mask = grid_lines(&fwd.coarse, h, w);
        let mut grid = Vec::with_capacity(3 * h * w);
        for (&v, &on) in gray.iter().zip(&line_mask) {
            if on {
                grid.extend_from_slice(&LINE_RGB);
            } else {
                let g = (v.clamp(0.0, 1.0) * 160.0).round() as u8;
                grid.extend_from_slice(&[g, g, g]);
            }
        }
        let (_, m, n) = (fwd.sampled.shape()[0], fwd.sampled.shape()[1], fwd.sampled.shape()[2]);
        let samples = fwd
            .grid
            .u
            .data()
            .iter()
            .zip(fwd.grid.v.data())
            .map(|(&u, &v)| (v * (h - 1) as f64, u * (w - 1) as f64))
            .collect();
        Ok(Figure {
            original: Raster::gray(w, h, to_u8(gray)),
            saliency: Raster::gray(w, h, to_u8(&norm)),
            saliency_range: (lo, hi),
            grid: Raster {
                width: w,
                height: h,
                channels: 3,
                data: grid,
            },
            sampled: Raster::gray(n, m, to_u8(fwd.sampled.channel(0))),
            line_mask,
            samples,
        })
    }

    /// Writes `original.png`, `saliency.png`, `grid.png` and `sampled.png`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        self.original.write(&dir.join("original.png"))?;
        self.saliency.write(&dir.join("saliency.png"))?;
        self.grid.write(&dir.join("grid.png"))?;
        self.sampled.write(&dir.join("sampled.png"))
    }

    /// Pixel where the sample positions are densest after Gaussian smoothing
    /// with `sigma_px`, i.e. the centre of the most magnified region.
    pub fn densest_region(&self, sigma_px: f64) -> Result<(usize, usize)> {
        let (h, w) = (self.original.height, self.original.width);
        densest(&self.samples, h, w, sigma_px)
    }
}

/// Rasterizes the images of every `LINE_STEP`-th grid row and column: the
/// source positions that one output row (or column) reads from.
pub fn grid_lines(grid: &SamplingGrid, h: usize, w: usize) -> Vec<bool> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let (u, v) = (grid.u.data(), grid.v.data());
    let at = |i: usize, j: usize| (u[i * cols + j] * (w - 1) as f64, v[i * cols + j] * (h - 1) as f64);
    let mut mask = vec![false; h * w];
    let mut segment = |a: (f64, f64), b: (f64, f64)| {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize + 1;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a.0 + t * (b.0 - a.0)).round() as usize;
            let y = (a.1 + t * (b.1 - a.1)).round() as usize;
            mask[y.min(h - 1) * w + x.min(w - 1)] = true;
        }
    };
    for i in (0..rows).step_by(LINE_STEP) {
        for j in 1..cols {
            segment(at(i, j - 1), at(i, j));
        }
    }
    for j in (0..cols).step_by(LINE_STEP) {
        for i in 1..rows {
            segment(at(i - 1, j), at(i, j));
        }
    }
    mask
}

fn densest(samples: &[(f64, f64)], h: usize, w: usize, sigma_px: f64) -> Result<(usize, usize)> {
    // bilinear splat, then blur
    let mut hist = vec![0.0; h * w];
    for &(y, x) in samples {
        let (y0, x0) = (y.floor().clamp(0.0, (h - 1) as f64) as usize, x.floor().clamp(0.0, (w - 1) as f64) as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = ((y - y0 as f64).clamp(0.0, 1.0), (x - x0 as f64).clamp(0.0, 1.0));
        hist[y0 * w + x0] += (1.0 - fy) * (1.0 - fx);
        hist[y0 * w + x1] += (1.0 - fy) * fx;
        hist[y1 * w + x0] += fy * (1.0 - fx);
        hist[y1 * w + x1] += fy * fx;
    }
    let smooth = gaussian_blur(&Tensor::new(&[1, h, w], hist)?, sigma_px)?;
    let best = zoomnet_core::ops::argmax(smooth.data());
    Ok((best / w, best % w))
}
