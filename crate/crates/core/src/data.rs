//! Synthetic needle-in-a-haystack classification data.
//!
//! Every image holds faint noise, a few dim clutter patches and one bright
//! glyph whose interior pattern is the label. Once the image is box
//! downsampled the glyph is still visible as a blob, but its pattern is gone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side of the glyph patterns below.
pub const GLYPH_SIZE: usize = 7;

/// One pattern per class: a solid border around a 5x5 interior.
pub const GLYPHS: [[[u8; GLYPH_SIZE]; GLYPH_SIZE]; 4] = [
    [
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 0, 0, 0, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 0, 0, 0, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 0, 0, 0, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
    ],
    [
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
    ],
    [
        [1, 1, 1, 1, 1, 1, 1],
        [1, 1, 0, 0, 0, 1, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 0, 0, 1, 0, 0, 1],
        [1, 0, 1, 0, 1, 0, 1],
        [1, 1, 0, 0, 0, 1, 1],
        [1, 1, 1, 1, 1, 1, 1],
    ],
    [
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 0, 1, 0, 0, 1],
        [1, 0, 0, 1, 0, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
        [1, 0, 0, 1, 0, 0, 1],
        [1, 0, 0, 1, 0, 0, 1],
        [1, 1, 1, 1, 1, 1, 1],
    ],
];

/// Pattern of `class` scaled to `size x size` by nearest neighbour.
pub fn glyph(class: usize, size: usize) -> Vec<f64> {
    let g = &GLYPHS[class];
    (0..size * size)
        .map(|i| f64::from(g[(i / size) * GLYPH_SIZE / size][(i % size) * GLYPH_SIZE / size]))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSpec {
    pub classes: usize,
    pub rows: usize,
    pub cols: usize,
    pub glyph: usize,
    pub clutter: usize,
    pub clutter_min: usize,
    pub clutter_max: usize,
    pub clutter_intensity: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 4,
            rows: 96,
            cols: 96,
            glyph: GLYPH_SIZE,
            clutter: 10,
            clutter_min: 2,
            clutter_max: 4,
            clutter_intensity: 0.5,
            noise: 0.1,
            n_train: 2000,
            n_test: 500,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "dataset_spec";
        if self.glyph > self.rows || self.glyph > self.cols {
            return Err(Error::Placement {
                glyph: self.glyph,
                height: self.rows,
                width: self.cols,
            });
        }
        if !(2..=GLYPHS.len()).contains(&self.classes) {
            return Err(Error::invalid(
                OP,
                format!("classes must be in 2..={}, got {}", GLYPHS.len(), self.classes),
            ));
        }
        if self.glyph < GLYPH_SIZE {
            return Err(Error::invalid(
                OP,
                format!("glyph size must be at least {GLYPH_SIZE}, got {}", self.glyph),
            ));
        }
        if self.clutter_min == 0 || self.clutter_min > self.clutter_max || self.clutter_max > self.rows.min(self.cols) {
            return Err(Error::invalid(
                OP,
                format!("bad clutter size range {}..={}", self.clutter_min, self.clutter_max),
            ));
        }
        if !(0.0..=1.0).contains(&self.clutter_intensity) || !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid(OP, "clutter intensity must be in [0, 1] and noise >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, rows, cols]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// Glyph centre `(row, col)`; never shown to the model.
    pub center: (usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Sample number `index` of the combined train-then-test sequence. Each
/// sample draws from its own stream, so any subset can be made independently.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (h, w, g) = (spec.rows, spec.cols, spec.glyph);
    let mut img = vec![0.0; h * w];
    for _ in 0..spec.clutter {
        let s = rng.random_range(spec.clutter_min..=spec.clutter_max);
        let r = rng.random_range(0..=h - s);
        let c = rng.random_range(0..=w - s);
        for y in r..r + s {
            for x in c..c + s {
                img[y * w + x] = if rng.random_bool(0.5) { spec.clutter_intensity } else { 0.0 };
            }
        }
    }
    let label = index % spec.classes;
    let r = rng.random_range(0..=h - g);
    let c = rng.random_range(0..=w - g);
    for (k, v) in glyph(label, g).into_iter().enumerate() {
        img[(r + k / g) * w + c + k % g] = v;
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("finite noise");
        for p in img.iter_mut() {
            *p += normal.sample(&mut rng);
        }
    }
    // f32-representable so that the file format round-trips exactly
    for p in img.iter_mut() {
        *p = f64::from(p.clamp(0.0, 1.0) as f32);
    }
    Ok(Sample {
        image: Tensor::new(&[1, h, w], img)?,
        label,
        center: (r + g / 2, c + g / 2),
    })
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let all = (0..spec.n_train + spec.n_test)
        .map(|i| generate_sample(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let mut train = all;
    let test = train.split_off(spec.n_train);
    Ok(Dataset { train, test })
}

/// Best template match in an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class: usize,
    /// Centre of the matched window, in the searched image's pixels.
    pub center: (usize, usize),
    pub score: f64,
}

fn best_match(plane: &[f64], h: usize, w: usize, templates: &[(usize, usize, Vec<f64>)]) -> Detection {
    let mut best = Detection {
        class: 0,
        center: (0, 0),
        score: f64::NEG_INFINITY,
    };
    for (class, t, tpl) in templates {
        let t = *t;
        for r in 0..=h - t {
            for c in 0..=w - t {
                let mut s = 0.0;
                for (k, &v) in tpl.iter().enumerate() {
                    s += v * plane[(r + k / t) * w + c + k % t];
                }
                if s > best.score {
                    best = Detection {
                        class: *class,
                        center: (r + t / 2, c + t / 2),
                        score: s,
                    };
                }
            }
        }
    }
    best
}

fn zero_mean(mut t: Vec<f64>) -> Vec<f64> {
    let m = t.iter().sum::<f64>() / t.len() as f64;
    t.iter_mut().for_each(|v| *v -= m);
    t
}

/// Correlates zero-mean class templates with a full-resolution image.
pub fn locate_glyph(image: &Tensor, classes: usize, glyph_size: usize) -> Result<Detection> {
    let (_, h, w) = image.dims3("locate_glyph")?;
    if glyph_size > h || glyph_size > w || classes > GLYPHS.len() {
        return Err(Error::invalid("locate_glyph", format!("{classes} glyphs of {glyph_size} px")));
    }
    let templates: Vec<_> = (0..classes)
        .map(|k| (k, glyph_size, zero_mean(glyph(k, glyph_size))))
        .collect();
    Ok(best_match(image.channel(0), h, w, &templates))
}

/// The same search on an image box-downsampled by `factor`: every class
/// template is rendered at each sub-pixel phase and downsampled the same way.
pub fn locate_glyph_downsampled(low: &Tensor, classes: usize, glyph_size: usize, factor: usize) -> Result<Detection> {
    let (_, h, w) = low.dims3("locate_glyph_downsampled")?;
    let t = (glyph_size + factor - 1).div_ceil(factor);
    if factor == 0 || t > h || t > w || classes > GLYPHS.len() {
        return Err(Error::invalid(
            "locate_glyph_downsampled",
            format!("{classes} glyphs of {glyph_size} px at factor {factor}"),
        ));
    }
    let canvas = t * factor;
    let mut templates = Vec::new();
    for k in 0..classes {
        let g = glyph(k, glyph_size);
        for py in 0..factor {
            for px in 0..factor {
                let mut tpl = vec![0.0; t * t];
                for (i, v) in g.iter().enumerate() {
                    let (y, x) = (py + i / glyph_size, px + i % glyph_size);
                    if y < canvas && x < canvas {
                        tpl[(y / factor) * t + x / factor] += v / (factor * factor) as f64;
                    }
                }
                templates.push((k, t, zero_mean(tpl)));
            }
        }
    }
    Ok(best_match(low.channel(0), h, w, &templates))
}
