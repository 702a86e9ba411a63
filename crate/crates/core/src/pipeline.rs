//! The composed model: downsample, saliency, grid, resample, classify.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::{conv_names, SaliencyNet, SaliencyTrace, TaskNet, TaskTrace};
use crate::ops::cross_entropy;
use crate::sampler::{
    compute_grid_conv, gaussian_blur, gaussian_blur_backward, grid_backward, grid_sample, grid_sample_backward,
    upsample_grid, upsample_grid_backward, KernelSpec, SamplingGrid,
};
use crate::tensor::Tensor;

const TASK_STREAM: u64 = 1;
const SALIENCY_STREAM: u64 = 2;

/// Resolutions and architecture of the pipeline.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub channels: usize,
    /// Source image `(rows, cols)`.
    pub high: (usize, usize),
    /// Input size of both networks and size of the resampled image.
    pub low: (usize, usize),
    /// Saliency map and coarse grid size.
    pub map: (usize, usize),
    pub kernel: KernelSpec,
    pub temperature: f64,
    pub classes: usize,
    pub saliency_channels: Vec<usize>,
    pub task_channels: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            channels: 1,
            high: (96, 96),
            low: (32, 32),
            map: (31, 31),
            kernel: KernelSpec::for_map_width(31),
            temperature: 1.0,
            classes: 4,
            saliency_channels: vec![8, 16, 16],
            task_channels: vec![8, 16, 16],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "pipeline_config";
        let (h, w) = self.high;
        let (m, n) = self.low;
        let (hs, ws) = self.map;
        if self.channels == 0 || m == 0 || n == 0 {
            return Err(Error::invalid(OP, "channels and resolutions must be positive".into()));
        }
        if h < m || w < n {
            return Err(Error::invalid(OP, format!("source {h}x{w} is smaller than {m}x{n}")));
        }
        if hs < 2 || ws < 2 || hs > m || ws > n {
            return Err(Error::invalid(
                OP,
                format!("map {hs}x{ws} must be at least 2x2 and at most {m}x{n}"),
            ));
        }
        let pools = 1usize << self.task_channels.len().saturating_sub(1);
        if m % pools != 0 || n % pools != 0 {
            return Err(Error::invalid(
                OP,
                format!("{m}x{n} is not divisible by the task net's pooling factor {pools}"),
            ));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(OP, format!("temperature must be positive, got {}", self.temperature)));
        }
        KernelSpec::new(self.kernel.sigma, self.kernel.radius, self.kernel.pad)?;
        if self.saliency_channels.is_empty() || self.task_channels.is_empty() || self.classes < 2 {
            return Err(Error::invalid(OP, "networks need blocks and at least two classes".into()));
        }
        Ok(())
    }
}

/// Area-average downsampling of `[C, H, W]` to `[C, rows, cols]`.
///
/// Output cell `o` averages the source interval `[o H / rows, (o + 1) H / rows)`
/// with fractional weights at its ends.
pub fn downsample(image: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3("downsample")?;
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::invalid(
            "downsample",
            format!("cannot downsample {h}x{w} to {rows}x{cols}"),
        ));
    }
    let wy = area_weights(h, rows);
    let wx = area_weights(w, cols);
    let mut out = vec![0.0; c * rows * cols];
    let mut tmp = vec![0.0; h * cols];
    for ch in 0..c {
        let src = image.channel(ch);
        tmp.iter_mut().for_each(|t| *t = 0.0);
        for y in 0..h {
            for (ox, taps) in wx.iter().enumerate() {
                tmp[y * cols + ox] = taps.iter().map(|&(x, k)| k * src[y * w + x]).sum();
            }
        }
        let dst = &mut out[ch * rows * cols..(ch + 1) * rows * cols];
        for (oy, taps) in wy.iter().enumerate() {
            for ox in 0..cols {
                dst[oy * cols + ox] = taps.iter().map(|&(y, k)| k * tmp[y * cols + ox]).sum();
            }
        }
    }
    Tensor::new(&[c, rows, cols], out)
}

fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    // work in units of 1 / dst source pixels to keep the bounds exact
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o * src, (o + 1) * src);
            (lo / dst..hi.div_ceil(dst))
                .map(|i| {
                    let overlap = hi.min((i + 1) * dst) - lo.max(i * dst);
                    (i, overlap as f64 / src as f64)
                })
                .collect()
        })
        .collect()
}

/// Whether the resampled image is blurred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Train { blur_sigma: f64 },
    Eval,
}

impl Mode {
    pub fn blur_sigma(&self) -> f64 {
        match *self {
            Mode::Train { blur_sigma } => blur_sigma,
            Mode::Eval => 0.0,
        }
    }
}

/// Everything computed by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub image: Tensor,
    /// Downsampled input of the saliency net.
    pub low: Tensor,
    pub saliency: Option<SaliencyTrace>,
    /// Grid at map resolution after clamping.
    pub coarse: SamplingGrid,
    /// Grid at task resolution.
    pub grid: SamplingGrid,
    /// Resampled image before blurring.
    pub sampled: Tensor,
    pub blur_sigma: f64,
    pub task: TaskTrace,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        &self.task.logits
    }
}

/// Both networks plus the configuration that ties them together. Without a
/// saliency net the grid is the identity, which is the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: PipelineConfig,
    pub saliency: Option<SaliencyNet>,
    pub task: TaskNet,
}

/// Builds the default pair of networks from a seed. The task net only depends
/// on the seed, so a baseline and a sampler model built from the same seed
/// start from the same classifier.
pub fn build_default_nets(cfg: &PipelineConfig, seed: u64) -> Result<(SaliencyNet, TaskNet)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TASK_STREAM);
    let task = TaskNet::new(&mut rng, cfg.channels, &cfg.task_channels, cfg.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SALIENCY_STREAM);
    let saliency = SaliencyNet::new(
        &mut rng,
        cfg.channels,
        &cfg.saliency_channels,
        cfg.map.0,
        cfg.map.1,
        cfg.temperature,
    )?;
    Ok((saliency, task))
}

impl Model {
    pub fn new(config: PipelineConfig, seed: u64, with_sampler: bool) -> Result<Self> {
        let (saliency, task) = build_default_nets(&config, seed)?;
        Ok(Model {
            config,
            saliency: with_sampler.then_some(saliency),
            task,
        })
    }

    /// A model of the same shape with every parameter zero, used to accumulate gradients.
    pub fn zeroed(&self) -> Self {
        Model {
            config: self.config.clone(),
            saliency: self.saliency.as_ref().map(SaliencyNet::zeroed),
            task: self.task.zeroed(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for conv in conv_names("task", &self.task.blocks) {
            names.push(format!("{conv}.weight"));
            names.push(format!("{conv}.bias"));
        }
        names.push("task.fc.weight".into());
        names.push("task.fc.bias".into());
        if let Some(s) = &self.saliency {
            for conv in conv_names("saliency", &s.blocks) {
                names.push(format!("{conv}.weight"));
                names.push(format!("{conv}.bias"));
            }
            names.push("saliency.head.weight".into());
        }
        names
    }

    /// Parameters in the order of [`Model::param_names`].
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.task.blocks {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        out.push(&self.task.fc.weight);
        out.push(&self.task.fc.bias);
        if let Some(s) = &self.saliency {
            for b in &s.blocks {
                out.push(&b.weight);
                out.push(&b.bias);
            }
            out.push(&s.head.weight);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.task.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.push(&mut self.task.fc.weight);
        out.push(&mut self.task.fc.bias);
        if let Some(s) = &mut self.saliency {
            for b in &mut s.blocks {
                out.push(&mut b.weight);
                out.push(&mut b.bias);
            }
            out.push(&mut s.head.weight);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, image: &Tensor, mode: Mode) -> Result<Forward> {
        let cfg = &self.config;
        let (c, h, w) = image.dims3("forward_pipeline")?;
        if (c, h, w) != (cfg.channels, cfg.high.0, cfg.high.1) {
            return Err(Error::shape(
                "forward_pipeline",
                "image",
                format!(
                    "expected [{}, {}, {}], got {:?}",
                    cfg.channels,
                    cfg.high.0,
                    cfg.high.1,
                    image.shape()
                ),
            ));
        }
        let (m, n) = cfg.low;
        let low = downsample(image, m, n)?;
        let (saliency, coarse, grid) = match &self.saliency {
            Some(net) => {
                let trace = net.forward(&low)?;
                let coarse = compute_grid_conv(&trace.map, &cfg.kernel)?;
                let grid = upsample_grid(&coarse, m, n)?;
                (Some(trace), coarse, grid)
            }
            None => (
                None,
                SamplingGrid::identity(cfg.map.0, cfg.map.1),
                SamplingGrid::identity(m, n),
            ),
        };
        let sampled = grid_sample(image, &grid)?;
        let blur_sigma = mode.blur_sigma();
        let task = self.task.forward(&gaussian_blur(&sampled, blur_sigma)?)?;
        Ok(Forward {
            image: image.clone(),
            low,
            saliency,
            coarse,
            grid,
            sampled,
            blur_sigma,
            task,
        })
    }

    /// Backpropagates `dL/dlogits` through both networks and the sampler,
    /// adding parameter gradients into `acc`.
    pub fn backward(&self, fwd: &Forward, grad_logits: &Tensor, acc: &mut Model) -> Result<()> {
        let g_input = self.task.backward(&fwd.task, grad_logits, &mut acc.task)?;
        let (Some(net), Some(trace), Some(acc_s)) = (&self.saliency, &fwd.saliency, &mut acc.saliency) else {
            return Ok(());
        };
        let g_sampled = gaussian_blur_backward(&g_input, fwd.blur_sigma)?;
        let g_grid = grid_sample_backward(&fwd.image, &fwd.grid, &g_sampled)?.grid;
        let g_coarse = upsample_grid_backward(fwd.coarse.rows(), fwd.coarse.cols(), &g_grid)?;
        let g_map = grid_backward(&trace.map, &self.config.kernel, &g_coarse.u, &g_coarse.v)?;
        net.backward(trace, &g_map, acc_s)
    }

    /// Cross-entropy loss for one sample; gradients are added into `acc`.
    pub fn loss_and_backward(&self, image: &Tensor, label: usize, mode: Mode, acc: &mut Model) -> Result<(f64, Forward)> {
        let fwd = self.forward(image, mode)?;
        let (loss, grad) = cross_entropy(fwd.logits(), label)?;
        self.backward(&fwd, &grad, acc)?;
        Ok((loss, fwd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_examples() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(downsample(&x, 1, 1).unwrap().data(), &[4.0]);
        assert_eq!(downsample(&x, 2, 2).unwrap(), x);
        let c = Tensor::full(&[2, 9, 6], 0.3);
        let d = downsample(&c, 4, 5).unwrap();
        assert!(d.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(downsample(&x, 3, 1).is_err());
    }

    #[test]
    fn area_weights_sum_to_one() {
        for (s, d) in [(96, 32), (10, 3), (7, 7), (5, 2)] {
            for taps in area_weights(s, d) {
                let t: f64 = taps.iter().map(|p| p.1).sum();
                assert!((t - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fresh_saliency_is_uniform() {
        let model = Model::new(PipelineConfig::default(), 3, true).unwrap();
        let img = Tensor::from_fn(&[1, 96, 96], |i| ((i * 37) % 11) as f64 / 10.0);
        let fwd = model.forward(&img, Mode::Eval).unwrap();
        let s = fwd.saliency.as_ref().unwrap().map.weights();
        assert!((s.sum() - 1.0).abs() < 1e-12);
        assert!(s.data().iter().all(|&v| (v - 1.0 / 961.0).abs() < 1e-15));
        let base = Model::new(PipelineConfig::default(), 3, false).unwrap();
        let b = base.forward(&img, Mode::Eval).unwrap();
        assert!(fwd.sampled.max_abs_diff(&b.sampled) < 1e-5);
        assert_eq!(model.task, base.task);
    }

    #[test]
    fn same_seed_same_params() {
        let a = Model::new(PipelineConfig::default(), 11, true).unwrap();
        let b = Model::new(PipelineConfig::default(), 11, true).unwrap();
        let c = Model::new(PipelineConfig::default(), 12, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_names().len(), a.params().len());
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.low = (30, 30);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.high = (16, 16);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }
}
