//! Central finite-difference checks of every backward rule.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::ops::{
    cross_entropy, AvgPool, Conv2d, CrossEntropy, DifferentiableOp, GlobalMaxPool, Linear, Relu, ResizeBilinear,
    SpatialSoftmax,
};
use crate::pipeline::{Mode, Model, PipelineConfig};
use crate::sampler::{
    attraction_field_conv, GaussianBlur, GridGenerator, GridSample, KernelSpec, SaliencyMap, SamplingGrid, UpsampleGrid,
};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const OP_TRIALS: usize = 20;
pub const PIPELINE_TRIALS: usize = 3;

/// `|a - n| / (|n| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Largest relative error between `backward` and central differences of the
/// scalar `sum(projection * forward(inputs))`, over every input element.
pub fn check_op(op: &dyn DifferentiableOp, inputs: &[Tensor], projection: &Tensor) -> Result<f64> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let analytic = op.backward(&refs, projection)?;
    let loss = |xs: &[Tensor]| -> Result<f64> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        Ok(op.forward(&refs)?.dot(projection))
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + STEP;
            let up = loss(&work)?;
            work[i].data_mut()[j] = x - STEP;
            let down = loss(&work)?;
            work[i].data_mut()[j] = x;
            worst = worst.max(relative_error(grad.data()[j], (up - down) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckReport::passed)
    }
}

/// Wraps an op and perturbs its backward; used to prove the suite can fail.
struct Corrupted(Box<dyn DifferentiableOp>);

impl DifferentiableOp for Corrupted {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.0.forward(inputs)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = self.0.backward(inputs, grad_out)?;
        g[0].scale(1.01);
        Ok(g)
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values kept at least `margin` away from zero, where relu has its kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Normalized coordinates whose pixel positions stay clear of the pixel lattice.
fn off_lattice(rng: &mut ChaCha8Rng, count: usize, pixels: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let p = rng.random_range(0..pixels - 1) as f64 + rng.random_range(0.1..0.9);
            p / (pixels - 1) as f64
        })
        .collect()
}

/// Clamping is a kink: keep every coordinate away from 0 and 1 so that the
/// differences do not straddle it.
fn clear_of_clamp(field: &SamplingGrid) -> bool {
    field
        .u
        .data()
        .iter()
        .chain(field.v.data())
        .all(|&x| x.abs() > CLAMP_MARGIN && (x - 1.0).abs() > CLAMP_MARGIN)
}

const CLAMP_MARGIN: f64 = 1e-3;

type Case = (Box<dyn DifferentiableOp>, Vec<Tensor>);

/// One random instance of every op, in report order.
fn cases(rng: &mut ChaCha8Rng, trial: usize) -> Vec<Case> {
    let mut out: Vec<Case> = Vec::new();
    let stride = 1 + trial % 2;
    out.push((
        Box::new(Conv2d { stride, pad: 1 }),
        vec![normal(rng, &[2, 5, 5]), normal(rng, &[3, 2, 3, 3]), normal(rng, &[3])],
    ));
    out.push((Box::new(Relu), vec![away_from_zero(rng, &[3, 4, 4], 0.05)]));
    let temperature = rng.random_range(0.5..2.0);
    out.push((Box::new(SpatialSoftmax { temperature }), vec![normal(rng, &[5, 5])]));
    out.push((Box::new(AvgPool { size: 2 }), vec![normal(rng, &[2, 4, 6])]));
    out.push((Box::new(GlobalMaxPool), vec![normal(rng, &[3, 4, 4])]));
    out.push((
        Box::new(Linear),
        vec![normal(rng, &[2, 3]), normal(rng, &[4, 6]), normal(rng, &[4])],
    ));
    let label = rng.random_range(0..4);
    out.push((Box::new(CrossEntropy { label }), vec![normal(rng, &[4])]));
    out.push((Box::new(ResizeBilinear { rows: 7, cols: 9 }), vec![normal(rng, &[2, 4, 5])]));
    let spec = KernelSpec::for_map_width(9);
    let map = loop {
        let logits = normal(rng, &[9, 9]);
        let map = SaliencyMap::from_logits(&logits, 1.0).expect("valid temperature");
        let field = attraction_field_conv(&map, &spec).expect("positive map");
        if clear_of_clamp(&field) {
            break map.into_tensor();
        }
    };
    out.push((Box::new(GridGenerator { spec }), vec![map]));
    out.push((
        Box::new(UpsampleGrid { rows: 9, cols: 11 }),
        vec![uniform(rng, &[2, 5, 6], 0.05, 0.95)],
    ));
    let (h, w) = (6, 7);
    let mut grid = off_lattice(rng, 20, w);
    grid.extend(off_lattice(rng, 20, h));
    out.push((
        Box::new(GridSample),
        vec![normal(rng, &[2, h, w]), Tensor::new(&[2, 4, 5], grid).expect("40 values")],
    ));
    let sigma_px = rng.random_range(0.5..1.5);
    out.push((Box::new(GaussianBlur { sigma_px }), vec![normal(rng, &[2, 8, 8])]));
    out
}

/// Names reported by [`run_suite`], in order.
pub fn check_names() -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut names: Vec<_> = cases(&mut rng, 0).iter().map(|(op, _)| op.name()).collect();
    names.push("pipeline");
    names
}

/// A two-class model small enough to difference every parameter.
pub fn micro_config() -> PipelineConfig {
    PipelineConfig {
        channels: 1,
        high: (24, 24),
        low: (8, 8),
        map: (7, 7),
        kernel: KernelSpec::for_map_width(7),
        temperature: 1.0,
        classes: 2,
        saliency_channels: vec![3, 3, 3],
        task_channels: vec![3, 4, 4],
    }
}

/// Largest relative error of the full model gradient against central
/// differences of the cross-entropy loss, over every parameter.
/// Directional finite differences of the composed loss, `DIRECTIONS` random
/// directions per parameter tensor.
///
/// A constant shift of the saliency logits leaves the softmax unchanged, so
/// single coordinates can have a true gradient at the roundoff floor of the
/// numeric one. Random directions keep every tensor's contribution well above it.
pub fn check_pipeline(model: &Model, image: &Tensor, label: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut acc = model.zeroed();
    model.loss_and_backward(image, label, mode, &mut acc)?;
    let analytic: Vec<Tensor> = acc.params().into_iter().cloned().collect();
    let loss = |m: &Model| -> Result<f64> { Ok(cross_entropy(m.forward(image, mode)?.logits(), label)?.0) };
    let mut work = model.clone();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        let base = work.params()[p].clone();
        for _ in 0..DIRECTIONS {
            let d = normal(rng, grad.shape());
            let a = grad.dot(&d);
            *work.params_mut()[p] = shifted(&base, &d, STEP);
            let up = loss(&work)?;
            *work.params_mut()[p] = shifted(&base, &d, -STEP);
            let down = loss(&work)?;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * STEP)));
        }
        *work.params_mut()[p] = base;
    }
    Ok(worst)
}

pub const DIRECTIONS: usize = 4;

fn shifted(base: &Tensor, direction: &Tensor, step: f64) -> Tensor {
    let mut out = direction.clone();
    out.scale(step);
    for (o, b) in out.data_mut().iter_mut().zip(base.data()) {
        *o += b;
    }
    out
}

/// Distance of the forward pass to the nearest kink: a relu input at zero, a
/// max-pool tie, a sample on the pixel lattice or a grid coordinate at the clamp.
fn kink_clearance(model: &Model, image: &Tensor, mode: Mode) -> Result<f64> {
    let fwd = model.forward(image, mode)?;
    let mut pre: Vec<&Tensor> = fwd.task.pre_activations.iter().collect();
    let mut clearance = f64::INFINITY;
    if let Some(s) = &fwd.saliency {
        pre.extend(&s.pre_activations);
        let raw = attraction_field_conv(&s.map, &model.config.kernel)?;
        for &x in raw.u.data().iter().chain(raw.v.data()) {
            clearance = clearance.min(x.abs()).min((x - 1.0).abs());
        }
    }
    for z in pre {
        clearance = z.data().iter().fold(clearance, |c, v| c.min(v.abs()));
    }
    let last = fwd.task.activations.last().expect("task net has blocks");
    let plane = last.shape()[1] * last.shape()[2];
    for ch in last.data().chunks(plane) {
        let mut top = [f64::NEG_INFINITY; 2];
        for &v in ch {
            if v > top[0] {
                top = [v, top[0]];
            } else if v > top[1] {
                top[1] = v;
            }
        }
        clearance = clearance.min(top[0] - top[1]);
    }
    let (_, h, w) = image.dims3("kink_clearance")?;
    for (&u, &v) in fwd.grid.u.data().iter().zip(fwd.grid.v.data()) {
        for p in [u * (w - 1) as f64, v * (h - 1) as f64] {
            clearance = clearance.min((p - crate::math::floor(p + 0.5)).abs());
        }
    }
    Ok(clearance)
}

const KINK_MARGIN: f64 = 1e-4;

/// False when some parameter tensor has a vanishing gradient, as the last
/// saliency bias does when every unit it feeds is active. The relative error of
/// such a tensor only measures roundoff.
fn every_tensor_moves(model: &Model, image: &Tensor, label: usize, mode: Mode) -> Result<bool> {
    let mut acc = model.zeroed();
    model.loss_and_backward(image, label, mode, &mut acc)?;
    Ok(acc.params().iter().all(|g| g.norm() > MIN_GRADIENT_NORM))
}

const MIN_GRADIENT_NORM: f64 = 1e-6;

fn random_micro_model(rng: &mut ChaCha8Rng, seed: u64) -> Result<Model> {
    let mut model = Model::new(micro_config(), seed, true)?;
    // Fresh nets sit on kinks: zero biases put dead units exactly at the relu
    // threshold and the zero saliency head puts the grid on the pixel lattice.
    let names = model.param_names();
    for (name, p) in names.iter().zip(model.params_mut()) {
        if name.ends_with(".bias") || name.starts_with("saliency.head") {
            *p = normal(rng, p.shape());
            p.scale(0.1);
        }
    }
    if let Some(s) = &mut model.saliency {
        s.head.weight.scale(10.0);
    }
    Ok(model)
}

/// Runs every op check and the composed check. `fault` names an op (or
/// `"pipeline"`) whose backward is deliberately corrupted.
pub fn run_suite(seed: u64, fault: Option<&str>) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks: Vec<CheckReport> = Vec::new();
    for trial in 0..OP_TRIALS {
        for (op, inputs) in cases(&mut rng, trial) {
            let op: Box<dyn DifferentiableOp> = if fault == Some(op.name()) { Box::new(Corrupted(op)) } else { op };
            let reference = op.forward(&inputs.iter().collect::<Vec<_>>())?;
            let projection = normal(&mut rng, reference.shape());
            let err = check_op(op.as_ref(), &inputs, &projection)?;
            match checks.iter_mut().find(|c| c.name == op.name()) {
                Some(c) => {
                    c.trials += 1;
                    c.max_rel_err = c.max_rel_err.max(err);
                }
                None => checks.push(CheckReport {
                    name: op.name(),
                    trials: 1,
                    max_rel_err: err,
                    tolerance: OP_TOLERANCE,
                }),
            }
        }
    }
    let mut worst = 0.0f64;
    for trial in 0..PIPELINE_TRIALS {
        let mode = Mode::Train { blur_sigma: 0.7 };
        let (model, image, label) = loop {
            let model = random_micro_model(&mut rng, seed.wrapping_add(trial as u64))?;
            let image = uniform(&mut rng, &[1, 24, 24], 0.0, 1.0);
            let label = rng.random_range(0..2);
            if kink_clearance(&model, &image, mode)? > KINK_MARGIN && every_tensor_moves(&model, &image, label, mode)? {
                break (model, image, label);
            }
        };
        let mut err = check_pipeline(&model, &image, label, mode, &mut rng)?;
        if fault == Some("pipeline") {
            err = err.max(1.0);
        }
        worst = worst.max(err);
    }
    checks.push(CheckReport {
        name: "pipeline",
        trials: PIPELINE_TRIALS,
        max_rel_err: worst,
        tolerance: PIPELINE_TOLERANCE,
    });
    Ok(SuiteReport { checks })
}
