//! Minibatch training, evaluation and the sampler-versus-baseline comparison.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::ops::argmax;
use crate::optim::Sgd;
use crate::pipeline::{Mode, Model, PipelineConfig};
use crate::sampler::{foldover_stats, lattice, mean_displacement, transport_residual};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 3;

/// Distance in source pixels within which the saliency peak counts as on the glyph.
pub const LOCALIZATION_RADIUS_PX: f64 = 12.0;

/// Default saliency learning rate relative to the task net.
pub const SALIENCY_LR_SCALE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Blur of the resampled image at epoch 0, in pixels.
    pub blur0: f64,
    /// Fraction of the epochs over which the blur decays to zero.
    pub warmup: f64,
    pub seed: u64,
    /// Every this many epochs the epoch callback is told to checkpoint; 0 never.
    pub checkpoint_every: usize,
    /// Learning rate of the saliency net relative to `lr`; 0 keeps it at its
    /// initial (uniform) output.
    pub saliency_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            blur0: 1.5,
            warmup: 0.3,
            seed: 0,
            checkpoint_every: 0,
            saliency_lr_scale: SALIENCY_LR_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train_config", "epochs and batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup) || !(self.blur0 >= 0.0) {
            return Err(Error::invalid(
                "train_config",
                format!("warmup {} must be in [0, 1] and blur0 {} >= 0", self.warmup, self.blur0),
            ));
        }
        Sgd::new(self.lr * self.saliency_lr_scale, self.momentum)?;
        Sgd::new(self.lr, self.momentum).map(|_| ())
    }

    /// Linear decay from `blur0` at epoch 0 to zero at the end of the warm-up.
    pub fn blur_sigma(&self, epoch: usize) -> f64 {
        let end = self.warmup * self.epochs as f64;
        if end <= 0.0 {
            return 0.0;
        }
        (self.blur0 * (1.0 - epoch as f64 / end)).max(0.0)
    }
}

/// Runs independent jobs and returns their results in index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs every job on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}

/// Test-set statistics of a model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub residual: f64,
    pub displacement: f64,
    pub foldover: f64,
    /// Fraction of samples whose saliency peak lies near the glyph; 0 without a saliency net.
    pub localization: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub residual: f64,
    pub displacement: f64,
    pub foldover: f64,
    pub localization: f64,
    pub blur_sigma: f64,
}

struct SampleStats {
    loss: f64,
    correct: bool,
    residual: f64,
    displacement: f64,
    foldover: f64,
    localized: bool,
}

fn sample_stats(model: &Model, sample: &Sample) -> Result<SampleStats> {
    let fwd = model.forward(&sample.image, Mode::Eval)?;
    let (loss, _) = crate::ops::cross_entropy(fwd.logits(), sample.label)?;
    let correct = argmax(fwd.logits().data()) == sample.label;
    let Some(trace) = &fwd.saliency else {
        return Ok(SampleStats {
            loss,
            correct,
            residual: 0.0,
            displacement: 0.0,
            foldover: 0.0,
            localized: false,
        });
    };
    Ok(SampleStats {
        loss,
        correct,
        residual: transport_residual(&trace.map, &fwd.coarse)?,
        displacement: mean_displacement(&fwd.coarse),
        foldover: foldover_stats(&fwd.coarse).fraction(),
        localized: peak_distance(model, trace.map.argmax(), sample.center) <= LOCALIZATION_RADIUS_PX,
    })
}

/// Distance in source pixels between a saliency cell and a pixel position.
pub fn peak_distance(model: &Model, cell: (usize, usize), center: (usize, usize)) -> f64 {
    let cfg = &model.config;
    let y = lattice(cell.0, cfg.map.0) * (cfg.high.0 - 1) as f64;
    let x = lattice(cell.1, cfg.map.1) * (cfg.high.1 - 1) as f64;
    let (dy, dx) = (y - center.0 as f64, x - center.1 as f64);
    crate::math::sqrt(dy * dy + dx * dx)
}

/// Evaluates without blur and without touching the parameters.
pub fn evaluate<E: Executor>(model: &Model, samples: &[Sample], exec: &E) -> Result<Evaluation> {
    if samples.is_empty() {
        return Ok(Evaluation::default());
    }
    let stats = exec
        .map(samples.len(), |i| sample_stats(model, &samples[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&SampleStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
    Ok(Evaluation {
        loss: mean(&|s| s.loss),
        accuracy: mean(&|s| f64::from(u8::from(s.correct))),
        residual: mean(&|s| s.residual),
        displacement: mean(&|s| s.displacement),
        foldover: mean(&|s| s.foldover),
        localization: mean(&|s| f64::from(u8::from(s.localized))),
    })
}

struct BatchResult {
    loss: f64,
    correct: usize,
    grads: Model,
}

fn batch_gradient<E: Executor>(model: &Model, batch: &[&Sample], mode: Mode, exec: &E) -> Result<BatchResult> {
    let parts = exec.map(batch.len(), |i| {
        let mut acc = model.zeroed();
        let (loss, fwd) = model.loss_and_backward(&batch[i].image, batch[i].label, mode, &mut acc)?;
        Ok::<_, Error>((loss, argmax(fwd.logits().data()) == batch[i].label, acc))
    });
    // reduce in index order so every executor gives the same sums
    let mut grads = model.zeroed();
    let mut loss = 0.0;
    let mut correct = 0;
    for part in parts {
        let (l, ok, acc) = part?;
        loss += l;
        correct += usize::from(ok);
        for (g, a) in grads.params_mut().into_iter().zip(acc.params()) {
            g.add_assign(a)?;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in grads.params_mut() {
        g.scale(scale);
    }
    Ok(BatchResult {
        loss: loss * scale,
        correct,
        grads,
    })
}

/// What the epoch callback is told after each epoch.
pub struct EpochReport<'a> {
    pub metrics: &'a EpochMetrics,
    pub model: &'a Model,
    /// True when the configured checkpoint interval falls on this epoch.
    pub checkpoint_due: bool,
}

/// Trains `model` in place and returns one row of metrics per epoch.
pub fn train<E: Executor>(
    model: &mut Model,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    exec: &E,
    mut on_epoch: impl FnMut(EpochReport<'_>),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("train", "empty training set".into()));
    }
    let sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let saliency_sgd = Sgd::new(cfg.lr * cfg.saliency_lr_scale, cfg.momentum)?;
    let mut velocity: Vec<Tensor> = model.params().iter().map(|p| p.zeros_like()).collect();
    let split = count_task_params(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let blur_sigma = cfg.blur_sigma(epoch);
        let mode = Mode::Train { blur_sigma };
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let res = batch_gradient(model, &batch, mode, exec)?;
            if !res.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += res.loss * batch.len() as f64;
            correct += res.correct;
            let grads: Vec<Tensor> = res.grads.params().into_iter().cloned().collect();
            let mut params = model.params_mut();
            let (task, saliency) = params.split_at_mut(split);
            let (task_v, saliency_v) = velocity.split_at_mut(split);
            sgd.step(task, &grads[..split], task_v)?;
            saliency_sgd.step(saliency, &grads[split..], saliency_v)?;
        }
        let eval = evaluate(model, test_set, exec)?;
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc: eval.accuracy,
            residual: eval.residual,
            displacement: eval.displacement,
            foldover: eval.foldover,
            localization: eval.localization,
            blur_sigma,
        };
        on_epoch(EpochReport {
            metrics: &metrics,
            model,
            checkpoint_due: cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0,
        });
        history.push(metrics);
    }
    Ok(history)
}

// Task parameters come first in `Model::params`.
fn count_task_params(model: &Model) -> usize {
    2 * model.task.blocks.len() + 2
}

/// Paired result of training the baseline and the sampler pipeline.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub baseline: Model,
    pub sampler: Model,
    pub baseline_history: Vec<EpochMetrics>,
    pub sampler_history: Vec<EpochMetrics>,
    pub baseline_eval: Evaluation,
    pub sampler_eval: Evaluation,
}

impl Comparison {
    /// Sampler accuracy minus baseline accuracy, in percentage points.
    pub fn margin_points(&self) -> f64 {
        100.0 * (self.sampler_eval.accuracy - self.baseline_eval.accuracy)
    }
}

/// Trains the identity-grid baseline and the full pipeline from the same seed
/// with the same budget. `arm` is called with `"baseline"` or `"sampler"` at
/// every epoch.
pub fn run_ab_comparison<E: Executor>(
    train_set: &[Sample],
    test_set: &[Sample],
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
    exec: &E,
    mut on_epoch: impl FnMut(&str, EpochReport<'_>),
) -> Result<Comparison> {
    let mut baseline = Model::new(pipeline.clone(), cfg.seed, false)?;
    let baseline_history = train(&mut baseline, train_set, test_set, cfg, exec, |r| on_epoch("baseline", r))?;
    let mut sampler = Model::new(pipeline.clone(), cfg.seed, true)?;
    let sampler_history = train(&mut sampler, train_set, test_set, cfg, exec, |r| on_epoch("sampler", r))?;
    Ok(Comparison {
        baseline_eval: evaluate(&baseline, test_set, exec)?,
        sampler_eval: evaluate(&sampler, test_set, exec)?,
        baseline,
        sampler,
        baseline_history,
        sampler_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_schedule() {
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.blur_sigma(0), 1.5);
        assert_eq!(cfg.blur_sigma(3), 0.0);
        assert_eq!(cfg.blur_sigma(9), 0.0);
        assert!((cfg.blur_sigma(1) - 1.0).abs() < 1e-12);
        let none = TrainConfig {
            warmup: 0.0,
            ..cfg.clone()
        };
        assert_eq!(none.blur_sigma(0), 0.0);
        for e in 0..10 {
            assert!(cfg.blur_sigma(e + 1) <= cfg.blur_sigma(e));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { warmup: 1.5, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
