//! The two small convolutional networks of the pipeline.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::ops::{
    avg_pool, avg_pool_backward, conv2d, conv2d_backward, global_max_pool, global_max_pool_backward, linear,
    linear_backward, relu, relu_backward, resize_bilinear, resize_bilinear_backward, spatial_softmax,
    spatial_softmax_backward,
};
use crate::sampler::SaliencyMap;
use crate::tensor::Tensor;

fn he_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, math::sqrt(2.0 / fan_in as f64)).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// A convolution layer with its own stride and padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn he<R: Rng + ?Sized>(rng: &mut R, c_out: usize, c_in: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv {
            weight: he_normal(rng, &[c_out, c_in, k, k], c_in * k * k),
            bias: Tensor::zeros(&[c_out]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }

    /// Accumulates parameter gradients into `acc` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, acc: &mut Conv) -> Result<Tensor> {
        let g = conv2d_backward(x, &self.weight, &self.bias, self.stride, self.pad, grad_out)?;
        acc.weight.add_assign(&g.weight)?;
        acc.bias.add_assign(&g.bias)?;
        Ok(g.input)
    }

    fn zeroed(&self) -> Self {
        Conv {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            stride: self.stride,
            pad: self.pad,
        }
    }
}

/// A fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Saliency branch: three conv-relu blocks, a 1x1 conv to one channel, a
/// bilinear resize to the map size, then a spatial softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyNet {
    pub blocks: Vec<Conv>,
    pub head: Conv,
    pub map_rows: usize,
    pub map_cols: usize,
    pub temperature: f64,
}

/// Values kept from [`SaliencyNet::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct SaliencyTrace {
    /// Input of every block, then the input of the head.
    pub inputs: Vec<Tensor>,
    pub pre_activations: Vec<Tensor>,
    pub head_out: Tensor,
    pub map: SaliencyMap,
}

impl SaliencyNet {
    /// `channels` lists the block widths; the first block has stride 2.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        channels: &[usize],
        map_rows: usize,
        map_cols: usize,
        temperature: f64,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("SaliencyNet", "needs at least one block".into()));
        }
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(Conv::he(rng, c, c_in, 3, if i == 0 { 2 } else { 1 }, 1));
            c_in = c;
        }
        // Zero weights make a fresh net emit the uniform map. The bias stays
        // zero and is not a parameter: the softmax ignores constant shifts.
        let head = Conv {
            weight: Tensor::zeros(&[1, c_in, 1, 1]),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            pad: 0,
        };
        Ok(SaliencyNet {
            blocks,
            head,
            map_rows,
            map_cols,
            temperature,
        })
    }

    pub fn forward(&self, low: &Tensor) -> Result<SaliencyTrace> {
        let mut inputs = vec![low.clone()];
        let mut pre_activations = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let z = block.forward(inputs.last().expect("non-empty"))?;
            inputs.push(relu(&z));
            pre_activations.push(z);
        }
        let head_out = self.head.forward(inputs.last().expect("non-empty"))?;
        let logits = resize_bilinear(&head_out, self.map_rows, self.map_cols)?
            .reshape(&[self.map_rows, self.map_cols])?;
        let map = SaliencyMap::new(spatial_softmax(&logits, self.temperature)?)?;
        Ok(SaliencyTrace {
            inputs,
            pre_activations,
            head_out,
            map,
        })
    }

    /// Backpropagates `grad_map = dL/dS` and accumulates into `acc`.
    pub fn backward(&self, trace: &SaliencyTrace, grad_map: &Tensor, acc: &mut SaliencyNet) -> Result<()> {
        let g_logits = spatial_softmax_backward(trace.map.weights(), grad_map, self.temperature)?
            .reshape(&[1, self.map_rows, self.map_cols])?;
        let g_head = resize_bilinear_backward(trace.head_out.shape(), &g_logits)?;
        let n = self.blocks.len();
        let mut g = self.head.backward(&trace.inputs[n], &g_head, &mut acc.head)?;
        for i in (0..n).rev() {
            let gz = relu_backward(&trace.pre_activations[i], &g)?;
            g = self.blocks[i].backward(&trace.inputs[i], &gz, &mut acc.blocks[i])?;
        }
        Ok(())
    }

    pub fn zeroed(&self) -> Self {
        SaliencyNet {
            blocks: self.blocks.iter().map(Conv::zeroed).collect(),
            head: self.head.zeroed(),
            ..*self
        }
    }
}

/// Classifier: conv-relu-pool blocks (2x2 average pooling, global max after
/// the last block) and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNet {
    pub blocks: Vec<Conv>,
    pub fc: Dense,
}

#[derive(Clone, Debug)]
pub struct TaskTrace {
    /// Input of every block.
    pub inputs: Vec<Tensor>,
    pub pre_activations: Vec<Tensor>,
    pub activations: Vec<Tensor>,
    pub features: Tensor,
    pub logits: Tensor,
}

impl TaskNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, channels: &[usize], classes: usize) -> Result<Self> {
        if channels.is_empty() || classes < 2 {
            return Err(Error::invalid(
                "TaskNet",
                format!("needs at least one block and two classes, got {} and {classes}", channels.len()),
            ));
        }
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = in_channels;
        for &c in channels {
            blocks.push(Conv::he(rng, c, c_in, 3, 1, 1));
            c_in = c;
        }
        let fc = Dense {
            weight: he_normal(rng, &[classes, c_in], c_in),
            bias: Tensor::zeros(&[classes]),
        };
        Ok(TaskNet { blocks, fc })
    }

    pub fn classes(&self) -> usize {
        self.fc.bias.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<TaskTrace> {
        let n = self.blocks.len();
        let mut inputs = vec![x.clone()];
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        for (i, block) in self.blocks.iter().enumerate() {
            let z = block.forward(&inputs[i])?;
            let a = relu(&z);
            if i + 1 < n {
                inputs.push(avg_pool(&a, 2)?);
            }
            pre_activations.push(z);
            activations.push(a);
        }
        let features = global_max_pool(&activations[n - 1])?;
        let logits = linear(&features, &self.fc.weight, &self.fc.bias)?;
        Ok(TaskTrace {
            inputs,
            pre_activations,
            activations,
            features,
            logits,
        })
    }

    /// Backpropagates `dL/dlogits`, accumulates into `acc`, returns `dL/dinput`.
    pub fn backward(&self, trace: &TaskTrace, grad_logits: &Tensor, acc: &mut TaskNet) -> Result<Tensor> {
        let n = self.blocks.len();
        let lg = linear_backward(&trace.features, &self.fc.weight, &self.fc.bias, grad_logits)?;
        acc.fc.weight.add_assign(&lg.weight)?;
        acc.fc.bias.add_assign(&lg.bias)?;
        let mut g = global_max_pool_backward(&trace.activations[n - 1], &lg.input)?;
        for i in (0..n).rev() {
            if i + 1 < n {
                g = avg_pool_backward(&trace.activations[i], 2, &g)?;
            }
            let gz = relu_backward(&trace.pre_activations[i], &g)?;
            g = self.blocks[i].backward(&trace.inputs[i], &gz, &mut acc.blocks[i])?;
        }
        Ok(g)
    }

    pub fn zeroed(&self) -> Self {
        TaskNet {
            blocks: self.blocks.iter().map(Conv::zeroed).collect(),
            fc: Dense {
                weight: self.fc.weight.zeros_like(),
                bias: self.fc.bias.zeros_like(),
            },
        }
    }
}

pub(crate) fn conv_names(prefix: &str, blocks: &[Conv]) -> Vec<String> {
    (0..blocks.len()).map(|i| format!("{prefix}.conv{}", i + 1)).collect()
}
