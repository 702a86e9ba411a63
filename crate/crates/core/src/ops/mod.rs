//! Differentiable tensor operations.
//!
//! Each operation is a pair of free functions (forward and an explicit
//! vector-Jacobian product). The [`DifferentiableOp`] trait wraps them behind
//! a uniform interface so the gradient checker can drive every op the same way.

mod activation;
mod conv;
mod linear;
mod pool;
mod resize;

use alloc::vec;
use alloc::vec::Vec;

pub use activation::{relu, relu_backward, spatial_softmax, spatial_softmax_backward};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads};
pub use linear::{argmax, cross_entropy, linear, linear_backward, softmax, LinearGrads};
pub use pool::{avg_pool, avg_pool_backward, global_max_pool, global_max_pool_backward};
pub use resize::{resize_bilinear, resize_bilinear_backward};

use crate::error::Result;
use crate::tensor::Tensor;

/// A forward function paired with its exact vector-Jacobian product.
pub trait DifferentiableOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub stride: usize,
    pub pad: usize,
}

impl DifferentiableOp for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        conv2d(inputs[0], inputs[1], inputs[2], self.stride, self.pad)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let g = conv2d_backward(inputs[0], inputs[1], inputs[2], self.stride, self.pad, grad_out)?;
        Ok(vec![g.input, g.weight, g.bias])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Relu;

impl DifferentiableOp for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(relu(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![relu_backward(inputs[0], grad_out)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpatialSoftmax {
    pub temperature: f64,
}

impl DifferentiableOp for SpatialSoftmax {
    fn name(&self) -> &'static str {
        "spatial_softmax"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        spatial_softmax(inputs[0], self.temperature)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let y = spatial_softmax(inputs[0], self.temperature)?;
        Ok(vec![spatial_softmax_backward(&y, grad_out, self.temperature)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AvgPool {
    pub size: usize,
}

impl DifferentiableOp for AvgPool {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        avg_pool(inputs[0], self.size)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![avg_pool_backward(inputs[0], self.size, grad_out)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalMaxPool;

impl DifferentiableOp for GlobalMaxPool {
    fn name(&self) -> &'static str {
        "global_max_pool"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        global_max_pool(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![global_max_pool_backward(inputs[0], grad_out)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear;

impl DifferentiableOp for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        linear(inputs[0], inputs[1], inputs[2])
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let g = linear_backward(inputs[0], inputs[1], inputs[2], grad_out)?;
        Ok(vec![g.input, g.weight, g.bias])
    }
}

/// Cross-entropy against a fixed label; the output is a one-element tensor.
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropy {
    pub label: usize,
}

impl DifferentiableOp for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(cross_entropy(inputs[0], self.label)?.0))
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let (_, mut g) = cross_entropy(inputs[0], self.label)?;
        g.scale(grad_out.data()[0]);
        Ok(vec![g])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResizeBilinear {
    pub rows: usize,
    pub cols: usize,
}

impl DifferentiableOp for ResizeBilinear {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        resize_bilinear(inputs[0], self.rows, self.cols)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![resize_bilinear_backward(inputs[0].shape(), grad_out)?])
    }
}
