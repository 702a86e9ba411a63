//! Stochastic gradient descent with heavy-ball momentum.

use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        // lr = 0 is accepted so that a frozen run can be expressed.
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::invalid("sgd", format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("sgd", format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd { lr, momentum })
    }

    /// `v <- momentum * v + g; p <- p - lr * v` for every parameter.
    pub fn step(&self, params: &mut [&mut Tensor], grads: &[Tensor], velocity: &mut [Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != velocity.len() {
            return Err(Error::shape(
                "sgd_step",
                "parameter count",
                format!(
                    "{} params, {} grads, {} velocities",
                    params.len(),
                    grads.len(),
                    velocity.len()
                ),
            ));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
            p.ensure_same_shape(g, "sgd_step")?;
            p.ensure_same_shape(v, "sgd_step")?;
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
