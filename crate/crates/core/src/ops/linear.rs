use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (out, n) = weight.dims2("linear")?;
    if input.len() != n {
        return Err(Error::shape(
            "linear",
            "input features",
            format!("input has {} values, weights expect {n}", input.len()),
        ));
    }
    if bias.shape() != [out] {
        return Err(Error::shape(
            "linear",
            "output features",
            format!("bias shape {:?} does not match {out} outputs", bias.shape()),
        ));
    }
    Ok((out, n))
}

/// `weight @ flatten(input) + bias`; the input may have any shape.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out, n) = check(input, weight, bias)?;
    let x = input.data();
    let y: Vec<f64> = (0..out)
        .map(|o| {
            let row = &weight.data()[o * n..(o + 1) * n];
            bias.data()[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    Tensor::new(&[out], y)
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (out, n) = check(input, weight, bias)?;
    if grad_out.shape() != [out] {
        return Err(Error::shape(
            "linear_backward",
            "output gradient",
            format!("expected [{out}], got {:?}", grad_out.shape()),
        ));
    }
    let g = grad_out.data();
    let x = input.data();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; out * n];
    for o in 0..out {
        let row = &weight.data()[o * n..(o + 1) * n];
        for i in 0..n {
            gx[i] += g[o] * row[i];
            gw[o * n + i] = g[o] * x[i];
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: grad_out.clone(),
    })
}

/// Softmax cross-entropy of a logit vector against a class index.
///
/// Returns the loss and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let peak = logits.max();
    let exps: Vec<f64> = logits.data().iter().map(|&v| math::exp(v - peak)).collect();
    let total: f64 = exps.iter().sum();
    let loss = math::ln(total) + peak - logits.data()[label];
    let mut grad = Tensor::new(logits.shape(), exps.iter().map(|e| e / total).collect())?;
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

/// Class probabilities for a logit vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let peak = logits.max();
    let mut p = logits.map(|v| math::exp(v - peak));
    let total = p.sum();
    p.scale(1.0 / total);
    p
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 4, 10] {
            let (loss, _) = cross_entropy(&Tensor::full(&[k], 0.3), 1).unwrap();
            assert!((loss - math::ln(k as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert_eq!(
            cross_entropy(&Tensor::zeros(&[3]), 3).unwrap_err(),
            Error::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn linear_matches_hand_product() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.25, 0.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[-0.75, 4.5]);
        assert!(linear(&Tensor::zeros(&[3]), &w, &b).is_err());
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }
}
