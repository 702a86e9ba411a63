use alloc::format;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes gradient only where the input was strictly positive (`relu'(0) = 0`).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.ensure_same_shape(grad_out, "relu_backward")?;
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(
            "spatial_softmax",
            format!("temperature must be positive and finite, got {temperature}"),
        ));
    }
    Ok(())
}

/// Softmax of `logits / temperature` taken jointly over every cell of the tensor.
pub fn spatial_softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let peak = logits.max();
    let mut out = logits.map(|v| math::exp((v - peak) / temperature));
    let total = out.sum();
    out.scale(1.0 / total);
    Ok(out)
}

/// Backward of [`spatial_softmax`] given its forward output.
pub fn spatial_softmax_backward(output: &Tensor, grad_out: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    output.ensure_same_shape(grad_out, "spatial_softmax_backward")?;
    let inner = output.dot(grad_out);
    let mut g = grad_out.clone();
    for (gv, &p) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = p * (*gv - inner) / temperature;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu_clips_negatives() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::new(&[3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_gradient_masks_non_positive() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_logits_give_uniform_map() {
        let s = spatial_softmax(&Tensor::full(&[4, 4], 3.2), 1.0).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_cell_analytic_case() {
        let l = Tensor::new(&[1, 2], vec![0.0, math::ln(3.0)]).unwrap();
        let s = spatial_softmax(&l, 1.0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn shift_invariant() {
        let l = Tensor::from_fn(&[5, 5], |i| ((i * 37) % 11) as f64 * 0.3);
        let a = spatial_softmax(&l, 0.7).unwrap();
        let b = spatial_softmax(&l.map(|v| v + 123.25), 0.7).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature() {
        let l = Tensor::zeros(&[2, 2]);
        assert!(spatial_softmax(&l, 0.0).is_err());
        assert!(spatial_softmax(&l, -1.0).is_err());
        assert!(spatial_softmax(&l, f64::NAN).is_err());
    }
}
