use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn pooled_dims(x: &Tensor, size: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.dims3(op)?;
    if size == 0 {
        return Err(Error::invalid(op, "pool size must be >= 1".into()));
    }
    if h % size != 0 {
        return Err(Error::shape(op, "height", format!("{h} is not divisible by pool size {size}")));
    }
    if w % size != 0 {
        return Err(Error::shape(op, "width", format!("{w} is not divisible by pool size {size}")));
    }
    Ok((c, h, w))
}

/// Non-overlapping `size x size` average pooling over `[C, H, W]`.
pub fn avg_pool(x: &Tensor, size: usize) -> Result<Tensor> {
    let (c, h, w) = pooled_dims(x, size, "avg_pool")?;
    let (oh, ow) = (h / size, w / size);
    let mut out = vec![0.0; c * oh * ow];
    let src = x.data();
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut out[(ch * oh + y / size) * ow..(ch * oh + y / size + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d += row[ox * size..(ox + 1) * size].iter().sum::<f64>();
            }
        }
    }
    let inv = 1.0 / (size * size) as f64;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn avg_pool_backward(x: &Tensor, size: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = pooled_dims(x, size, "avg_pool_backward")?;
    let (oh, ow) = (h / size, w / size);
    if grad_out.shape() != [c, oh, ow] {
        return Err(Error::shape(
            "avg_pool_backward",
            "output gradient",
            format!("expected {:?}, got {:?}", [c, oh, ow], grad_out.shape()),
        ));
    }
    let inv = 1.0 / (size * size) as f64;
    let g = grad_out.data();
    Ok(Tensor::from_fn(x.shape(), |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let xx = i % w;
        g[(ch * oh + y / size) * ow + xx / size] * inv
    }))
}

/// Per-channel maximum over all spatial positions: `[C, H, W] -> [C]`.
pub fn global_max_pool(x: &Tensor) -> Result<Tensor> {
    let (c, _, _) = x.dims3("global_max_pool")?;
    Tensor::new(
        &[c],
        (0..c)
            .map(|ch| x.channel(ch).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    )
}

/// Routes each channel's gradient to the first position attaining the maximum.
pub fn global_max_pool_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("global_max_pool_backward")?;
    if grad_out.shape() != [c] {
        return Err(Error::shape(
            "global_max_pool_backward",
            "channels",
            format!("expected [{c}], got {:?}", grad_out.shape()),
        ));
    }
    let mut g = Tensor::zeros(x.shape());
    let plane = h * w;
    for ch in 0..c {
        let vals = x.channel(ch);
        let mut best = 0;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = i;
            }
        }
        g.data_mut()[ch * plane + best] = grad_out.data()[ch];
    }
    Ok(g)
}
