use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Dims, Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalisation state. All four vectors are stored as
/// `(1, c, 1, 1)` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Parameter(format!("batchnorm momentum {momentum} outside (0, 1)")));
        }
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("batchnorm eps {eps} must be positive")));
        }
        let d = [1, channels, 1, 1];
        Ok(BnParams {
            gamma: Tensor::full(d, T::one())?,
            beta: Tensor::zeros(d)?,
            running_mean: Tensor::zeros(d)?,
            running_var: Tensor::full(d, T::one())?,
            momentum,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.dims().c
    }
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

fn channel_values<T: Scalar>(x: &Tensor<T>, c: usize) -> impl Iterator<Item = T> + '_ {
    let d = x.dims();
    (0..d.n).flat_map(move |n| x.data()[(n * d.c + c) * d.plane()..][..d.plane()].iter().copied())
}

/// Train mode normalises with the batch statistics over `(n, h, w)` and
/// updates the running estimates (the variance estimate is unbiased); eval
/// mode normalises with the running estimates.
pub fn batchnorm<T: Scalar>(x: &Tensor<T>, p: &mut BnParams<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
    let d = x.dims();
    if d.c != p.channels() {
        return Err(Error::Dimension(format!("batchnorm has {} channels, input is {d}", p.channels())));
    }
    let count = d.n * d.plane();
    if mode == Mode::Train && count < 2 {
        return Err(Error::Dimension(format!(
            "batchnorm in train mode needs at least 2 values per channel, input is {d}"
        )));
    }
    let mut xhat = Tensor::zeros(d)?;
    let mut out = Tensor::zeros(d)?;
    let mut inv_std = Vec::with_capacity(d.c);
    for c in 0..d.c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = channel_values(x, c).map(Scalar::as_f64).sum::<f64>() / count as f64;
                let var = channel_values(x, c).map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count as f64;
                let m = p.momentum;
                let rm = &mut p.running_mean.data_mut()[c];
                *rm = T::of((1.0 - m) * rm.as_f64() + m * mean);
                let rv = &mut p.running_var.data_mut()[c];
                *rv = T::of((1.0 - m) * rv.as_f64() + m * var * count as f64 / (count - 1) as f64);
                (T::of(mean), var)
            }
            Mode::Eval => (p.running_mean.data()[c], p.running_var.data()[c].as_f64()),
        };
        let istd = T::of(1.0 / (var + p.eps).sqrt());
        let (g, b) = (p.gamma.data()[c], p.beta.data()[c]);
        for n in 0..d.n {
            let off = (n * d.c + c) * d.plane();
            for i in off..off + d.plane() {
                let xh = (x.data()[i] - mean) * istd;
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
        inv_std.push(istd);
    }
    Ok((out, BnCache { mode, xhat, inv_std }))
}

/// Backward of [`batchnorm`]; in train mode this includes the terms that
/// flow through the batch mean and variance.
pub fn batchnorm_backward<T: Scalar>(cache: &BnCache<T>, p: &mut BnParams<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let d: Dims = cache.xhat.dims();
    if grad.dims() != d {
        return Err(Error::ShapeMismatch { op: "batchnorm_backward", left: d, right: grad.dims() });
    }
    let count = T::of((d.n * d.plane()) as f64);
    let mut dx = Tensor::zeros(d)?;
    let mut dgamma = vec![T::zero(); d.c];
    let mut dbeta = vec![T::zero(); d.c];
    for c in 0..d.c {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for n in 0..d.n {
            let off = (n * d.c + c) * d.plane();
            for i in off..off + d.plane() {
                sg += grad.data()[i];
                sgx += grad.data()[i] * cache.xhat.data()[i];
            }
        }
        dbeta[c] = sg;
        dgamma[c] = sgx;
        let scale = p.gamma.data()[c] * cache.inv_std[c];
        for n in 0..d.n {
            let off = (n * d.c + c) * d.plane();
            for i in off..off + d.plane() {
                let g = grad.data()[i];
                dx.data_mut()[i] = match cache.mode {
                    Mode::Eval => scale * g,
                    Mode::Train => scale / count * (count * g - sg - cache.xhat.data()[i] * sgx),
                };
            }
        }
    }
    p.gamma.accumulate_grad(&dgamma);
    p.beta.accumulate_grad(&dbeta);
    Ok(dx)
}
