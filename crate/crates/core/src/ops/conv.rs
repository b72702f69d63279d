use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Dims, Distribution, Rng, Scalar, Tensor};

/// Convolution weights `(out_c, in_c, k, k)`, bias `(1, out_c, 1, 1)`, and
/// the stride / symmetric zero padding the layer is applied with.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Parameter("conv stride must be >= 1".into()));
        }
        Ok(ConvParams {
            weight: Tensor::zeros([out_c, in_c, k, k])?,
            bias: Tensor::zeros([1, out_c, 1, 1])?,
            stride,
            pad,
        })
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn he(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(in_c, out_c, k, stride, pad)?;
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        p.weight.fill_random(Distribution::Normal { mean: 0.0, std }, rng)?;
        Ok(p)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.c != self.in_channels() {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got {input}",
                self.in_channels()
            )));
        }
        let k = self.kernel();
        Ok(Dims::new(
            input.n,
            self.out_channels(),
            output_len(input.h, k, self.stride, self.pad)?,
            output_len(input.w, k, self.stride, self.pad)?,
        ))
    }
}

/// `floor((len + 2 pad - k) / stride) + 1`, or an error when that is not a
/// positive size.
pub fn output_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || len + 2 * pad < k {
        return Err(Error::Dimension(format!(
            "window {k} (stride {stride}, pad {pad}) does not fit an axis of length {len}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Output positions `lo..hi` for which `o * stride + offset - pad` lands
/// inside `0..in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    if in_len - 1 + pad < offset {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Cross-correlation with zero padding plus per-channel bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xd = x.dims();
    let od = p.output_dims(xd)?;
    let (k, s, pad) = (p.kernel(), p.stride, p.pad);
    let (ic, oc) = (xd.c, od.c);
    let xs = x.data();
    let ws = p.weight.data();
    let bs = p.bias.data();
    let mut out = vec![T::zero(); od.len()];

    parallel::for_each_chunk(&mut out, od.plane(), |i, plane| {
        let (n, o) = (i / oc, i % oc);
        plane.iter_mut().for_each(|v| *v = bs[o]);
        for c in 0..ic {
            let xplane = &xs[(n * ic + c) * xd.plane()..][..xd.plane()];
            let wk = &ws[(o * ic + c) * k * k..][..k * k];
            for ky in 0..k {
                let (y0, y1) = valid_range(od.h, xd.h, ky, s, pad);
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    let (x0, x1) = valid_range(od.w, xd.w, kx, s, pad);
                    for oy in y0..y1 {
                        let row = &xplane[(oy * s + ky - pad) * xd.w..][..xd.w];
                        let orow = &mut plane[oy * od.w..][..od.w];
                        for ox in x0..x1 {
                            orow[ox] += wv * row[ox * s + kx - pad];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(od, out)
}

/// Point-wise (1x1, stride 1, no padding) convolution.
pub fn pwconv<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    if p.kernel() != 1 || p.stride != 1 || p.pad != 0 {
        return Err(Error::Parameter("pwconv requires a 1x1 kernel, stride 1, pad 0".into()));
    }
    conv2d(x, p)
}

/// Backward of [`conv2d`]: accumulates weight and bias gradients into `p`
/// and returns the gradient with respect to `x`.
pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, p: &mut ConvParams<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let xd = x.dims();
    let od = p.output_dims(xd)?;
    if grad.dims() != od {
        return Err(Error::ShapeMismatch { op: "conv2d_backward", left: od, right: grad.dims() });
    }
    let (k, s, pad) = (p.kernel(), p.stride, p.pad);
    let (ic, oc) = (xd.c, od.c);
    let xs = x.data();
    let gs = grad.data();

    let mut db = vec![T::zero(); oc];
    for n in 0..od.n {
        for (o, b) in db.iter_mut().enumerate() {
            for &g in &gs[(n * oc + o) * od.plane()..][..od.plane()] {
                *b += g;
            }
        }
    }

    let mut dw = vec![T::zero(); p.weight.len()];
    parallel::for_each_chunk(&mut dw, ic * k * k, |o, wgrad| {
        for n in 0..od.n {
            let gplane = &gs[(n * oc + o) * od.plane()..][..od.plane()];
            for c in 0..ic {
                let xplane = &xs[(n * ic + c) * xd.plane()..][..xd.plane()];
                for ky in 0..k {
                    let (y0, y1) = valid_range(od.h, xd.h, ky, s, pad);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(od.w, xd.w, kx, s, pad);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let row = &xplane[(oy * s + ky - pad) * xd.w..][..xd.w];
                            let grow = &gplane[oy * od.w..][..od.w];
                            for ox in x0..x1 {
                                acc += grow[ox] * row[ox * s + kx - pad];
                            }
                        }
                        wgrad[(c * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });

    let ws = p.weight.data();
    let mut dx = vec![T::zero(); xd.len()];
    parallel::for_each_chunk(&mut dx, xd.plane(), |i, xgrad| {
        let (n, c) = (i / ic, i % ic);
        for o in 0..oc {
            let gplane = &gs[(n * oc + o) * od.plane()..][..od.plane()];
            let wk = &ws[(o * ic + c) * k * k..][..k * k];
            for ky in 0..k {
                let (y0, y1) = valid_range(od.h, xd.h, ky, s, pad);
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    let (x0, x1) = valid_range(od.w, xd.w, kx, s, pad);
                    for oy in y0..y1 {
                        let row = &mut xgrad[(oy * s + ky - pad) * xd.w..][..xd.w];
                        let grow = &gplane[oy * od.w..][..od.w];
                        for ox in x0..x1 {
                            row[ox * s + kx - pad] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });

    p.weight.accumulate_grad(&dw);
    p.bias.accumulate_grad(&db);
    Tensor::new(xd, dx)
}
