use crate::error::{Error, Result};
use crate::ops::conv::output_len;
use crate::parallel;
use crate::tensor::{Dims, Scalar, Tensor};

/// Where each pooled value came from: plane-local flat index into the input.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input: Dims,
    output: Dims,
    argmax: Vec<usize>,
}

impl PoolCache {
    /// Plane-local flat input index of each output, in output order.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn pool_output_dims(input: Dims, k: usize, stride: usize, pad: usize) -> Result<Dims> {
    let h = output_len(input.h, k, stride, pad)?;
    let w = output_len(input.w, k, stride, pad)?;
    for (axis, len, out) in [("height", input.h, h), ("width", input.w, w)] {
        // first window ends before the data, or last window starts after it
        if k <= pad || (out - 1) * stride >= len + pad {
            return Err(Error::Dimension(format!(
                "max-pool window {k} (stride {stride}, pad {pad}) lies entirely in padding along {axis} of {input}"
            )));
        }
    }
    Ok(Dims::new(input.n, input.c, h, w))
}

/// Max pooling with `-inf` padding. Ties go to the first element in
/// row-major scan order of the window.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<(Tensor<T>, PoolCache)> {
    let xd = x.dims();
    let od = pool_output_dims(xd, k, stride, pad)?;
    let xs = x.data();
    let mut out = vec![T::zero(); od.len()];
    let mut argmax = vec![0usize; od.len()];

    let win = |oy: usize, len: usize| {
        let start = (oy * stride) as isize - pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + k as isize).max(0) as usize).min(len);
        (lo, hi)
    };

    parallel::for_each_chunk(&mut argmax, od.plane(), |i, arg| {
        let xplane = &xs[i * xd.plane()..][..xd.plane()];
        for oy in 0..od.h {
            let (y0, y1) = win(oy, xd.h);
            for ox in 0..od.w {
                let (x0, x1) = win(ox, xd.w);
                let mut best = T::neg_infinity();
                let mut best_at = y0 * xd.w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let v = xplane[iy * xd.w + ix];
                        if v > best {
                            best = v;
                            best_at = iy * xd.w + ix;
                        }
                    }
                }
                arg[oy * od.w + ox] = best_at;
            }
        }
    });
    for (i, (o, &a)) in out.iter_mut().zip(&argmax).enumerate() {
        *o = xs[(i / od.plane()) * xd.plane() + a];
    }
    Ok((Tensor::new(od, out)?, PoolCache { input: xd, output: od, argmax }))
}

pub fn maxpool2d_backward<T: Scalar>(cache: &PoolCache, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if grad.dims() != cache.output {
        return Err(Error::ShapeMismatch { op: "maxpool2d_backward", left: cache.output, right: grad.dims() });
    }
    let (xd, od) = (cache.input, cache.output);
    let gs = grad.data();
    let mut dx = vec![T::zero(); xd.len()];
    parallel::for_each_chunk(&mut dx, xd.plane(), |i, plane| {
        let g = &gs[i * od.plane()..][..od.plane()];
        let arg = &cache.argmax[i * od.plane()..][..od.plane()];
        for (&gv, &a) in g.iter().zip(arg) {
            plane[a] += gv;
        }
    });
    Tensor::new(xd, dx)
}
