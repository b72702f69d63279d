//! Slow, obviously-correct reference implementations. They share no code
//! with the production kernels and exist only to check them (unit tests, the
//! acceptance suite and `csafm verify`).

use crate::tensor::{Scalar, Tensor};

/// Direct six-deep loop convolution with explicit signed index arithmetic.
pub fn conv2d_direct<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let [n, ic, h, w] = x.dims().as_array();
    let [oc, _, kh, kw] = weight.dims().as_array();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, oc, oh, ow]).unwrap();
    for b in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0f64;
                    for c in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as i64 - pad as i64;
                                let ix = (xo * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                acc += x.at(b, c, iy as usize, ix as usize).as_f64()
                                    * weight.at(o, c, ky, kx).as_f64();
                            }
                        }
                    }
                    *out.at_mut(b, o, y, xo) = T::of(acc + bias.at(0, o, 0, 0).as_f64());
                }
            }
        }
    }
    out
}

/// Brute-force window scan. Returns the pooled tensor and, per output, the
/// `(row, col)` of the selected input (first maximum in row-major order).
pub fn maxpool_scan<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> (Tensor<T>, Vec<(usize, usize)>) {
    let [n, c, h, w] = x.dims().as_array();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros([n, c, oh, ow]).unwrap();
    let mut arg = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best: Option<(T, usize, usize)> = None;
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = (y * stride + dy) as i64 - pad as i64;
                            let ix = (xo * stride + dx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            let v = x.at(b, ch, iy as usize, ix as usize);
                            if best.is_none_or(|(bv, _, _)| v > bv) {
                                best = Some((v, iy as usize, ix as usize));
                            }
                        }
                    }
                    let (v, by, bx) = best.expect("window entirely in padding");
                    *out.at_mut(b, ch, y, xo) = v;
                    arg.push((by, bx));
                }
            }
        }
    }
    (out, arg)
}

/// Spatial size after `floor((len + 2 pad - k) / stride) + 1`.
pub fn window_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Feature-map size after the five conv/pool stages of the unimodal
/// network: 7x7/2 pad 3 conv, then 3x3/1 pad 1 convs, every stage followed
/// by a 3x3/2 pad 1 max-pool.
pub fn backbone_spatial(h: usize, w: usize) -> (usize, usize) {
    let mut dims = (h, w);
    for stage in 0..5 {
        let (k, s, p) = if stage == 0 { (7, 2, 3) } else { (3, 1, 1) };
        dims = (window_len(dims.0, k, s, p), window_len(dims.1, k, s, p));
        dims = (window_len(dims.0, 3, 2, 1), window_len(dims.1, 3, 2, 1));
    }
    dims
}
