use crate::error::{Error, Result};
use crate::tensor::{Distribution, Rng, Scalar, Tensor};

/// Dense layer: weight `(d_out, d_in, 1, 1)`, bias `(1, d_out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Result<Self> {
        Ok(FcParams { weight: Tensor::zeros([d_out, d_in, 1, 1])?, bias: Tensor::zeros([1, d_out, 1, 1])? })
    }

    pub fn he(d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(d_in, d_out)?;
        let std = (2.0 / d_in as f64).sqrt();
        p.weight.fill_random(Distribution::Normal { mean: 0.0, std }, rng)?;
        Ok(p)
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims().c
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims().n
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let d = x.dims();
        if d.h != 1 || d.w != 1 || d.c != self.d_in() {
            return Err(Error::Dimension(format!(
                "fully connected layer expects (n, {}, 1, 1), got {d}",
                self.d_in()
            )));
        }
        Ok(())
    }
}

pub fn fully_connected<T: Scalar>(x: &Tensor<T>, p: &FcParams<T>) -> Result<Tensor<T>> {
    p.check_input(x)?;
    let (n, din, dout) = (x.dims().n, p.d_in(), p.d_out());
    let w = p.weight.data();
    let mut out = Vec::with_capacity(n * dout);
    for row in x.data().chunks(din) {
        for o in 0..dout {
            let wr = &w[o * din..][..din];
            out.push(wr.iter().zip(row).fold(p.bias.data()[o], |a, (&w, &x)| a + w * x));
        }
    }
    Tensor::new([n, dout, 1, 1], out)
}

pub fn fully_connected_backward<T: Scalar>(x: &Tensor<T>, p: &mut FcParams<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    p.check_input(x)?;
    let (n, din, dout) = (x.dims().n, p.d_in(), p.d_out());
    if grad.dims().as_array() != [n, dout, 1, 1] {
        return Err(Error::Dimension(format!("fully connected grad {} for {n} x {dout} output", grad.dims())));
    }
    let mut dw = vec![T::zero(); dout * din];
    let mut db = vec![T::zero(); dout];
    let mut dx = vec![T::zero(); n * din];
    let w = p.weight.data();
    for b in 0..n {
        let xr = &x.data()[b * din..][..din];
        let gr = &grad.data()[b * dout..][..dout];
        let dxr = &mut dx[b * din..][..din];
        for o in 0..dout {
            let g = gr[o];
            db[o] += g;
            for i in 0..din {
                dw[o * din + i] += g * xr[i];
                dxr[i] += g * w[o * din + i];
            }
        }
    }
    p.weight.accumulate_grad(&dw);
    p.bias.accumulate_grad(&db);
    Tensor::new(x.dims(), dx)
}

/// Row-wise softmax and mean cross-entropy. Returns the loss and the
/// probabilities (needed by the backward).
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let d = logits.dims();
    if d.h != 1 || d.w != 1 || d.n != labels.len() {
        return Err(Error::Dimension(format!("logits {d} for {} labels", labels.len())));
    }
    let k = d.c;
    let mut probs = Vec::with_capacity(d.len());
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum = exps.iter().fold(T::zero(), |a, &v| a + v);
        loss += (sum.ln() - (row[label] - max)).as_f64();
        probs.extend(exps.iter().map(|&e| e / sum));
    }
    Ok((T::of(loss / d.n as f64), Tensor::new(d, probs)?))
}

/// `(probs - onehot(labels)) / n`.
pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let d = probs.dims();
    let inv_n = T::of(1.0 / d.n as f64);
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_mut(d.c).zip(labels) {
        if label >= d.c {
            return Err(Error::LabelOutOfRange { label, classes: d.c });
        }
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(g)
}
