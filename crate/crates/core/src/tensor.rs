//! Dense rank-4 tensors in `n -> c -> h -> w` row-major order, elementwise
//! arithmetic, and the seeded generator used for every random draw.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`; gradient checks
/// instantiate the same code with `f64`.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Dimension(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(d: [usize; 4]) -> Self {
        Dims::new(d[0], d[1], d[2], d[3])
    }
}

/// Values plus an optional gradient buffer. Equality compares dims and
/// values only.
#[derive(Clone)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data == other.data
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &preview)
            .field("grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "data length {} does not match dims {dims} ({} elements)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Tensor { dims, data, grad: None })
    }

    pub fn full(dims: impl Into<Dims>, value: T) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        Ok(Tensor { dims, data: vec![value; dims.len()], grad: None })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Ok(Tensor { dims, data, grad: None })
    }

    /// Tensor of the given dims filled from `dist`.
    pub fn random(dims: impl Into<Dims>, dist: Distribution, rng: &mut Rng) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.fill_random(dist, rng)?;
        Ok(t)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.dims.index(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.dims.index(n, c, h, w);
        &mut self.data[i]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += *d;
        }
    }

    pub fn reshape(mut self, dims: impl Into<Dims>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if dims.len() != self.dims.len() {
            return Err(Error::Dimension(format!("cannot reshape {} into {dims}", self.dims)));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch { op, left: self.dims, right: other.dims });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { dims: self.dims, data, grad: None })
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    /// Overwrites the values with draws from `dist`, in storage order.
    pub fn fill_random(&mut self, dist: Distribution, rng: &mut Rng) -> Result<()> {
        dist.validate()?;
        for v in self.data.iter_mut() {
            *v = T::of(dist.sample(rng));
        }
        Ok(())
    }

    /// Single sample `n` as a `1 x c x h x w` tensor.
    pub fn sample(&self, n: usize) -> Self {
        let plane = self.dims.c * self.dims.plane();
        let data = self.data[n * plane..(n + 1) * plane].to_vec();
        Tensor { dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w), data, grad: None }
    }

    /// Stacks `1 x c x h x w` (or larger) tensors along the batch axis.
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty list".into()))?
            .dims;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            let d = p.dims;
            if (d.c, d.h, d.w) != (first.c, first.h, first.w) {
                return Err(Error::ShapeMismatch { op: "stack", left: first, right: d });
            }
            n += d.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(Dims::new(n, first.c, first.h, first.w), data)
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (da, db) = (a.dims, b.dims);
        if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
            return Err(Error::ShapeMismatch { op: "concat_channels", left: da, right: db });
        }
        let (pa, pb) = (da.c * da.plane(), db.c * db.plane());
        let mut data = Vec::with_capacity(da.len() + db.len());
        for n in 0..da.n {
            data.extend_from_slice(&a.data[n * pa..(n + 1) * pa]);
            data.extend_from_slice(&b.data[n * pb..(n + 1) * pb]);
        }
        Tensor::new(Dims::new(da.n, da.c + db.c, da.h, da.w), data)
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> Result<(Self, Self)> {
        let d = self.dims;
        if c_first == 0 || c_first >= d.c {
            return Err(Error::Dimension(format!("cannot split {d} after channel {c_first}")));
        }
        let (pa, pb) = (c_first * d.plane(), (d.c - c_first) * d.plane());
        let mut a = Vec::with_capacity(d.n * pa);
        let mut b = Vec::with_capacity(d.n * pb);
        for chunk in self.data.chunks(pa + pb) {
            a.extend_from_slice(&chunk[..pa]);
            b.extend_from_slice(&chunk[pa..]);
        }
        Ok((
            Tensor::new(Dims::new(d.n, c_first, d.h, d.w), a)?,
            Tensor::new(Dims::new(d.n, d.c - c_first, d.h, d.w), b)?,
        ))
    }
}

impl Tensor<f32> {
    /// Appends the blob encoding: four little-endian `u32` dims, then the
    /// values as little-endian `f32`.
    pub fn write_blob(&self, out: &mut Vec<u8>) {
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one blob from the front of `bytes`; returns it together with
    /// the number of bytes consumed.
    pub fn read_blob(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 16 {
            return Err(Error::Truncated(format!("tensor header needs 16 bytes, {} left", bytes.len())));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        }
        let dims = Dims::from(dims);
        let end = 16 + dims.len() * 4;
        if bytes.len() < end {
            return Err(Error::Truncated(format!(
                "tensor {dims} needs {} payload bytes, {} left",
                dims.len() * 4,
                bytes.len() - 16
            )));
        }
        let data = bytes[16..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor::new(dims, data)?, end))
    }
}

/// Elementwise sum. Backward passes the upstream gradient to both operands
/// unchanged.
pub fn ewise_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "ewise_add", |x, y| x + y)
}

pub fn ewise_sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "ewise_sub", |x, y| x - y)
}

fn is_channel_map(a: Dims, b: Dims) -> bool {
    b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1
}

/// Elementwise product. `b` may also be an `(n, c, 1, 1)` channel map, in
/// which case plane `(n, c)` of `a` is scaled by `b[n, c]`.
pub fn ewise_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (da, db) = (a.dims, b.dims);
    if da == db {
        return a.zip_map(b, "ewise_mul", |x, y| x * y);
    }
    if !is_channel_map(da, db) {
        return Err(Error::ShapeMismatch { op: "ewise_mul", left: da, right: db });
    }
    let plane = da.plane();
    let data = a
        .data
        .chunks(plane)
        .zip(&b.data)
        .flat_map(|(p, &s)| p.iter().map(move |&v| v * s))
        .collect();
    Tensor::new(da, data)
}

/// Gradients of [`ewise_mul`] with respect to both operands. In the channel
/// map case `db` is summed over each plane.
pub fn ewise_mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if grad.dims != a.dims {
        return Err(Error::ShapeMismatch { op: "ewise_mul_backward", left: a.dims, right: grad.dims });
    }
    let da = ewise_mul(grad, b)?;
    if a.dims == b.dims {
        return Ok((da, ewise_mul(grad, a)?));
    }
    let plane = a.dims.plane();
    let db = grad
        .data
        .chunks(plane)
        .zip(a.data.chunks(plane))
        .map(|(g, x)| g.iter().zip(x).fold(T::zero(), |acc, (&g, &x)| acc + g * x))
        .collect();
    Ok((da, Tensor::new(b.dims, db)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { lo, hi } if !(lo <= hi) => {
                Err(Error::Parameter(format!("uniform bounds lo={lo} > hi={hi}")))
            }
            Distribution::Normal { std, .. } if !(std >= 0.0) => {
                Err(Error::Parameter(format!("normal sigma {std} < 0")))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            Distribution::Normal { mean, std } => mean + std * rng.normal(),
        }
    }
}

/// Deterministic generator: ChaCha8 (`rand_chacha`) keyed by
/// `seed_from_u64`. Uniform draws are `(next_u64 >> 11) * 2^-53` in `[0, 1)`;
/// normal draws use the Box-Muller transform on two uniforms, consuming both
/// outputs in order (cosine branch first).
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Independent generator on ChaCha stream `stream` of the same key.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..bound` by rejection sampling.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], data: &[f32]) -> Tensor<f32> {
        Tensor::new(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn add_small() {
        let out = ewise_add(&t([1, 1, 1, 2], &[1.0, 2.0]), &t([1, 1, 1, 2], &[3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_zero_identity_and_loop_oracle() {
        let mut rng = Rng::new(3);
        let d = [1, 4, 5, 7];
        let a = Tensor::<f32>::random(d, Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let b = Tensor::<f32>::random(d, Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let zero = Tensor::zeros(d).unwrap();
        assert_eq!(ewise_add(&zero, &b).unwrap(), b);
        let out = ewise_add(&a, &b).unwrap();
        for i in 0..out.len() {
            assert_eq!(out.data()[i], a.data()[i] + b.data()[i]);
        }
        assert_eq!(out, ewise_add(&b, &a).unwrap());
    }

    #[test]
    fn add_shape_mismatch_names_both() {
        let err = ewise_add(&t([1, 1, 1, 2], &[1.0, 2.0]), &t([1, 1, 2, 1], &[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x1x1x2") && msg.contains("1x1x2x1"), "{msg}");
    }

    #[test]
    fn mul_small_and_identity() {
        let out = ewise_mul(&t([1, 1, 1, 2], &[2.0, 3.0]), &t([1, 1, 1, 2], &[4.0, 5.0])).unwrap();
        assert_eq!(out.data(), &[8.0, 15.0]);
        let a = t([1, 1, 1, 2], &[2.5, -3.0]);
        assert_eq!(ewise_mul(&a, &Tensor::full([1, 1, 1, 2], 1.0).unwrap()).unwrap(), a);
    }

    #[test]
    fn mul_channel_broadcast_matches_loop() {
        let mut rng = Rng::new(9);
        let a = Tensor::<f32>::random([1, 3, 4, 4], Distribution::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap();
        let b = t([1, 3, 1, 1], &[2.0, 0.0, -1.0]);
        let out = ewise_mul(&a, &b).unwrap();
        for c in 0..3 {
            for h in 0..4 {
                for w in 0..4 {
                    assert_eq!(out.at(0, c, h, w), a.at(0, c, h, w) * b.at(0, c, 0, 0));
                }
            }
        }
        assert!(ewise_mul(&a, &t([1, 1, 1, 1], &[1.0])).is_err());
    }

    #[test]
    fn rng_is_deterministic() {
        let d = [2, 3, 4, 5];
        let dist = Distribution::Normal { mean: 0.0, std: 1.0 };
        let a = Tensor::<f32>::random(d, dist, &mut Rng::new(42)).unwrap();
        let b = Tensor::<f32>::random(d, dist, &mut Rng::new(42)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rng_moments() {
        let mut rng = Rng::new(1);
        let u = Tensor::<f64>::random([1, 1, 1, 100_000], Distribution::Uniform { lo: 0.0, hi: 1.0 }, &mut rng).unwrap();
        let mean = u.sum() / u.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");

        let z = Tensor::<f64>::random([1, 1, 1, 100_000], Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let m = z.sum() / z.len() as f64;
        let var = z.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (z.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn rng_rejects_bad_parameters() {
        let mut rng = Rng::new(0);
        let mut x = Tensor::<f32>::zeros([1, 1, 1, 4]).unwrap();
        assert!(matches!(
            x.fill_random(Distribution::Normal { mean: 0.0, std: -1.0 }, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            x.fill_random(Distribution::Uniform { lo: 1.0, hi: 0.0 }, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn construction_checks() {
        assert!(Tensor::<f32>::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::zeros([1, 0, 2, 2]).is_err());
    }

    #[test]
    fn concat_split_inverse() {
        let mut rng = Rng::new(5);
        let a = Tensor::<f32>::random([2, 3, 2, 2], Distribution::Uniform { lo: 0.0, hi: 1.0 }, &mut rng).unwrap();
        let b = Tensor::<f32>::random([2, 2, 2, 2], Distribution::Uniform { lo: 0.0, hi: 1.0 }, &mut rng).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), Dims::new(2, 5, 2, 2));
        let (a2, b2) = c.split_channels(3).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn blob_truncation() {
        let x = Tensor::<f32>::full([1, 2, 2, 2], 1.5).unwrap();
        let mut buf = Vec::new();
        x.write_blob(&mut buf);
        assert_eq!(buf.len(), 16 + 8 * 4);
        assert!(matches!(Tensor::read_blob(&buf[..20]), Err(Error::Truncated(_))));
        assert_eq!(Tensor::read_blob(&buf).unwrap(), (x, buf.len()));
    }

    proptest::proptest! {
        #[test]
        fn blob_round_trip_is_bit_exact(
            dims in (1usize..4, 1usize..4, 1usize..5, 1usize..5),
            bits in proptest::collection::vec(proptest::num::u32::ANY, 256),
        ) {
            let d = Dims::new(dims.0, dims.1, dims.2, dims.3);
            let data: Vec<f32> = bits.iter().cycle().take(d.len()).map(|&b| f32::from_bits(b)).collect();
            let x = Tensor::new(d, data).unwrap();
            let mut buf = Vec::new();
            x.write_blob(&mut buf);
            let (y, used) = Tensor::read_blob(&buf).unwrap();
            proptest::prop_assert_eq!(used, buf.len());
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            proptest::prop_assert_eq!(xb, yb);
        }
    }
}
