//! Feature-level fusion of the fingerprint and finger-vein maps.
//!
//! Both maps are first cropped to their common size and summed into the
//! initial integration `IFI`. Attention blocks then turn `IFI` into one or
//! two coefficient maps `P` in `(0, 1)`, and the output is the soft selection
//!
//! ```text
//! Z = fp * prod(P) + fv * prod(1 - P)
//! ```
//!
//! The channel block computes `A_c(X) = PW2(ReLU(PW1(GAP(X))))`, an
//! `(n, C, 1, 1)` map; the spatial block computes
//! `A_s(X) = sigmoid(BN(Conv7(ReLU(BN(Conv7(X))))))`, a full `(n, C, H, W)`
//! map. A block's output is `F = A(X) * X` (or `A(X) * X * X` with
//! `literal_double_mul`), and its coefficient map is `P = sigmoid(F)`.
//!
//! | variant           | blocks                                 |
//! |-------------------|----------------------------------------|
//! | `CSAFM`           | channel on IFI, then spatial on `F_c`   |
//! | `CHANNEL_ONLY`    | channel on IFI                         |
//! | `SPATIAL_ONLY`    | spatial on IFI                         |
//! | `PARALLEL_CS`     | channel on IFI, spatial on IFI         |
//! | `SEQ_SC`          | spatial on IFI, then channel on `F_s`   |
//! | `SERIAL_SUM`      | none, `Z = IFI`                        |
//! | `PARALLEL_CONCAT` | none, `Z = concat(fp, fv)` (2C)        |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, gap, gap_backward, pwconv, relu, relu_backward,
    sigmoid, sigmoid_backward, BnCache, BnParams, ConvParams, Mode,
};
use crate::params::{join, Named, NamedMut, Parameters};
use crate::tensor::{ewise_add, ewise_mul, ewise_mul_backward, Dims, Rng, Scalar, Tensor};

pub const DEFAULT_REDUCTION: usize = 16;
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionVariant {
    #[serde(rename = "CSAFM")]
    Csafm,
    #[serde(rename = "CHANNEL_ONLY")]
    ChannelOnly,
    #[serde(rename = "SPATIAL_ONLY")]
    SpatialOnly,
    #[serde(rename = "PARALLEL_CS")]
    ParallelCs,
    #[serde(rename = "SEQ_SC")]
    SeqSc,
    #[serde(rename = "SERIAL_SUM")]
    SerialSum,
    #[serde(rename = "PARALLEL_CONCAT")]
    ParallelConcat,
}

impl FusionVariant {
    /// Ablations first, then the proposed module, then the two baselines.
    pub const ALL: [FusionVariant; 7] = [
        FusionVariant::ChannelOnly,
        FusionVariant::SpatialOnly,
        FusionVariant::ParallelCs,
        FusionVariant::SeqSc,
        FusionVariant::Csafm,
        FusionVariant::SerialSum,
        FusionVariant::ParallelConcat,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FusionVariant::Csafm => "CSAFM",
            FusionVariant::ChannelOnly => "CHANNEL_ONLY",
            FusionVariant::SpatialOnly => "SPATIAL_ONLY",
            FusionVariant::ParallelCs => "PARALLEL_CS",
            FusionVariant::SeqSc => "SEQ_SC",
            FusionVariant::SerialSum => "SERIAL_SUM",
            FusionVariant::ParallelConcat => "PARALLEL_CONCAT",
        }
    }

    fn blocks(self) -> &'static [(Block, Source)] {
        use Block::*;
        use Source::*;
        match self {
            FusionVariant::Csafm => &[(Channel, Ifi), (Spatial, Previous)],
            FusionVariant::ChannelOnly => &[(Channel, Ifi)],
            FusionVariant::SpatialOnly => &[(Spatial, Ifi)],
            FusionVariant::ParallelCs => &[(Channel, Ifi), (Spatial, Ifi)],
            FusionVariant::SeqSc => &[(Spatial, Ifi), (Channel, Previous)],
            FusionVariant::SerialSum | FusionVariant::ParallelConcat => &[],
        }
    }

    pub fn uses_channel(self) -> bool {
        self.blocks().iter().any(|b| b.0 == Block::Channel)
    }

    pub fn uses_spatial(self) -> bool {
        self.blocks().iter().any(|b| b.0 == Block::Spatial)
    }

    pub fn output_channels(self, c: usize) -> usize {
        if self == FusionVariant::ParallelConcat {
            2 * c
        } else {
            c
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion variant tag `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Channel,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Ifi,
    Previous,
}

/// Crop offsets and target size for the common-area standardisation.
fn crop_window(from: Dims, h: usize, w: usize) -> (usize, usize) {
    ((from.h - h) / 2, (from.w - w) / 2)
}

fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let d = x.dims();
    if (d.h, d.w) == (h, w) {
        return x.clone();
    }
    let (oy, ox) = crop_window(d, h, w);
    Tensor::from_fn([d.n, d.c, h, w], |n, c, y, xx| x.at(n, c, y + oy, xx + ox)).expect("crop dims")
}

fn uncrop<T: Scalar>(g: &Tensor<T>, original: Dims) -> Result<Tensor<T>> {
    let d = g.dims();
    if d == original {
        return Ok(g.clone());
    }
    let (oy, ox) = crop_window(original, d.h, d.w);
    let mut out = Tensor::zeros(original)?;
    for n in 0..d.n {
        for c in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    *out.at_mut(n, c, y + oy, x + ox) = g.at(n, c, y, x);
                }
            }
        }
    }
    Ok(out)
}

/// Center-crops both maps to `H = min(H_fp, H_fv)`, `W = min(W_fp, W_fv)`.
pub fn standardize<T: Scalar>(fp: &Tensor<T>, fv: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (a, b) = (fp.dims(), fv.dims());
    if a.n != b.n || a.c != b.c {
        return Err(Error::ShapeMismatch { op: "standardize", left: a, right: b });
    }
    let (h, w) = (a.h.min(b.h), a.w.min(b.w));
    Ok((crop(fp, h, w), crop(fv, h, w)))
}

/// Gradients of [`standardize`] scattered back to the uncropped shapes.
pub fn standardize_backward<T: Scalar>(
    fp_dims: Dims,
    fv_dims: Dims,
    d_fp: &Tensor<T>,
    d_fv: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((uncrop(d_fp, fp_dims)?, uncrop(d_fv, fv_dims)?))
}

/// Initial feature integration: elementwise sum.
pub fn ifi<T: Scalar>(fp: &Tensor<T>, fv: &Tensor<T>) -> Result<Tensor<T>> {
    ewise_add(fp, fv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttnState<T = f32> {
    pub pw1: ConvParams<T>,
    pub pw2: ConvParams<T>,
    pub r1: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelCache<T> {
    input: Dims,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    activated: Tensor<T>,
}

fn reduced(c: usize, r: usize, what: &str) -> Result<usize> {
    if r == 0 || !c.is_multiple_of(r) || c / r == 0 {
        return Err(Error::Config(format!("{what}: {c} channels are not divisible by reduction ratio {r}")));
    }
    Ok(c / r)
}

impl<T: Scalar> ChannelAttnState<T> {
    pub fn zeros(c: usize, r1: usize) -> Result<Self> {
        let mid = reduced(c, r1, "channel attention")?;
        Ok(ChannelAttnState { pw1: ConvParams::zeros(c, mid, 1, 1, 0)?, pw2: ConvParams::zeros(mid, c, 1, 1, 0)?, r1 })
    }

    pub fn new(c: usize, r1: usize, rng: &mut Rng) -> Result<Self> {
        let mid = reduced(c, r1, "channel attention")?;
        Ok(ChannelAttnState { pw1: ConvParams::he(c, mid, 1, 1, 0, rng)?, pw2: ConvParams::he(mid, c, 1, 1, 0, rng)?, r1 })
    }

    pub fn channels(&self) -> usize {
        self.pw1.in_channels()
    }
}

/// `A_c(X) = PWConv2(ReLU(PWConv1(GAP(X))))`, shape `(n, C, 1, 1)`.
pub fn channel_attention_map<T: Scalar>(x: &Tensor<T>, s: &ChannelAttnState<T>) -> Result<(Tensor<T>, ChannelCache<T>)> {
    if x.dims().c != s.channels() {
        return Err(Error::Dimension(format!("channel attention built for {} channels, got {}", s.channels(), x.dims())));
    }
    let pooled = gap(x);
    let hidden = pwconv(&pooled, &s.pw1)?;
    let activated = relu(&hidden);
    let map = pwconv(&activated, &s.pw2)?;
    Ok((map, ChannelCache { input: x.dims(), pooled, hidden, activated }))
}

pub fn channel_attention_backward<T: Scalar>(
    cache: &ChannelCache<T>,
    s: &mut ChannelAttnState<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d_act = conv2d_backward(&cache.activated, &mut s.pw2, grad)?;
    let d_hidden = relu_backward(&cache.hidden, &d_act)?;
    let d_pooled = conv2d_backward(&cache.pooled, &mut s.pw1, &d_hidden)?;
    gap_backward(cache.input, &d_pooled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttnState<T = f32> {
    pub conv1: ConvParams<T>,
    pub bn1: BnParams<T>,
    pub conv2: ConvParams<T>,
    pub bn2: BnParams<T>,
    pub r2: usize,
}

#[derive(Debug, Clone)]
pub struct SpatialCache<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    normed1: Tensor<T>,
    activated: Tensor<T>,
    bn2: BnCache<T>,
    map: Tensor<T>,
}

impl<T: Scalar> SpatialAttnState<T> {
    pub fn zeros(c: usize, r2: usize, bn_momentum: f64, bn_eps: f64) -> Result<Self> {
        let mid = reduced(c, r2, "spatial attention")?;
        let (k, p) = (SPATIAL_KERNEL, SPATIAL_KERNEL / 2);
        Ok(SpatialAttnState {
            conv1: ConvParams::zeros(c, mid, k, 1, p)?,
            bn1: BnParams::new(mid, bn_momentum, bn_eps)?,
            conv2: ConvParams::zeros(mid, c, k, 1, p)?,
            bn2: BnParams::new(c, bn_momentum, bn_eps)?,
            r2,
        })
    }

    pub fn new(c: usize, r2: usize, bn_momentum: f64, bn_eps: f64, rng: &mut Rng) -> Result<Self> {
        let mid = reduced(c, r2, "spatial attention")?;
        let (k, p) = (SPATIAL_KERNEL, SPATIAL_KERNEL / 2);
        Ok(SpatialAttnState {
            conv1: ConvParams::he(c, mid, k, 1, p, rng)?,
            bn1: BnParams::new(mid, bn_momentum, bn_eps)?,
            conv2: ConvParams::he(mid, c, k, 1, p, rng)?,
            bn2: BnParams::new(c, bn_momentum, bn_eps)?,
            r2,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }
}

/// `A_s(X) = sigmoid(BN(Conv2(ReLU(BN(Conv1(X))))))`, same shape as `X`.
pub fn spatial_attention_map<T: Scalar>(
    x: &Tensor<T>,
    s: &mut SpatialAttnState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, SpatialCache<T>)> {
    if x.dims().c != s.channels() {
        return Err(Error::Dimension(format!("spatial attention built for {} channels, got {}", s.channels(), x.dims())));
    }
    let (normed1, bn1) = batchnorm(&conv2d(x, &s.conv1)?, &mut s.bn1, mode)?;
    let activated = relu(&normed1);
    let (normed2, bn2) = batchnorm(&conv2d(&activated, &s.conv2)?, &mut s.bn2, mode)?;
    let map = sigmoid(&normed2);
    Ok((map.clone(), SpatialCache { input: x.clone(), bn1, normed1, activated, bn2, map }))
}

pub fn spatial_attention_backward<T: Scalar>(
    cache: &SpatialCache<T>,
    s: &mut SpatialAttnState<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d_n2 = sigmoid_backward(&cache.map, grad)?;
    let d_c2 = batchnorm_backward(&cache.bn2, &mut s.bn2, &d_n2)?;
    let d_act = conv2d_backward(&cache.activated, &mut s.conv2, &d_c2)?;
    let d_n1 = relu_backward(&cache.normed1, &d_act)?;
    let d_c1 = batchnorm_backward(&cache.bn1, &mut s.bn1, &d_n1)?;
    conv2d_backward(&cache.input, &mut s.conv1, &d_c1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub variant: FusionVariant,
    pub channels: usize,
    pub r1: usize,
    pub r2: usize,
    pub literal_double_mul: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// The attention blocks a variant needs, plus how their outputs combine.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState<T = f32> {
    pub variant: FusionVariant,
    pub channel: Option<ChannelAttnState<T>>,
    pub spatial: Option<SpatialAttnState<T>>,
    /// Multiply the attended input a second time (`A(X) * X * X`).
    pub literal_double_mul: bool,
}

#[derive(Debug, Clone)]
enum MapCache<T> {
    Channel(ChannelCache<T>),
    Spatial(SpatialCache<T>),
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor<T>,
    map: Tensor<T>,
    map_cache: MapCache<T>,
    /// `P = sigmoid(F)`.
    coeff: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    fp: Tensor<T>,
    fv: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    w1: Option<Tensor<T>>,
    w2: Option<Tensor<T>>,
}

impl<T> FusionCache<T> {
    /// Fingerprint and vein weights `prod(P)` and `prod(1 - P)` of the last
    /// forward, when the variant has attention blocks.
    pub fn weights(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.w1.as_ref().zip(self.w2.as_ref())
    }

    /// The coefficient maps `P` in block order.
    pub fn coefficients(&self) -> Vec<&Tensor<T>> {
        self.blocks.iter().map(|b| &b.coeff).collect()
    }
}

fn one_minus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() - v)
}

impl<T: Scalar> FusionState<T> {
    pub fn new(cfg: &FusionConfig, rng: &mut Rng) -> Result<Self> {
        let channel = match cfg.variant.uses_channel() {
            true => Some(ChannelAttnState::new(cfg.channels, cfg.r1, rng)?),
            false => None,
        };
        let spatial = match cfg.variant.uses_spatial() {
            true => Some(SpatialAttnState::new(cfg.channels, cfg.r2, cfg.bn_momentum, cfg.bn_eps, rng)?),
            false => None,
        };
        Ok(FusionState { variant: cfg.variant, channel, spatial, literal_double_mul: cfg.literal_double_mul })
    }

    /// Same structure as [`FusionState::new`] with every weight and bias zero.
    pub fn zeros(cfg: &FusionConfig) -> Result<Self> {
        let channel = match cfg.variant.uses_channel() {
            true => Some(ChannelAttnState::zeros(cfg.channels, cfg.r1)?),
            false => None,
        };
        let spatial = match cfg.variant.uses_spatial() {
            true => Some(SpatialAttnState::zeros(cfg.channels, cfg.r2, cfg.bn_momentum, cfg.bn_eps)?),
            false => None,
        };
        Ok(FusionState { variant: cfg.variant, channel, spatial, literal_double_mul: cfg.literal_double_mul })
    }

    fn attend(&mut self, block: Block, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, MapCache<T>)> {
        let missing = || Error::Config(format!("{} variant has no {block:?} attention state", self.variant));
        match block {
            Block::Channel => {
                let s = self.channel.as_ref().ok_or_else(missing)?;
                let (m, c) = channel_attention_map(x, s)?;
                Ok((m, MapCache::Channel(c)))
            }
            Block::Spatial => {
                let missing = missing();
                let s = self.spatial.as_mut().ok_or(missing)?;
                let (m, c) = spatial_attention_map(x, s, mode)?;
                Ok((m, MapCache::Spatial(c)))
            }
        }
    }

    fn apply(&self, map: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let once = ewise_mul(x, map)?;
        if self.literal_double_mul {
            ewise_mul(&once, x)
        } else {
            Ok(once)
        }
    }

    /// Gradients of [`FusionState::apply`] w.r.t. the input and the map.
    fn apply_backward(&self, map: &Tensor<T>, x: &Tensor<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if !self.literal_double_mul {
            return ewise_mul_backward(x, map, grad);
        }
        let once = ewise_mul(x, map)?;
        let (d_once, d_x_outer) = ewise_mul_backward(&once, x, grad)?;
        let (d_x_inner, d_map) = ewise_mul_backward(x, map, &d_once)?;
        Ok((ewise_add(&d_x_outer, &d_x_inner)?, d_map))
    }

    /// Fuses two standardized feature maps of identical shape.
    pub fn fuse(&mut self, fp: &Tensor<T>, fv: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FusionCache<T>)> {
        if fp.dims() != fv.dims() {
            return Err(Error::ShapeMismatch { op: "fuse", left: fp.dims(), right: fv.dims() });
        }
        let mut cache = FusionCache { fp: fp.clone(), fv: fv.clone(), blocks: Vec::new(), w1: None, w2: None };
        match self.variant {
            FusionVariant::SerialSum => return Ok((ifi(fp, fv)?, cache)),
            FusionVariant::ParallelConcat => return Ok((Tensor::concat_channels(fp, fv)?, cache)),
            _ => {}
        }
        let sum = ifi(fp, fv)?;
        for &(block, source) in self.variant.blocks() {
            let input = match source {
                Source::Ifi => sum.clone(),
                Source::Previous => cache.blocks.last().map(|b| b.output(self)).transpose()?.expect("previous block"),
            };
            let (map, map_cache) = self.attend(block, &input, mode)?;
            let coeff = sigmoid(&self.apply(&map, &input)?);
            cache.blocks.push(BlockCache { input, map, map_cache, coeff });
        }
        let mut w1 = cache.blocks[0].coeff.clone();
        let mut w2 = one_minus(&w1);
        for b in &cache.blocks[1..] {
            w1 = ewise_mul(&w1, &b.coeff)?;
            w2 = ewise_mul(&w2, &one_minus(&b.coeff))?;
        }
        let z = ewise_add(&ewise_mul(fp, &w1)?, &ewise_mul(fv, &w2)?)?;
        if mode == Mode::Train && !z.is_finite() {
            return Err(Error::NonFinite { layer: format!("fusion.{}", self.variant) });
        }
        cache.w1 = Some(w1);
        cache.w2 = Some(w2);
        Ok((z, cache))
    }

    /// Returns the gradients with respect to the standardized `fp` and `fv`.
    pub fn fuse_backward(&mut self, cache: &FusionCache<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        match self.variant {
            FusionVariant::SerialSum => return Ok((grad.clone(), grad.clone())),
            FusionVariant::ParallelConcat => return grad.split_channels(cache.fp.dims().c),
            _ => {}
        }
        let (w1, w2) = cache.weights().ok_or_else(|| Error::Config("fusion cache has no weights".into()))?;
        let mut d_fp = ewise_mul(grad, w1)?;
        let mut d_fv = ewise_mul(grad, w2)?;
        let d_w1 = ewise_mul(grad, &cache.fp)?;
        let d_w2 = ewise_mul(grad, &cache.fv)?;

        // dZ/dP_k: product rule over the other coefficient maps.
        let count = cache.blocks.len();
        let mut d_out: Vec<Tensor<T>> = Vec::with_capacity(count);
        for k in 0..count {
            let mut a = d_w1.clone();
            let mut b = d_w2.clone();
            for (j, other) in cache.blocks.iter().enumerate() {
                if j != k {
                    a = ewise_mul(&a, &other.coeff)?;
                    b = ewise_mul(&b, &one_minus(&other.coeff))?;
                }
            }
            let d_coeff = a.zip_map(&b, "fuse_backward", |x, y| x - y)?;
            d_out.push(sigmoid_backward(&cache.blocks[k].coeff, &d_coeff)?);
        }

        let mut d_sum = Tensor::zeros(cache.fp.dims())?;
        let blocks = self.variant.blocks();
        for k in (0..count).rev() {
            let bc = &cache.blocks[k];
            let (d_in_direct, d_map) = self.apply_backward(&bc.map, &bc.input, &d_out[k])?;
            let d_in_map = match (&bc.map_cache, blocks[k].0) {
                (MapCache::Channel(c), Block::Channel) => {
                    channel_attention_backward(c, self.channel.as_mut().expect("channel state"), &d_map)?
                }
                (MapCache::Spatial(c), Block::Spatial) => {
                    spatial_attention_backward(c, self.spatial.as_mut().expect("spatial state"), &d_map)?
                }
                _ => unreachable!("cache does not match block kind"),
            };
            let d_in = ewise_add(&d_in_direct, &d_in_map)?;
            match blocks[k].1 {
                Source::Ifi => d_sum = ewise_add(&d_sum, &d_in)?,
                Source::Previous => d_out[k - 1] = ewise_add(&d_out[k - 1], &d_in)?,
            }
        }
        d_fp = ewise_add(&d_fp, &d_sum)?;
        d_fv = ewise_add(&d_fv, &d_sum)?;
        Ok((d_fp, d_fv))
    }
}

impl<T: Scalar> BlockCache<T> {
    fn output(&self, state: &FusionState<T>) -> Result<Tensor<T>> {
        state.apply(&self.map, &self.input)
    }
}

/// CSAFM on standardized inputs with explicit attention states.
pub fn csafm_fuse<T: Scalar>(
    fp: &Tensor<T>,
    fv: &Tensor<T>,
    ca: &ChannelAttnState<T>,
    sa: &SpatialAttnState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let mut state = FusionState {
        variant: FusionVariant::Csafm,
        channel: Some(ca.clone()),
        spatial: Some(sa.clone()),
        literal_double_mul: false,
    };
    Ok(state.fuse(fp, fv, mode)?.0)
}

/// Any variant on standardized inputs. `state.variant` must equal `variant`.
pub fn ablation_fuse<T: Scalar>(
    fp: &Tensor<T>,
    fv: &Tensor<T>,
    variant: FusionVariant,
    state: &mut FusionState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    if state.variant != variant {
        return Err(Error::Config(format!("fusion state is {}, requested {variant}", state.variant)));
    }
    Ok(state.fuse(fp, fv, mode)?.0)
}

impl<T: Scalar> Parameters<T> for ChannelAttnState<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.pw1.collect(&join(prefix, "pw1"), out);
        self.pw2.collect(&join(prefix, "pw2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.pw1.collect_mut(&join(prefix, "pw1"), out);
        self.pw2.collect_mut(&join(prefix, "pw2"), out);
    }
}

impl<T: Scalar> Parameters<T> for SpatialAttnState<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.conv1.collect(&join(prefix, "conv1"), out);
        self.bn1.collect(&join(prefix, "bn1"), out);
        self.conv2.collect(&join(prefix, "conv2"), out);
        self.bn2.collect(&join(prefix, "bn2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.conv1.collect_mut(&join(prefix, "conv1"), out);
        self.bn1.collect_mut(&join(prefix, "bn1"), out);
        self.conv2.collect_mut(&join(prefix, "conv2"), out);
        self.bn2.collect_mut(&join(prefix, "bn2"), out);
    }
}

impl<T: Scalar> Parameters<T> for FusionState<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        if let Some(c) = &self.channel {
            c.collect(&join(prefix, "channel"), out);
        }
        if let Some(s) = &self.spatial {
            s.collect(&join(prefix, "spatial"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        if let Some(c) = &mut self.channel {
            c.collect_mut(&join(prefix, "channel"), out);
        }
        if let Some(s) = &mut self.spatial {
            s.collect_mut(&join(prefix, "spatial"), out);
        }
    }
}
