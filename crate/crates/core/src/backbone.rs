//! The unimodal CNN: five `conv -> BN -> ReLU -> max-pool` stages mapping a
//! one-channel image to a 512-channel feature map, plus an optional
//! `flatten -> FC` classifier head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    self, batchnorm, batchnorm_backward, conv2d, conv2d_backward, flatten, fully_connected,
    fully_connected_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, unflatten, BnCache, BnParams,
    ConvParams, FcParams, Mode, PoolCache,
};
use crate::params::{join, Named, NamedMut, Parameters};
use crate::tensor::{Dims, Rng, Scalar, Tensor};

/// Output channels of the five stages at full width.
pub const STAGE_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
pub const FEATURE_CHANNELS: usize = 512;

/// Kernel, stride and padding of the stage convolutions. The 7x7 stem uses
/// pad 3 and the 3x3 convs pad 1.
pub const STAGE_CONV: [(usize, usize, usize); 5] = [(7, 2, 3), (3, 1, 1), (3, 1, 1), (3, 1, 1), (3, 1, 1)];

/// Every stage ends in a 3x3, stride 2, pad 1 max-pool.
pub const POOL: (usize, usize, usize) = (3, 2, 1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Scales every stage width; `1/16` turns 64..512 into 4..32.
    pub width_multiplier: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            width_multiplier: 1.0,
            bn_momentum: ops::norm::DEFAULT_MOMENTUM,
            bn_eps: ops::norm::DEFAULT_EPS,
        }
    }
}

impl BackboneConfig {
    pub fn stage_channels(&self) -> Result<[usize; 5]> {
        let mut out = [0; 5];
        for (o, &base) in out.iter_mut().zip(&STAGE_CHANNELS) {
            let scaled = base as f64 * self.width_multiplier;
            let rounded = scaled.round();
            if !(rounded >= 1.0) || (scaled - rounded).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "width multiplier {} gives a non-integral or empty stage width ({base} -> {scaled})",
                    self.width_multiplier
                )));
            }
            *o = rounded as usize;
        }
        Ok(out)
    }

    pub fn feature_channels(&self) -> Result<usize> {
        Ok(self.stage_channels()?[4])
    }
}

/// Spatial size of the feature map for an `h x w` input, or a dimension
/// error naming the first stage that cannot be applied.
pub fn feature_size(h: usize, w: usize) -> Result<(usize, usize)> {
    let mut d = Dims::new(1, 1, h, w);
    for (i, &(k, s, p)) in STAGE_CONV.iter().enumerate() {
        let stage = |e: Error| Error::Dimension(format!("stage {} ({h}x{w} input): {e}", i + 1));
        d = Dims::new(1, 1, ops::output_len(d.h, k, s, p).map_err(stage)?, ops::output_len(d.w, k, s, p).map_err(stage)?);
        d = ops::pool::pool_output_dims(d, POOL.0, POOL.1, POOL.2).map_err(stage)?;
    }
    Ok((d.h, d.w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T> {
    pub conv: ConvParams<T>,
    pub bn: BnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneState<T = f32> {
    pub stages: Vec<Stage<T>>,
    pub head: Option<FcParams<T>>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    normed: Tensor<T>,
    pool: PoolCache,
}

#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    stages: Vec<StageCache<T>>,
    features: Dims,
    flat: Option<Tensor<T>>,
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, layer: impl FnOnce() -> String) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}

impl<T: Scalar> BackboneState<T> {
    /// He-initialised backbone for one-channel input, without head.
    pub fn new(cfg: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        let widths = cfg.stage_channels()?;
        let mut in_c = 1;
        let mut stages = Vec::with_capacity(5);
        for (&out_c, &(k, s, p)) in widths.iter().zip(&STAGE_CONV) {
            stages.push(Stage {
                conv: ConvParams::he(in_c, out_c, k, s, p, rng)?,
                bn: BnParams::new(out_c, cfg.bn_momentum, cfg.bn_eps)?,
            });
            in_c = out_c;
        }
        Ok(BackboneState { stages, head: None })
    }

    /// Adds the `flatten -> FC(classes)` head sized for `h x w` inputs.
    pub fn with_head(mut self, h: usize, w: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let (fh, fw) = feature_size(h, w)?;
        self.head = Some(FcParams::he(self.feature_channels() * fh * fw, classes, rng)?);
        Ok(self)
    }

    pub fn feature_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.conv.out_channels())
    }

    pub fn features(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BackboneCache<T>)> {
        if x.dims().c != 1 {
            return Err(Error::Dimension(format!("backbone expects grayscale (n, 1, h, w), got {}", x.dims())));
        }
        let (fh, fw) = feature_size(x.dims().h, x.dims().w)?;
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let conv = conv2d(&cur, &stage.conv)?;
            let (normed, bn) = batchnorm(&conv, &mut stage.bn, mode)?;
            // checked before relu and pooling, both of which drop NaN
            if mode == Mode::Train {
                ensure_finite(&normed, || format!("stage{}", i + 1))?;
            }
            let (pooled, pool) = maxpool2d(&relu(&normed), POOL.0, POOL.1, POOL.2)?;
            caches.push(StageCache { input: cur, bn, normed, pool });
            cur = pooled;
        }
        debug_assert_eq!((cur.dims().h, cur.dims().w), (fh, fw));
        let features = cur.dims();
        Ok((cur, BackboneCache { stages: caches, features, flat: None }))
    }

    pub fn features_backward(&mut self, cache: &BackboneCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (stage, c) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let d_relu = maxpool2d_backward(&c.pool, &g)?;
            let d_norm = relu_backward(&c.normed, &d_relu)?;
            let d_conv = batchnorm_backward(&c.bn, &mut stage.bn, &d_norm)?;
            g = conv2d_backward(&c.input, &mut stage.conv, &d_conv)?;
        }
        Ok(g)
    }

    /// Features followed by the classifier head.
    pub fn classify(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BackboneCache<T>)> {
        if self.head.is_none() {
            return Err(Error::Config("backbone has no classifier head".into()));
        }
        let (feat, mut cache) = self.features(x, mode)?;
        let flat = flatten(&feat);
        let head = self.head.as_ref().expect("checked above");
        if flat.dims().c != head.d_in() {
            return Err(Error::Dimension(format!(
                "head was built for {} features, input {} gives {}",
                head.d_in(),
                x.dims(),
                flat.dims().c
            )));
        }
        let logits = fully_connected(&flat, head)?;
        cache.flat = Some(flat);
        Ok((logits, cache))
    }

    pub fn classify_backward(&mut self, cache: &BackboneCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (head, flat) = match (self.head.as_mut(), cache.flat.as_ref()) {
            (Some(h), Some(f)) => (h, f),
            _ => return Err(Error::Config("classify_backward without a classify forward".into())),
        };
        let d_flat = fully_connected_backward(flat, head, grad)?;
        let d_feat = unflatten(&d_flat, cache.features)?;
        self.features_backward(cache, &d_feat)
    }
}

impl<T: Scalar> Parameters<T> for BackboneState<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.conv.collect(&join(prefix, &format!("conv{}", i + 1)), out);
            s.bn.collect(&join(prefix, &format!("bn{}", i + 1)), out);
        }
        if let Some(h) = &self.head {
            h.collect(&join(prefix, "fc"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.conv.collect_mut(&join(prefix, &format!("conv{}", i + 1)), out);
            s.bn.collect_mut(&join(prefix, &format!("bn{}", i + 1)), out);
        }
        if let Some(h) = &mut self.head {
            h.collect_mut(&join(prefix, "fc"), out);
        }
    }
}
