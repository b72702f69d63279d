//! The two-branch network: fingerprint and vein backbones, standardization,
//! a fusion variant and a `flatten -> FC` classifier head. Also the unimodal
//! single-branch classifier and the weight file format.
//!
//! Weight file layout (all integers little-endian):
//!
//! ```text
//! "CSAF" | u32 version (=1) | u32 header length | UTF-8 JSON header | blobs
//! ```
//!
//! The JSON header is `{"model": <ModelConfig>, "entries": [{name, dims,
//! kind}, ...]}` and each blob is four `u32` dims followed by the `f32`
//! values, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneCache, BackboneConfig, BackboneState};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionCache, FusionConfig, FusionState, FusionVariant};
use crate::ops::{flatten, fully_connected, fully_connected_backward, unflatten, FcParams, Mode};
use crate::parallel;
use crate::params::{join, Named, NamedMut, Parameters, TensorKind};
use crate::tensor::{Dims, Rng, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CSAF";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the network structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: FusionVariant,
    pub classes: usize,
    /// Fingerprint image `[h, w]`.
    pub fp_size: [usize; 2],
    /// Vein image `[h, w]`.
    pub fv_size: [usize; 2],
    pub width_multiplier: f64,
    pub r1: usize,
    pub r2: usize,
    pub literal_double_mul: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig { width_multiplier: self.width_multiplier, bn_momentum: self.bn_momentum, bn_eps: self.bn_eps }
    }

    /// Shape `(c, h, w)` of the fused map that feeds the head.
    pub fn fused_shape(&self) -> Result<(usize, usize, usize)> {
        let c = self.backbone().feature_channels()?;
        let (fh, fw) = backbone::feature_size(self.fp_size[0], self.fp_size[1])?;
        let (vh, vw) = backbone::feature_size(self.fv_size[0], self.fv_size[1])?;
        Ok((self.variant.output_channels(c), fh.min(vh), fw.min(vw)))
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        Ok(FusionConfig {
            variant: self.variant,
            channels: self.backbone().feature_channels()?,
            r1: self.r1,
            r2: self.r2,
            literal_double_mul: self.literal_double_mul,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        })
    }
}

/// Common interface of the trainable classifiers.
pub trait Network<T: Scalar>: Parameters<T> + Clone + Send {
    type Cache: Send;

    fn classes(&self) -> usize;

    fn forward(&mut self, fp: &Tensor<T>, fv: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Self::Cache)>;

    /// Accumulates parameter gradients for the logits gradient `grad`.
    fn backward(&mut self, cache: &Self::Cache, grad: &Tensor<T>) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpvCsafmModel<T = f32> {
    pub config: ModelConfig,
    pub fp_backbone: BackboneState<T>,
    pub fv_backbone: BackboneState<T>,
    pub fusion: FusionState<T>,
    pub head: FcParams<T>,
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    fp: BackboneCache<T>,
    fv: BackboneCache<T>,
    fp_features: Dims,
    fv_features: Dims,
    fusion: FusionCache<T>,
    fused: Dims,
    flat: Tensor<T>,
}

fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::NonFinite { layer } => Error::NonFinite { layer: format!("{prefix}.{layer}") },
        other => other,
    }
}

impl<T: Scalar> FpvCsafmModel<T> {
    /// Fresh He-initialised model. Backbones, fusion and head draw from `rng`
    /// in that order.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        if config.classes == 0 {
            return Err(Error::Config("classes must be >= 1".into()));
        }
        let (c, h, w) = config.fused_shape()?;
        let fp_backbone = BackboneState::new(&config.backbone(), rng)?;
        let fv_backbone = BackboneState::new(&config.backbone(), rng)?;
        let fusion = FusionState::new(&config.fusion()?, rng)?;
        let head = FcParams::he(c * h * w, config.classes, rng)?;
        Ok(FpvCsafmModel { config, fp_backbone, fv_backbone, fusion, head })
    }

    fn check_inputs(&self, fp: &Tensor<T>, fv: &Tensor<T>) -> Result<()> {
        let (a, b) = (fp.dims(), fv.dims());
        let [fh, fw] = self.config.fp_size;
        let [vh, vw] = self.config.fv_size;
        if a.n != b.n {
            return Err(Error::Dimension(format!("batch sizes differ: fingerprint {a}, vein {b}")));
        }
        if (a.c, a.h, a.w) != (1, fh, fw) || (b.c, b.h, b.w) != (1, vh, vw) {
            return Err(Error::Dimension(format!(
                "model head was built for fingerprint 1x{fh}x{fw} and vein 1x{vh}x{vw} images, got {a} and {b}"
            )));
        }
        Ok(())
    }

    pub fn predict(&mut self, fp: &Tensor<T>, fv: &Tensor<T>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(fp, fv, Mode::Eval)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.dims().c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

impl<T: Scalar> Network<T> for FpvCsafmModel<T> {
    type Cache = ModelCache<T>;

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn forward(&mut self, fp: &Tensor<T>, fv: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ModelCache<T>)> {
        self.check_inputs(fp, fv)?;
        let (fp_bb, fv_bb) = (&mut self.fp_backbone, &mut self.fv_backbone);
        let (a, b) = parallel::join(|| fp_bb.features(fp, mode), || fv_bb.features(fv, mode));
        let (f_fp, fp_cache) = a.map_err(|e| prefixed(e, "fp"))?;
        let (f_fv, fv_cache) = b.map_err(|e| prefixed(e, "fv"))?;
        let (s_fp, s_fv) = fusion::standardize(&f_fp, &f_fv)?;
        let (z, fusion_cache) = self.fusion.fuse(&s_fp, &s_fv, mode)?;
        let flat = flatten(&z);
        if flat.dims().c != self.head.d_in() {
            return Err(Error::Dimension(format!(
                "fused map {} does not match head input {}",
                z.dims(),
                self.head.d_in()
            )));
        }
        let logits = fully_connected(&flat, &self.head)?;
        if mode == Mode::Train && !logits.is_finite() {
            return Err(Error::NonFinite { layer: "head".into() });
        }
        let cache = ModelCache {
            fp: fp_cache,
            fv: fv_cache,
            fp_features: f_fp.dims(),
            fv_features: f_fv.dims(),
            fusion: fusion_cache,
            fused: z.dims(),
            flat,
        };
        Ok((logits, cache))
    }

    fn backward(&mut self, cache: &ModelCache<T>, grad: &Tensor<T>) -> Result<()> {
        let d_flat = fully_connected_backward(&cache.flat, &mut self.head, grad)?;
        let d_z = unflatten(&d_flat, cache.fused)?;
        let (d_sfp, d_sfv) = self.fusion.fuse_backward(&cache.fusion, &d_z)?;
        let (d_fp, d_fv) = fusion::standardize_backward(cache.fp_features, cache.fv_features, &d_sfp, &d_sfv)?;
        let (fp_bb, fv_bb) = (&mut self.fp_backbone, &mut self.fv_backbone);
        let (a, b) = parallel::join(
            || fp_bb.features_backward(&cache.fp, &d_fp),
            || fv_bb.features_backward(&cache.fv, &d_fv),
        );
        a?;
        b?;
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for FpvCsafmModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.fp_backbone.collect(&join(prefix, "fp"), out);
        self.fv_backbone.collect(&join(prefix, "fv"), out);
        self.fusion.collect(&join(prefix, "fusion"), out);
        self.head.collect(&join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.fp_backbone.collect_mut(&join(prefix, "fp"), out);
        self.fv_backbone.collect_mut(&join(prefix, "fv"), out);
        self.fusion.collect_mut(&join(prefix, "fusion"), out);
        self.head.collect_mut(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Fingerprint,
    Vein,
}

/// One backbone with its own head, fed by a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalModel<T = f32> {
    pub modality: Modality,
    pub backbone: BackboneState<T>,
    pub classes: usize,
}

impl<T: Scalar> UnimodalModel<T> {
    pub fn new(modality: Modality, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let [h, w] = match modality {
            Modality::Fingerprint => config.fp_size,
            Modality::Vein => config.fv_size,
        };
        let backbone = BackboneState::new(&config.backbone(), rng)?.with_head(h, w, config.classes, rng)?;
        Ok(UnimodalModel { modality, backbone, classes: config.classes })
    }
}

impl<T: Scalar> Network<T> for UnimodalModel<T> {
    type Cache = BackboneCache<T>;

    fn classes(&self) -> usize {
        self.classes
    }

    fn forward(&mut self, fp: &Tensor<T>, fv: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BackboneCache<T>)> {
        let x = match self.modality {
            Modality::Fingerprint => fp,
            Modality::Vein => fv,
        };
        self.backbone.classify(x, mode)
    }

    fn backward(&mut self, cache: &BackboneCache<T>, grad: &Tensor<T>) -> Result<()> {
        self.backbone.classify_backward(cache, grad).map(drop)
    }
}

impl<T: Scalar> Parameters<T> for UnimodalModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.backbone.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.backbone.collect_mut(prefix, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    dims: [usize; 4],
    kind: TensorKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    entries: Vec<Entry>,
}

impl FpvCsafmModel<f32> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.named();
        let header = Header {
            model: self.config.clone(),
            entries: named
                .iter()
                .map(|n| Entry { name: n.name.clone(), dims: n.tensor.dims().as_array(), kind: n.kind })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &named {
            n.tensor.write_blob(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, no room for the magic", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        if bytes.len() < 12 {
            return Err(Error::Truncated("file ends inside the fixed header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < header_len {
            return Err(Error::Truncated(format!("header declares {header_len} bytes, {} present", body.len())));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Structure(format!("unreadable JSON header: {e}")))?;

        let mut model = FpvCsafmModel::<f32>::new(header.model, &mut Rng::new(0))?;
        let expected: Vec<Entry> = model
            .named()
            .iter()
            .map(|n| Entry { name: n.name.clone(), dims: n.tensor.dims().as_array(), kind: n.kind })
            .collect();
        if header.entries.len() != expected.len() {
            return Err(Error::Structure(format!(
                "header declares {} tensors, the configured model has {}",
                header.entries.len(),
                expected.len()
            )));
        }
        if let Some((got, want)) = header.entries.iter().zip(&expected).find(|(g, w)| g != w) {
            return Err(Error::Structure(format!("entry {got:?} does not match expected {want:?}")));
        }

        let mut rest = &body[header_len..];
        for (slot, entry) in model.named_mut().into_iter().zip(&header.entries) {
            let (t, used) = Tensor::read_blob(rest)?;
            if t.dims().as_array() != entry.dims {
                return Err(Error::Structure(format!(
                    "blob for {} has dims {}, header says {:?}",
                    entry.name,
                    t.dims(),
                    entry.dims
                )));
            }
            *slot.tensor = t;
            rest = &rest[used..];
        }
        if !rest.is_empty() {
            return Err(Error::Structure(format!("{} trailing bytes after the last tensor", rest.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
