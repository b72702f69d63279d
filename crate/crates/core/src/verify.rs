//! The self-check suite behind `csafm verify`: kernel oracles, gradient
//! checks, fusion identities, the shape pipeline, weight-file round trips and
//! the CIR metric. Every check yields one named pass/fail line.

use std::fmt;

use crate::backbone::{feature_size, BackboneConfig, BackboneState};
use crate::error::{Error, Result};
use crate::fusion::{standardize, FusionConfig, FusionState, FusionVariant};
use crate::gradcheck::{self, tiny_model_config};
use crate::model::{FpvCsafmModel, Network};
use crate::ops::{conv2d, maxpool2d, ConvParams, Mode};
use crate::oracle;
use crate::tensor::{Dims, Distribution, Rng, Tensor};
use crate::train::cir;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => CheckResult::new(name, passed, detail),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {}  ({})", self.name, self.detail)
    }
}

fn uniform(dims: impl Into<Dims>, rng: &mut Rng) -> Result<Tensor<f32>> {
    Tensor::random(dims, Distribution::Uniform { lo: -1.0, hi: 1.0 }, rng)
}

/// Largest absolute deviation of `conv2d` from the direct-loop oracle over
/// `instances` random small problems (shapes, kernel, stride and padding all
/// drawn at random).
pub fn conv_oracle_max_err(instances: usize, seed: u64) -> Result<f32> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f32;
    for _ in 0..instances {
        let k = 1 + rng.below(5);
        let stride = 1 + rng.below(3);
        let pad = rng.below(k);
        let h = k.saturating_sub(2 * pad).max(1) + rng.below(8);
        let w = k.saturating_sub(2 * pad).max(1) + rng.below(8);
        let x = uniform([1 + rng.below(3), 1 + rng.below(4), h, w], &mut rng)?;
        let mut p = ConvParams::he(x.dims().c, 1 + rng.below(4), k, stride, pad, &mut rng)?;
        p.bias.fill_random(Distribution::Uniform { lo: -1.0, hi: 1.0 }, &mut rng)?;
        let got = conv2d(&x, &p)?;
        let want = oracle::conv2d_direct(&x, &p.weight, &p.bias, stride, pad);
        if got.dims() != want.dims() {
            return Err(Error::ShapeMismatch { op: "conv oracle", left: got.dims(), right: want.dims() });
        }
        worst = got.data().iter().zip(want.data()).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    Ok(worst)
}

/// Number of `maxpool2d` instances (values or argmax) that differ from the
/// brute-force scan. Inputs are quantized so ties occur.
pub fn pool_oracle_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let k = 1 + rng.below(4);
        let stride = 1 + rng.below(3);
        let pad = rng.below(k.div_ceil(2));
        let h = k + rng.below(8);
        let w = k + rng.below(8);
        let x = uniform([1 + rng.below(2), 1 + rng.below(3), h, w], &mut rng)?.map(|v| (v * 4.0).round());
        let (got, cache) = maxpool2d(&x, k, stride, pad)?;
        let (want, arg) = oracle::maxpool_scan(&x, k, stride, pad);
        let arg_flat: Vec<usize> = arg.iter().map(|&(r, c)| r * w + c).collect();
        if got != want || cache.argmax() != arg_flat.as_slice() {
            bad += 1;
        }
    }
    Ok(bad)
}

fn fusion_cfg(variant: FusionVariant, channels: usize, literal_double_mul: bool) -> FusionConfig {
    FusionConfig { variant, channels, r1: 4, r2: 4, literal_double_mul, bn_momentum: 0.1, bn_eps: 1e-5 }
}

/// Instances (out of `instances`) where zeroed attention fails to give
/// exactly `0.25 (fp + fv)` in f32.
pub fn zero_attention_failures(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for i in 0..instances {
        let c = 4 * (1 + rng.below(4));
        let dims = [1 + rng.below(3), c, 1 + rng.below(5), 1 + rng.below(5)];
        let fp = uniform(dims, &mut rng)?.scale(3.0);
        let fv = uniform(dims, &mut rng)?.scale(3.0);
        let mut state = FusionState::<f32>::zeros(&fusion_cfg(FusionVariant::Csafm, c, false))?;
        let mode = if i % 2 == 0 { Mode::Eval } else { Mode::Train };
        let mode = if mode == Mode::Train && dims[0] * dims[2] * dims[3] < 2 { Mode::Eval } else { mode };
        let (z, _) = state.fuse(&fp, &fv, mode)?;
        let exact = z.data().iter().zip(fp.data().iter().zip(fv.data())).all(|(z, (a, b))| *z == 0.25 * (a + b));
        if !exact {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Instances (out of `instances`, spread across all variants) with a
/// coefficient map outside the open interval `(0, 1)` or a fused value
/// larger in magnitude than `|fp| + |fv|`.
pub fn coefficient_range_failures(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for i in 0..instances {
        let variant = FusionVariant::ALL[i % FusionVariant::ALL.len()];
        let c = 8;
        let dims = [1 + rng.below(2), c, 2 + rng.below(4), 2 + rng.below(4)];
        let fp = uniform(dims, &mut rng)?;
        let fv = uniform(dims, &mut rng)?;
        let mut state = FusionState::<f32>::new(&fusion_cfg(variant, c, false), &mut rng)?;
        let (z, cache) = state.fuse(&fp, &fv, Mode::Train)?;
        let coeff_ok = cache.coefficients().iter().all(|p| p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let weights_ok = cache
            .weights()
            .is_none_or(|(w1, w2)| w1.data().iter().chain(w2.data()).all(|&v| v > 0.0 && v < 1.0));
        let bounded = variant == FusionVariant::ParallelConcat
            || z.data().iter().zip(fp.data().iter().zip(fv.data())).all(|(z, (a, b))| z.abs() <= a.abs() + b.abs() + 1e-6);
        if !(coeff_ok && weights_ok && bounded && z.is_finite()) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Runs the full-width backbone on a 200x400 image and returns the feature
/// dims next to the shape oracle's prediction.
pub fn shape_pipeline() -> Result<(Dims, Dims)> {
    let mut rng = Rng::new(0);
    let mut backbone = BackboneState::<f32>::new(&BackboneConfig::default(), &mut rng)?;
    let x = uniform([1, 1, 200, 400], &mut rng)?;
    let (features, _) = backbone.features(&x, Mode::Eval)?;
    let (h, w) = oracle::backbone_spatial(200, 400);
    Ok((features.dims(), Dims::new(1, 512, h, w)))
}

/// Save/load round trip of a freshly initialised model; returns whether
/// every tensor and the eval logits survive bit for bit.
pub fn serialization_round_trip(seed: u64) -> Result<bool> {
    let mut rng = Rng::new(seed);
    let cfg = tiny_model_config(FusionVariant::Csafm);
    let mut model = FpvCsafmModel::<f32>::new(cfg.clone(), &mut rng)?;
    let fp = uniform([2, 1, cfg.fp_size[0], cfg.fp_size[1]], &mut rng)?;
    let fv = uniform([2, 1, cfg.fv_size[0], cfg.fv_size[1]], &mut rng)?;
    // move the running statistics away from their initial values
    Network::forward(&mut model, &fp, &fv, Mode::Train)?;
    let mut back = FpvCsafmModel::from_bytes(&model.to_bytes()?)?;
    let same_params = back == model;
    let a = Network::forward(&mut model, &fp, &fv, Mode::Eval)?.0;
    let b = Network::forward(&mut back, &fp, &fv, Mode::Eval)?.0;
    let same_logits = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(same_params && same_logits)
}

/// The three documented corruption errors: bad magic, wrong version and
/// truncation.
pub fn corruption_errors() -> Result<[String; 3]> {
    let mut rng = Rng::new(1);
    let model = FpvCsafmModel::<f32>::new(tiny_model_config(FusionVariant::Csafm), &mut rng)?;
    let bytes = model.to_bytes()?;
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    let truncated = &bytes[..bytes.len() - 3];
    let classify = |r: Result<FpvCsafmModel<f32>>| match r {
        Err(Error::BadMagic { .. }) => "bad_magic".to_string(),
        Err(Error::Version { .. }) => "version".to_string(),
        Err(Error::Truncated(_)) => "truncated".to_string(),
        Err(e) => format!("other: {e}"),
        Ok(_) => "accepted".to_string(),
    };
    Ok([
        classify(FpvCsafmModel::from_bytes(&magic)),
        classify(FpvCsafmModel::from_bytes(&version)),
        classify(FpvCsafmModel::from_bytes(truncated)),
    ])
}

/// The two fixed CIR cases plus permutation invariance over `shuffles`
/// random reorderings of a 200-sample prediction list.
pub fn cir_checks(shuffles: usize, seed: u64) -> Result<bool> {
    let fixed = cir(&[0, 1, 2, 3], &[0, 1, 2, 0])? == 75.0 && cir(&[5, 1, 3], &[5, 1, 3])? == 100.0;
    let mut rng = Rng::new(seed);
    let mut pairs: Vec<(usize, usize)> = (0..200).map(|_| (rng.below(6), rng.below(6))).collect();
    let base = {
        let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        cir(&p, &l)?
    };
    let mut invariant = true;
    for _ in 0..shuffles {
        rng.shuffle(&mut pairs);
        let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        invariant &= cir(&p, &l)? == base;
    }
    Ok(fixed && invariant)
}

/// Runs every check. `oracle_instances` sets the number of random conv and
/// pool problems.
pub fn run_all(oracle_instances: usize) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(CheckResult::from_result(
        "conv2d matches direct-loop oracle",
        conv_oracle_max_err(oracle_instances, 11).map(|e| (e <= 1e-5, format!("{oracle_instances} instances, max abs err {e:.2e}"))),
    ));
    out.push(CheckResult::from_result(
        "maxpool2d matches window-scan oracle",
        pool_oracle_mismatches(oracle_instances, 12).map(|b| (b == 0, format!("{oracle_instances} instances, {b} mismatches"))),
    ));
    for (name, r) in gradcheck::all_checks() {
        out.push(match r {
            Ok(c) => CheckResult::new(c.name.clone(), c.passed(), format!("rel err {:.2e} < {:.0e}, {} coords", c.rel_err, c.tol, c.coords)),
            Err(e) => CheckResult::new(format!("gradcheck {name}"), false, format!("error: {e}")),
        });
    }
    out.push(CheckResult::from_result(
        "zeroed attention gives 0.25 (fp + fv)",
        zero_attention_failures(100, 13).map(|b| (b == 0, format!("100 instances, {b} failures"))),
    ));
    out.push(CheckResult::from_result(
        "fusion coefficients strictly inside (0, 1)",
        coefficient_range_failures(100, 14).map(|b| (b == 0, format!("100 instances, {b} failures"))),
    ));
    out.push(CheckResult::from_result(
        "backbone 200x400 -> 512x4x7",
        shape_pipeline().map(|(got, want)| (got == want && (got.h, got.w) == (4, 7), format!("got {got}, oracle {want}"))),
    ));
    out.push(CheckResult::from_result(
        "standardize (4,7) vs (3,9) -> (3,7)",
        (|| {
            let a = Tensor::<f32>::zeros([1, 2, 4, 7])?;
            let b = Tensor::<f32>::zeros([1, 2, 3, 9])?;
            let (x, y) = standardize(&a, &b)?;
            let (fh, fw) = feature_size(200, 400)?;
            Ok(((x.dims().h, x.dims().w, y.dims().h, y.dims().w, fh, fw) == (3, 7, 3, 7, 4, 7), format!("{} / {}", x.dims(), y.dims())))
        })(),
    ));
    out.push(CheckResult::from_result(
        "weight file round trip is bit-exact",
        serialization_round_trip(15).map(|ok| (ok, "params and eval logits".to_string())),
    ));
    out.push(CheckResult::from_result(
        "weight file corruptions give distinct errors",
        corruption_errors().map(|e| (e == ["bad_magic", "version", "truncated"], e.join(", "))),
    ));
    out.push(CheckResult::from_result(
        "CIR cases and permutation invariance",
        cir_checks(100, 16).map(|ok| (ok, "3/4 -> 75, all -> 100, 100 shuffles".to_string())),
    ));
    out
}
