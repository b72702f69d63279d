//! Central finite-difference checks of every backward pass, in f64.
//!
//! Each check draws inputs and parameters, reduces the output to a scalar
//! (a fixed random projection `sum(R * y)`, or cross-entropy for the loss
//! and the full networks) and compares the analytic gradient of every input
//! and learnable tensor against `(L(x + h) - L(x - h)) / 2h`. The reported
//! error is `|a - n| / max(|a|, |n|)` over the concatenated gradient vector.

use crate::backbone::{BackboneConfig, BackboneState};
use crate::error::Result;
use crate::fusion::{
    channel_attention_backward, channel_attention_map, spatial_attention_backward, spatial_attention_map, standardize,
    standardize_backward, ChannelAttnState, FusionConfig, FusionState, FusionVariant, SpatialAttnState,
};
use crate::model::{FpvCsafmModel, Modality, ModelConfig, Network, UnimodalModel};
use crate::ops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, fully_connected, fully_connected_backward, gap,
    gap_backward, maxpool2d, maxpool2d_backward, pwconv, relu, relu_backward, sigmoid, sigmoid_backward,
    softmax_xent, softmax_xent_backward, BnParams, ConvParams, FcParams, Mode,
};
use crate::params::{Named, NamedMut, Parameters, TensorKind};
use crate::tensor::{ewise_mul, ewise_mul_backward, Dims, Distribution, Rng, Tensor};

pub const STEP: f64 = 1e-6;
/// Tolerance for single layer primitives.
pub const LAYER_TOL: f64 = 1e-6;
/// Tolerance for composite blocks and whole networks.
pub const COMPOSITE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
    /// Number of scalar coordinates compared.
    pub coords: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

pub fn numeric_gradient(x0: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let plus = f(&x);
            x[i] = orig - STEP;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

/// Placeholder parameter set for parameterless ops.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stateless;

impl Parameters<f64> for Stateless {
    fn collect<'a>(&'a self, _: &str, _: &mut Vec<Named<'a, f64>>) {}
    fn collect_mut<'a>(&'a mut self, _: &str, _: &mut Vec<NamedMut<'a, f64>>) {}
}

fn learnable_values<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.named()
        .into_iter()
        .filter(|n| n.kind == TensorKind::Param)
        .flat_map(|n| n.tensor.data().to_vec())
        .collect()
}

fn load_learnable<P: Parameters<f64>>(p: &mut P, values: &[f64]) {
    let mut offset = 0;
    for t in p.learnable_mut() {
        let len = t.len();
        t.data_mut().copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
}

fn learnable_grads<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.named()
        .into_iter()
        .filter(|n| n.kind == TensorKind::Param)
        .flat_map(|n| n.tensor.grad().map_or_else(|| vec![0.0; n.tensor.len()], <[f64]>::to_vec))
        .collect()
}

/// How the output is reduced to the scalar being differentiated.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(R * y)` for a standard-normal `R` drawn from the check's rng.
    Projection,
    CrossEntropy(Vec<usize>),
}

impl Objective {
    fn resolve(&self, dims: Dims, rng: &mut Rng) -> Result<Resolved> {
        Ok(match self {
            Objective::Projection => Resolved::Projection(randn(dims, rng)?),
            Objective::CrossEntropy(labels) => Resolved::CrossEntropy(labels.clone()),
        })
    }
}

enum Resolved {
    Projection(Tensor<f64>),
    CrossEntropy(Vec<usize>),
}

impl Resolved {
    fn loss(&self, y: &Tensor<f64>) -> Result<f64> {
        match self {
            Resolved::Projection(r) => Ok(r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()),
            Resolved::CrossEntropy(labels) => Ok(softmax_xent(y, labels)?.0),
        }
    }

    fn grad(&self, y: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Resolved::Projection(r) => Ok(r.clone()),
            Resolved::CrossEntropy(labels) => softmax_xent_backward(&softmax_xent(y, labels)?.1, labels),
        }
    }
}

pub fn randn(dims: impl Into<Dims>, rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::random(dims, Distribution::Normal { mean: 0.0, std: 1.0 }, rng)
}

/// Compares the analytic gradient of `objective(forward(params, inputs))`
/// with respect to `inputs` and every learnable tensor of `params`.
///
/// `backward` receives the cache from `forward` and the output gradient, and
/// returns one gradient per input while accumulating parameter gradients.
#[allow(clippy::too_many_arguments)]
pub fn check<P, C>(
    name: &str,
    tol: f64,
    params: &P,
    inputs: &[Tensor<f64>],
    objective: Objective,
    rng: &mut Rng,
    forward: impl Fn(&mut P, &[Tensor<f64>]) -> Result<(Tensor<f64>, C)>,
    backward: impl Fn(&mut P, &C, &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
) -> Result<GradCheck>
where
    P: Parameters<f64> + Clone,
{
    let mut p = params.clone();
    p.zero_grad();
    let (y, cache) = forward(&mut p, inputs)?;
    let objective = objective.resolve(y.dims(), rng)?;
    let input_grads = backward(&mut p, &cache, &objective.grad(&y)?)?;
    let mut analytic: Vec<f64> = input_grads.iter().flat_map(|g| g.data().to_vec()).collect();
    analytic.extend(learnable_grads(&p));

    let dims: Vec<Dims> = inputs.iter().map(Tensor::dims).collect();
    let mut x0: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let n_inputs = x0.len();
    x0.extend(learnable_values(params));
    let mut failure = None;
    let numeric = numeric_gradient(&x0, |x| {
        let mut offset = 0;
        let perturbed: Vec<Tensor<f64>> = dims
            .iter()
            .map(|&d| {
                let t = Tensor::new(d, x[offset..offset + d.len()].to_vec()).expect("dims from input");
                offset += d.len();
                t
            })
            .collect();
        let mut p = params.clone();
        load_learnable(&mut p, &x[n_inputs..]);
        match forward(&mut p, &perturbed).and_then(|(y, _)| objective.loss(&y)) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if analytic.len() != numeric.len() {
        return Ok(GradCheck { name: name.into(), rel_err: f64::INFINITY, tol, coords: numeric.len() });
    }
    Ok(GradCheck { name: name.into(), rel_err: relative_error(&analytic, &numeric), tol, coords: numeric.len() })
}

pub type ConvBackward = fn(&Tensor<f64>, &mut ConvParams<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;

/// Strided, padded convolution checked against the supplied backward pass.
pub fn conv2d_check(backward: ConvBackward) -> Result<GradCheck> {
    let mut rng = Rng::new(101);
    let x = randn([2, 3, 7, 6], &mut rng)?;
    let mut p = ConvParams::he(3, 4, 3, 2, 1, &mut rng)?;
    p.bias.fill_random(Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng)?;
    check(
        "gradcheck conv2d 3x3 s2 p1",
        LAYER_TOL,
        &p,
        &[x],
        Objective::Projection,
        &mut rng,
        |p, x| Ok((conv2d(&x[0], p)?, x[0].clone())),
        |p, x, g| Ok(vec![backward(x, p, g)?]),
    )
}

fn conv7_check() -> Result<GradCheck> {
    let mut rng = Rng::new(102);
    let x = randn([1, 2, 5, 4], &mut rng)?;
    let p = ConvParams::he(2, 3, 7, 1, 3, &mut rng)?;
    check(
        "gradcheck conv2d 7x7 s1 p3",
        LAYER_TOL,
        &p,
        &[x],
        Objective::Projection,
        &mut rng,
        |p, x| Ok((conv2d(&x[0], p)?, x[0].clone())),
        |p, x, g| Ok(vec![conv2d_backward(x, p, g)?]),
    )
}

fn pwconv_check() -> Result<GradCheck> {
    let mut rng = Rng::new(103);
    let x = randn([2, 8, 3, 3], &mut rng)?;
    let p = ConvParams::he(8, 2, 1, 1, 0, &mut rng)?;
    check(
        "gradcheck pwconv",
        LAYER_TOL,
        &p,
        &[x],
        Objective::Projection,
        &mut rng,
        |p, x| Ok((pwconv(&x[0], p)?, x[0].clone())),
        |p, x, g| Ok(vec![conv2d_backward(x, p, g)?]),
    )
}

fn maxpool_check() -> Result<GradCheck> {
    let mut rng = Rng::new(104);
    let x = randn([2, 2, 7, 7], &mut rng)?;
    check(
        "gradcheck maxpool2d 3x3 s2 p1",
        LAYER_TOL,
        &Stateless,
        &[x],
        Objective::Projection,
        &mut rng,
        |_, x| maxpool2d(&x[0], 3, 2, 1),
        |_, c, g| Ok(vec![maxpool2d_backward(c, g)?]),
    )
}

fn relu_check() -> Result<GradCheck> {
    let mut rng = Rng::new(105);
    let x = randn([2, 3, 4, 5], &mut rng)?;
    check(
        "gradcheck relu",
        LAYER_TOL,
        &Stateless,
        &[x],
        Objective::Projection,
        &mut rng,
        |_, x| Ok((relu(&x[0]), x[0].clone())),
        |_, x, g| Ok(vec![relu_backward(x, g)?]),
    )
}

fn sigmoid_check() -> Result<GradCheck> {
    let mut rng = Rng::new(106);
    let x = randn([2, 3, 4, 5], &mut rng)?.scale(2.0);
    check(
        "gradcheck sigmoid",
        LAYER_TOL,
        &Stateless,
        &[x],
        Objective::Projection,
        &mut rng,
        |_, x| {
            let y = sigmoid(&x[0]);
            Ok((y.clone(), y))
        },
        |_, y, g| Ok(vec![sigmoid_backward(y, g)?]),
    )
}

fn random_bn(c: usize, rng: &mut Rng) -> Result<BnParams<f64>> {
    let mut p = BnParams::new(c, 0.1, 1e-5)?;
    p.gamma.fill_random(Distribution::Uniform { lo: 0.5, hi: 1.5 }, rng)?;
    p.beta.fill_random(Distribution::Normal { mean: 0.0, std: 1.0 }, rng)?;
    p.running_mean.fill_random(Distribution::Normal { mean: 0.0, std: 1.0 }, rng)?;
    p.running_var.fill_random(Distribution::Uniform { lo: 0.5, hi: 2.0 }, rng)?;
    Ok(p)
}

fn batchnorm_check(mode: Mode) -> Result<GradCheck> {
    let mut rng = Rng::new(107);
    let x = randn([3, 4, 3, 2], &mut rng)?;
    let p = random_bn(4, &mut rng)?;
    let name = match mode {
        Mode::Train => "gradcheck batchnorm train",
        Mode::Eval => "gradcheck batchnorm eval",
    };
    check(
        name,
        LAYER_TOL,
        &p,
        &[x],
        Objective::Projection,
        &mut rng,
        |p, x| batchnorm(&x[0], p, mode),
        |p, c, g| Ok(vec![batchnorm_backward(c, p, g)?]),
    )
}

fn gap_check() -> Result<GradCheck> {
    let mut rng = Rng::new(108);
    let x = randn([2, 3, 4, 5], &mut rng)?;
    check(
        "gradcheck gap",
        LAYER_TOL,
        &Stateless,
        &[x],
        Objective::Projection,
        &mut rng,
        |_, x| Ok((gap(&x[0]), x[0].dims())),
        |_, d, g| Ok(vec![gap_backward(*d, g)?]),
    )
}

fn fc_check() -> Result<GradCheck> {
    let mut rng = Rng::new(109);
    let x = randn([3, 10, 1, 1], &mut rng)?;
    let mut p = FcParams::he(10, 4, &mut rng)?;
    p.bias.fill_random(Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng)?;
    check(
        "gradcheck fully_connected",
        LAYER_TOL,
        &p,
        &[x],
        Objective::Projection,
        &mut rng,
        |p, x| Ok((fully_connected(&x[0], p)?, x[0].clone())),
        |p, x, g| Ok(vec![fully_connected_backward(x, p, g)?]),
    )
}

fn xent_check() -> Result<GradCheck> {
    let mut rng = Rng::new(110);
    let logits = randn([4, 5, 1, 1], &mut rng)?.scale(2.0);
    check(
        "gradcheck softmax_xent",
        LAYER_TOL,
        &Stateless,
        &[logits],
        Objective::CrossEntropy(vec![0, 3, 1, 4]),
        &mut rng,
        |_, x| Ok((x[0].clone(), ())),
        |_, _, g| Ok(vec![g.clone()]),
    )
}

fn ewise_mul_check(broadcast: bool) -> Result<GradCheck> {
    let mut rng = Rng::new(111);
    let a = randn([2, 3, 4, 4], &mut rng)?;
    let b = randn(if broadcast { [2, 3, 1, 1] } else { [2, 3, 4, 4] }, &mut rng)?;
    let name = if broadcast { "gradcheck ewise_mul broadcast" } else { "gradcheck ewise_mul" };
    check(
        name,
        LAYER_TOL,
        &Stateless,
        &[a, b],
        Objective::Projection,
        &mut rng,
        |_, x| Ok((ewise_mul(&x[0], &x[1])?, (x[0].clone(), x[1].clone()))),
        |_, (a, b), g| {
            let (da, db) = ewise_mul_backward(a, b, g)?;
            Ok(vec![da, db])
        },
    )
}

fn standardize_check() -> Result<GradCheck> {
    let mut rng = Rng::new(112);
    let fp = randn([1, 2, 4, 7], &mut rng)?;
    let fv = randn([1, 2, 3, 9], &mut rng)?;
    check(
        "gradcheck standardize",
        LAYER_TOL,
        &Stateless,
        &[fp, fv],
        Objective::Projection,
        &mut rng,
        |_, x| {
            let (a, b) = standardize(&x[0], &x[1])?;
            Ok((Tensor::concat_channels(&a, &b)?, (x[0].dims(), x[1].dims())))
        },
        |_, &(da, db), g| {
            let (ga, gb) = g.split_channels(da.c)?;
            let (fa, fb) = standardize_backward(da, db, &ga, &gb)?;
            Ok(vec![fa, fb])
        },
    )
}

fn channel_attention_check() -> Result<GradCheck> {
    let mut rng = Rng::new(113);
    let x = randn([2, 8, 3, 3], &mut rng)?;
    let mut s = ChannelAttnState::new(8, 4, &mut rng)?;
    s.pw1.bias.fill_random(Distribution::Normal { mean: 0.0, std: 0.5 }, &mut rng)?;
    check(
        "gradcheck channel attention",
        COMPOSITE_TOL,
        &s,
        &[x],
        Objective::Projection,
        &mut rng,
        |s, x| channel_attention_map(&x[0], s),
        |s, c, g| Ok(vec![channel_attention_backward(c, s, g)?]),
    )
}

fn spatial_attention_check() -> Result<GradCheck> {
    let mut rng = Rng::new(114);
    let x = randn([2, 8, 4, 4], &mut rng)?;
    let mut s = SpatialAttnState::new(8, 4, 0.1, 1e-5, &mut rng)?;
    s.bn2.gamma.fill_random(Distribution::Uniform { lo: 0.5, hi: 1.5 }, &mut rng)?;
    check(
        "gradcheck spatial attention",
        COMPOSITE_TOL,
        &s,
        &[x],
        Objective::Projection,
        &mut rng,
        |s, x| spatial_attention_map(&x[0], s, Mode::Train),
        |s, c, g| Ok(vec![spatial_attention_backward(c, s, g)?]),
    )
}

fn backbone_check() -> Result<GradCheck> {
    let mut rng = Rng::new(115);
    let x = randn([3, 1, 20, 20], &mut rng)?;
    let cfg = BackboneConfig { width_multiplier: 1.0 / 64.0, ..Default::default() };
    let b = BackboneState::new(&cfg, &mut rng)?;
    check(
        "gradcheck backbone width 1/64",
        COMPOSITE_TOL,
        &b,
        &[x],
        Objective::Projection,
        &mut rng,
        |b, x| b.features(&x[0], Mode::Train),
        |b, c, g| Ok(vec![b.features_backward(c, g)?]),
    )
}

/// Fusion block of `variant` at `(1, 8, 4, 4)` with `r1 = r2 = 4`.
pub fn fusion_check(variant: FusionVariant, literal_double_mul: bool) -> Result<GradCheck> {
    let mut rng = Rng::new(116);
    let fp = randn([1, 8, 4, 4], &mut rng)?;
    let fv = randn([1, 8, 4, 4], &mut rng)?;
    let cfg = FusionConfig { variant, channels: 8, r1: 4, r2: 4, literal_double_mul, bn_momentum: 0.1, bn_eps: 1e-5 };
    let state = FusionState::new(&cfg, &mut rng)?;
    let suffix = if literal_double_mul { " literal" } else { "" };
    check(
        &format!("gradcheck fusion {variant}{suffix}"),
        COMPOSITE_TOL,
        &state,
        &[fp, fv],
        Objective::Projection,
        &mut rng,
        |s, x| s.fuse(&x[0], &x[1], Mode::Train),
        |s, c, g| {
            let (a, b) = s.fuse_backward(c, g)?;
            Ok(vec![a, b])
        },
    )
}

/// The smallest full model: width 1/64 (`C = 8`), three classes, 20x20
/// inputs, batch of three, cross-entropy loss.
pub fn tiny_model_config(variant: FusionVariant) -> ModelConfig {
    ModelConfig {
        variant,
        classes: 3,
        fp_size: [20, 20],
        fv_size: [20, 20],
        width_multiplier: 1.0 / 64.0,
        r1: 4,
        r2: 4,
        literal_double_mul: false,
        bn_momentum: 0.1,
        bn_eps: 1e-5,
    }
}

fn network_check<N: Network<f64>>(name: &str, net: &N, rng: &mut Rng) -> Result<GradCheck> {
    let fp = randn([3, 1, 20, 20], rng)?;
    let fv = randn([3, 1, 20, 20], rng)?;
    check(
        name,
        COMPOSITE_TOL,
        net,
        &[],
        Objective::CrossEntropy(vec![2, 0, 1]),
        rng,
        |n, _| n.forward(&fp, &fv, Mode::Train),
        |n, c, g| {
            n.backward(c, g)?;
            Ok(vec![])
        },
    )
}

fn end_to_end_check() -> Result<GradCheck> {
    let mut rng = Rng::new(117);
    let model = FpvCsafmModel::<f64>::new(tiny_model_config(FusionVariant::Csafm), &mut rng)?;
    network_check("gradcheck end-to-end CSAFM model", &model, &mut rng)
}

fn unimodal_check() -> Result<GradCheck> {
    let mut rng = Rng::new(118);
    let model = UnimodalModel::<f64>::new(Modality::Vein, &tiny_model_config(FusionVariant::Csafm), &mut rng)?;
    network_check("gradcheck end-to-end unimodal model", &model, &mut rng)
}

/// Every gradient check, in a fixed order.
pub fn all_checks() -> Vec<(String, Result<GradCheck>)> {
    type Case = (&'static str, fn() -> Result<GradCheck>);
    let mut cases: Vec<Case> = vec![
        ("conv2d", || conv2d_check(conv2d_backward)),
        ("conv2d 7x7", conv7_check),
        ("pwconv", pwconv_check),
        ("maxpool2d", maxpool_check),
        ("relu", relu_check),
        ("sigmoid", sigmoid_check),
        ("batchnorm train", || batchnorm_check(Mode::Train)),
        ("batchnorm eval", || batchnorm_check(Mode::Eval)),
        ("gap", gap_check),
        ("fully_connected", fc_check),
        ("softmax_xent", xent_check),
        ("ewise_mul", || ewise_mul_check(false)),
        ("ewise_mul broadcast", || ewise_mul_check(true)),
        ("standardize", standardize_check),
        ("channel attention", channel_attention_check),
        ("spatial attention", spatial_attention_check),
        ("backbone", backbone_check),
        ("CSAFM literal", || fusion_check(FusionVariant::Csafm, true)),
        ("end-to-end", end_to_end_check),
        ("unimodal", unimodal_check),
    ];
    let variant_cases: [Case; 7] = [
        ("CHANNEL_ONLY", || fusion_check(FusionVariant::ChannelOnly, false)),
        ("SPATIAL_ONLY", || fusion_check(FusionVariant::SpatialOnly, false)),
        ("PARALLEL_CS", || fusion_check(FusionVariant::ParallelCs, false)),
        ("SEQ_SC", || fusion_check(FusionVariant::SeqSc, false)),
        ("CSAFM", || fusion_check(FusionVariant::Csafm, false)),
        ("SERIAL_SUM", || fusion_check(FusionVariant::SerialSum, false)),
        ("PARALLEL_CONCAT", || fusion_check(FusionVariant::ParallelConcat, false)),
    ];
    cases.splice(17..17, variant_cases);
    crate::parallel::map_indices(cases.len(), |i| (cases[i].0.to_string(), (cases[i].1)()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped(x: &Tensor<f64>, p: &mut ConvParams<f64>, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(conv2d_backward(x, p, g)?.scale(-1.0))
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn numeric_gradient_of_cubic() {
        let g = numeric_gradient(&[1.0, -2.0], |x| x[0].powi(3) + 3.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn conv_check_passes_and_detects_sign_flip() {
        let good = conv2d_check(conv2d_backward).unwrap();
        assert!(good.passed(), "{good:?}");
        let bad = conv2d_check(flipped).unwrap();
        assert!(!bad.passed(), "{bad:?}");
    }

    #[test]
    fn every_check_passes() {
        let checks = all_checks();
        assert!(checks.len() >= 20);
        for (name, c) in checks {
            let c = c.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(c.passed(), "{c:?}");
            assert!(c.coords > 0);
        }
    }
}
