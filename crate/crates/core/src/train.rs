//! Adam, the stratified train/val/test split, the CIR metric and the epoch
//! loop with best-validation checkpoint retention.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Network};
use crate::ops::{softmax_xent, softmax_xent_backward, Mode};
use crate::params::TensorKind;
use crate::tensor::{Rng, Scalar, Tensor};

/// ChaCha stream ids. Every random consumer derives its generator from the
/// run seed plus one of these, so adding a consumer never shifts another.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const NOISE: u64 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam. Moments are allocated lazily on the first step and
/// keyed by parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// One update of every tensor in `params` from its accumulated gradient
    /// (a missing gradient counts as zero).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Dimension("optimizer state does not match the parameter list".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = T::of(1.0 - beta1.powf(self.step as f64));
        let c2 = T::of(1.0 - beta2.powf(self.step as f64));
        let (b1, b2, lr, eps) = (T::of(beta1), T::of(beta2), T::of(lr), T::of(eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(grad) = p.grad().map(<[T]>::to_vec) else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                }
                continue;
            };
            for (((x, g), mi), vi) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Correct identification rate, in percent.
pub fn cir(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "CIR needs equal, non-empty prediction and label lists (got {} and {})",
            preds.len(),
            labels.len()
        )));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.3, val: 0.4, test: 0.3 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 || self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Stratified disjoint partition of sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    /// Per class: `(train, val, test)` index lists.
    pub per_class: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>,
}

fn exact_count(n: usize, frac: f64, class: usize) -> Result<usize> {
    let x = n as f64 * frac;
    let r = x.round();
    if (x - r).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "class {class}: {n} samples x {frac} = {x} is not a whole number of samples"
        )));
    }
    Ok(r as usize)
}

impl SplitPlan {
    /// Shuffles each class's indices with the seed and cuts them at the
    /// requested fractions; each cut must be a whole number of samples.
    pub fn stratified(labels: &[usize], classes: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        fractions.validate()?;
        let mut buckets = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
            buckets[l].push(i);
        }
        let mut rng = Rng::with_stream(seed, streams::SPLIT);
        let mut per_class = Vec::with_capacity(classes);
        for (class, mut idx) in buckets.into_iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::Split(format!("class {class} has no samples")));
            }
            let n = idx.len();
            let n_train = exact_count(n, fractions.train, class)?;
            let n_val = exact_count(n, fractions.val, class)?;
            exact_count(n, fractions.test, class)?;
            rng.shuffle(&mut idx);
            let test = idx.split_off(n_train + n_val);
            let val = idx.split_off(n_train);
            per_class.push((idx, val, test));
        }
        Ok(SplitPlan { seed, per_class })
    }

    pub fn train(&self) -> Vec<usize> {
        self.per_class.iter().flat_map(|c| c.0.iter().copied()).collect()
    }

    pub fn val(&self) -> Vec<usize> {
        self.per_class.iter().flat_map(|c| c.1.iter().copied()).collect()
    }

    pub fn test(&self) -> Vec<usize> {
        self.per_class.iter().flat_map(|c| c.2.iter().copied()).collect()
    }
}

/// Split for a class-major layout (`index = class * n_per_class + k`) with
/// the default 30/40/30 fractions.
pub fn make_split(n_per_class: usize, classes: usize, seed: u64) -> Result<SplitPlan> {
    let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, n_per_class)).collect();
    SplitPlan::stratified(&labels, classes, SplitFractions::default(), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cir: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_cir: f64,
    /// The network as it was after `best_epoch`.
    pub best: N,
    /// The network after the last epoch.
    pub last: N,
}

impl<N> TrainOutcome<N> {
    pub fn last_val_cir(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.val_cir)
    }

    /// `epoch,train_loss,val_cir` header plus one line per epoch, six decimals.
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_cir\n");
    for r in history {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_cir));
    }
    s
}

/// Stacks the selected samples into a `(fp, fv, labels)` batch.
pub fn gather(samples: &[PairedSample], indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
    let fp: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].fp).collect();
    let fv: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].fv).collect();
    let labels = indices.iter().map(|&i| samples[i].label).collect();
    Ok((Tensor::stack(&fp)?, Tensor::stack(&fv)?, labels))
}

/// Cuts `indices` into batches of `batch`; a trailing batch of one sample is
/// folded into the previous batch so that batch statistics stay defined.
fn batches(indices: &[usize], batch: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = indices.chunks(batch).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch;
        *out.last_mut().unwrap() = &indices[start..];
    }
    out
}

/// Eval-mode predictions for `indices`, processed in batches.
pub fn predict<N: Network<f32>>(net: &mut N, samples: &[PairedSample], indices: &[usize], batch: usize) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        let (fp, fv, _) = gather(samples, chunk)?;
        let (logits, _) = net.forward(&fp, &fv, Mode::Eval)?;
        preds.extend(argmax_rows(&logits));
    }
    Ok(preds)
}

pub fn evaluate<N: Network<f32>>(net: &mut N, samples: &[PairedSample], indices: &[usize], batch: usize) -> Result<f64> {
    let preds = predict(net, samples, indices, batch)?;
    let labels: Vec<usize> = indices.iter().map(|&i| samples[i].label).collect();
    cir(&preds, &labels)
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch Adam on the training
/// split, scoring the validation split after each epoch.
///
/// Batch order for epoch `e` comes from `Rng::with_stream(seed + e,
/// SHUFFLE)`. With `lr == 0` the run is a pure measurement: parameters and
/// batch-norm running statistics are both left untouched.
pub fn train_loop<N: Network<f32>>(mut net: N, samples: &[PairedSample], split: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutcome<N>> {
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch and epochs must be >= 1".into()));
    }
    let frozen = cfg.adam.lr == 0.0;
    let train_idx = split.train();
    let val_idx = split.val();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Split("training and validation splits must be non-empty".into()));
    }
    let mut adam = AdamState::<f32>::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, N)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        Rng::with_stream(cfg.seed.wrapping_add(epoch as u64), streams::SHUFFLE).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in batches(&order, cfg.batch) {
            let (fp, fv, labels) = gather(samples, chunk)?;
            let stats = frozen.then(|| running_stats(&net));
            net.zero_grad();
            let (logits, cache) = net.forward(&fp, &fv, Mode::Train)?;
            let (loss, probs) = softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { layer: "softmax_xent".into() });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            if let Some(stats) = stats {
                restore_running_stats(&mut net, stats);
                continue;
            }
            net.backward(&cache, &softmax_xent_backward(&probs, &labels)?)?;
            adam.step(&mut net.learnable_mut())?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_cir = evaluate(&mut net, samples, &val_idx, cfg.batch)?;
        info!("epoch {epoch:>3}  loss {train_loss:.6}  val CIR {val_cir:.2}%");
        history.push(EpochRecord { epoch, train_loss, val_cir });
        if best.as_ref().is_none_or(|b| val_cir > b.1) {
            best = Some((epoch, val_cir, net.clone()));
        }
    }
    let (best_epoch, best_val_cir, best_net) = best.expect("at least one epoch");
    Ok(TrainOutcome { history, best_epoch, best_val_cir, best: best_net, last: net })
}

fn running_stats<N: Network<f32>>(net: &N) -> Vec<Vec<f32>> {
    net.named()
        .into_iter()
        .filter(|n| n.kind == TensorKind::RunningStat)
        .map(|n| n.tensor.data().to_vec())
        .collect()
}

fn restore_running_stats<N: Network<f32>>(net: &mut N, stats: Vec<Vec<f32>>) {
    let slots = net.named_mut().into_iter().filter(|n| n.kind == TensorKind::RunningStat);
    for (slot, saved) in slots.zip(stats) {
        slot.tensor.data_mut().copy_from_slice(&saved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::full([1, 1, 1, 1], 0.5).unwrap();
        p.grad_mut()[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig { lr: 1e-3, ..Default::default() });
        adam.step(&mut [&mut p]).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let want = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15, "{}", p.data()[0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::full([1, 2, 1, 1], 0.25).unwrap();
        p.grad_mut();
        let mut q = Tensor::<f32>::full([1, 1, 1, 3], -1.0).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p, &mut q]).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.25));
        assert!(q.data().iter().all(|&v| v == -1.0));
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(5);
            let mut p = Tensor::<f32>::random([1, 1, 4, 4], crate::tensor::Distribution::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
            let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..Default::default() });
            for k in 0..5 {
                let g: Vec<f32> = (0..16).map(|i| ((i * 7 + k) as f32).sin()).collect();
                p.zero_grad();
                p.accumulate_grad(&g);
                adam.step(&mut [&mut p]).unwrap();
            }
            p.into_data()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cir_cases() {
        assert_eq!(cir(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 75.0);
        assert_eq!(cir(&[4, 4], &[4, 4]).unwrap(), 100.0);
        assert!(cir(&[], &[]).is_err());
        assert!(cir(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn cir_of_random_guesses_is_near_chance() {
        let mut rng = Rng::new(77);
        let n = 20_000;
        let k = 8;
        let preds: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let p = 1.0 / k as f64;
        let sigma = 100.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((cir(&preds, &labels).unwrap() - 100.0 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn split_ten_per_class() {
        let plan = make_split(10, 4, 9).unwrap();
        for (tr, va, te) in &plan.per_class {
            assert_eq!((tr.len(), va.len(), te.len()), (3, 4, 3));
        }
        assert_eq!(plan, make_split(10, 4, 9).unwrap());
        let mut all: Vec<usize> = plan.train().into_iter().chain(plan.val()).chain(plan.test()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for (c, (tr, va, te)) in plan.per_class.iter().enumerate() {
            assert!(tr.iter().chain(va).chain(te).all(|&i| i / 10 == c));
        }
    }

    #[test]
    fn split_rejects_fractional_counts() {
        assert!(matches!(make_split(7, 2, 0), Err(Error::Split(_))));
        let bad = SplitFractions { train: 0.5, val: 0.5, test: 0.5 };
        assert!(matches!(SplitPlan::stratified(&[0, 0], 1, bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn batching_folds_singletons() {
        let idx: Vec<usize> = (0..9).collect();
        let b = batches(&idx, 4);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&idx[..8], 4);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 4]);
        assert_eq!(batches(&idx[..1], 4).len(), 1);
    }
}
