//! Command-line surface: `synth`, `train`, `eval`, `ablate` and `verify`.
//!
//! Results go to files (or stdout for `eval` and `verify`); progress goes to
//! stderr through `log`. Outputs of `train`:
//!
//! * `weights.csaf`: the best-validation checkpoint;
//! * `history.csv`: `epoch,train_loss,val_cir`, six decimals;
//! * `summary.json`: see [`RunSummary`].
//!
//! `ablate` writes `ablation.csv` with header `variant,best_val_cir,test_cir`
//! and one row per fusion variant.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{read_json, DatasetSource, RunConfig};
use crate::data::{ingest_dir, synth_generate, write_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionVariant;
use crate::model::{FpvCsafmModel, Modality, ModelConfig, Network, UnimodalModel};
use crate::tensor::Rng;
use crate::train::{evaluate, history_csv, streams, train_loop, EpochRecord, SplitPlan};
use crate::{parallel, verify};

#[derive(Debug, Parser)]
#[command(name = "csafm", version, about = "Fingerprint / finger-vein fusion network: data, training and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset as PGM files.
    Synth {
        /// Synth spec JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write weights, history and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a weight file on the test split of a dataset.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        /// Run config naming the dataset and split fractions.
        #[arg(long)]
        config: PathBuf,
        /// Split seed (defaults to the config seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory, overriding the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train every fusion variant with the same seed and data.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the variants concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the oracle, gradient and identity checks.
    Verify {
        #[arg(long, default_value_t = 200)]
        oracle_instances: usize,
    },
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Fusion variant tag, or `UNIMODAL_FP` / `UNIMODAL_FV`.
    pub variant: String,
    pub seed: u64,
    pub best_val_cir: f64,
    pub best_epoch: usize,
    pub last_val_cir: f64,
    /// CIR of the best-validation checkpoint on the test split.
    pub test_cir: f64,
    pub epochs_run: usize,
    pub parameters: usize,
    pub wall_seconds: f64,
}

/// Which network an experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Fused(FusionVariant),
    Unimodal(Modality),
}

impl Arch {
    pub fn tag(self) -> String {
        match self {
            Arch::Fused(v) => v.tag().to_string(),
            Arch::Unimodal(Modality::Fingerprint) => "UNIMODAL_FP".into(),
            Arch::Unimodal(Modality::Vein) => "UNIMODAL_FV".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub summary: RunSummary,
    pub history: Vec<EpochRecord>,
    /// Best checkpoint, for fused architectures.
    pub model: Option<FpvCsafmModel<f32>>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Dir(dir) => ingest_dir(dir),
        DatasetSource::Synth(spec) => synth_generate(spec, &mut Rng::with_stream(cfg.seed, streams::NOISE)),
    }
}

pub fn split_for(cfg: &RunConfig, dataset: &Dataset) -> Result<SplitPlan> {
    SplitPlan::stratified(&dataset.labels(), dataset.classes(), cfg.split, cfg.seed)
}

pub fn model_config(cfg: &RunConfig, dataset: &Dataset, variant: FusionVariant) -> ModelConfig {
    ModelConfig {
        variant,
        classes: dataset.classes(),
        fp_size: dataset.fp_size(),
        fv_size: dataset.fv_size(),
        width_multiplier: cfg.width_multiplier,
        r1: cfg.r1,
        r2: cfg.r2,
        literal_double_mul: cfg.literal_double_mul,
        bn_momentum: cfg.bn_momentum,
        bn_eps: cfg.bn_eps,
    }
}

fn fit<N: Network<f32>>(net: N, cfg: &RunConfig, dataset: &Dataset, split: &SplitPlan, tag: String) -> Result<(RunSummary, Vec<EpochRecord>, N)> {
    let start = Instant::now();
    let parameters = net.parameter_count();
    let outcome = train_loop(net, &dataset.samples, split, &cfg.train())?;
    let mut best = outcome.best.clone();
    let test_cir = evaluate(&mut best, &dataset.samples, &split.test(), cfg.batch)?;
    let summary = RunSummary {
        variant: tag,
        seed: cfg.seed,
        best_val_cir: outcome.best_val_cir,
        best_epoch: outcome.best_epoch,
        last_val_cir: outcome.last_val_cir(),
        test_cir,
        epochs_run: outcome.history.len(),
        parameters,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    info!("{}: best val CIR {:.2}% at epoch {}, test CIR {:.2}%", summary.variant, summary.best_val_cir, summary.best_epoch, test_cir);
    Ok((summary, outcome.history, best))
}

/// Trains `arch` on `dataset` under `cfg` (model init, split and batch order
/// all derive from `cfg.seed`).
pub fn run_experiment(cfg: &RunConfig, dataset: &Dataset, arch: Arch) -> Result<Experiment> {
    cfg.validate()?;
    let split = split_for(cfg, dataset)?;
    let mut rng = Rng::with_stream(cfg.seed, streams::INIT);
    match arch {
        Arch::Fused(variant) => {
            let net = FpvCsafmModel::new(model_config(cfg, dataset, variant), &mut rng)?;
            let (summary, history, best) = fit(net, cfg, dataset, &split, arch.tag())?;
            Ok(Experiment { summary, history, model: Some(best) })
        }
        Arch::Unimodal(modality) => {
            let net = UnimodalModel::new(modality, &model_config(cfg, dataset, cfg.variant), &mut rng)?;
            let (summary, history, _) = fit(net, cfg, dataset, &split, arch.tag())?;
            Ok(Experiment { summary, history, model: None })
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the synthetic dataset for `spec` and returns the number of files.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<usize> {
    let data = synth_generate(spec, &mut Rng::with_stream(seed, streams::NOISE))?;
    create_dir(out)?;
    write_dataset(&data, out)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    info!("dataset: {} classes, {} pairs", dataset.classes(), dataset.samples.len());
    let exp = run_experiment(cfg, &dataset, Arch::Fused(cfg.variant))?;
    create_dir(&cfg.out)?;
    exp.model.as_ref().expect("fused run keeps its model").save(cfg.out.join("weights.csaf"))?;
    write_file(&cfg.out.join("history.csv"), history_csv(&exp.history))?;
    write_file(&cfg.out.join("summary.json"), serde_json::to_string_pretty(&exp.summary)? + "\n")?;
    Ok(exp.summary)
}

/// Test-split CIR of the weight file on the dataset and split of `cfg`.
pub fn cmd_eval(weights: &Path, cfg: &RunConfig) -> Result<f64> {
    let dataset = load_dataset(cfg)?;
    let mut model = FpvCsafmModel::load(weights)?;
    if model.config.classes != dataset.classes() {
        return Err(Error::Dimension(format!(
            "weight file head has {} classes but the dataset has {}",
            model.config.classes,
            dataset.classes()
        )));
    }
    let split = split_for(cfg, &dataset)?;
    evaluate(&mut model, &dataset.samples, &split.test(), cfg.batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: FusionVariant,
    pub best_val_cir: f64,
    pub test_cir: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,best_val_cir,test_cir\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.variant, r.best_val_cir, r.test_cir));
    }
    s
}

/// Trains every variant in [`FusionVariant::ALL`] order on the same data and
/// seed. With `concurrent` the variants run on separate worker threads; each
/// result is identical to the sequential one.
pub fn cmd_ablate(cfg: &RunConfig, concurrent: bool) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let run = |i: usize| -> Result<AblationRow> {
        let variant = FusionVariant::ALL[i];
        let exp = run_experiment(cfg, &dataset, Arch::Fused(variant))?;
        Ok(AblationRow { variant, best_val_cir: exp.summary.best_val_cir, test_cir: exp.summary.test_cir })
    };
    let rows: Vec<AblationRow> = if concurrent {
        parallel::map_indices(FusionVariant::ALL.len(), run).into_iter().collect::<Result<_>>()?
    } else {
        (0..FusionVariant::ALL.len()).map(run).collect::<Result<_>>()?
    };
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

fn load_run_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let spec = match config {
                Some(p) => read_json::<SynthSpec>(p)?,
                None => SynthSpec::default(),
            };
            spec.validate()?;
            let files = cmd_synth(&spec, seed, &out)?;
            info!("wrote {files} PGM files to {}", out.display());
        }
        Command::Train { config, seed, out } => {
            let cfg = load_run_config(&config, seed, out)?;
            let s = cmd_train(&cfg)?;
            info!("test CIR {:.2}%, outputs in {}", s.test_cir, cfg.out.display());
        }
        Command::Eval { weights, config, seed, dataset } => {
            let mut cfg = load_run_config(&config, seed, None)?;
            if let Some(d) = dataset {
                cfg.dataset = DatasetSource::Dir(d);
            }
            let test_cir = cmd_eval(&weights, &cfg)?;
            println!("{}", serde_json::json!({ "test_cir": test_cir, "seed": cfg.seed }));
        }
        Command::Ablate { config, seed, out, parallel } => {
            let cfg = load_run_config(&config, seed, out)?;
            let rows = cmd_ablate(&cfg, parallel)?;
            eprint!("{}", ablation_csv(&rows));
        }
        Command::Verify { oracle_instances } => {
            let results = verify::run_all(oracle_instances);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {} failed", results.len(), failed);
            return Ok(if failed == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}
