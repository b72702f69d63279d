//! JSON run configuration. Unknown keys are rejected and every field is
//! validated before any data is touched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::fusion::FusionVariant;
use crate::ops::norm::{DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::train::{AdamConfig, SplitFractions, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A directory in the `<class>/fp|fv/*.pgm` layout.
    Dir(PathBuf),
    /// Generated in memory from the run seed.
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub variant: FusionVariant,
    pub r1: usize,
    pub r2: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub split: SplitFractions,
    pub width_multiplier: f64,
    pub literal_double_mul: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetSource::Synth(SynthSpec::default()),
            variant: FusionVariant::Csafm,
            r1: 16,
            r2: 16,
            lr: 1e-4,
            batch: 32,
            epochs: 100,
            split: SplitFractions::default(),
            width_multiplier: 1.0,
            literal_double_mul: false,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_eps: DEFAULT_EPS,
            out: PathBuf::from("out"),
        }
    }
}

/// Parses JSON, naming the source on failure (serde's message carries the
/// line and column).
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, source: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", source.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("bn_momentum must be in (0, 1] and bn_eps > 0".into()));
        }
        let channels = self.backbone().feature_channels()?;
        for (name, r) in [("r1", self.r1), ("r2", self.r2)] {
            if r == 0 || channels % r != 0 {
                return Err(Error::Config(format!("{name} = {r} does not divide the {channels} feature channels")));
            }
        }
        if let DatasetSource::Synth(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig { width_multiplier: self.width_multiplier, bn_momentum: self.bn_momentum, bn_eps: self.bn_eps }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            batch: self.batch,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let cfg: RunConfig = parse_json("{}", Path::new("x.json")).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = r#"{"seed": 7, "variant": "SERIAL_SUM", "dataset": {"dir": "data"}, "split": {"train": 0.5, "val": 0.25, "test": 0.25}}"#;
        let cfg: RunConfig = parse_json(text, Path::new("x.json")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.variant, FusionVariant::SerialSum);
        assert_eq!(cfg.dataset, DatasetSource::Dir("data".into()));
        assert_eq!(cfg.batch, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_json::<RunConfig>("{\n  \"seed\": 1,\n  \"lr\": ,\n}", Path::new("run.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("run.json") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(parse_json::<RunConfig>(r#"{"sed": 1}"#, Path::new("x")).is_err());
        let bad = [
            RunConfig { batch: 0, ..Default::default() },
            RunConfig { epochs: 0, ..Default::default() },
            RunConfig { split: SplitFractions { train: 0.3, val: 0.3, test: 0.3 }, ..Default::default() },
            RunConfig { r1: 3, ..Default::default() },
            RunConfig { width_multiplier: 0.3, ..Default::default() },
            RunConfig { lr: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
