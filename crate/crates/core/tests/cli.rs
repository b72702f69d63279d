use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csafm::cli::{cmd_ablate, load_dataset, model_config, split_for, RunSummary};
use csafm::config::{DatasetSource, RunConfig};
use csafm::data::SynthSpec;
use csafm::model::FpvCsafmModel;
use csafm::tensor::Rng;
use csafm::train::{evaluate, streams};
use csafm::FusionVariant;

fn csafm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csafm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn csafm")
}

fn small(grid: [usize; 2]) -> SynthSpec {
    SynthSpec { grid, fp_size: [32, 48], fv_size: [24, 40], noise_sigma: 0.05, ..SynthSpec::default() }
}

fn small_config(out: &Path, epochs: usize, lr: f64) -> RunConfig {
    RunConfig {
        seed: 11,
        dataset: DatasetSource::Synth(small([2, 2])),
        r1: 4,
        r2: 4,
        lr,
        batch: 4,
        epochs,
        width_multiplier: 1.0 / 16.0,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_default_writes_320_files_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = csafm(&["synth", "--seed", "0", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 320);
    assert_eq!(ta, tb);
    assert!(ta.keys().all(|k| k.extension().is_some_and(|e| e == "pgm")));
    assert_eq!(csafm::data::ingest_dir(&a).unwrap().classes(), 16);
}

#[test]
fn config_errors_exit_nonzero_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"seed\": 3,\n  \"epochs\": ,\n  \"lr\": 0.1\n}\n").unwrap();
    let o = csafm(&["train", "--config", bad.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2));
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");

    fs::write(&bad, r#"{"epoch": 3}"#).unwrap();
    let o = csafm(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));

    let o = csafm(&["train", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(&out, 1, 3e-3);
    let path = write_config(dir.path(), "run.json", &cfg);
    let o = csafm(&["train", "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let summary: RunSummary = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!((summary.variant.as_str(), summary.seed, summary.epochs_run, summary.best_epoch), ("CSAFM", 11, 1, 1));
    assert!((0.0..=100.0).contains(&summary.test_cir));
    let keys: Vec<String> = serde_json::from_slice::<serde_json::Map<String, serde_json::Value>>(&fs::read(out.join("summary.json")).unwrap())
        .unwrap()
        .keys()
        .cloned()
        .collect();
    for k in ["variant", "seed", "best_val_cir", "best_epoch", "last_val_cir", "test_cir", "epochs_run", "parameters", "wall_seconds"] {
        assert!(keys.iter().any(|x| x == k), "summary lacks {k}");
    }
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let o = csafm(&["eval", "--weights", out.join("weights.csaf").to_str().unwrap(), "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["test_cir"].as_f64().unwrap(), summary.test_cir);

    // test order does not matter
    let data = load_dataset(&cfg).unwrap();
    let mut test = split_for(&cfg, &data).unwrap().test();
    let mut model = FpvCsafmModel::load(out.join("weights.csaf")).unwrap();
    test.reverse();
    test.rotate_left(3);
    assert_eq!(evaluate(&mut model, &data.samples, &test, 5).unwrap(), summary.test_cir);

    // a 9-class dataset does not fit the 4-class head
    let other = RunConfig { dataset: DatasetSource::Synth(small([3, 3])), ..cfg.clone() };
    let other_path = write_config(dir.path(), "other.json", &other);
    let o = csafm(&["eval", "--weights", out.join("weights.csaf").to_str().unwrap(), "--config", other_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("classes"));

    // seed and out overrides
    let out2 = dir.path().join("run2");
    let o = csafm(&["train", "--config", path.to_str().unwrap(), "--seed", "11", "--out", out2.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("weights.csaf")).unwrap(), fs::read(out2.join("weights.csaf")).unwrap());
    assert_eq!(history, fs::read_to_string(out2.join("history.csv")).unwrap());
}

#[test]
fn ablation_rows_and_untrained_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2, 0.0);
    let rows = cmd_ablate(&cfg, false).unwrap();
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("variant,best_val_cir,test_cir"));
    assert_eq!(csv.lines().count(), 8);
    let data = load_dataset(&cfg).unwrap();
    let split = split_for(&cfg, &data).unwrap();
    for (row, v) in rows.iter().zip(FusionVariant::ALL) {
        assert_eq!(row.variant, v);
        assert!((0.0..=100.0).contains(&row.test_cir) && (0.0..=100.0).contains(&row.best_val_cir));
        let mut fresh = FpvCsafmModel::new(model_config(&cfg, &data, v), &mut Rng::with_stream(cfg.seed, streams::INIT)).unwrap();
        assert_eq!(row.test_cir, evaluate(&mut fresh, &data.samples, &split.test(), cfg.batch).unwrap(), "{v}");
        assert_eq!(row.best_val_cir, evaluate(&mut fresh, &data.samples, &split.val(), cfg.batch).unwrap(), "{v}");
    }
    let concurrent = cmd_ablate(&cfg, true).unwrap();
    assert_eq!(rows, concurrent);
}

#[test]
fn verify_passes() {
    let o = csafm(&["verify", "--oracle-instances", "20"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    let passes = stdout.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(passes >= 12, "{stdout}");
    assert!(!stdout.lines().any(|l| l.starts_with("FAIL")));
}
