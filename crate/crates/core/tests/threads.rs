use csafm::cli::{cmd_ablate, load_dataset, model_config, split_for};
use csafm::config::{DatasetSource, RunConfig};
use csafm::data::SynthSpec;
use csafm::model::FpvCsafmModel;
use csafm::parallel;
use csafm::tensor::Rng;
use csafm::train::{streams, train_loop};

fn cfg(out: &std::path::Path) -> RunConfig {
    RunConfig {
        seed: 4,
        dataset: DatasetSource::Synth(SynthSpec { grid: [2, 2], fp_size: [32, 48], fv_size: [24, 40], ..SynthSpec::default() }),
        r1: 4,
        r2: 4,
        lr: 3e-3,
        batch: 4,
        epochs: 2,
        width_multiplier: 1.0 / 16.0,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn four_workers_match_one() {
    // own test binary, so the global pool is still unset here
    assert_eq!(parallel::init_threads(4), parallel::enabled());
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg(dir.path());
    let data = load_dataset(&cfg).unwrap();
    let split = split_for(&cfg, &data).unwrap();
    let run = || {
        let net = FpvCsafmModel::<f32>::new(model_config(&cfg, &data, cfg.variant), &mut Rng::with_stream(cfg.seed, streams::INIT)).unwrap();
        train_loop(net, &data.samples, &split, &cfg.train()).unwrap()
    };
    let pooled = run();
    let single = parallel::sequential(run);
    assert_eq!(pooled.history_csv(), single.history_csv());
    assert_eq!(pooled.last.to_bytes().unwrap(), single.last.to_bytes().unwrap());

    let a = cmd_ablate(&cfg, true).unwrap();
    let b = parallel::sequential(|| cmd_ablate(&cfg, false).unwrap());
    assert_eq!(a, b);
}
