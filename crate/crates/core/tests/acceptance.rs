//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset
//! (`cargo test --test acceptance -- 5`).

use std::time::Instant;

use csafm::cli::{cmd_train, run_experiment, Arch};
use csafm::config::{DatasetSource, RunConfig};
use csafm::data::{synth_generate, SynthSpec};
use csafm::gradcheck::all_checks;
use csafm::model::Modality;
use csafm::tensor::Rng;
use csafm::train::streams;
use csafm::verify;
use csafm::FusionVariant;

type Criterion = (&'static str, &'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let conv = verify::conv_oracle_max_err(200, 2024).expect("conv oracle run");
    let pool = verify::pool_oracle_mismatches(200, 2025).expect("pool oracle run");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        conv <= 1e-5 && pool == 0 && secs < 30.0,
        format!("conv max abs err {conv:.2e} (<= 1e-5), pool mismatches {pool} (== 0), {secs:.1} s (< 30 s)"),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let checks = all_checks();
    let secs = start.elapsed().as_secs_f64();
    let mut failed = Vec::new();
    let mut worst_layer = 0.0f64;
    let mut worst_composite = 0.0f64;
    for (name, c) in &checks {
        match c {
            Ok(c) if c.passed() => {
                if c.tol <= 1e-6 {
                    worst_layer = worst_layer.max(c.rel_err);
                } else {
                    worst_composite = worst_composite.max(c.rel_err);
                }
            }
            Ok(c) => failed.push(format!("{} ({:.2e})", c.name, c.rel_err)),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    outcome(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks, worst layer {worst_layer:.2e} (< 1e-6), worst composite {worst_composite:.2e} (< 1e-5), {secs:.1} s (< 120 s){}",
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join("; ")) }
        ),
    )
}

fn fusion_identities() -> Outcome {
    let zero = verify::zero_attention_failures(100, 31).expect("identity run");
    let range = verify::coefficient_range_failures(100, 32).expect("range run");
    outcome(
        zero == 0 && range == 0,
        format!("0.25 (fp + fv) exact: {zero}/100 failures; coefficients in (0, 1): {range}/100 failures"),
    )
}

fn shape_pipeline() -> Outcome {
    let (got, oracle) = verify::shape_pipeline().expect("backbone run");
    let a = csafm::Tensor::<f32>::zeros([1, 512, 4, 7]).unwrap();
    let b = csafm::Tensor::<f32>::zeros([1, 512, 3, 9]).unwrap();
    let (x, y) = csafm::fusion::standardize(&a, &b).unwrap();
    let ok = got == oracle && (got.c, got.h, got.w) == (512, 4, 7) && (x.dims().h, x.dims().w, y.dims().h, y.dims().w) == (3, 7, 3, 7);
    outcome(ok, format!("200x400 -> {got} (oracle {oracle}); standardize -> {} / {}", x.dims(), y.dims()))
}

/// Training setup for the synthetic reproduction.
fn synthetic_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        dataset: DatasetSource::Synth(SynthSpec::default()),
        r1: 4,
        r2: 4,
        lr: 3e-3,
        batch: 8,
        epochs: 40,
        width_multiplier: 1.0 / 16.0,
        ..RunConfig::default()
    }
}

fn qualitative_reproduction() -> Outcome {
    let start = Instant::now();
    let seeds = [1u64, 2, 3];
    let mut all_i_ii = true;
    let mut iii_count = 0;
    let mut lines = Vec::new();
    for seed in seeds {
        let cfg = synthetic_config(seed);
        let spec = SynthSpec::default();
        let data = synth_generate(&spec, &mut Rng::with_stream(seed, streams::NOISE)).expect("synth");
        let test_cir = |arch: Arch| run_experiment(&cfg, &data, arch).expect("training run").summary.test_cir;
        let fp = test_cir(Arch::Unimodal(Modality::Fingerprint));
        let fv = test_cir(Arch::Unimodal(Modality::Vein));
        let fused: Vec<(FusionVariant, f64)> = FusionVariant::ALL.iter().map(|&v| (v, test_cir(Arch::Fused(v)))).collect();
        let get = |v: FusionVariant| fused.iter().find(|(x, _)| *x == v).unwrap().1;
        let uni = fp.max(fv);
        let i = fp <= 40.0 && fv <= 40.0;
        let ii = fused.iter().all(|&(_, c)| c >= uni + 20.0);
        let (csafm, serial) = (get(FusionVariant::Csafm), get(FusionVariant::SerialSum));
        let iii = csafm >= serial - 2.0 && csafm >= 90.0;
        all_i_ii &= i && ii;
        iii_count += usize::from(iii);
        let table: Vec<String> = fused.iter().map(|(v, c)| format!("{v} {c:.2}")).collect();
        lines.push(format!(
            "    seed {seed}: fp {fp:.2}, fv {fv:.2} | {} | (i) {i} (ii) {ii} (iii) {iii}",
            table.join(", ")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = all_i_ii && iii_count >= 2 && secs < 600.0;
    outcome(
        passed,
        format!(
            "(i)+(ii) on all seeds: {all_i_ii}; (iii) on {iii_count}/3 seeds (>= 2); {secs:.0} s (< 600 s)\n{}",
            lines.join("\n")
        ),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut runs = Vec::new();
    for d in &dirs {
        let cfg = RunConfig { epochs: 3, out: d.path().to_path_buf(), ..synthetic_config(7) };
        let summary = cmd_train(&cfg).expect("train");
        let history = std::fs::read(d.path().join("history.csv")).unwrap();
        let weights = std::fs::read(d.path().join("weights.csaf")).unwrap();
        runs.push((summary, history, weights));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let same_summary = csafm::cli::RunSummary { wall_seconds: 0.0, ..a.0.clone() } == csafm::cli::RunSummary { wall_seconds: 0.0, ..b.0.clone() };
    let ok = a.1 == b.1 && a.2 == b.2 && same_summary;
    outcome(
        ok,
        format!(
            "history identical: {}, weights identical: {} ({} bytes), summary identical except wall time: {same_summary}",
            a.1 == b.1,
            a.2 == b.2,
            a.2.len()
        ),
    )
}

fn serialization() -> Outcome {
    let round_trip = verify::serialization_round_trip(71).expect("round trip");
    let errors = verify::corruption_errors().expect("corruptions");
    let ok = round_trip && errors == ["bad_magic", "version", "truncated"];
    outcome(ok, format!("bitwise round trip: {round_trip}; corruptions -> {}", errors.join(", ")))
}

fn cir_metric() -> Outcome {
    let ok = verify::cir_checks(100, 81).expect("cir");
    outcome(ok, "3/4 -> 75.0, all -> 100.0, invariant over 100 shuffles")
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("1", "oracle equivalence", oracle_equivalence),
        ("2", "gradient checks", gradient_checks),
        ("3", "fusion identities", fusion_identities),
        ("4", "shape pipeline", shape_pipeline),
        ("5", "synthetic qualitative reproduction", qualitative_reproduction),
        ("6", "determinism", determinism),
        ("7", "serialization", serialization),
        ("8", "CIR metric", cir_metric),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let o = run();
        failed += usize::from(!o.passed);
        println!("{} criterion {id} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
