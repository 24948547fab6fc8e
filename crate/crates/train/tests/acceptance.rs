//! One PASS/FAIL line per acceptance criterion.
//!
//! Criterion 7 needs the real CIFAR-10 binaries in `MOHSA_CIFAR10_DIR`.
//! Without them its real-data thresholds cannot be evaluated: the line is
//! printed as FAIL (blocked) and the remaining parts run on a CIFAR-layout
//! stand-in, but the process only exits non-zero for criteria that ran.

mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use mohsa_core::oracle::{self, CheckReport, SweepSpec};
use mohsa_core::{
    count_params, estimate_flops, init_weights, parse_policy, ModelConfig, OverlapTargets, SchedulePolicy,
};
use mohsa_train::checkpoint::Checkpoint;
use mohsa_train::metrics::parse_csv;
use mohsa_train::{evaluate, render_curves, Split, SyntheticSpec, TrainConfig};

struct Outcome {
    pass: bool,
    blocked: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            blocked: false,
            detail,
        }
    }
}

fn mohsa(args: &[&str]) -> (i32, String, Duration) {
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_mohsa")).args(args).output().unwrap();
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        t.elapsed(),
    )
}

fn policy(s: &str) -> SchedulePolicy {
    parse_policy(s).unwrap()
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn schedule_fidelity() -> Outcome {
    let (c1, inc, t1) = mohsa(&["schedule", "inc-0(2)", "--depth", "12"]);
    let (c2, dec, t2) = mohsa(&["schedule", "dec-1(1)", "--depth", "12"]);
    let pass = c1 == 0
        && c2 == 0
        && inc == "(0,0,1,1,2,2,3,3,4,4,5,5)\n"
        && dec == "(12,11,10,9,8,7,6,5,4,3,2,1)\n"
        && t1.max(t2) < Duration::from_secs(1);
    Outcome::new(
        pass,
        format!("inc-0(2) -> {}, dec-1(1) -> {}, slowest {:?}", inc.trim(), dec.trim(), t1.max(t2)),
    )
}

fn check(report: &CheckReport, limit: Duration, started: Instant) -> Outcome {
    let elapsed = started.elapsed();
    Outcome::new(
        report.passed() && elapsed < limit,
        format!(
            "{}: {} cases, max error {:.3e} (tol {:.0e}), {} failures, {:.1?}",
            report.title,
            report.rows.len(),
            report.max_error(),
            report.tolerance,
            report.failures(),
            elapsed
        ),
    )
}

fn degeneracy() -> Outcome {
    let t = Instant::now();
    let r = oracle::run_degeneracy_check(50, 2024).unwrap();
    let mut o = check(&r, Duration::from_secs(30), t);
    o.pass &= r.rows.len() == 50 && r.rows.iter().all(|row| row.error == 0.0);
    o
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let spec = SweepSpec::small();
    let cases = spec.cases();
    let covers_targets = OverlapTargets::ALL
        .iter()
        .all(|tg| cases.iter().any(|c| c.cfg.targets == *tg));
    let covers_boundary = cases
        .iter()
        .any(|c| c.cfg.overlap == c.cfg.dim / c.cfg.heads && c.cfg.overlap > 1);
    let r = oracle::run_oracle_sweep(&spec).unwrap();
    let mut o = check(&r, Duration::from_secs(120), t);
    o.pass &= cases.len() >= 100 && covers_targets && covers_boundary;
    o
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut reports = vec![oracle::run_layer_gradcheck(&SweepSpec::small()).unwrap()];
    for p in ["fixed 0", "inc-1 (1)", "fixed half"] {
        let cfg = ModelConfig::tiny_test().with_policy(policy(p));
        reports.push(oracle::run_vit_gradcheck(&cfg, 2, 11).unwrap());
    }
    let elapsed = t.elapsed();
    let pass = reports.iter().all(|r| r.passed()) && elapsed < Duration::from_secs(300);
    let detail = reports
        .iter()
        .map(|r| format!("{} max {:.2e}/{:.0e}", r.title, r.max_error(), r.tolerance))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome::new(pass, format!("{detail}; {elapsed:.1?}"))
}

/// Reference 10-class figures per policy: Tiny params (M), Tiny
/// GFLOPs, Small params (M), Small GFLOPs.
const REFERENCE: [(&str, f64, f64, f64, f64); 13] = [
    ("fixed 0", 5.5, 1.3, 21.7, 4.6),
    ("fixed 1", 5.6, 1.3, 21.8, 4.7),
    ("fixed half", 6.0, 1.5, 23.4, 5.3),
    ("inc-0 (1)", 5.8, 1.4, 22.3, 4.9),
    ("inc-0 (3)", 5.6, 1.3, 21.8, 4.7),
    ("inc-0 (6)", 5.5, 1.3, 21.7, 4.6),
    ("inc-1 (1)", 5.9, 1.5, 22.4, 4.9),
    ("inc-1 (3)", 5.7, 1.3, 21.9, 4.7),
    ("inc-1 (4)", 5.6, 1.3, 21.9, 4.7),
    ("dec-0 (1)", 5.8, 1.4, 22.3, 4.9),
    ("dec-0 (3)", 5.6, 1.3, 21.8, 4.7),
    ("dec-1 (1)", 5.9, 1.5, 22.4, 4.9),
    ("dec-1 (3)", 5.7, 1.3, 21.9, 4.7),
];

fn enumerated(cfg: &ModelConfig) -> u64 {
    let w = init_weights::<f32>(cfg, 0).unwrap();
    w.entries().iter().map(|(_, t)| t.data().len() as u64).sum()
}

fn param_counts() -> Outcome {
    let m = |n: u64| n as f64 / 1e6;
    let tiny_1k = count_params(&ModelConfig::vit_tiny(1000)).unwrap();
    let tiny_10 = count_params(&ModelConfig::vit_tiny(10)).unwrap();
    let small_10 = count_params(&ModelConfig::vit_small(10)).unwrap();
    let small_1k = count_params(&ModelConfig::vit_small(1000)).unwrap();
    let tiny_half = count_params(&ModelConfig::vit_tiny(10).with_policy(policy("fixed half"))).unwrap();
    let small_half = count_params(&ModelConfig::vit_small(10).with_policy(policy("fixed half"))).unwrap();
    let small_ok = |n: u64| m(n) >= 21.7 * 0.99 && m(n) <= 22.0 * 1.01;
    let mut pass = within(m(tiny_1k), 5.7, 0.01)
        && within(m(tiny_10), 5.5, 0.01)
        && small_ok(small_10)
        && small_ok(small_1k)
        && within(m(tiny_half), 6.0, 0.01)
        && within(m(small_half), 23.4, 0.01)
        && within(m(tiny_half - tiny_10), 0.5, 0.15)
        && within(m(small_half - small_10), 1.7, 0.1);
    let mut rows = 0;
    for (p, tp, _, sp, _) in REFERENCE {
        pass &= within(m(count_params(&ModelConfig::vit_tiny(10).with_policy(policy(p))).unwrap()), tp, 0.01);
        pass &= within(m(count_params(&ModelConfig::vit_small(10).with_policy(policy(p))).unwrap()), sp, 0.01);
        rows += 2;
    }
    let mut enumerations = 0;
    for cfg in [
        ModelConfig::vit_tiny(1000),
        ModelConfig::vit_tiny(10).with_policy(policy("fixed half")),
        ModelConfig::vit_small(10).with_policy(policy("inc-1 (1)")),
        ModelConfig::vit_micro(),
        ModelConfig::vit_micro().with_policy(policy("fixed 1")),
        ModelConfig::tiny_test().with_targets(OverlapTargets::V),
    ] {
        pass &= enumerated(&cfg) == count_params(&cfg).unwrap();
        enumerations += 1;
    }
    Outcome::new(
        pass,
        format!(
            "Tiny {tiny_1k} (1000 cls) / {tiny_10} (10 cls), Small {small_10} / {small_1k}, \
             fixed-half delta +{} Tiny / +{} Small, {rows} reference rows within 1%, \
             {enumerations} configs enumerate exactly"
        , tiny_half - tiny_10, small_half - small_10),
    )
}

fn flops() -> Outcome {
    let g = |cfg: &ModelConfig| estimate_flops(cfg, 224).unwrap() as f64 / 1e9;
    let tiny = g(&ModelConfig::vit_tiny(1000));
    let small = g(&ModelConfig::vit_small(1000));
    let half = g(&ModelConfig::vit_tiny(1000).with_policy(policy("fixed half")));
    let mut pass = within(tiny, 1.3, 0.1) && within(small, 4.6, 0.1) && within(half, 1.5, 0.1);
    for (p, _, tf, _, sf) in REFERENCE {
        pass &= within(g(&ModelConfig::vit_tiny(10).with_policy(policy(p))), tf, 0.1);
        pass &= within(g(&ModelConfig::vit_small(10).with_policy(policy(p))), sf, 0.1);
    }
    let mut invariant = true;
    for base in [ModelConfig::vit_tiny(10), ModelConfig::vit_small(10)] {
        for p in ["fixed 1", "fixed half", "inc-0 (1)"] {
            let qk = base.clone().with_policy(policy(p)).with_targets(OverlapTargets::QK);
            invariant &= count_params(&qk).unwrap() == count_params(&base).unwrap();
            invariant &= estimate_flops(&qk, 224).unwrap() > estimate_flops(&base, 224).unwrap();
        }
    }
    Outcome::new(
        pass && invariant,
        format!(
            "Tiny {tiny:.3}G, Small {small:.3}G, Tiny fixed half {half:.3}G, reference rows within 10%, \
             Q/K-only params invariant: {invariant}"
        ),
    )
}

fn synthetic_run(dir: &std::path::Path) -> (bool, String) {
    let mut tc = TrainConfig::from_file(&common::configs_dir().join("train/synthetic.cfg")).unwrap();
    tc.output = dir.join("synthetic");
    let model = common::small_model();
    let out = mohsa_train::train(&tc, &model).unwrap();
    let first = out
        .records
        .iter()
        .filter(|r| r.split == Split::Val)
        .find(|r| r.acc > 0.9);
    let best = out
        .records
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| r.acc)
        .fold(0.0, f64::max);
    match first {
        Some(r) if tc.epochs <= 20 => (
            true,
            format!("synthetic val acc {:.3} at epoch {} (best {best:.3})", r.acc, r.epoch),
        ),
        _ => (false, format!("synthetic best val acc {best:.3} in {} epochs", tc.epochs)),
    }
}

fn protocol_summary(runs: &[common::ProtocolRun]) -> String {
    runs.iter()
        .map(|r| {
            format!(
                "{}: {}+{} records, rerun identical {}, loss ratio {:.3}, val acc {:.3}",
                r.name,
                r.train_records,
                r.val_records,
                r.deterministic,
                r.loss_ratio(),
                r.last_val_acc
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn protocol_ok(runs: &[common::ProtocolRun]) -> bool {
    runs.iter()
        .all(|r| r.deterministic && r.train_records == 5 && r.val_records == 5)
}

fn desk_training(work: &std::path::Path) -> (Outcome, Vec<(String, String)>) {
    let t = Instant::now();
    let (synth_ok, synth) = synthetic_run(work);
    match std::env::var_os("MOHSA_CIFAR10_DIR").map(PathBuf::from) {
        Some(dir) => {
            let runs = common::cifar_protocol(&dir, 0, 0);
            let thresholds = runs
                .iter()
                .all(|r| r.loss_ratio() < 0.6 && r.last_val_acc > 0.35);
            let elapsed = t.elapsed();
            let pass = synth_ok && protocol_ok(&runs) && thresholds && elapsed < Duration::from_secs(3600);
            let csvs = runs.iter().map(|r| (r.name.clone(), r.csv.clone())).collect();
            (
                Outcome::new(
                    pass,
                    format!("CIFAR-10 at {}: {}; {synth}; {elapsed:.0?}", dir.display(), protocol_summary(&runs)),
                ),
                csvs,
            )
        }
        None => {
            let stand_in = work.join("cifar-layout");
            common::fake_cifar(&stand_in, 256, 128, 42);
            let runs = common::cifar_protocol(&stand_in, 128, 64);
            let csvs = runs.iter().map(|r| (r.name.clone(), r.csv.clone())).collect();
            let parts_ok = synth_ok && protocol_ok(&runs);
            (
                Outcome {
                    pass: false,
                    blocked: true,
                    detail: format!(
                        "blocked: MOHSA_CIFAR10_DIR is not set, so the real CIFAR-10 loss-ratio and \
                         accuracy thresholds were not evaluated; runnable parts {}: {synth}; \
                         protocol on a CIFAR-layout stand-in ({}); {:.0?}",
                        if parts_ok { "pass" } else { "FAIL" },
                        protocol_summary(&runs),
                        t.elapsed()
                    ),
                },
                csvs,
            )
        }
    }
}

fn round_trips(work: &std::path::Path) -> Outcome {
    let cfg = ModelConfig::vit_micro().with_policy(policy("fixed 1"));
    let ck = Checkpoint {
        model: cfg.clone(),
        weights: init_weights::<f32>(&cfg, 42).unwrap(),
        train_echo: String::new(),
        epoch: 3,
    };
    let data = SyntheticSpec::new(10, 32, 0.1).generate(5, 64, 1).unwrap();
    let before = evaluate(&ck, &data, Split::Val, 32).unwrap();
    let path = work.join("roundtrip.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    let after = evaluate(&loaded, &data, Split::Val, 32).unwrap();
    let bitwise = before.loss.to_bits() == after.loss.to_bits() && before.acc.to_bits() == after.acc.to_bits();

    let bad = work.join("bad-cifar");
    common::fake_cifar(&bad, 10, 4, 0);
    std::fs::write(bad.join("data_batch_2.bin"), vec![0u8; 3073 + 100]).unwrap();
    let (code, _, _) = mohsa(&[
        "eval",
        "--ckpt",
        path.to_str().unwrap(),
        "--data",
        bad.to_str().unwrap(),
    ]);
    Outcome::new(
        bitwise && loaded == ck && code == 3,
        format!("checkpoint evaluate bitwise equal: {bitwise}; bad CIFAR length exit code {code}"),
    )
}

fn plot(runs: &[(String, String)]) -> Outcome {
    let svg = match render_curves(runs) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("render failed: {e}")),
    };
    let doc = match roxmltree::Document::parse(&svg) {
        Ok(d) => d,
        Err(e) => return Outcome::new(false, format!("SVG is not well-formed: {e}")),
    };
    let lines: Vec<_> = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .map(|n| (n.attribute("data-run").unwrap_or(""), n.attribute("data-split").unwrap_or("")))
        .collect();
    let mut pass = doc.root_element().has_tag_name("svg") && lines.len() == 4;
    for (name, csv) in runs {
        let points = parse_csv(csv).unwrap().len();
        pass &= points == 10;
        for split in ["train", "val"] {
            pass &= lines.iter().filter(|(r, s)| r == name && *s == split).count() == 1;
        }
    }
    Outcome::new(pass, format!("{} polylines from {} runs, well-formed XML", lines.len(), runs.len()))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "schedule fidelity", schedule_fidelity()));
    results.push((2, "MHSA degeneracy", degeneracy()));
    results.push((3, "oracle equivalence", oracle_equivalence()));
    results.push((4, "gradient correctness", gradients()));
    results.push((5, "parameter counts", param_counts()));
    results.push((6, "FLOPs", flops()));
    let (training, csvs) = desk_training(work.path());
    results.push((7, "desk-scale training", training));
    results.push((8, "round-trips", round_trips(work.path())));
    results.push((9, "plot emission", plot(&csvs)));

    println!();
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass && !o.blocked {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
