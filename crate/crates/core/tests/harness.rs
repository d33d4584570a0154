mod common;

use std::process::Command;

use common::{config, run_on};
use cta_core::error::CtaError;
use cta_core::harness::log::{read_jsonl, SUMMARY_HEADER};
use cta_core::harness::{run_experiment, Benchmark, ExperimentConfig, Method};
use cta_core::simulator::Preset;

const SHORT: &str = r#"
seed = 3
model_seed = 0
method = "ours-skip"
reference_samples = 300

[scenario]
segment_steps = 30

[[scenario.segments]]
label = "fog"
dim = 0.3
drift = 0.4

[[scenario.segments]]
label = "clear"
"#;

fn short(method: Method) -> (ExperimentConfig, Benchmark) {
    let mut cfg = config(Preset::ShiftDiscreteLike, method, 0);
    cfg.scenario.segment_steps = Some(150);
    let bench = Benchmark::build(&cfg).unwrap();
    (cfg, bench)
}

fn with_method(cfg: &ExperimentConfig, method: Method) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.method = method;
    c
}

#[test]
fn direct_never_updates() {
    let (cfg, bench) = short(Method::Direct);
    let out = run_on(&cfg, &bench);
    assert_eq!(out.summary.backward_steps, 0);
    assert!(out
        .records
        .iter()
        .all(|r| !r.updated && r.cumulative_backward_count == 0));
    assert_eq!(
        out.summary.forward_steps as usize,
        bench.schedule.total_steps()
    );
}

#[test]
fn ours_updates_every_step_and_beats_direct() {
    let mut cfg = config(Preset::CocoCLike, Method::Ours, 0);
    cfg.scenario.segment_steps = Some(300);
    let bench = Benchmark::build(&cfg).unwrap();
    let ours = run_on(&cfg, &bench);
    let direct = run_on(&with_method(&cfg, Method::Direct), &bench);
    assert_eq!(ours.summary.backward_steps, ours.summary.forward_steps);
    assert!(ours.summary.shifted_accuracy() > direct.summary.shifted_accuracy());
}

#[test]
fn predictions_come_before_the_update() {
    let (cfg, bench) = short(Method::Ours);
    let ours = run_on(&cfg, &bench);
    let direct = run_on(&with_method(&cfg, Method::Direct), &bench);
    assert_eq!(ours.records[0].accuracy, direct.records[0].accuracy);
    assert_eq!(ours.records[0].l_img, direct.records[0].l_img);
    assert!(ours.records[0].updated);
}

#[test]
fn adaptor_methods_leave_the_backbone_alone() {
    let (cfg, bench) = short(Method::Ours);
    let direct = run_on(&with_method(&cfg, Method::Direct), &bench);
    for m in [Method::Ours, Method::OursSkip, Method::EvenlySkip(3)] {
        let out = run_on(&with_method(&cfg, m), &bench);
        assert_eq!(out.backbone, direct.backbone, "{m}");
    }
    let full = run_on(&with_method(&cfg, Method::Full), &bench);
    assert_ne!(full.backbone, direct.backbone);
}

#[test]
fn log_counts_are_consistent() {
    let (cfg, bench) = short(Method::OursSkip);
    let out = run_on(&cfg, &bench);
    let mut prev = 0;
    for (t, r) in out.records.iter().enumerate() {
        assert_eq!(r.t, t);
        assert!(r.cumulative_backward_count >= prev);
        assert_eq!(r.cumulative_backward_count - prev, u64::from(r.updated));
        assert_eq!(r.updated, r.fired1 || r.fired2);
        prev = r.cumulative_backward_count;
    }
    assert_eq!(prev, out.summary.backward_steps);
    let per_segment: u64 = out.summary.segments.iter().map(|s| s.backward_steps).sum();
    assert_eq!(per_segment, prev);
}

#[test]
fn evenly_skip_updates_on_the_grid() {
    let (cfg, bench) = short(Method::EvenlySkip(4));
    let out = run_on(&cfg, &bench);
    assert!(out.records.iter().all(|r| r.updated == (r.t % 4 == 0)));
}

#[test]
fn sentinel_thresholds_recover_the_baselines() {
    let (mut cfg, bench) = short(Method::OursSkip);
    cfg.thresholds.tau1 = f64::NEG_INFINITY;
    cfg.thresholds.tau2 = f64::NEG_INFINITY;
    let always = run_on(&cfg, &bench);
    let ours = run_on(&with_method(&cfg, Method::Ours), &bench);
    assert_eq!(always.records, ours.records);

    cfg.thresholds.tau1 = f64::INFINITY;
    cfg.thresholds.tau2 = f64::INFINITY;
    let never = run_on(&cfg, &bench);
    let direct = run_on(&with_method(&cfg, Method::Direct), &bench);
    assert_eq!(never.summary.backward_steps, 0);
    let acc =
        |o: &cta_core::harness::RunOutput| o.records.iter().map(|r| r.accuracy).collect::<Vec<_>>();
    assert_eq!(acc(&never), acc(&direct));
}

#[test]
fn divergence_aborts_with_partial_log() {
    let (mut cfg, bench) = short(Method::Full);
    cfg.rates.lr = 1e8;
    let err = run_experiment(&cfg, &bench).expect_err("a huge step size should blow up");
    match err.error {
        CtaError::Diverged { step, .. } => {
            assert_eq!(err.records.len(), step);
            assert!(step < bench.schedule.total_steps());
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn cli_run_sweep_prep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("short.toml");
    std::fs::write(&cfg_path, SHORT).unwrap();
    let out = dir.path().join("out");
    let cta = env!("CARGO_BIN_EXE_cta");

    let status = Command::new(cta)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--method", "ours", "--seed", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let jsonl = std::fs::read_to_string(out.join("ours-seed5.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "accuracy",
            "cumulative_backward_count",
            "fired1",
            "fired2",
            "l_img",
            "l_obj",
            "l_total",
            "ratio1",
            "ratio2",
            "segment_id",
            "t",
            "updated"
        ]
    );
    assert_eq!(read_jsonl(&out.join("ours-seed5.jsonl")).unwrap().len(), 60);
    let csv = std::fs::read_to_string(out.join("ours-seed5.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(
        csv.lines().next().unwrap(),
        "method,seed,segment,accuracy,backward_steps,forward_steps,steps_per_sec"
    );

    let status = Command::new(cta)
        .args(["sweep", "--config"])
        .arg(&cfg_path)
        .args(["--param", "tau1", "--values", "1.1,inf", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("sweep-tau1.csv").exists());
    assert!(out.join("frontier-tau1.csv").exists());

    let refs = dir.path().join("refs.ctastats");
    let status = Command::new(cta)
        .args(["prep", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&refs)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&refs)
        .unwrap()
        .starts_with("ctastats v1"));

    std::fs::write(&cfg_path, format!("bogus = 1\n{SHORT}")).unwrap();
    let status = Command::new(cta)
        .args(["prep", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(!status.success());
}
