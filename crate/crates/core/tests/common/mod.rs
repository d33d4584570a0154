#![allow(dead_code)]

use cta_core::harness::{run_experiment, Benchmark, ExperimentConfig, Method, RunOutput};
use cta_core::simulator::Preset;

/// Central differences, written out independently of the library helper.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let plus = f(&probe);
            probe[i] = theta[i] - h;
            let minus = f(&probe);
            probe[i] = theta[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `max |a − n|` scaled by the largest numeric component.
pub fn scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(1e-8_f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn config(preset: Preset, method: Method, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.preset = preset;
    cfg.method = method;
    cfg.seed = seed;
    cfg
}

pub fn run(cfg: &ExperimentConfig) -> RunOutput {
    let bench = Benchmark::build(cfg).expect("benchmark");
    run_experiment(cfg, &bench).expect("run")
}

pub fn run_on(cfg: &ExperimentConfig, bench: &Benchmark) -> RunOutput {
    run_experiment(cfg, bench).expect("run")
}

/// Mean of per-step accuracy over `[from, to)` steps of segment `seg`.
pub fn window_accuracy(out: &RunOutput, start: usize, from: usize, to: usize) -> f64 {
    let recs = &out.records[start + from..start + to];
    recs.iter().map(|r| r.accuracy).sum::<f64>() / recs.len() as f64
}
