use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CtaError, Result};
use crate::harness::{run_experiment, Benchmark, ExperimentConfig, Method, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau1,
    Tau2,
    EvenlyN,
    Ratio,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau1 => "tau1",
            SweepParam::Tau2 => "tau2",
            SweepParam::EvenlyN => "evenly-n",
            SweepParam::Ratio => "r",
        }
    }

    /// `base` with the swept parameter set to `value`. Threshold sweeps run
    /// ours-skip and N sweeps run evenly-skip-N; an r sweep keeps the base
    /// method.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Tau1 => {
                cfg.method = Method::OursSkip;
                cfg.thresholds.tau1 = value;
            }
            SweepParam::Tau2 => {
                cfg.method = Method::OursSkip;
                cfg.thresholds.tau2 = value;
            }
            SweepParam::EvenlyN => cfg.method = Method::EvenlySkip(whole(self, value)?),
            SweepParam::Ratio => cfg.adaptor.ratio = whole(self, value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn whole(p: SweepParam, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(CtaError::Config(format!(
            "{} needs positive integers, got {v}",
            p.name()
        )))
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = CtaError;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Tau1,
            SweepParam::Tau2,
            SweepParam::EvenlyN,
            SweepParam::Ratio,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| CtaError::Config(format!("unknown sweep parameter `{s}`")))
    }
}

/// Parses `v1,v2,...`; `inf` and `-inf` are accepted.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .ok_or_else(|| CtaError::Config(format!("bad sweep value `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CtaError::Config("empty sweep value list".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub shifted_accuracy: f64,
    pub final_accuracy: f64,
    pub backward_steps: u64,
    pub forward_steps: u64,
    pub backward_fraction: f64,
    pub adaptor_params: usize,
    pub steps_per_sec: f64,
}

/// Runs one experiment per value in parallel. All runs share `bench` and
/// the base seed.
pub fn run_sweep(
    base: &ExperimentConfig,
    bench: &Benchmark,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(SweepRow, RunOutput)>> {
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(cfg, &value)| {
            let out = run_experiment(cfg, bench).map_err(|a| a.error)?;
            let s = &out.summary;
            let row = SweepRow {
                param: param.name().to_string(),
                value,
                method: s.method.to_string(),
                seed: s.seed,
                accuracy: s.overall_accuracy,
                shifted_accuracy: s.shifted_accuracy(),
                final_accuracy: s.final_accuracy,
                backward_steps: s.backward_steps,
                forward_steps: s.forward_steps,
                backward_fraction: s.backward_steps as f64 / s.forward_steps.max(1) as f64,
                adaptor_params: s.adaptor_params,
                steps_per_sec: s.steps_per_sec,
            };
            Ok((row, out))
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CtaError + '_ {
    move |e| CtaError::Parse(format!("{}: {e}", path.display()))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CtaError::io(path, e))
}

/// Backward fraction against accuracy, sorted by backward fraction.
pub fn write_frontier(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.backward_fraction.total_cmp(&b.backward_fraction));
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["backward_fraction", "accuracy", "method", "value"])
        .map_err(csv_err(path))?;
    for r in sorted {
        w.write_record([
            format!("{:.6}", r.backward_fraction),
            format!("{:.6}", r.accuracy),
            r.method.clone(),
            r.value.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CtaError::io(path, e))
}
