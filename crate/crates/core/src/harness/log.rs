use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CtaError, Result};
use crate::harness::{RunSummary, StepRecord};

pub const SUMMARY_HEADER: [&str; 7] = [
    "method",
    "seed",
    "segment",
    "accuracy",
    "backward_steps",
    "forward_steps",
    "steps_per_sec",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CtaError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CtaError::io(path, e))
}

/// One JSON object per line.
pub fn jsonl_string(records: &[StepRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| CtaError::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(jsonl_string(records)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CtaError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| CtaError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CtaError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CtaError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Per-segment rows followed by an `all` row for each run.
pub fn write_summary_csv(path: &Path, runs: &[RunSummary]) -> Result<()> {
    let io = |e: csv::Error| CtaError::Parse(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SUMMARY_HEADER).map_err(io)?;
    for run in runs {
        let method = run.method.to_string();
        let seed = run.seed.to_string();
        let rate = format!("{:.1}", run.steps_per_sec);
        for s in &run.segments {
            w.write_record([
                method.as_str(),
                seed.as_str(),
                &s.segment_id.to_string(),
                &format!("{:.6}", s.accuracy),
                &s.backward_steps.to_string(),
                &s.forward_steps.to_string(),
                rate.as_str(),
            ])
            .map_err(io)?;
        }
        w.write_record([
            method.as_str(),
            seed.as_str(),
            "all",
            &format!("{:.6}", run.overall_accuracy),
            &run.backward_steps.to_string(),
            &run.forward_steps.to_string(),
            rate.as_str(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CtaError::io(path, e))
}
