use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cta_core::adaptor::weights_to_container;
use cta_core::error::{CtaError, Result};
use cta_core::harness::{
    log, parse_values, run_experiment_with, run_sweep, write_frontier, write_references,
    write_sweep_csv, Benchmark, ExperimentConfig, Method, SweepParam,
};
use cta_core::simulator::trace::TraceWriter;

#[derive(Parser)]
#[command(
    name = "cta",
    version,
    about = "Continual test-time adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// tau1, tau2, evenly-n or r
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precompute source reference statistics.
    Prep {
        #[arg(long)]
        config: PathBuf,
        /// Output file; defaults to `output.references` or `<dir>/references.ctastats`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            method,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            run(&cfg)
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            sweep(&cfg, param.parse()?, &parse_values(&values)?)
        }
        Command::Prep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = out
                .or_else(|| cfg.output.references.clone())
                .unwrap_or_else(|| cfg.output.dir.join("references.ctastats"));
            let refs = write_references(&cfg, &path)?;
            println!(
                "wrote {} (d={} classes={} d_kl_in={:.6})",
                path.display(),
                refs.dim(),
                refs.classes.len(),
                refs.d_kl_in
            );
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CtaError::io(dir, e))
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let bench = Benchmark::build(cfg)?;
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let stem = format!("{}-seed{}", cfg.method, cfg.seed);

    let mut trace = if cfg.output.trace {
        let path = dir.join(format!("{stem}.trace"));
        let file = File::create(&path).map_err(|e| CtaError::io(&path, e))?;
        let w = TraceWriter::new(BufWriter::new(file), cfg.source.dim)
            .map_err(|e| CtaError::io(&path, e))?;
        Some((path, w))
    } else {
        None
    };
    let result = run_experiment_with(cfg, &bench, |t, scenes| {
        if let Some((path, w)) = trace.as_mut() {
            for (i, s) in scenes.iter().enumerate() {
                w.write(t as u64, i as u32, s)
                    .map_err(|e| CtaError::io(path.as_path(), e))?;
            }
        }
        Ok(())
    });
    if let Some((path, w)) = trace {
        w.finish().map_err(|e| CtaError::io(&path, e))?;
    }

    let log_path = dir.join(format!("{stem}.jsonl"));
    let output = match result {
        Ok(o) => o,
        Err(aborted) => {
            log::write_jsonl(&log_path, &aborted.records)?;
            return Err(aborted.error);
        }
    };
    log::write_jsonl(&log_path, &output.records)?;
    log::write_summary_csv(
        &dir.join(format!("{stem}.csv")),
        std::slice::from_ref(&output.summary),
    )?;
    if cfg.output.weights {
        weights_to_container(&output.backbone, &output.adaptor)
            .save(&dir.join(format!("{stem}.weights.ctastats")))?;
    }
    let s = &output.summary;
    for seg in &s.segments {
        println!(
            "segment {:>2} {:<18} accuracy {:.4}  backward {:>5}/{}",
            seg.segment_id, seg.label, seg.accuracy, seg.backward_steps, seg.forward_steps
        );
    }
    println!(
        "{} seed {}: accuracy {:.4} (final {:.4}), backward {}/{}, {:.0} steps/s",
        s.method,
        s.seed,
        s.overall_accuracy,
        s.final_accuracy,
        s.backward_steps,
        s.forward_steps,
        s.steps_per_sec
    );
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<()> {
    let bench = Benchmark::build(cfg)?;
    let dir = &cfg.output.dir;
    let run_dir = dir.join(format!("sweep-{param}"));
    ensure_dir(&run_dir)?;
    let results = run_sweep(cfg, &bench, param, values)?;
    let mut rows = Vec::with_capacity(results.len());
    let mut summaries = Vec::with_capacity(results.len());
    for (row, out) in results {
        log::write_jsonl(&run_dir.join(format!("{}.jsonl", row.value)), &out.records)?;
        println!(
            "{param}={:<8} {:<16} accuracy {:.4}  backward {}/{}",
            row.value, row.method, row.accuracy, row.backward_steps, row.forward_steps
        );
        rows.push(row);
        summaries.push(out.summary);
    }
    write_sweep_csv(&dir.join(format!("sweep-{param}.csv")), &rows)?;
    write_frontier(&dir.join(format!("frontier-{param}.csv")), &rows)?;
    log::write_summary_csv(&dir.join(format!("sweep-{param}-summary.csv")), &summaries)
}
