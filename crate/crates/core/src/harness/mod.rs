//! Experiment runner: wires the simulator, backbone, adaptor, alignment and
//! controller together and writes logs, summaries and sweeps.

mod config;
pub mod log;
mod prep;
mod runner;
mod sweep;

pub use config::{
    AdaptorConfig, ExperimentConfig, Method, OutputConfig, RateConfig, ScenarioConfig,
    ThresholdConfig, DEFAULT_ALPHA, DEFAULT_BATCH, DEFAULT_LR, DEFAULT_RATIO,
    DEFAULT_REFERENCE_SAMPLES,
};
pub use prep::{
    load_references, precompute_references, references_to_container, scenario_schedule,
    source_model, write_references, Benchmark,
};
pub use runner::{
    init_adaptor, orient_columns, run_experiment, run_experiment_with, step_scenes, Aborted,
    RunOutput, RunSummary, SegmentSummary, StepRecord,
};
pub use sweep::{parse_values, run_sweep, write_frontier, write_sweep_csv, SweepParam, SweepRow};
