//! Experiment configuration, end-to-end scheme runs and cross-run comparison.

mod compare;
mod config;
mod run;

pub use compare::{compare_runs, compare_schemes, Comparison, ComparisonRow};
pub use config::{DataSource, EvalConfig, ExperimentConfig, NetworkKind, NetworkSpec, Scheme, SplitConfig};
pub use run::{
    build_candidate, load_data, load_run_config, load_summary, load_timing, run_pipeline, sha256_hex, CandidatePlan,
    FactorSummary, LoadedData, Manifest, NamedFactor, PretrainRecord, RunOutcome, RunSummary, Timing, TrainedCandidate,
    MANIFEST_SCHEMA_VERSION,
};
