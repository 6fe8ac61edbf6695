//! Experiment orchestration: configuration, runs and report files.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{parse_config, parse_config_with, render_config, ExperimentConfig, Preset, ScorerKind};
pub use experiment::{
    ablation_settings, attack_subset, build_dataset, build_model, median, run_ablation, run_experiment, run_region_study,
    Dataset, ExperimentReport, Model, RunStatus, VideoRecord, VideoTrace, Workspace,
};
pub use report::{emit_failure, emit_report, emit_study, load_report, PER_VIDEO_HEADER, SUMMARY_HEADER};
