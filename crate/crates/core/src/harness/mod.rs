//! Datasets, experiment orchestration and reports.

pub mod backend;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod report;
pub mod synth;

pub use backend::{load_network, neural_features, Retriever};
pub use config::{
    derive_seed, Attack, Backend, BovwSettings, ExperimentConfig, GaussianSettings, KriSettings, LeakSettings,
    NetworkSettings, PireSettings, QueryMode, Transform,
};
pub use dataset::{load_dataset, load_manifest, load_oxford_groundtruth, scan_collection, BBox, Dataset, DatasetManifest, QuerySpec};
pub use experiment::{
    apply_attack, apply_transform, build_synthetic_dataset, class_separation, ensure_synthetic_dataset, pire_attack,
    prepare_query, query_base, run_experiment, run_experiment_cached, AttackCache, run_leak_experiment, ExperimentReport, LeakReport, LeakRow,
    QueryResult, SynthBuild,
};
pub use report::{emit_leak_report, emit_report, parse_report_csv, render_markdown, report_rows, ReportFormat, ReportRow};
pub use synth::{render_collection, write_collection, SynthImage, SynthSpec};
