//! Experiment orchestration: configuration, manifests, the simulated corpus,
//! the attack/defence pipeline stages and the evaluation report.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{derive_seed, CmKind, ExperimentConfig, DESK_CONFIG, PLAIN};
pub use manifest::{read_manifest, write_manifest, Label, Manifest, ManifestRow};
pub use pipeline::{
    cmd_attack, cmd_score, cmd_simulate_corpus, cmd_train_asv, cmd_train_cm, cmd_train_segan, CorpusSummary,
    Layout, Partition,
};
pub use report::{cmd_evaluate, cmd_report, render, run_all, Report, ReportRow, TTestRow, AVERAGE};
