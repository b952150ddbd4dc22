//! Experiment harness: configuration, baseline controllers, test-period
//! selection, closed-loop evaluation, surrogate accuracy reports, the
//! headline experiment suite, ablation grids, and CSV emission.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod controllers;
pub mod csm_eval;
pub mod experiments;
pub mod periods;
pub mod report;

pub use ablation::{run_ablations, AblationGrid};
pub use config::Config;
pub use controllers::{Controller, GreedyPolicy, PiController, RandomBangBang, RuleBased};
pub use csm_eval::{evaluate_csm, CsmEvalReport};
pub use experiments::{evaluate_controller, run_suite, ExperimentId, RunKind};
pub use periods::TestPeriod;
