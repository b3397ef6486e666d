//! Behavioral evaluation, probes, attention maps and smoothing.

pub mod attention;
pub mod errors;
pub mod plot;
pub mod probe;
pub mod smooth;

pub use attention::{average_attention, AttentionSummary};
pub use errors::{
    eval_sequences, last_error_histogram, mismatch_eval, per_shot_errors, ErrorProfile, LastErrorHistogram,
    ModelPredictor, OraclePredictor, Predictor,
};
pub use probe::{collect_activations, fit_linear_probe, probe_grid, ActivationSet, ProbeConfig, ProbeReport, TargetKind};
pub use smooth::{savgol_smooth, Smoothed};
