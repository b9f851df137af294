//! Orchestration layer for the dual cross-validation OOD evaluation
//! pipeline: file formats, experiment configuration, the synthetic data
//! generator, detector scoring, the two experiment regimes
//! (benchmark-truth and DCV), and the fidelity comparison reports.
//!
//! The numerical machinery lives in `dcv-rood-core`; everything here is IO,
//! wiring, and bookkeeping.

pub mod compare;
pub mod config;
pub mod formats;
pub mod regimes;
pub mod report;
pub mod scoring;
pub mod synth;
