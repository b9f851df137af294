//! Core algorithms for evaluating out-of-distribution (OOD) detectors with
//! dual cross-validation.
//!
//! The crate is organized around the lifecycle of one evaluation:
//!
//! 1. [`taxonomy`] — class hierarchies, labeled samples, and their numeric
//!    payloads (features / logits), all held in a canonical order so that
//!    every seeded procedure is reproducible bit-for-bit across platforms.
//! 2. [`split`] — stratified and group k-folds, the dual fold constructions
//!    for flat and hierarchical datasets, and round assembly with
//!    outlier-exposure leakage safety.
//! 3. [`detect`] — post-hoc scorers over precomputed logits/features (energy,
//!    generalized entropy, k-NN distance, Mahalanobis) plus validation for
//!    externally computed score tables. Orientation is uniform:
//!    higher score ⇒ more OOD.
//! 4. [`metrics`] — threshold-free and threshold-based detection metrics
//!    (TPR@5%FPR, AUROC, AUPR, F1 and accuracy at the 90th ID percentile).
//! 5. [`stats`] — Shapiro-Wilk normality, exact/approximate Mann-Whitney U,
//!    pooled t-test, pairwise significance matrices, and the hit/error-rate
//!    fidelity analysis comparing repeated-split benchmarks against
//!    cross-validated estimates.
//!
//! Supporting modules: [`rng`] (seeded SplitMix64 streams and seed
//! derivation), [`matrix`] (dense row-major matrices with a small Cholesky),
//! and [`special`] (the handful of special functions the statistics need).
//!
//! The crate is `no_std` (with `alloc`); everything involving files, threads,
//! or configuration lives in the companion `dcv-rood` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod detect;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod special;
pub mod split;
pub mod stats;
pub mod taxonomy;
