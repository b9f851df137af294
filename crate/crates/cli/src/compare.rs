//! Builds the fidelity comparison between the benchmark-truth distribution
//! and the cross-validation runs: pairwise significance matrices, hit and
//! error rates at every requested level, and the per-run methodwise table.
//!
//! The observations feeding the statistical tests are the per-context
//! results. A context is a dataset pair by default (each detector
//! contributes one mean value per pair per regime sample), or an individual
//! (pair, round) cell when per-fold granularity is requested; the choice is
//! recorded in every output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use dcv_rood_core::matrix::Matrix;
use dcv_rood_core::metrics::MetricKind;
use dcv_rood_core::stats::{
    hit_error_from_pair_counts, hit_error_rates, methodwise_comparison, pairwise_matrix,
    FidelityReport, MethodwiseTable, SignificanceMatrix, StatsError,
};

use crate::formats::{self, FormatError, MetricRow};
use crate::report;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("detector `{detector}` has no rows in {place}")]
    MissingDetector { detector: String, place: String },
    #[error("{place}: context sets differ from the benchmark ({detail})")]
    ContextMismatch { place: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

pub const PAIR_MEAN_CONTEXTS: &str = "pair-means";
pub const PER_FOLD_CONTEXTS: &str = "per-fold";

// ---------------------------------------------------------------------------
// Context extraction
// ---------------------------------------------------------------------------

/// Per-detector observation vectors for one metric, plus the set of
/// contexts they came from (used to check regime compatibility).
struct ContextSamples {
    /// (detector, values) in first-appearance order of the rows.
    samples: Vec<(String, Vec<f64>)>,
    contexts: BTreeSet<String>,
}

fn detector_order(rows: &[MetricRow]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    for row in rows {
        if seen.insert(row.detector.as_str()) {
            order.push(row.detector.clone());
        }
    }
    order
}

fn context_samples(
    rows: &[MetricRow],
    detectors: &[String],
    metric: &str,
    per_fold: bool,
    place: &str,
) -> Result<ContextSamples, CompareError> {
    let mut samples = Vec::with_capacity(detectors.len());
    let mut contexts = BTreeSet::new();
    for det in detectors {
        // context key → (sum, count); pair-mean mode collapses rounds
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for row in rows.iter().filter(|r| r.detector == *det) {
            let key = if per_fold {
                format!("{}|{}|{}", row.id_dataset, row.ood_dataset, row.round)
            } else {
                format!("{}|{}", row.id_dataset, row.ood_dataset)
            };
            let v = row.metric(metric).ok_or_else(|| {
                CompareError::Invalid(format!("unknown metric key `{metric}`"))
            })?;
            let slot = acc.entry(key).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
        if acc.is_empty() {
            return Err(CompareError::MissingDetector {
                detector: det.clone(),
                place: place.to_string(),
            });
        }
        if contexts.is_empty() {
            contexts = acc.keys().cloned().collect();
        } else {
            let these: BTreeSet<String> = acc.keys().cloned().collect();
            if these != contexts {
                return Err(CompareError::ContextMismatch {
                    place: place.to_string(),
                    detail: format!("detector `{det}` covers different contexts"),
                });
            }
        }
        let values = acc.values().map(|(sum, n)| sum / *n as f64).collect();
        samples.push((det.clone(), values));
    }
    Ok(ContextSamples { samples, contexts })
}

// ---------------------------------------------------------------------------
// Report construction
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct MetricComparison {
    pub metric: String,
    pub benchmark: SignificanceMatrix,
    pub run_matrices: Vec<SignificanceMatrix>,
    /// One fidelity report per requested alpha, in request order.
    pub fidelity: Vec<FidelityReport>,
    pub methodwise: MethodwiseTable,
}

#[derive(Debug)]
pub struct ComparisonReport {
    pub contexts: &'static str,
    pub alphas: Vec<f64>,
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn metric(&self, key: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == key)
    }

    /// One line per (metric, alpha), the console face of the comparison.
    pub fn summary_lines(&self) -> Vec<String> {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "undefined".to_string(),
        };
        self.metrics
            .iter()
            .flat_map(|m| {
                m.fidelity.iter().map(|f| {
                    format!(
                        "{} alpha={:.3} hit_rate={} error_rate={} (n_runs={}, contexts={})",
                        m.metric,
                        f.alpha(),
                        fmt(f.hit_rate()),
                        fmt(f.error_rate()),
                        f.n_runs(),
                        self.contexts,
                    )
                })
            })
            .collect()
    }
}

/// Builds the full comparison from raw metric rows: a benchmark matrix and
/// one matrix per cross-validation run for every metric, fidelity rates at
/// every alpha, and the methodwise table.
pub fn build_comparison(
    truth_rows: &[MetricRow],
    dcv_runs: &[Vec<MetricRow>],
    alphas: &[f64],
    alpha_normality: f64,
    per_fold: bool,
) -> Result<ComparisonReport, CompareError> {
    if truth_rows.is_empty() {
        return Err(CompareError::Invalid("no benchmark rows".into()));
    }
    if dcv_runs.is_empty() {
        return Err(CompareError::Invalid("no cross-validation runs".into()));
    }
    if alphas.is_empty() {
        return Err(CompareError::Invalid("no significance levels requested".into()));
    }
    let detectors = detector_order(truth_rows);
    let matrix_alpha = alphas[0];
    let mut metrics = Vec::with_capacity(MetricKind::ALL.len());
    for kind in MetricKind::ALL {
        let key = kind.key();
        let bench = context_samples(truth_rows, &detectors, key, per_fold, "benchmark")?;
        let benchmark = pairwise_matrix(&bench.samples, key, matrix_alpha, alpha_normality)?;
        let mut run_matrices = Vec::with_capacity(dcv_runs.len());
        let mut run_samples = Vec::with_capacity(dcv_runs.len());
        for (e, rows) in dcv_runs.iter().enumerate() {
            let place = format!("cv run {}", e + 1);
            let run = context_samples(rows, &detectors, key, per_fold, &place)?;
            if !per_fold && run.contexts != bench.contexts {
                return Err(CompareError::ContextMismatch {
                    place,
                    detail: "dataset pairs differ from the benchmark".into(),
                });
            }
            run_matrices.push(pairwise_matrix(&run.samples, key, matrix_alpha, alpha_normality)?);
            run_samples.push(run.samples);
        }
        let fidelity = alphas
            .iter()
            .map(|&alpha| hit_error_rates(&benchmark, &run_matrices, alpha))
            .collect::<Result<Vec<_>, _>>()?;
        let methodwise = methodwise_comparison(&bench.samples, &run_samples)?;
        metrics.push(MetricComparison { metric: key.to_string(), benchmark, run_matrices, fidelity, methodwise });
    }
    Ok(ComparisonReport {
        contexts: if per_fold { PER_FOLD_CONTEXTS } else { PAIR_MEAN_CONTEXTS },
        alphas: alphas.to_vec(),
        metrics,
    })
}

// ---------------------------------------------------------------------------
// Tabulated inputs
// ---------------------------------------------------------------------------

/// Computes fidelity rates from already-tabulated inputs: a benchmark
/// p-value matrix and per-alpha signed count tables (counts of runs
/// flagging each pair out of `n_runs`). Only count magnitudes are used;
/// signs are re-derived from the benchmark at each alpha.
pub fn tabulated_fidelity(
    pvalues_path: &Path,
    counts: &[(f64, std::path::PathBuf)],
    metric: &str,
    n_runs: usize,
) -> Result<Vec<FidelityReport>, CompareError> {
    let (labels, p) = formats::read_labeled_matrix_csv(pvalues_path)?;
    if counts.is_empty() {
        return Err(CompareError::Invalid("no count tables supplied".into()));
    }
    let mut reports = Vec::with_capacity(counts.len());
    for (alpha, path) in counts {
        let (count_labels, c) = formats::read_labeled_matrix_csv(path)?;
        if count_labels != labels {
            return Err(CompareError::Invalid(format!(
                "{}: detector labels differ from the p-value table",
                path.display()
            )));
        }
        let benchmark =
            SignificanceMatrix::from_parts(labels.clone(), metric, *alpha, p.clone())?;
        reports.push(hit_error_from_pair_counts(&benchmark, &c, n_runs, *alpha)?);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn alpha_slug(alpha: f64) -> String {
    // 0.05 → "0.050": fixed width keeps file listings sorted by level
    format!("{alpha:.3}")
}

/// Writes every table of the comparison under `dir/compare/` and returns
/// the written paths relative to `dir`.
pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<Vec<String>, CompareError> {
    let compare_dir = dir.join("compare");
    std::fs::create_dir_all(&compare_dir).map_err(|e| {
        CompareError::Invalid(format!("{}: {e}", compare_dir.display()))
    })?;
    let mut files = Vec::new();
    let mut rel = |name: &str| -> std::path::PathBuf {
        files.push(format!("compare/{name}"));
        compare_dir.join(name)
    };

    let mut summary_rows: Vec<Vec<String>> = Vec::new();
    for m in &report.metrics {
        let labels = m.benchmark.methods().to_vec();
        let n = labels.len();
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                p.set(i, j, m.benchmark.p(i, j));
            }
        }
        formats::write_labeled_matrix_csv(
            &rel(&format!("benchmark_pvalues_{}.csv", m.metric)),
            "method",
            &labels,
            &p,
        )?;
        std::fs::write(
            rel(&format!("benchmark_stars_{}.txt", m.metric)),
            report::star_table(&m.benchmark),
        )
        .map_err(|e| CompareError::Invalid(format!("star table: {e}")))?;

        let mut methodwise_text = String::new();
        for f in &m.fidelity {
            let slug = alpha_slug(f.alpha());
            formats::write_labeled_matrix_csv(
                &rel(&format!("fidelity_pairs_{}_alpha{}.csv", m.metric, slug)),
                "method",
                &labels,
                f.counts(),
            )?;
            let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            summary_rows.push(vec![
                m.metric.clone(),
                slug,
                report.contexts.to_string(),
                f.n_runs().to_string(),
                f.n_benchmark_significant().to_string(),
                f.n_benchmark_nonsignificant().to_string(),
                fmt(f.hit_rate()),
                fmt(f.error_rate()),
            ]);
        }
        methodwise_text.push_str(&report::methodwise_text(&m.methodwise, &report.alphas));
        std::fs::write(rel(&format!("methodwise_{}.txt", m.metric)), methodwise_text)
            .map_err(|e| CompareError::Invalid(format!("methodwise table: {e}")))?;
        let mw_path = rel(&format!("methodwise_{}.csv", m.metric));
        let mut w = csv::Writer::from_path(&mw_path)
            .map_err(|e| CompareError::Invalid(format!("{}: {e}", mw_path.display())))?;
        let fail = |e: csv::Error| CompareError::Invalid(e.to_string());
        w.write_record(["run", "detector", "p_value"]).map_err(fail)?;
        for run in 0..m.methodwise.n_runs() {
            for (d, name) in m.methodwise.methods().iter().enumerate() {
                w.write_record([
                    (run + 1).to_string(),
                    name.clone(),
                    m.methodwise.p(run, d).to_string(),
                ])
                .map_err(fail)?;
            }
        }
        w.flush().map_err(|e| CompareError::Invalid(e.to_string()))?;
    }

    let summary_path = rel("fidelity_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)
        .map_err(|e| CompareError::Invalid(format!("{}: {e}", summary_path.display())))?;
    let fail = |e: csv::Error| CompareError::Invalid(e.to_string());
    w.write_record([
        "metric",
        "alpha",
        "contexts",
        "n_runs",
        "n_benchmark_significant",
        "n_benchmark_nonsignificant",
        "hit_rate",
        "error_rate",
    ])
    .map_err(fail)?;
    for row in &summary_rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush().map_err(|e| CompareError::Invalid(e.to_string()))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(det: &str, pair: usize, round: usize, v: f64) -> MetricRow {
        MetricRow {
            detector: det.into(),
            id_dataset: format!("id{pair}"),
            ood_dataset: format!("ood{pair}"),
            round,
            tpr5: v,
            auroc: v,
            aupr: v,
            f1: v,
            acc90: v,
            threshold_acc90: 0.0,
            n_id: 10,
            n_ood: 10,
        }
    }

    /// Two detectors, `hi` always far above `lo` across 6 pairs.
    fn regime_rows(base: f64, rounds: usize) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for pair in 0..6 {
            for r in 0..rounds {
                let wiggle = 0.001 * (pair as f64) + 0.0001 * (r as f64);
                rows.push(row("hi", pair, r, base + 0.3 + wiggle));
                rows.push(row("lo", pair, r, base + wiggle));
            }
        }
        rows
    }

    #[test]
    fn separated_detectors_hit_everywhere() {
        let truth = regime_rows(0.5, 4);
        let runs: Vec<Vec<MetricRow>> = (0..3).map(|_| regime_rows(0.5, 2)).collect();
        let report = build_comparison(&truth, &runs, &[0.1], 0.05, false).unwrap();
        assert_eq!(report.contexts, PAIR_MEAN_CONTEXTS);
        let auroc = report.metric("auroc").unwrap();
        assert!(auroc.benchmark.is_significant(0, 1));
        let f = &auroc.fidelity[0];
        assert_eq!(f.n_benchmark_significant(), 1);
        assert_eq!(f.hit_rate(), Some(3.0));
        // |NB| = 0 → error rate undefined, never zero
        assert_eq!(f.n_benchmark_nonsignificant(), 0);
        assert_eq!(f.error_rate(), None);
    }

    #[test]
    fn context_granularity_changes_sample_sizes() {
        let truth = regime_rows(0.5, 4);
        let runs = vec![regime_rows(0.5, 2)];
        let pair_means = build_comparison(&truth, &runs, &[0.1], 0.05, false).unwrap();
        let per_fold = build_comparison(&truth, &runs, &[0.1], 0.05, true).unwrap();
        assert_eq!(per_fold.contexts, PER_FOLD_CONTEXTS);
        // both flag the obvious difference
        assert!(pair_means.metric("f1").unwrap().benchmark.is_significant(0, 1));
        assert!(per_fold.metric("f1").unwrap().benchmark.is_significant(0, 1));
    }

    #[test]
    fn run_with_missing_detector_is_rejected() {
        let truth = regime_rows(0.5, 2);
        let mut bad_run = regime_rows(0.5, 2);
        bad_run.retain(|r| r.detector != "lo");
        let err = build_comparison(&truth, &[bad_run], &[0.1], 0.05, false).unwrap_err();
        assert!(matches!(err, CompareError::MissingDetector { .. }));
    }

    #[test]
    fn run_with_different_pairs_is_rejected() {
        let truth = regime_rows(0.5, 2);
        let mut odd_run = regime_rows(0.5, 2);
        for r in &mut odd_run {
            r.id_dataset = format!("other-{}", r.id_dataset);
        }
        let err = build_comparison(&truth, &[odd_run], &[0.1], 0.05, false).unwrap_err();
        assert!(matches!(err, CompareError::ContextMismatch { .. }));
    }

    #[test]
    fn written_tables_round_trip_the_rates() {
        let dir = tempfile::tempdir().unwrap();
        let truth = regime_rows(0.4, 3);
        let runs: Vec<Vec<MetricRow>> = (0..2).map(|_| regime_rows(0.4, 2)).collect();
        let report = build_comparison(&truth, &runs, &[0.1, 0.05], 0.05, false).unwrap();
        let files = write_comparison(dir.path(), &report).unwrap();
        // per metric: pvalues + stars + 2 fidelity tables + methodwise csv/txt,
        // plus the one summary
        assert_eq!(files.len(), 5 * 6 + 1);
        for f in &files {
            assert!(dir.path().join(f).is_file(), "{f} missing");
        }

        // rates must be recomputable from the emitted tables alone
        let auroc = report.metric("auroc").unwrap();
        let reports = tabulated_fidelity(
            &dir.path().join("compare/benchmark_pvalues_auroc.csv"),
            &[
                (0.1, dir.path().join("compare/fidelity_pairs_auroc_alpha0.100.csv")),
                (0.05, dir.path().join("compare/fidelity_pairs_auroc_alpha0.050.csv")),
            ],
            "auroc",
            2,
        )
        .unwrap();
        assert_eq!(reports[0].hit_rate(), auroc.fidelity[0].hit_rate());
        assert_eq!(reports[0].error_rate(), auroc.fidelity[0].error_rate());
        assert_eq!(reports[1].hit_rate(), auroc.fidelity[1].hit_rate());
    }

    #[test]
    fn summary_lines_carry_rates_and_context_mode() {
        let truth = regime_rows(0.5, 2);
        let runs = vec![regime_rows(0.5, 2)];
        let report = build_comparison(&truth, &runs, &[0.1], 0.05, false).unwrap();
        let lines = report.summary_lines();
        assert_eq!(lines.len(), 5);
        assert!(lines.iter().all(|l| l.contains("contexts=pair-means")));
        assert!(lines.iter().any(|l| l.starts_with("tpr5 alpha=0.100 hit_rate=")));
    }
}
