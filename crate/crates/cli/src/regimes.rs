//! The two experiment regimes and their bookkeeping.
//!
//! Benchmark truth repeats a fresh random train/test split `r_truth` times
//! per dataset pair and tracks running metric means for the convergence
//! trace. The cross-validation regime runs `e_runs` independent dual-fold
//! experiments of `k` rounds each. Both derive every random stream from the
//! base seed through tagged hashing (regime → repetition → pair → task), so
//! the regimes never share randomness and reruns are byte-identical.
//!
//! Work items (repetition × pair, or pair × round) execute on a worker pool
//! in any order; results are reassembled in configured order before
//! anything is written, so parallelism never leaks into the outputs. The
//! ledger records every artifact exactly once and is the sole holder of
//! timestamps.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dcv_rood_core::metrics::{evaluate, MetricError, MetricKind, MetricParams, ScoreTable};
use dcv_rood_core::rng::{derive_seed, SplitMix64};
use dcv_rood_core::split::{
    assemble_rounds, build_folds_flat, build_folds_hierarchical, EvaluationRound, SplitError,
};

use crate::config::{DetectorConfig, ExperimentConfig, LoadedPair};
use crate::formats::{self, FoldsDoc, FormatError, MetricRow};
use crate::scoring::{score_round, ScoreError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("metrics: {0}")]
    Metric(MetricError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Inconsistent(String),
}

impl From<MetricError> for RunError {
    fn from(e: MetricError) -> Self {
        RunError::Metric(e)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), source }
}

/// Caps the worker pool at `DCVROOD_THREADS` when the variable is set to a
/// positive integer; otherwise the machine default stands. Safe to call
/// repeatedly — only the first call can build the pool.
pub fn init_thread_pool() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(raw) = std::env::var("DCVROOD_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n > 0 {
                    // An error here means a pool already exists, which is fine.
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    pub seed: u64,
    /// Paths relative to the output directory; each artifact appears in
    /// exactly one entry.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub wall_ms: u64,
    pub timestamp_ms: u64,
}

/// Append-only JSONL record of everything the pipeline produced. The
/// ledger file itself and the warnings log are bookkeeping, not artifacts,
/// and are the only files it does not list.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub const FILE_NAME: &'static str = "ledger.jsonl";
    pub const WARNINGS_NAME: &'static str = "warnings.log";

    pub fn open(output_dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
        let path = output_dir.join(Self::FILE_NAME);
        let mut entries = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LedgerEntry = serde_json::from_str(line).map_err(|e| {
                    RunError::Inconsistent(format!(
                        "{}:{}: bad ledger line: {e}",
                        path.display(),
                        i + 1
                    ))
                })?;
                entries.push(entry);
            }
        }
        Ok(Ledger { path, entries })
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<(), RunError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        let line = serde_json::to_string(&entry)
            .map_err(|e| RunError::Inconsistent(format!("ledger serialization: {e}")))?;
        writeln!(file, "{line}").map_err(|e| io_err(&self.path, e))?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn contains(&self, regime: &str, run: Option<usize>) -> bool {
        self.entries.iter().any(|e| e.regime == regime && e.run == run)
    }

    /// Checks the coverage invariant: every file under the output directory
    /// (bookkeeping aside) is listed by exactly one entry.
    pub fn verify_coverage(&self, output_dir: &Path) -> Result<(), RunError> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            for f in &e.files {
                *counts.entry(f.as_str()).or_default() += 1;
            }
        }
        if let Some((f, n)) = counts.iter().find(|(_, &n)| n != 1) {
            return Err(RunError::Inconsistent(format!("`{f}` referenced {n} times")));
        }
        let mut stack = vec![output_dir.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let entry = entry.map_err(|e| io_err(&dir, e))?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path
                    .strip_prefix(output_dir)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/");
                if rel == Self::FILE_NAME || rel == Self::WARNINGS_NAME {
                    continue;
                }
                if !counts.contains_key(rel.as_str()) {
                    return Err(RunError::Inconsistent(format!("`{rel}` is not in the ledger")));
                }
            }
        }
        Ok(())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Mirrors warnings to the warnings log (and hands them back for stderr).
pub fn log_warnings(output_dir: &Path, warnings: &[String]) -> Result<(), RunError> {
    if warnings.is_empty() {
        return Ok(());
    }
    let path = output_dir.join(Ledger::WARNINGS_NAME);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    for w in warnings {
        writeln!(file, "{w}").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared scoring plumbing
// ---------------------------------------------------------------------------

fn metric_row(
    detector: &str,
    pair: &LoadedPair,
    round_index: usize,
    id: Vec<f64>,
    ood: Vec<f64>,
    params: &MetricParams,
) -> Result<MetricRow, RunError> {
    let table = ScoreTable::new(id, ood)?;
    let report = evaluate(&table, params)?;
    Ok(MetricRow {
        detector: detector.to_string(),
        id_dataset: pair.id_name.clone(),
        ood_dataset: pair.ood_name.clone(),
        round: round_index,
        tpr5: report.tpr_at_fpr,
        auroc: report.auroc,
        aupr: report.aupr,
        f1: report.f1,
        acc90: report.accuracy,
        threshold_acc90: report.threshold,
        n_id: report.n_id,
        n_ood: report.n_ood,
    })
}

/// Scores every detector on one round. `pair_seed` is the (regime,
/// repetition, pair)-specific seed; each detector's noise stream is derived
/// from it by name so detector order never matters.
fn score_all_detectors(
    pair: &LoadedPair,
    round: &EvaluationRound,
    detectors: &[DetectorConfig],
    pair_seed: u64,
    params: &MetricParams,
) -> Result<Vec<MetricRow>, RunError> {
    detectors
        .iter()
        .map(|det| {
            let noise_seed = derive_seed(
                pair_seed,
                &format!("noise:{}", det.name),
                round.round_index as u64,
            );
            let scores = score_round(&pair.id, &pair.ood, round, det, noise_seed)?;
            metric_row(&det.name, pair, round.round_index, scores.id, scores.ood, params)
        })
        .collect()
}

fn metric_params(cfg: &ExperimentConfig) -> MetricParams {
    MetricParams { fpr_cap: cfg.fpr_cap, id_percentile: cfg.id_percentile }
}

// ---------------------------------------------------------------------------
// Benchmark truth
// ---------------------------------------------------------------------------

/// One random truth split: a simple random fraction of ID samples tests,
/// and a random fraction of OOD classes tests with the remaining classes
/// reserved whole (the exposure discipline: reserved classes never leak
/// into the test side).
fn truth_round(pair: &LoadedPair, rep: usize, pair_seed: u64, frac_id: f64, frac_ood: f64) -> EvaluationRound {
    let n = pair.id.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(derive_seed(pair_seed, "truth-id", 0));
    rng.shuffle(&mut order);
    let m = (((n as f64) * frac_id).floor() as usize).max(1).min(n);
    let mut test_id: Vec<String> = order[..m]
        .iter()
        .map(|&i| pair.id.records()[i].sample_id().to_string())
        .collect();
    let mut train_id: Vec<String> = order[m..]
        .iter()
        .map(|&i| pair.id.records()[i].sample_id().to_string())
        .collect();
    test_id.sort_unstable();
    train_id.sort_unstable();

    let level = pair.ood.taxonomy().classification_level();
    let mut classes: Vec<&str> = pair.ood.observed_classes(level).into_keys().collect();
    let mut rng = SplitMix64::new(derive_seed(pair_seed, "truth-ood", 0));
    rng.shuffle(&mut classes);
    let c = (((classes.len() as f64) * frac_ood).floor() as usize).max(1).min(classes.len());
    let test_classes: std::collections::BTreeSet<&str> = classes[..c].iter().copied().collect();
    let mut test_ood = Vec::new();
    let mut train_ood = Vec::new();
    for r in pair.ood.records() {
        if test_classes.contains(r.class_at(level)) {
            test_ood.push(r.sample_id().to_string());
        } else {
            train_ood.push(r.sample_id().to_string());
        }
    }
    // records are canonical, so the partitioned lists already are too
    EvaluationRound { round_index: rep, train_id, test_id, train_ood, test_ood }
}

/// Running means and window deltas for one metric across repetitions.
#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub metric: String,
    /// `means[d][r]` = running mean for detector `d` after repetition
    /// `r + 1`, repetition values being per-pair means.
    pub means: Vec<Vec<f64>>,
    /// `delta[r]` = max over detectors of |μ_{r+1} − μ_{max(r+1−w, 1)}|.
    pub delta: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn final_delta(&self) -> f64 {
        *self.delta.last().unwrap_or(&0.0)
    }
}

#[derive(Debug)]
pub struct TruthOutcome {
    pub rows: Vec<MetricRow>,
    /// One trace per metric key, in [`MetricKind::ALL`] order.
    pub traces: Vec<ConvergenceTrace>,
    pub warnings: Vec<String>,
}

impl TruthOutcome {
    pub fn trace(&self, metric: &str) -> Option<&ConvergenceTrace> {
        self.traces.iter().find(|t| t.metric == metric)
    }
}

/// Computes per-detector running means (repetition value = mean over pairs)
/// and the windowed convergence deltas for every metric.
pub fn convergence_traces(
    rows: &[MetricRow],
    detectors: &[String],
    n_reps: usize,
    window: usize,
) -> Result<Vec<ConvergenceTrace>, RunError> {
    let mut traces = Vec::new();
    for kind in MetricKind::ALL {
        let key = kind.key();
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(detectors.len());
        for det in detectors {
            // per-rep sums and counts over pairs
            let mut sum = vec![0.0; n_reps];
            let mut count = vec![0usize; n_reps];
            for row in rows.iter().filter(|r| r.detector == *det) {
                if row.round >= n_reps {
                    return Err(RunError::Inconsistent(format!(
                        "repetition {} out of range ({} expected)",
                        row.round, n_reps
                    )));
                }
                sum[row.round] += row.metric(key).expect("known metric key");
                count[row.round] += 1;
            }
            let mut running = Vec::with_capacity(n_reps);
            let mut acc = 0.0;
            for r in 0..n_reps {
                if count[r] == 0 {
                    return Err(RunError::Inconsistent(format!(
                        "detector `{det}` has no rows for repetition {r}"
                    )));
                }
                acc += sum[r] / count[r] as f64;
                running.push(acc / (r + 1) as f64);
            }
            means.push(running);
        }
        let delta: Vec<f64> = (0..n_reps)
            .map(|r| {
                let back = r.saturating_sub(window);
                means
                    .iter()
                    .map(|m| (m[r] - m[back]).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        traces.push(ConvergenceTrace { metric: key.to_string(), means, delta });
    }
    Ok(traces)
}

/// Runs the benchmark-truth regime: `r_truth` independent random splits per
/// pair, every detector scored on each, running means and the convergence
/// trace persisted alongside the raw per-repetition metrics.
///
/// With `resume`, a completed truth regime in the ledger is reloaded from
/// its metrics file instead of recomputed.
pub fn run_benchmark_truth(
    cfg: &ExperimentConfig,
    pairs: &[LoadedPair],
    ledger: &mut Ledger,
    resume: bool,
) -> Result<TruthOutcome, RunError> {
    init_thread_pool();
    let truth_dir = cfg.output_dir.join("truth");
    let metrics_path = truth_dir.join("metrics.csv");
    let detector_names: Vec<String> = cfg.detectors.iter().map(|d| d.name.clone()).collect();

    if ledger.contains("truth", None) {
        if !resume {
            return Err(RunError::Inconsistent(
                "a benchmark-truth regime is already recorded here; pass --resume to reuse it \
                 or pick a fresh output directory"
                    .to_string(),
            ));
        }
        let rows = formats::read_metrics_csv(&metrics_path)?;
        let traces =
            convergence_traces(&rows, &detector_names, cfg.r_truth, cfg.convergence_window)?;
        return Ok(TruthOutcome { rows, traces, warnings: Vec::new() });
    }

    let started = Instant::now();
    fs::create_dir_all(&truth_dir).map_err(|e| io_err(&truth_dir, e))?;
    let params = metric_params(cfg);
    let frac_id = cfg.truth_id_fraction();
    let frac_ood = cfg.truth_ood_fraction();

    // (repetition, pair) tasks in configured order; execution order is free.
    let tasks: Vec<(usize, usize)> = (0..cfg.r_truth)
        .flat_map(|r| (0..pairs.len()).map(move |p| (r, p)))
        .collect();
    let mut results: Vec<(usize, Vec<MetricRow>)> = tasks
        .par_iter()
        .enumerate()
        .map(|(order, &(rep, p))| {
            let rep_seed = derive_seed(cfg.seed, "truth", rep as u64);
            let pair_seed = derive_seed(rep_seed, "pair", p as u64);
            let pair = &pairs[p];
            let round = truth_round(pair, rep, pair_seed, frac_id, frac_ood);
            score_all_detectors(pair, &round, &cfg.detectors, pair_seed, &params)
                .map(|rows| (order, rows))
        })
        .collect::<Result<_, _>>()?;
    results.sort_unstable_by_key(|(order, _)| *order);
    let rows: Vec<MetricRow> = results.into_iter().flat_map(|(_, rows)| rows).collect();

    let traces = convergence_traces(&rows, &detector_names, cfg.r_truth, cfg.convergence_window)?;

    formats::write_metrics_csv(&metrics_path, &rows)?;
    let means_path = truth_dir.join("running_means.csv");
    write_running_means(&means_path, &detector_names, &traces)?;
    let trace_path = truth_dir.join("convergence.csv");
    write_convergence(&trace_path, &traces)?;

    let warnings: Vec<String> = pairs
        .iter()
        .flat_map(|p| p.warnings.iter().map(|w| format!("pair `{}`: {w}", p.name)))
        .collect();
    log_warnings(&cfg.output_dir, &warnings)?;
    ledger.append(LedgerEntry {
        regime: "truth".into(),
        run: None,
        seed: cfg.seed,
        files: vec![
            "truth/metrics.csv".into(),
            "truth/running_means.csv".into(),
            "truth/convergence.csv".into(),
        ],
        warnings: warnings.clone(),
        wall_ms: started.elapsed().as_millis() as u64,
        timestamp_ms: now_ms(),
    })?;
    Ok(TruthOutcome { rows, traces, warnings })
}

fn write_running_means(
    path: &Path,
    detectors: &[String],
    traces: &[ConvergenceTrace],
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunError::Inconsistent(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| RunError::Inconsistent(format!("{}: {e}", path.display()));
    w.write_record(["rep", "detector", "metric", "running_mean"]).map_err(fail)?;
    for trace in traces {
        for (d, means) in trace.means.iter().enumerate() {
            for (r, mean) in means.iter().enumerate() {
                w.write_record([
                    (r + 1).to_string(),
                    detectors[d].clone(),
                    trace.metric.clone(),
                    mean.to_string(),
                ])
                .map_err(fail)?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_convergence(path: &Path, traces: &[ConvergenceTrace]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunError::Inconsistent(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| RunError::Inconsistent(format!("{}: {e}", path.display()));
    w.write_record(["rep", "metric", "window_delta"]).map_err(fail)?;
    for trace in traces {
        for (r, delta) in trace.delta.iter().enumerate() {
            w.write_record([(r + 1).to_string(), trace.metric.clone(), delta.to_string()])
                .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Cross-validation regime
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DcvOutcome {
    /// Per-run metric rows, `e_runs` entries of `pairs × k × detectors`.
    pub runs: Vec<Vec<MetricRow>>,
    pub warnings: Vec<String>,
}

fn run_dir_name(e: usize, e_runs: usize) -> String {
    let width = e_runs.to_string().len().max(2);
    format!("run_{:0width$}", e + 1)
}

/// Runs the dual cross-validation regime: per run, fresh dual folds per
/// pair (flat or hierarchical by taxonomy shape), all detectors scored on
/// every round. Fold manifests and per-round metrics are persisted per run;
/// with `resume`, ledgered runs are reloaded instead of recomputed.
pub fn run_dcv_rood(
    cfg: &ExperimentConfig,
    pairs: &[LoadedPair],
    ledger: &mut Ledger,
    resume: bool,
) -> Result<DcvOutcome, RunError> {
    init_thread_pool();
    let params = metric_params(cfg);
    let dcv_dir = cfg.output_dir.join("dcv");
    let mut runs = Vec::with_capacity(cfg.e_runs);
    let mut all_warnings = Vec::new();

    for e in 0..cfg.e_runs {
        let dir_name = run_dir_name(e, cfg.e_runs);
        let run_dir = dcv_dir.join(&dir_name);
        let metrics_path = run_dir.join("metrics.csv");
        if ledger.contains("dcv", Some(e + 1)) {
            if !resume {
                return Err(RunError::Inconsistent(format!(
                    "cross-validation run {} is already recorded here; pass --resume to reuse \
                     it or pick a fresh output directory",
                    e + 1
                )));
            }
            runs.push(formats::read_metrics_csv(&metrics_path)?);
            continue;
        }
        let started = Instant::now();
        fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
        let run_seed = derive_seed(cfg.seed, "dcv", e as u64);

        // Fold construction per pair is sequential (cheap); scoring fans out.
        let mut files = Vec::new();
        let mut warnings = Vec::new();
        let mut round_tasks: Vec<(usize, u64, EvaluationRound)> = Vec::new();
        for (p, pair) in pairs.iter().enumerate() {
            let pair_seed = derive_seed(run_seed, "pair", p as u64);
            let (f_id, f_ood) = if pair.hierarchical() {
                build_folds_hierarchical(&pair.id, &pair.ood, cfg.k, pair_seed)?
            } else {
                build_folds_flat(&pair.id, &pair.ood, cfg.k, pair_seed, cfg.plain_id_folds)?
            };
            let id_doc = FoldsDoc::from_assignment(&f_id, pair.id.taxonomy());
            let ood_doc = FoldsDoc::from_assignment(&f_ood, pair.ood.taxonomy());
            for (side, doc) in [("id", &id_doc), ("ood", &ood_doc)] {
                let name = format!("{}_{side}_folds.json", pair.name);
                formats::write_folds_manifest(&run_dir.join(&name), doc)?;
                files.push(format!("dcv/{dir_name}/{name}"));
                for w in &doc.warnings {
                    warnings.push(format!("run {} pair `{}`: {w}", e + 1, pair.name));
                }
            }
            for round in assemble_rounds(&f_id, &f_ood)? {
                round_tasks.push((p, pair_seed, round));
            }
        }

        let mut results: Vec<(usize, Vec<MetricRow>)> = round_tasks
            .par_iter()
            .enumerate()
            .map(|(order, (p, pair_seed, round))| {
                score_all_detectors(&pairs[*p], round, &cfg.detectors, *pair_seed, &params)
                    .map(|rows| (order, rows))
            })
            .collect::<Result<_, _>>()?;
        results.sort_unstable_by_key(|(order, _)| *order);
        let rows: Vec<MetricRow> = results.into_iter().flat_map(|(_, rows)| rows).collect();

        formats::write_metrics_csv(&metrics_path, &rows)?;
        files.push(format!("dcv/{dir_name}/metrics.csv"));
        log_warnings(&cfg.output_dir, &warnings)?;
        ledger.append(LedgerEntry {
            regime: "dcv".into(),
            run: Some(e + 1),
            seed: cfg.seed,
            files,
            warnings: warnings.clone(),
            wall_ms: started.elapsed().as_millis() as u64,
            timestamp_ms: now_ms(),
        })?;
        all_warnings.extend(warnings);
        runs.push(rows);
    }
    Ok(DcvOutcome { runs, warnings: all_warnings })
}
