//! Command-line front end for the dual cross-validation evaluation harness.
//!
//! Exit codes: `0` on success, `1` on a validation or usage error (bad flags,
//! malformed config, unreadable inputs), `2` on a runtime failure once the
//! actual computation has started.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use dcv_rood::compare::{build_comparison, tabulated_fidelity, write_comparison};
use dcv_rood::config::{load_config, load_pairs, DetectorConfig, DetectorKindConfig};
use dcv_rood::formats::{
    append_metric_row, external_scores_for_round, load_sample_set, read_folds_manifest,
    read_metrics_csv, write_folds_manifest, write_scores_csv, FoldsDoc, MetricRow,
};
use dcv_rood::regimes::{init_thread_pool, log_warnings, run_benchmark_truth, run_dcv_rood, Ledger};
use dcv_rood::report::{fidelity_text, methodwise_text, star_table};
use dcv_rood::scoring::score_round;
use dcv_rood::synth::{flat_pair, hier_pair, write_pair, FlatSynthSpec, HierSynthSpec};

use dcv_rood_core::metrics::{evaluate, MetricParams, ScoreTable};
use dcv_rood_core::rng::derive_seed;
use dcv_rood_core::split::{
    build_folds_flat, build_folds_hierarchical, select_id_ood_split, stratified_k_fold,
    EvaluationRound, SplitSpec,
};

#[derive(Parser)]
#[command(name = "dcv-rood", version, about = "Dual cross-validation harness for out-of-distribution detector evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build cross-validation fold manifests for a dataset pair
    Split(SplitArgs),
    /// Score one detector over one cross-validation round
    Score(ScoreArgs),
    /// Compute detection metrics from a score file
    Eval(EvalArgs),
    /// Run the benchmark-truth regime from a config file
    Truth(RegimeArgs),
    /// Run the repeated dual cross-validation regime from a config file
    Dcv(RegimeArgs),
    /// Compare benchmark truth against cross-validation runs
    Compare(CompareArgs),
    /// Generate a synthetic Gaussian dataset pair
    Synth(SynthArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Single manifest holding both populations (requires --ood-fraction for hierarchical selection)
    #[arg(long, conflicts_with_all = ["id_manifest", "ood_manifest"])]
    manifest: Option<PathBuf>,
    /// In-distribution manifest (dual-manifest form)
    #[arg(long, requires = "ood_manifest")]
    id_manifest: Option<PathBuf>,
    /// Out-of-distribution manifest (dual-manifest form)
    #[arg(long, requires = "id_manifest")]
    ood_manifest: Option<PathBuf>,
    /// Fraction of classes per stratum withheld as OOD (single-manifest form)
    #[arg(long)]
    ood_fraction: Option<f64>,
    /// Seed for the ID/OOD class selection (defaults to --seed)
    #[arg(long)]
    split_seed: Option<u64>,
    /// Number of folds
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Base seed for fold construction
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use plain (unstratified) k-fold on the ID side
    #[arg(long)]
    plain_id_folds: bool,
    /// Output directory for fold manifests
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    id_manifest: PathBuf,
    #[arg(long)]
    id_features: Option<PathBuf>,
    #[arg(long)]
    id_logits: Option<PathBuf>,
    #[arg(long)]
    ood_manifest: PathBuf,
    #[arg(long)]
    ood_features: Option<PathBuf>,
    #[arg(long)]
    ood_logits: Option<PathBuf>,
    /// ID fold manifest produced by `split`
    #[arg(long)]
    id_folds: PathBuf,
    /// OOD fold manifest produced by `split`
    #[arg(long)]
    ood_folds: PathBuf,
    /// Round index (0-based)
    #[arg(long)]
    round: usize,
    /// Detector kind: ebo, gen, knn or mds
    #[arg(long)]
    detector: String,
    /// Display name recorded for the detector (defaults to the kind)
    #[arg(long)]
    name: Option<String>,
    /// GEN exponent
    #[arg(long)]
    gamma: Option<f64>,
    /// GEN top-class count
    #[arg(long)]
    top_m: Option<usize>,
    /// KNN neighbour count
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Relative noise level injected into the scores
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Seed for the noise stream
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Output CSV (sample_id,score; test ID rows then test OOD rows)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Score CSV covering exactly the round's test samples
    #[arg(long)]
    scores: PathBuf,
    /// ID fold manifest (with --ood-folds and --round)
    #[arg(long, requires_all = ["ood_folds", "round"])]
    id_folds: Option<PathBuf>,
    #[arg(long)]
    ood_folds: Option<PathBuf>,
    #[arg(long)]
    round: Option<usize>,
    /// JSON round file with "test_id" and "test_ood" sample lists
    #[arg(long, conflicts_with = "id_folds")]
    round_file: Option<PathBuf>,
    /// False-positive-rate cap for the TPR metric
    #[arg(long, default_value_t = 0.05)]
    fpr_cap: f64,
    /// ID-score percentile defining the accuracy threshold
    #[arg(long, default_value_t = 0.90)]
    id_percentile: f64,
    #[arg(long, default_value = "external")]
    detector_name: String,
    #[arg(long, default_value = "id")]
    id_name: String,
    #[arg(long, default_value = "ood")]
    ood_name: String,
    /// Metrics CSV to append the row to (created with a header if missing)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegimeArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path config overrides, e.g. --set k=10 --set detectors.0.noise_std=0.5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Skip work already recorded in the output ledger
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Benchmark-truth directory (contains metrics.csv)
    #[arg(long, requires = "dcv", conflicts_with = "benchmark_pvalues")]
    truth: Option<PathBuf>,
    /// Cross-validation directory (contains run_*/metrics.csv)
    #[arg(long)]
    dcv: Option<PathBuf>,
    /// Output directory; comparison tables land in <out>/compare
    #[arg(long)]
    out: Option<PathBuf>,
    /// Significance levels (repeatable)
    #[arg(long = "alpha", value_name = "ALPHA")]
    alphas: Vec<f64>,
    /// Significance level for the normality pretest
    #[arg(long, default_value_t = 0.05)]
    alpha_normality: f64,
    /// Treat each (pair, round) as its own context instead of pair means
    #[arg(long)]
    per_fold_contexts: bool,
    /// Skip if a comparison is already ledgered in --out
    #[arg(long)]
    resume: bool,
    /// Tabulated mode: benchmark p-value matrix CSV
    #[arg(long, requires_all = ["pair_counts", "n_runs", "metric"])]
    benchmark_pvalues: Option<PathBuf>,
    /// Tabulated mode: ALPHA=PATH signed pair-count matrices (repeatable)
    #[arg(long = "pair-counts", value_name = "ALPHA=PATH")]
    pair_counts: Vec<String>,
    /// Tabulated mode: number of cross-validation runs behind the counts
    #[arg(long)]
    n_runs: Option<usize>,
    /// Tabulated mode: metric key the tables belong to
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(subcommand)]
    shape: SynthShape,
}

#[derive(Subcommand)]
enum SynthShape {
    /// Two disjoint flat label spaces
    Flat {
        #[arg(long)]
        out: PathBuf,
        /// Dataset-pair name; files are written as <name>_*.{json,dcvr}
        #[arg(long, default_value = "synth")]
        name: String,
        #[arg(long, default_value_t = 10)]
        n_id_classes: usize,
        #[arg(long, default_value_t = 10)]
        n_ood_classes: usize,
        #[arg(long, default_value_t = 50)]
        id_per_class: usize,
        #[arg(long, default_value_t = 50)]
        ood_per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.5)]
        class_spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// A three-level hierarchy with leaf classes withheld per stratum
    Hier {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synth")]
        name: String,
        #[arg(long, default_value_t = 2)]
        n_super: usize,
        #[arg(long, default_value_t = 5)]
        n_classes: usize,
        #[arg(long, default_value_t = 5)]
        n_sub: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.5)]
        class_spread: f64,
        #[arg(long, default_value_t = 0.5)]
        ood_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn validation(err: impl std::fmt::Display) -> Self {
        Failure::Validation(err.to_string())
    }

    fn runtime(err: impl std::fmt::Display) -> Self {
        Failure::Runtime(err.to_string())
    }
}

/// Restores the default SIGPIPE disposition so `dcv-rood ... | head` exits
/// quietly instead of panicking when the reader closes the pipe.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe { libc::signal(libc::SIGPIPE, libc::SIG_DFL) };
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Split(args) => cmd_split(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Truth(args) => cmd_truth(args),
        Command::Dcv(args) => cmd_dcv(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn emit_warnings(out_dir: &Path, warnings: &[String]) -> Result<(), Failure> {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    log_warnings(out_dir, warnings).map_err(Failure::runtime)
}

fn cmd_split(args: SplitArgs) -> Result<(), Failure> {
    if args.k < 2 {
        return Err(Failure::Validation(format!("k must be at least 2, got {}", args.k)));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let mut warnings = Vec::new();

    let (docs, names): (Vec<FoldsDoc>, Vec<String>) = if let Some(manifest) = &args.manifest {
        let set = load_sample_set(manifest, None, None).map_err(Failure::validation)?;
        let stem = file_stem(manifest);
        if let Some(fraction) = args.ood_fraction {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Failure::Validation(format!(
                    "--ood-fraction must lie strictly between 0 and 1, got {fraction}"
                )));
            }
            let spec = SplitSpec { ood_fraction: fraction, seed: args.split_seed.unwrap_or(args.seed) };
            let (id_set, ood_set, split_warnings) =
                select_id_ood_split(&set, &spec).map_err(Failure::validation)?;
            warnings.extend(split_warnings.iter().map(|w| w.to_string()));
            let (id_folds, ood_folds) =
                build_folds_hierarchical(&id_set, &ood_set, args.k, args.seed)
                    .map_err(Failure::runtime)?;
            let id_doc = FoldsDoc::from_assignment(&id_folds, set.taxonomy());
            let ood_doc = FoldsDoc::from_assignment(&ood_folds, set.taxonomy());
            (vec![id_doc, ood_doc], vec![format!("{stem}_id_folds.json"), format!("{stem}_ood_folds.json")])
        } else {
            let level = set.taxonomy().classification_level();
            let seed = derive_seed(args.seed, "flat-id", 0);
            let assignment = if args.plain_id_folds {
                dcv_rood_core::split::plain_k_fold(&set, args.k, seed).map_err(Failure::runtime)?
            } else {
                stratified_k_fold(&set, level, args.k, seed).map_err(Failure::runtime)?
            };
            let doc = FoldsDoc::from_assignment(&assignment, set.taxonomy());
            (vec![doc], vec![format!("{stem}_folds.json")])
        }
    } else if let (Some(id_path), Some(ood_path)) = (&args.id_manifest, &args.ood_manifest) {
        let id = load_sample_set(id_path, None, None).map_err(Failure::validation)?;
        let ood = load_sample_set(ood_path, None, None).map_err(Failure::validation)?;
        let hierarchical =
            id.taxonomy() == ood.taxonomy() && id.taxonomy().strata_level().is_some();
        let (id_folds, ood_folds) = if hierarchical {
            build_folds_hierarchical(&id, &ood, args.k, args.seed).map_err(Failure::runtime)?
        } else {
            build_folds_flat(&id, &ood, args.k, args.seed, args.plain_id_folds)
                .map_err(Failure::runtime)?
        };
        let id_doc = FoldsDoc::from_assignment(&id_folds, id.taxonomy());
        let ood_doc = FoldsDoc::from_assignment(&ood_folds, ood.taxonomy());
        (
            vec![id_doc, ood_doc],
            vec![
                format!("{}_folds.json", file_stem(id_path)),
                format!("{}_folds.json", file_stem(ood_path)),
            ],
        )
    } else {
        return Err(Failure::Validation(
            "either --manifest or both --id-manifest and --ood-manifest are required".to_string(),
        ));
    };

    for (doc, name) in docs.iter().zip(&names) {
        warnings.extend(doc.warnings.iter().cloned());
        let path = args.out.join(name);
        write_folds_manifest(&path, doc).map_err(Failure::runtime)?;
        println!("{}", path.display());
    }
    emit_warnings(&args.out, &warnings)
}

fn parse_detector(args: &ScoreArgs) -> Result<DetectorConfig, Failure> {
    let kind = match args.detector.as_str() {
        "ebo" => DetectorKindConfig::Ebo,
        "gen" => DetectorKindConfig::Gen,
        "knn" => DetectorKindConfig::Knn,
        "mds" => DetectorKindConfig::Mds,
        other => {
            return Err(Failure::Validation(format!(
                "unknown detector '{other}' (expected ebo, gen, knn or mds)"
            )))
        }
    };
    Ok(DetectorConfig {
        name: args.name.clone().unwrap_or_else(|| args.detector.clone()),
        kind,
        gamma: args.gamma,
        top_m: args.top_m,
        k_neighbors: args.k_neighbors,
        noise_std: args.noise_std,
    })
}

fn cmd_score(args: ScoreArgs) -> Result<(), Failure> {
    let detector = parse_detector(&args)?;
    let id = load_sample_set(&args.id_manifest, args.id_features.as_deref(), args.id_logits.as_deref())
        .map_err(Failure::validation)?;
    let ood = load_sample_set(
        &args.ood_manifest,
        args.ood_features.as_deref(),
        args.ood_logits.as_deref(),
    )
    .map_err(Failure::validation)?;
    let id_doc = read_folds_manifest(&args.id_folds).map_err(Failure::validation)?;
    let ood_doc = read_folds_manifest(&args.ood_folds).map_err(Failure::validation)?;
    let round = id_doc.round(&ood_doc, args.round).map_err(Failure::Validation)?;

    let scores = score_round(&id, &ood, &round, &detector, args.noise_seed).map_err(Failure::runtime)?;
    let mut rows: Vec<(String, f64)> = Vec::with_capacity(round.test_id.len() + round.test_ood.len());
    rows.extend(round.test_id.iter().cloned().zip(scores.id.iter().copied()));
    rows.extend(round.test_ood.iter().cloned().zip(scores.ood.iter().copied()));
    write_scores_csv(&args.out, &rows).map_err(Failure::runtime)?;
    println!("{}", args.out.display());
    Ok(())
}

/// Round membership as consumed by `eval --round-file`: the test-side sample
/// lists are required, the train sides are irrelevant for scoring external
/// score files and may be omitted.
#[derive(Deserialize)]
struct RoundFile {
    #[serde(default)]
    train_id: Vec<String>,
    test_id: Vec<String>,
    #[serde(default)]
    train_ood: Vec<String>,
    test_ood: Vec<String>,
}

fn load_round(args: &EvalArgs) -> Result<EvaluationRound, Failure> {
    if let Some(path) = &args.round_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
        let raw: RoundFile = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let mut round = EvaluationRound {
            train_id: raw.train_id,
            test_id: raw.test_id,
            train_ood: raw.train_ood,
            test_ood: raw.test_ood,
            round_index: args.round.unwrap_or(0),
        };
        round.train_id.sort_unstable();
        round.test_id.sort_unstable();
        round.train_ood.sort_unstable();
        round.test_ood.sort_unstable();
        if round.test_id.is_empty() || round.test_ood.is_empty() {
            return Err(Failure::Validation(format!(
                "{}: test_id and test_ood must both be non-empty",
                path.display()
            )));
        }
        Ok(round)
    } else if let (Some(id_folds), Some(ood_folds), Some(round)) =
        (&args.id_folds, &args.ood_folds, args.round)
    {
        let id_doc = read_folds_manifest(id_folds).map_err(Failure::validation)?;
        let ood_doc = read_folds_manifest(ood_folds).map_err(Failure::validation)?;
        id_doc.round(&ood_doc, round).map_err(Failure::Validation)
    } else {
        Err(Failure::Validation(
            "either --round-file or --id-folds/--ood-folds/--round is required".to_string(),
        ))
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    if !(args.fpr_cap > 0.0 && args.fpr_cap < 1.0) {
        return Err(Failure::Validation(format!(
            "--fpr-cap must lie strictly between 0 and 1, got {}",
            args.fpr_cap
        )));
    }
    if !(args.id_percentile > 0.0 && args.id_percentile < 1.0) {
        return Err(Failure::Validation(format!(
            "--id-percentile must lie strictly between 0 and 1, got {}",
            args.id_percentile
        )));
    }
    let round = load_round(&args)?;
    let (id_scores, ood_scores) =
        external_scores_for_round(&args.scores, &round).map_err(Failure::validation)?;
    let table = ScoreTable::new(id_scores, ood_scores).map_err(Failure::runtime)?;
    let params = MetricParams { fpr_cap: args.fpr_cap, id_percentile: args.id_percentile };
    let report = evaluate(&table, &params).map_err(Failure::runtime)?;
    let row = MetricRow {
        detector: args.detector_name.clone(),
        id_dataset: args.id_name.clone(),
        ood_dataset: args.ood_name.clone(),
        round: args.round.unwrap_or(0),
        tpr5: report.tpr_at_fpr,
        auroc: report.auroc,
        aupr: report.aupr,
        f1: report.f1,
        acc90: report.accuracy,
        threshold_acc90: report.threshold,
        n_id: report.n_id,
        n_ood: report.n_ood,
    };
    if let Some(out) = &args.out {
        append_metric_row(out, &row).map_err(Failure::runtime)?;
    }
    println!(
        "{{\"tpr5\":\"{}\",\"auroc\":\"{}\",\"aupr\":\"{}\",\"f1\":\"{}\",\"acc90\":\"{}\",\"threshold_acc90\":\"{}\",\"n_id\":{},\"n_ood\":{}}}",
        row.tpr5, row.auroc, row.aupr, row.f1, row.acc90, row.threshold_acc90, row.n_id, row.n_ood
    );
    Ok(())
}

fn cmd_truth(args: RegimeArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config, &args.set).map_err(Failure::validation)?;
    let pairs = load_pairs(&cfg).map_err(Failure::validation)?;
    let mut ledger = Ledger::open(&cfg.output_dir).map_err(Failure::runtime)?;
    let outcome =
        run_benchmark_truth(&cfg, &pairs, &mut ledger, args.resume).map_err(Failure::runtime)?;
    emit_warnings(&cfg.output_dir, &outcome.warnings)?;
    for trace in &outcome.traces {
        let delta = trace.final_delta();
        let verdict = if delta < cfg.convergence_threshold { "converged" } else { "not converged" };
        let reps = trace.means.first().map_or(0, Vec::len);
        println!(
            "{}: {reps} repetitions, window delta {delta:.6} ({verdict} at advisory threshold {})",
            trace.metric, cfg.convergence_threshold
        );
    }
    println!("truth: {} metric rows", outcome.rows.len());
    Ok(())
}

fn cmd_dcv(args: RegimeArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config, &args.set).map_err(Failure::validation)?;
    let pairs = load_pairs(&cfg).map_err(Failure::validation)?;
    let mut ledger = Ledger::open(&cfg.output_dir).map_err(Failure::runtime)?;
    let outcome = run_dcv_rood(&cfg, &pairs, &mut ledger, args.resume).map_err(Failure::runtime)?;
    emit_warnings(&cfg.output_dir, &outcome.warnings)?;
    for (e, rows) in outcome.runs.iter().enumerate() {
        println!("run {}/{}: {} metric rows", e + 1, outcome.runs.len(), rows.len());
    }
    Ok(())
}

fn parse_pair_counts(specs: &[String]) -> Result<Vec<(f64, PathBuf)>, Failure> {
    let mut counts = Vec::with_capacity(specs.len());
    for spec in specs {
        let (alpha, path) = spec.split_once('=').ok_or_else(|| {
            Failure::Validation(format!("--pair-counts expects ALPHA=PATH, got '{spec}'"))
        })?;
        let alpha: f64 = alpha
            .parse()
            .map_err(|e| Failure::Validation(format!("bad alpha in '{spec}': {e}")))?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Failure::Validation(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        counts.push((alpha, PathBuf::from(path)));
    }
    Ok(counts)
}

fn cmd_compare_tabulated(args: &CompareArgs) -> Result<(), Failure> {
    let pvalues = args.benchmark_pvalues.as_ref().expect("checked by caller");
    let counts = parse_pair_counts(&args.pair_counts)?;
    if counts.is_empty() {
        return Err(Failure::Validation("at least one --pair-counts table is required".to_string()));
    }
    let n_runs = args.n_runs.ok_or_else(|| Failure::Validation("--n-runs is required".to_string()))?;
    if n_runs == 0 {
        return Err(Failure::Validation("--n-runs must be positive".to_string()));
    }
    let metric = args.metric.as_deref().unwrap_or("metric");
    let reports = tabulated_fidelity(pvalues, &counts, metric, n_runs).map_err(Failure::validation)?;
    for report in &reports {
        let hit = report
            .hit_rate()
            .map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        let err = report
            .error_rate()
            .map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "{} alpha={:.3} hit_rate={} error_rate={} (n_runs={})",
            report.metric(),
            report.alpha(),
            hit,
            err,
            report.n_runs()
        );
    }
    Ok(())
}

fn read_run_dirs(dcv_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut dirs = Vec::new();
    let entries = std::fs::read_dir(dcv_dir)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", dcv_dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(Failure::runtime)?;
        let path = entry.path();
        if path.is_dir()
            && path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_"))
        {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Validation(format!(
            "no run_* directories under {}",
            dcv_dir.display()
        )));
    }
    Ok(dirs)
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    if args.benchmark_pvalues.is_some() {
        return cmd_compare_tabulated(&args);
    }
    let truth_dir = args.truth.clone().ok_or_else(|| {
        Failure::Validation("either --truth/--dcv or --benchmark-pvalues is required".to_string())
    })?;
    let dcv_dir = args.dcv.clone().expect("clap enforces --dcv alongside --truth");
    let alphas = if args.alphas.is_empty() { vec![0.1, 0.05, 0.01] } else { args.alphas.clone() };
    for alpha in &alphas {
        if !(*alpha > 0.0 && *alpha < 1.0) {
            return Err(Failure::Validation(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
    }

    let truth_rows = read_metrics_csv(&truth_dir.join("metrics.csv")).map_err(Failure::validation)?;
    let mut runs = Vec::new();
    for dir in read_run_dirs(&dcv_dir)? {
        runs.push(read_metrics_csv(&dir.join("metrics.csv")).map_err(Failure::validation)?);
    }

    let report = build_comparison(&truth_rows, &runs, &alphas, args.alpha_normality, args.per_fold_contexts)
        .map_err(Failure::runtime)?;

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let mut ledger = Ledger::open(out).map_err(Failure::runtime)?;
        if ledger.contains("compare", None) {
            if args.resume {
                println!("comparison already recorded in {}", out.display());
                for line in report.summary_lines() {
                    println!("{line}");
                }
                return Ok(());
            }
            return Err(Failure::Runtime(format!(
                "a comparison is already recorded in {}; pass --resume to keep it or use a fresh directory",
                out.display()
            )));
        }
        let started = std::time::Instant::now();
        let files = write_comparison(out, &report).map_err(Failure::runtime)?;
        let timestamp_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        ledger
            .append(dcv_rood::regimes::LedgerEntry {
                regime: "compare".to_string(),
                run: None,
                seed: 0,
                files,
                warnings: Vec::new(),
                wall_ms: started.elapsed().as_millis() as u64,
                timestamp_ms,
            })
            .map_err(Failure::runtime)?;
    }

    for m in &report.metrics {
        println!("{}", star_table(&m.benchmark));
        for fidelity in &m.fidelity {
            println!("{}", fidelity_text(fidelity));
            println!();
        }
        println!("{}", methodwise_text(&m.methodwise, &alphas));
        println!();
    }
    for line in report.summary_lines() {
        println!("{line}");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    match args.shape {
        SynthShape::Flat {
            out,
            name,
            n_id_classes,
            n_ood_classes,
            id_per_class,
            ood_per_class,
            dim,
            separation,
            class_spread,
            seed,
        } => {
            if n_id_classes < 2 || n_ood_classes == 0 || id_per_class == 0 || ood_per_class == 0 || dim == 0 {
                return Err(Failure::Validation(
                    "need at least 2 ID classes, 1 OOD class, 1 sample per class and dim >= 1".to_string(),
                ));
            }
            let spec = FlatSynthSpec {
                n_id_classes,
                n_ood_classes,
                id_per_class,
                ood_per_class,
                dim,
                separation,
                class_spread,
                seed,
            };
            let pair = flat_pair(&spec);
            write_synth(&out, &name, pair)
        }
        SynthShape::Hier {
            out,
            name,
            n_super,
            n_classes,
            n_sub,
            per_class,
            dim,
            separation,
            class_spread,
            ood_fraction,
            seed,
        } => {
            if n_super == 0 || n_classes == 0 || n_sub < 2 || per_class == 0 || dim == 0 {
                return Err(Failure::Validation(
                    "need at least 1 superclass, 1 class, 2 subclasses, 1 sample per leaf and dim >= 1"
                        .to_string(),
                ));
            }
            if !(ood_fraction > 0.0 && ood_fraction < 1.0) {
                return Err(Failure::Validation(format!(
                    "--ood-fraction must lie strictly between 0 and 1, got {ood_fraction}"
                )));
            }
            let spec = HierSynthSpec {
                n_super,
                n_classes,
                n_sub,
                per_class,
                dim,
                separation,
                class_spread,
                ood_fraction,
                seed,
            };
            let pair = hier_pair(&spec);
            write_synth(&out, &name, pair)
        }
    }
}

fn write_synth(out: &Path, name: &str, pair: dcv_rood::synth::SynthPair) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let warnings = pair.warnings.clone();
    let pair_config = write_pair(out, name, &pair).map_err(Failure::runtime)?;
    let json = serde_json::to_string_pretty(&pair_config)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{json}");
    emit_warnings(out, &warnings)
}
