//! Statistical machinery for the fidelity pipeline: normality screening,
//! two-sample location tests, pairwise significance matrices, and the
//! hit/error bookkeeping that compares a cross-validated matrix against a
//! benchmark one.
//!
//! P-values are clamped into `(0, 1]` (floor 1e-300) so downstream
//! comparisons never meet a hard zero from underflow.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::special::{betai, normal_quantile, normal_sf};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample size {n} below the minimum {min}")]
    SampleTooSmall { n: usize, min: usize },
    #[error("sample size {n} above the maximum {max}")]
    SampleTooLarge { n: usize, max: usize },
    #[error("sample is constant")]
    ConstantInput,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("tied values are not permitted in the exact test")]
    TiesInExactMode,
    #[error("significance level {alpha} outside (0, 1)")]
    InvalidAlpha { alpha: f64 },
    #[error("need at least two methods, got {n}")]
    TooFewMethods { n: usize },
    #[error("duplicate method name `{name}`")]
    DuplicateMethod { name: String },
    #[error("method sets differ: `{name}` present on one side only")]
    MethodMismatch { name: String },
    #[error("matrix shape {rows}x{cols} does not fit {methods} methods")]
    ShapeMismatch { rows: usize, cols: usize, methods: usize },
    #[error("p-value {p} at ({row}, {col}) outside [0, 1]")]
    InvalidPValue { p: f64, row: usize, col: usize },
    #[error("no cross-validation runs supplied")]
    NoRuns,
    #[error("per-pair count {value} at ({row}, {col}) is not an integer in [0, {max}]")]
    InvalidCount { value: f64, row: usize, col: usize, max: usize },
}

fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { index });
    }
    Ok(())
}

/// Keeps p-values in `(0, 1]`; underflow becomes 1e-300 instead of 0 so
/// strict `p < alpha` comparisons stay meaningful.
fn clamp_p(p: f64) -> f64 {
    p.clamp(1e-300, 1.0)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased (n-1) sample variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (AS R94)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapiroResult {
    pub w: f64,
    pub p: f64,
}

/// Shapiro-Wilk W test (AS R94 approximation, 3 ≤ n ≤ 5000).
///
/// Weights come from Blom scores rescaled through the Royston polynomial
/// corrections for the two outermost order statistics; the p-value uses the
/// n-dependent normalizing transform of `ln(1-W)`.
pub fn shapiro_wilk(x: &[f64]) -> Result<ShapiroResult, StatsError> {
    const MIN_N: usize = 3;
    const MAX_N: usize = 5000;
    check_finite(x)?;
    let n = x.len();
    if n < MIN_N {
        return Err(StatsError::SampleTooSmall { n, min: MIN_N });
    }
    if n > MAX_N {
        return Err(StatsError::SampleTooLarge { n, max: MAX_N });
    }
    let mut xs = x.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    if xs[0] == xs[n - 1] {
        return Err(StatsError::ConstantInput);
    }

    let nf = n as f64;
    let m: Vec<f64> = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let ssm: f64 = m.iter().map(|v| v * v).sum();
    let rsn = 1.0 / libm::sqrt(nf);

    let mut a = alloc::vec![0.0; n];
    if n == 3 {
        a[2] = libm::sqrt(0.5);
        a[0] = -a[2];
    } else {
        let c_n = m[n - 1] / libm::sqrt(ssm);
        let an = poly5(rsn, -2.706056, 4.434685, -2.071190, -0.147981, 0.221157) + c_n;
        let (phi, lo) = if n > 5 {
            let c_n1 = m[n - 2] / libm::sqrt(ssm);
            let an1 = poly5(rsn, -3.582633, 5.682633, -1.752461, -0.293762, 0.042981) + c_n1;
            a[n - 2] = an1;
            a[1] = -an1;
            let phi = (ssm - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
                / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            (phi, 2)
        } else {
            let phi = (ssm - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
            (phi, 1)
        };
        a[n - 1] = an;
        a[0] = -an;
        let sp = libm::sqrt(phi);
        for i in lo..n - lo {
            a[i] = m[i] / sp;
        }
    }

    let xbar = mean(&xs);
    let ssq: f64 = xs.iter().map(|&v| (v - xbar) * (v - xbar)).sum();
    let num: f64 = a.iter().zip(&xs).map(|(&ai, &xi)| ai * xi).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / core::f64::consts::PI
            * (libm::asin(libm::sqrt(w)) - libm::asin(libm::sqrt(0.75)));
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let g = -2.273 + 0.459 * nf;
        let arg = g - libm::log(1.0 - w);
        if arg <= 0.0 {
            // W so low the transform leaves its domain; report the floor.
            return Ok(ShapiroResult { w, p: 1e-300 });
        }
        let wln = -libm::log(arg);
        let mu = 0.5440 - 0.39978 * nf + 0.025054 * nf * nf - 0.0006714 * nf * nf * nf;
        let sigma = libm::exp(1.3822 - 0.77857 * nf + 0.062767 * nf * nf - 0.0020322 * nf * nf * nf);
        normal_sf((wln - mu) / sigma)
    } else {
        let ln_n = libm::log(nf);
        let wln = libm::log(1.0 - w);
        let mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n * ln_n + 0.0038915 * ln_n * ln_n * ln_n;
        let sigma = libm::exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n * ln_n);
        normal_sf((wln - mu) / sigma)
    };
    Ok(ShapiroResult { w, p: clamp_p(p) })
}

fn poly5(x: f64, c5: f64, c4: f64, c3: f64, c2: f64, c1: f64) -> f64 {
    ((((c5 * x + c4) * x + c3) * x + c2) * x + c1) * x
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwuMethod {
    /// Exact null distribution; refuses tied values.
    Exact,
    /// Normal approximation with tie correction and continuity correction.
    Asymptotic,
    /// Exact when `n_x + n_y ≤ 24` and the pooled sample is tie-free,
    /// asymptotic otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwuResult {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub used_exact: bool,
}

const MWU_EXACT_LIMIT: usize = 24;

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(x: &[f64], y: &[f64], method: MwuMethod) -> Result<MwuResult, StatsError> {
    check_finite(x)?;
    check_finite(y)?;
    let n = x.len();
    let m = y.len();

    // Midranks over the pooled sample; tie sizes feed the asymptotic
    // variance correction.
    let mut pooled: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_x = 0.0;
    let mut tie_sizes: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        if j - i > 1 {
            tie_sizes.push(j - i);
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_x += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_x - (n * (n + 1)) as f64 / 2.0;
    let has_ties = !tie_sizes.is_empty();

    let exact = match method {
        MwuMethod::Exact => {
            if has_ties {
                return Err(StatsError::TiesInExactMode);
            }
            true
        }
        MwuMethod::Asymptotic => false,
        MwuMethod::Auto => n + m <= MWU_EXACT_LIMIT && !has_ties,
    };

    let p = if exact {
        exact_two_sided_p(n, m, libm::round(u) as usize)
    } else {
        let nf = n as f64;
        let mf = m as f64;
        let nt = nf + mf;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let var = nf * mf / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let d = u - nf * mf / 2.0;
            let cc = 0.5 * sign_of(d);
            let z = (d - cc) / libm::sqrt(var);
            2.0 * normal_sf(libm::fabs(z))
        }
    };
    Ok(MwuResult { u, p: clamp_p(p), used_exact: exact })
}

fn sign_of(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Counts of arrangements by U value: `f(i, j, u) = f(i, j-1, u) +
/// f(i-1, j, u-j)` — partitions of `u` into at most `i` parts, each at most
/// `j`. Row `i` is built from row `i-1`, keeping memory at two rows of
/// `(j, u)` tables.
fn exact_u_distribution(n: usize, m: usize) -> Vec<f64> {
    let mut prev: Vec<Vec<f64>> = (0..=m).map(|_| alloc::vec![1.0]).collect();
    let mut cur: Vec<Vec<f64>> = prev.clone();
    for i in 1..=n {
        for j in 0..=m {
            let len = i * j + 1;
            let mut v = alloc::vec![0.0; len];
            for (u, slot) in v.iter_mut().enumerate() {
                if j == 0 {
                    *slot = if u == 0 { 1.0 } else { 0.0 };
                    continue;
                }
                let smaller_max = cur[j - 1].get(u).copied().unwrap_or(0.0);
                let fewer_parts = if u >= j {
                    prev[j].get(u - j).copied().unwrap_or(0.0)
                } else {
                    0.0
                };
                *slot = smaller_max + fewer_parts;
            }
            cur[j] = v;
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    core::mem::take(&mut prev[m])
}

fn exact_two_sided_p(n: usize, m: usize, u: usize) -> f64 {
    let dist = exact_u_distribution(n, m);
    let total: f64 = dist.iter().sum();
    let le: f64 = dist[..=u.min(dist.len() - 1)].iter().sum();
    let ge: f64 = dist[u.min(dist.len() - 1)..].iter().sum();
    (2.0 * (le.min(ge)) / total).min(1.0)
}

// ---------------------------------------------------------------------------
// Student's t
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn t_p_value(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 1e-300;
    }
    clamp_p(betai(df / 2.0, 0.5, df / (df + t * t)))
}

/// Two-sample Student's t-test with pooled variance (equal-variance
/// assumption), two-sided.
pub fn t_test_pooled(x: &[f64], y: &[f64]) -> Result<TTestResult, StatsError> {
    check_finite(x)?;
    check_finite(y)?;
    let n = x.len();
    let m = y.len();
    if n < 2 || m < 2 {
        return Err(StatsError::SampleTooSmall { n: n.min(m), min: 2 });
    }
    let df = (n + m - 2) as f64;
    let sp2 = ((n - 1) as f64 * sample_variance(x) + (m - 1) as f64 * sample_variance(y)) / df;
    let diff = mean(x) - mean(y);
    let se = libm::sqrt(sp2 * (1.0 / n as f64 + 1.0 / m as f64));
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY * sign_of(diff)
    };
    Ok(TTestResult { t, p: t_p_value(t, df), df })
}

/// Welch's t-test (unequal variances), two-sided, with
/// Welch-Satterthwaite degrees of freedom.
pub fn t_test_welch(x: &[f64], y: &[f64]) -> Result<TTestResult, StatsError> {
    check_finite(x)?;
    check_finite(y)?;
    let n = x.len();
    let m = y.len();
    if n < 2 || m < 2 {
        return Err(StatsError::SampleTooSmall { n: n.min(m), min: 2 });
    }
    let vx = sample_variance(x) / n as f64;
    let vy = sample_variance(y) / m as f64;
    let diff = mean(x) - mean(y);
    let se2 = vx + vy;
    if se2 <= 0.0 {
        let t = if diff == 0.0 { 0.0 } else { f64::INFINITY * sign_of(diff) };
        let df = (n + m - 2) as f64;
        return Ok(TTestResult { t, p: t_p_value(t, df), df });
    }
    let df = se2 * se2
        / (vx * vx / (n as f64 - 1.0) + vy * vy / (m as f64 - 1.0));
    let t = diff / libm::sqrt(se2);
    Ok(TTestResult { t, p: t_p_value(t, df), df })
}

// ---------------------------------------------------------------------------
// Pairwise significance matrix
// ---------------------------------------------------------------------------

/// Which two-sample test a pairwise cell used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairTest {
    StudentT,
    MannWhitney,
}

impl PairTest {
    pub fn as_str(self) -> &'static str {
        match self {
            PairTest::StudentT => "t",
            PairTest::MannWhitney => "mwu",
        }
    }
}

/// Symmetric matrix of two-sided p-values between methods, with the
/// significance threshold baked in (strict `p < alpha`).
#[derive(Debug, Clone)]
pub struct SignificanceMatrix {
    methods: Vec<String>,
    metric: String,
    alpha: f64,
    p_values: Matrix,
    tests: Vec<Option<PairTest>>,
}

impl SignificanceMatrix {
    /// Builds a matrix from externally computed p-values (diagonal entries
    /// are forced to 1). `tests` metadata is absent on this path.
    pub fn from_parts(
        methods: Vec<String>,
        metric: impl Into<String>,
        alpha: f64,
        p_values: Matrix,
    ) -> Result<Self, StatsError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(StatsError::InvalidAlpha { alpha });
        }
        if methods.len() < 2 {
            return Err(StatsError::TooFewMethods { n: methods.len() });
        }
        let n = methods.len();
        if p_values.rows() != n || p_values.cols() != n {
            return Err(StatsError::ShapeMismatch {
                rows: p_values.rows(),
                cols: p_values.cols(),
                methods: n,
            });
        }
        let mut p_values = p_values;
        for i in 0..n {
            p_values.set(i, i, 1.0);
            for j in 0..n {
                let p = p_values.get(i, j);
                if !(0.0..=1.0).contains(&p) || p.is_nan() {
                    return Err(StatsError::InvalidPValue { p, row: i, col: j });
                }
            }
        }
        let tests = alloc::vec![None; n * n];
        Ok(SignificanceMatrix { methods, metric: metric.into(), alpha, p_values, tests })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p_values.get(i, j)
    }

    /// The test behind cell `(i, j)`, when the matrix was computed here.
    pub fn test_used(&self, i: usize, j: usize) -> Option<PairTest> {
        self.tests[i * self.methods.len() + j]
    }

    /// Strict comparison; the diagonal is never significant.
    pub fn is_significant(&self, i: usize, j: usize) -> bool {
        i != j && self.p_values.get(i, j) < self.alpha
    }

    /// Number of significant unordered pairs.
    pub fn n_significant_pairs(&self) -> usize {
        let n = self.methods.len();
        let mut count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if self.is_significant(i, j) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Builds the pairwise significance matrix for one metric.
///
/// Test selection per pair: Student's t (pooled) when *both* method samples
/// look normal under Shapiro-Wilk at `alpha_normality`, Mann-Whitney
/// otherwise. A sample Shapiro-Wilk cannot assess (constant, or out of its
/// size range) counts as non-normal rather than erroring, so degenerate
/// samples route to the rank test.
pub fn pairwise_matrix(
    samples: &[(String, Vec<f64>)],
    metric: impl Into<String>,
    alpha: f64,
    alpha_normality: f64,
) -> Result<SignificanceMatrix, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha { alpha });
    }
    if !(alpha_normality > 0.0 && alpha_normality < 1.0) {
        return Err(StatsError::InvalidAlpha { alpha: alpha_normality });
    }
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewMethods { n });
    }
    for (i, (name, xs)) in samples.iter().enumerate() {
        check_finite(xs)?;
        if samples[..i].iter().any(|(other, _)| other == name) {
            return Err(StatsError::DuplicateMethod { name: name.clone() });
        }
    }

    let normal: Vec<bool> = samples
        .iter()
        .map(|(_, xs)| matches!(shapiro_wilk(xs), Ok(r) if r.p >= alpha_normality))
        .collect();

    let mut p_values = Matrix::zeros(n, n);
    let mut tests = alloc::vec![None; n * n];
    for i in 0..n {
        p_values.set(i, i, 1.0);
        for j in i + 1..n {
            let (test, p) = if normal[i] && normal[j] {
                (PairTest::StudentT, t_test_pooled(&samples[i].1, &samples[j].1)?.p)
            } else {
                (
                    PairTest::MannWhitney,
                    mann_whitney_u(&samples[i].1, &samples[j].1, MwuMethod::Auto)?.p,
                )
            };
            p_values.set(i, j, p);
            p_values.set(j, i, p);
            tests[i * n + j] = Some(test);
            tests[j * n + i] = Some(test);
        }
    }
    Ok(SignificanceMatrix {
        methods: samples.iter().map(|(name, _)| name.clone()).collect(),
        metric: metric.into(),
        alpha,
        p_values,
        tests,
    })
}

// ---------------------------------------------------------------------------
// Fidelity: benchmark matrix vs cross-validated matrix
// ---------------------------------------------------------------------------

/// Agreement counts between a benchmark significance matrix and a
/// cross-validated one, over unordered method pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FidelityCounts {
    /// Significant in the benchmark and reproduced by CV.
    pub hits: usize,
    /// Significant in the benchmark but missed by CV.
    pub misses: usize,
    /// Not significant in the benchmark yet flagged by CV.
    pub errors: usize,
    /// Not significant in either.
    pub agreements: usize,
}

impl FidelityCounts {
    pub fn benchmark_significant(&self) -> usize {
        self.hits + self.misses
    }

    pub fn benchmark_nonsignificant(&self) -> usize {
        self.errors + self.agreements
    }

    /// Fraction of benchmark-significant pairs reproduced; `None` when the
    /// benchmark has no significant pair (0/0 is undefined, not 0).
    pub fn hit_rate(&self) -> Option<f64> {
        let d = self.benchmark_significant();
        (d > 0).then(|| self.hits as f64 / d as f64)
    }

    /// Fraction of benchmark-nonsignificant pairs falsely flagged; `None`
    /// when every benchmark pair is significant.
    pub fn error_rate(&self) -> Option<f64> {
        let d = self.benchmark_nonsignificant();
        (d > 0).then(|| self.errors as f64 / d as f64)
    }
}

/// Compares two significance matrices pair by pair. Methods must match
/// one-to-one; row order may differ.
pub fn fidelity_counts(
    benchmark: &SignificanceMatrix,
    cv: &SignificanceMatrix,
) -> Result<FidelityCounts, StatsError> {
    let index_in_cv: Vec<usize> = benchmark
        .methods()
        .iter()
        .map(|name| {
            cv.methods()
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| StatsError::MethodMismatch { name: name.clone() })
        })
        .collect::<Result<_, _>>()?;
    if cv.methods().len() != benchmark.methods().len() {
        let extra = cv
            .methods()
            .iter()
            .find(|m| !benchmark.methods().contains(m))
            .cloned()
            .unwrap_or_default();
        return Err(StatsError::MethodMismatch { name: extra });
    }

    let n = benchmark.methods().len();
    let mut counts = FidelityCounts { hits: 0, misses: 0, errors: 0, agreements: 0 };
    for i in 0..n {
        for j in i + 1..n {
            let b = benchmark.is_significant(i, j);
            let c = cv.is_significant(index_in_cv[i], index_in_cv[j]);
            match (b, c) {
                (true, true) => counts.hits += 1,
                (true, false) => counts.misses += 1,
                (false, true) => counts.errors += 1,
                (false, false) => counts.agreements += 1,
            }
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Multi-run fidelity: hit and error rates on the [0, R] scale
// ---------------------------------------------------------------------------

/// Fidelity of R cross-validated significance matrices against a benchmark
/// matrix, summarised on a `[0, R]` scale.
///
/// Each unordered method pair carries the number of CV runs that called it
/// significant. The count is stored signed: positive when the benchmark also
/// calls the pair significant, negative when it does not, so a negative
/// entry marks runs flagging a difference the benchmark never saw. The hit
/// rate averages counts over benchmark-significant pairs; the error rate
/// averages magnitudes over the remaining pairs. A rate whose pair class is
/// empty is undefined (`None`), never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    methods: Vec<String>,
    metric: String,
    alpha: f64,
    n_runs: usize,
    counts: Matrix,
    benchmark_significant: Vec<bool>,
    hit_rate: Option<f64>,
    error_rate: Option<f64>,
}

impl FidelityReport {
    /// Core arithmetic shared by both construction paths. `magnitudes` is
    /// read on the upper triangle only; signs are imposed from `significant`.
    fn assemble(
        methods: Vec<String>,
        metric: String,
        alpha: f64,
        n_runs: usize,
        magnitudes: &Matrix,
        significant: &[bool],
    ) -> Self {
        let n = methods.len();
        let mut counts = Matrix::zeros(n, n);
        let (mut hit_sum, mut err_sum) = (0.0, 0.0);
        let (mut n_b, mut n_nb) = (0usize, 0usize);
        for i in 0..n {
            for j in i + 1..n {
                let c = magnitudes.get(i, j).abs();
                let signed = if significant[i * n + j] {
                    n_b += 1;
                    hit_sum += c;
                    c
                } else {
                    n_nb += 1;
                    err_sum += c;
                    -c
                };
                counts.set(i, j, signed);
                counts.set(j, i, signed);
            }
        }
        FidelityReport {
            methods,
            metric,
            alpha,
            n_runs,
            counts,
            benchmark_significant: significant.to_vec(),
            hit_rate: (n_b > 0).then(|| hit_sum / n_b as f64),
            error_rate: (n_nb > 0).then(|| err_sum / n_nb as f64),
        }
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of CV runs behind the counts; the rates live on `[0, n_runs]`.
    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    /// Symmetric signed per-pair count matrix (integral values, zero
    /// diagonal). Recomputing the rates from this matrix always reproduces
    /// [`FidelityReport::hit_rate`] and [`FidelityReport::error_rate`].
    pub fn counts(&self) -> &Matrix {
        &self.counts
    }

    /// Signed count for the pair `(i, j)`.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts.get(i, j)
    }

    /// Whether the benchmark called pair `(i, j)` significant at this
    /// report's alpha. The diagonal is never significant.
    pub fn is_benchmark_significant(&self, i: usize, j: usize) -> bool {
        i != j && self.benchmark_significant[i * self.methods.len() + j]
    }

    pub fn n_benchmark_significant(&self) -> usize {
        let n = self.methods.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.benchmark_significant[i * n + j])
            .count()
    }

    pub fn n_benchmark_nonsignificant(&self) -> usize {
        let n = self.methods.len();
        n * (n - 1) / 2 - self.n_benchmark_significant()
    }

    /// Mean count over benchmark-significant pairs, `None` when there are
    /// none (undefined, not perfect).
    pub fn hit_rate(&self) -> Option<f64> {
        self.hit_rate
    }

    /// Mean count magnitude over benchmark-nonsignificant pairs, `None`
    /// when every pair is benchmark-significant.
    pub fn error_rate(&self) -> Option<f64> {
        self.error_rate
    }
}

/// Aligns `other`'s methods onto `benchmark`'s order; `map[i]` is the index
/// in `other` of benchmark method `i`.
fn align_methods(
    benchmark: &SignificanceMatrix,
    other: &SignificanceMatrix,
) -> Result<Vec<usize>, StatsError> {
    if other.methods().len() != benchmark.methods().len() {
        let extra = other
            .methods()
            .iter()
            .find(|m| !benchmark.methods().contains(m))
            .cloned()
            .unwrap_or_default();
        return Err(StatsError::MethodMismatch { name: extra });
    }
    benchmark
        .methods()
        .iter()
        .map(|name| {
            other
                .methods()
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| StatsError::MethodMismatch { name: name.clone() })
        })
        .collect()
}

/// Benchmark significance decisions at `alpha` (strict `p < alpha`),
/// row-major over the full matrix with a false diagonal.
fn significance_mask(benchmark: &SignificanceMatrix, alpha: f64) -> Vec<bool> {
    let n = benchmark.methods().len();
    let mut mask = alloc::vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = i != j && benchmark.p(i, j) < alpha;
        }
    }
    mask
}

/// Counts, per unordered method pair, how many of `cv_runs` found the pair
/// significant at `alpha` (strict), then folds the counts into hit and
/// error rates against the benchmark's own `p < alpha` decisions. `alpha`
/// overrides the levels baked into the matrices so one set of p-values can
/// be swept over several thresholds.
pub fn hit_error_rates(
    benchmark: &SignificanceMatrix,
    cv_runs: &[SignificanceMatrix],
    alpha: f64,
) -> Result<FidelityReport, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha { alpha });
    }
    if cv_runs.is_empty() {
        return Err(StatsError::NoRuns);
    }
    let n = benchmark.methods().len();
    let mut magnitudes = Matrix::zeros(n, n);
    for run in cv_runs {
        let map = align_methods(benchmark, run)?;
        for i in 0..n {
            for j in i + 1..n {
                if run.p(map[i], map[j]) < alpha {
                    magnitudes.set(i, j, magnitudes.get(i, j) + 1.0);
                }
            }
        }
    }
    Ok(FidelityReport::assemble(
        benchmark.methods().to_vec(),
        benchmark.metric().into(),
        alpha,
        cv_runs.len(),
        &magnitudes,
        &significance_mask(benchmark, alpha),
    ))
}

/// Builds the same report from externally tabulated per-pair counts instead
/// of per-run matrices. Only count magnitudes are trusted — published sign
/// conventions drift with the threshold in use — and signs are re-derived
/// from the benchmark at `alpha`. Counts must be integral, at most `n_runs`
/// in magnitude, and symmetric in magnitude.
pub fn hit_error_from_pair_counts(
    benchmark: &SignificanceMatrix,
    counts: &Matrix,
    n_runs: usize,
    alpha: f64,
) -> Result<FidelityReport, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha { alpha });
    }
    if n_runs == 0 {
        return Err(StatsError::NoRuns);
    }
    let n = benchmark.methods().len();
    if counts.rows() != n || counts.cols() != n {
        return Err(StatsError::ShapeMismatch {
            rows: counts.rows(),
            cols: counts.cols(),
            methods: n,
        });
    }
    for i in 0..n {
        for j in 0..n {
            let value = counts.get(i, j);
            let bad_cell = !value.is_finite()
                || libm::trunc(value) != value
                || value.abs() > n_runs as f64
                || value.abs() != counts.get(j, i).abs()
                || (i == j && value != 0.0);
            if bad_cell {
                return Err(StatsError::InvalidCount { value, row: i, col: j, max: n_runs });
            }
        }
    }
    Ok(FidelityReport::assemble(
        benchmark.methods().to_vec(),
        benchmark.metric().into(),
        alpha,
        n_runs,
        counts,
        &significance_mask(benchmark, alpha),
    ))
}

// ---------------------------------------------------------------------------
// Methodwise comparison
// ---------------------------------------------------------------------------

/// Run-by-run comparison of each method's cross-validated results against
/// the benchmark distribution. Cell `(r, d)` holds the Mann-Whitney p-value
/// between CV run `r`'s results and the benchmark results for method `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodwiseTable {
    methods: Vec<String>,
    p_values: Matrix,
}

impl MethodwiseTable {
    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn n_runs(&self) -> usize {
        self.p_values.rows()
    }

    pub fn p(&self, run: usize, method: usize) -> f64 {
        self.p_values.get(run, method)
    }

    /// Cells flagged at `p ≤ alpha` — the methodwise rule is inclusive,
    /// unlike the strict matrix rule — as (run, method index) pairs in
    /// row-major order.
    pub fn flagged(&self, alpha: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for run in 0..self.n_runs() {
            for m in 0..self.methods.len() {
                if self.p(run, m) <= alpha {
                    out.push((run, m));
                }
            }
        }
        out
    }
}

/// Tests, per method and per CV run, whether that run's metric distribution
/// departs from the benchmark one (Mann-Whitney, automatic mode). Every run
/// must cover exactly the benchmark's method set; order may differ.
pub fn methodwise_comparison(
    benchmark: &[(String, Vec<f64>)],
    cv_runs: &[Vec<(String, Vec<f64>)>],
) -> Result<MethodwiseTable, StatsError> {
    if benchmark.is_empty() {
        return Err(StatsError::TooFewMethods { n: 0 });
    }
    if cv_runs.is_empty() {
        return Err(StatsError::NoRuns);
    }
    let mut p_values = Matrix::zeros(cv_runs.len(), benchmark.len());
    for (r, run) in cv_runs.iter().enumerate() {
        if let Some((name, _)) = run.iter().find(|(m, _)| !benchmark.iter().any(|(b, _)| b == m))
        {
            return Err(StatsError::MethodMismatch { name: name.clone() });
        }
        for (d, (name, b_sample)) in benchmark.iter().enumerate() {
            let Some((_, c_sample)) = run.iter().find(|(m, _)| m == name) else {
                return Err(StatsError::MethodMismatch { name: name.clone() });
            };
            let p = mann_whitney_u(b_sample, c_sample, MwuMethod::Auto)?.p;
            p_values.set(r, d, p);
        }
    }
    Ok(MethodwiseTable { methods: benchmark.iter().map(|(m, _)| m.clone()).collect(), p_values })
}
