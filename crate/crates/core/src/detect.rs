//! Post-hoc OOD scoring over precomputed logits and features.
//!
//! Every scorer follows the same orientation: **higher score = more
//! out-of-distribution**. Scorers are pure functions of their inputs; the
//! fitted detectors ([`KnnDetector`], [`MdsDetector`]) hold only training
//! statistics and never mutate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::matrix::{cholesky, solve_lower, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("input has zero columns")]
    ZeroColumns,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`")]
    InvalidParameter { name: &'static str },
    #[error("label count {labels} does not match row count {rows}")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("pooled covariance needs more samples ({n}) than classes ({classes})")]
    TooFewSamples { n: usize, classes: usize },
    #[error("regularized covariance is not positive definite")]
    CovarianceNotPositiveDefinite,
}

/// Energy score: `-logsumexp(logits)` per row, max-stabilized so extreme
/// logits cannot overflow.
pub fn ebo_score(logits: &Matrix) -> Result<Vec<f64>, DetectError> {
    if logits.cols() == 0 {
        return Err(DetectError::ZeroColumns);
    }
    let mut out = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| if b > a { b } else { a });
        let sum: f64 = row.iter().map(|&x| libm::exp(x - m)).sum();
        out.push(-(m + libm::log(sum)));
    }
    Ok(out)
}

/// Parameters of the generalized-entropy score.
#[derive(Debug, Clone, Copy)]
pub struct GenParams {
    /// Entropy exponent γ in (0, 1).
    pub gamma: f64,
    /// Number of largest softmax probabilities kept; clamped to the number
    /// of classes.
    pub top_m: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { gamma: 0.1, top_m: 100 }
    }
}

/// Generalized entropy over the `top_m` softmax probabilities:
/// `Σ pᵢ^γ (1-pᵢ)^γ`. Uniform predictions maximize it, confident ones
/// drive it to zero, so the raw value already points toward OOD.
pub fn gen_score(logits: &Matrix, params: &GenParams) -> Result<Vec<f64>, DetectError> {
    if logits.cols() == 0 {
        return Err(DetectError::ZeroColumns);
    }
    if !(params.gamma > 0.0 && params.gamma < 1.0) {
        return Err(DetectError::InvalidParameter { name: "gamma" });
    }
    if params.top_m == 0 {
        return Err(DetectError::InvalidParameter { name: "top_m" });
    }
    let m_eff = params.top_m.min(logits.cols());
    let mut out = Vec::with_capacity(logits.rows());
    let mut probs = Vec::with_capacity(logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| if b > a { b } else { a });
        probs.clear();
        probs.extend(row.iter().map(|&x| libm::exp(x - mx)));
        let z: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= z;
        }
        probs.sort_unstable_by(|a, b| b.total_cmp(a));
        let g = params.gamma;
        let score: f64 = probs[..m_eff]
            .iter()
            .map(|&p| libm::pow(p, g) * libm::pow(1.0 - p, g))
            .sum();
        out.push(score);
    }
    Ok(out)
}

fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let norm = libm::sqrt(out.row(i).iter().map(|&x| x * x).sum::<f64>());
        if norm > 0.0 {
            for j in 0..out.cols() {
                out.set(i, j, out.get(i, j) / norm);
            }
        }
    }
    out
}

/// k-th nearest neighbor distance in the L2-normalized feature space.
#[derive(Debug, Clone)]
pub struct KnnDetector {
    train: Matrix,
    k: usize,
}

impl KnnDetector {
    /// Default neighbor count: `min(50, ⌈√n_train⌉)`.
    pub fn default_k(n_train: usize) -> usize {
        let root = libm::ceil(libm::sqrt(n_train as f64)) as usize;
        root.clamp(1, 50)
    }

    pub fn fit(train_features: &Matrix, k: usize) -> Result<Self, DetectError> {
        if train_features.rows() == 0 {
            return Err(DetectError::EmptyTrainingSet);
        }
        if train_features.cols() == 0 {
            return Err(DetectError::ZeroColumns);
        }
        if k == 0 || k > train_features.rows() {
            return Err(DetectError::InvalidParameter { name: "k" });
        }
        Ok(KnnDetector { train: l2_normalize_rows(train_features), k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn score(&self, features: &Matrix) -> Result<Vec<f64>, DetectError> {
        if features.cols() != self.train.cols() {
            return Err(DetectError::DimensionMismatch {
                expected: self.train.cols(),
                got: features.cols(),
            });
        }
        let queries = l2_normalize_rows(features);
        let mut out = Vec::with_capacity(queries.rows());
        let mut dists = Vec::with_capacity(self.train.rows());
        for i in 0..queries.rows() {
            let q = queries.row(i);
            dists.clear();
            for t in 0..self.train.rows() {
                let d2: f64 = self
                    .train
                    .row(t)
                    .iter()
                    .zip(q)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                dists.push(d2);
            }
            // Only the k smallest matter; a partial select keeps scoring
            // O(n) per query instead of O(n log n).
            let (_, kth, _) = dists.select_nth_unstable_by(self.k - 1, f64::total_cmp);
            out.push(libm::sqrt(*kth));
        }
        Ok(out)
    }
}

/// Minimum squared Mahalanobis distance to the per-class training means,
/// under a pooled within-class covariance.
#[derive(Debug, Clone)]
pub struct MdsDetector {
    means: Matrix,
    chol: Matrix,
    /// Ridge added to the covariance diagonal before factorization.
    eps: f64,
}

impl MdsDetector {
    /// Fits per-class means and the pooled covariance
    /// `Σ = (1/(n-c)) Σ_c Σ_{x∈c} (x-μ_c)(x-μ_c)ᵀ`, regularized as
    /// `Σ + εI` with `ε = 1e-6 · trace(Σ)/d` (absolute `1e-6` when the
    /// trace vanishes, e.g. duplicated training rows).
    pub fn fit(train_features: &Matrix, labels: &[&str]) -> Result<Self, DetectError> {
        let n = train_features.rows();
        let d = train_features.cols();
        if n == 0 {
            return Err(DetectError::EmptyTrainingSet);
        }
        if d == 0 {
            return Err(DetectError::ZeroColumns);
        }
        if labels.len() != n {
            return Err(DetectError::LabelMismatch { rows: n, labels: labels.len() });
        }

        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, &label) in labels.iter().enumerate() {
            by_class.entry(label).or_default().push(i);
        }
        let c = by_class.len();
        if n <= c {
            return Err(DetectError::TooFewSamples { n, classes: c });
        }

        let mut means = Matrix::zeros(c, d);
        let mut scatter = Matrix::zeros(d, d);
        for (ci, (_, rows)) in by_class.iter().enumerate() {
            for &r in rows {
                for j in 0..d {
                    means.set(ci, j, means.get(ci, j) + train_features.get(r, j));
                }
            }
            let inv = 1.0 / rows.len() as f64;
            for j in 0..d {
                means.set(ci, j, means.get(ci, j) * inv);
            }
            for &r in rows {
                let x = train_features.row(r);
                let mu = means.row(ci);
                for a in 0..d {
                    let da = x[a] - mu[a];
                    for b in a..d {
                        let v = scatter.get(a, b) + da * (x[b] - mu[b]);
                        scatter.set(a, b, v);
                        if a != b {
                            scatter.set(b, a, v);
                        }
                    }
                }
            }
        }
        let denom = (n - c) as f64;
        for a in 0..d {
            for b in 0..d {
                scatter.set(a, b, scatter.get(a, b) / denom);
            }
        }

        let trace: f64 = (0..d).map(|a| scatter.get(a, a)).sum();
        let eps = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        for a in 0..d {
            scatter.set(a, a, scatter.get(a, a) + eps);
        }

        let chol = cholesky(&scatter).ok_or(DetectError::CovarianceNotPositiveDefinite)?;
        Ok(MdsDetector { means, chol, eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn score(&self, features: &Matrix) -> Result<Vec<f64>, DetectError> {
        let d = self.means.cols();
        if features.cols() != d {
            return Err(DetectError::DimensionMismatch { expected: d, got: features.cols() });
        }
        let mut out = Vec::with_capacity(features.rows());
        let mut diff = alloc::vec![0.0; d];
        for i in 0..features.rows() {
            let x = features.row(i);
            let mut best = f64::INFINITY;
            for ci in 0..self.means.rows() {
                let mu = self.means.row(ci);
                for j in 0..d {
                    diff[j] = x[j] - mu[j];
                }
                let y = solve_lower(&self.chol, &diff);
                let dist2: f64 = y.iter().map(|&v| v * v).sum();
                if dist2 < best {
                    best = dist2;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

/// Convenience: fits an [`MdsDetector`] from owned label strings.
pub fn mds_fit_owned(train_features: &Matrix, labels: &[String]) -> Result<MdsDetector, DetectError> {
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    MdsDetector::fit(train_features, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ebo_matches_hand_values() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]);
        let s = ebo_score(&m).unwrap();
        assert!(close(s[0], -core::f64::consts::LN_2, 1e-15));

        // extreme logits must not overflow thanks to stabilization
        let m = Matrix::from_rows(&[vec![1000.0, 0.0]]);
        assert!(close(ebo_score(&m).unwrap()[0], -1000.0, 1e-12));
    }

    #[test]
    fn gen_uniform_two_class_is_one() {
        let m = Matrix::from_rows(&[vec![0.7, 0.7]]);
        let s = gen_score(&m, &GenParams { gamma: 0.5, top_m: 2 }).unwrap();
        assert!(close(s[0], 1.0, 1e-12));
    }

    #[test]
    fn gen_orders_confident_below_uniform() {
        let m = Matrix::from_rows(&[vec![10.0, 0.0, 0.0, 0.0], vec![4.0, 4.0, 4.0, 4.0]]);
        let s = gen_score(&m, &GenParams::default()).unwrap();
        assert!(s[0] < s[1], "confident {} < uniform {}", s[0], s[1]);
    }

    #[test]
    fn gen_rejects_bad_params() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(gen_score(&m, &GenParams { gamma: 0.0, top_m: 2 }).is_err());
        assert!(gen_score(&m, &GenParams { gamma: 1.0, top_m: 2 }).is_err());
        assert!(gen_score(&m, &GenParams { gamma: 0.1, top_m: 0 }).is_err());
    }

    #[test]
    fn knn_unit_circle() {
        let train = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let det = KnnDetector::fit(&train, 2).unwrap();
        // (2, 0) normalizes onto (1, 0); 2nd neighbor is (0, 1) at √2
        let s = det.score(&Matrix::from_rows(&[vec![2.0, 0.0]])).unwrap();
        assert!(close(s[0], core::f64::consts::SQRT_2, 1e-15));
    }

    #[test]
    fn knn_default_k_rule() {
        assert_eq!(KnnDetector::default_k(1), 1);
        assert_eq!(KnnDetector::default_k(49), 7);
        assert_eq!(KnnDetector::default_k(50), 8);
        assert_eq!(KnnDetector::default_k(10_000), 50);
    }

    #[test]
    fn knn_rejects_bad_k_and_dims() {
        let train = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(KnnDetector::fit(&train, 0).is_err());
        assert!(KnnDetector::fit(&train, 3).is_err());
        let det = KnnDetector::fit(&train, 1).unwrap();
        assert!(matches!(
            det.score(&Matrix::from_rows(&[vec![1.0, 0.0, 0.0]])),
            Err(DetectError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn mds_degenerate_covariance_falls_back_to_absolute_ridge() {
        let train = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![5.0, 5.0],
            vec![5.0, 5.0],
        ]);
        let det = MdsDetector::fit(&train, &["a", "a", "b", "b"]).unwrap();
        assert!(close(det.eps(), 1e-6, 0.0));
        let s = det
            .score(&Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 3.5]]))
            .unwrap();
        assert!(close(s[0], 0.0, 0.0));
        assert!(close(s[1], 6_250_000.0, 1e-3));
    }

    #[test]
    fn mds_score_is_zero_at_a_class_mean() {
        let train = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![10.0, 1.0],
            vec![12.0, -1.0],
        ]);
        let det = MdsDetector::fit(&train, &["a", "a", "b", "b"]).unwrap();
        let s = det.score(&Matrix::from_rows(&[vec![1.0, 0.0]])).unwrap();
        assert!(s[0] < 1e-20, "mean of class a should score ~0, got {}", s[0]);
    }

    #[test]
    fn mds_rejects_thin_training_sets() {
        let train = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(matches!(
            MdsDetector::fit(&train, &["a", "b"]),
            Err(DetectError::TooFewSamples { n: 2, classes: 2 })
        ));
        assert!(matches!(
            MdsDetector::fit(&train, &["a"]),
            Err(DetectError::LabelMismatch { rows: 2, labels: 1 })
        ));
    }
}
