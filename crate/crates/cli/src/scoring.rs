//! Runs the built-in scorers over one evaluation round.
//!
//! A detector here is a scorer kind plus hyperparameters plus an optional
//! noise level: the noise wrapper adds seeded Gaussian perturbations scaled
//! by the spread of the round's clean scores, which is how one underlying
//! scorer yields several detectors of graded quality in desk-scale
//! experiments.

use thiserror::Error;

use dcv_rood_core::detect::{ebo_score, gen_score, DetectError, GenParams, KnnDetector, MdsDetector};
use dcv_rood_core::matrix::Matrix;
use dcv_rood_core::rng::SplitMix64;
use dcv_rood_core::split::EvaluationRound;
use dcv_rood_core::taxonomy::SampleSet;

use crate::config::{DetectorConfig, DetectorKindConfig};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("detector `{detector}` needs {payload} but the dataset has none")]
    MissingPayload { detector: String, payload: &'static str },
    #[error("sample `{0}` is not in the dataset")]
    UnknownSample(String),
    #[error("detector `{detector}`: {source}")]
    Detect { detector: String, source: DetectError },
}

/// Scores for one round: ID test rows then OOD test rows, both in the
/// round's (canonical) sample order.
#[derive(Debug, Clone)]
pub struct RoundScores {
    pub id: Vec<f64>,
    pub ood: Vec<f64>,
}

fn rows_for<'a>(
    set: &SampleSet,
    ids: impl Iterator<Item = &'a String>,
) -> Result<Vec<usize>, ScoreError> {
    ids.map(|id| set.index_of(id).ok_or_else(|| ScoreError::UnknownSample(id.clone())))
        .collect()
}

fn payload<'m>(
    m: Option<&'m Matrix>,
    detector: &str,
    what: &'static str,
) -> Result<&'m Matrix, ScoreError> {
    m.ok_or_else(|| ScoreError::MissingPayload { detector: detector.to_string(), payload: what })
}

/// Applies one detector to one round: fit on the ID training rows (plus,
/// for probability scorers, nothing — logits are precomputed), score the ID
/// and OOD test rows, then optionally perturb.
///
/// `noise_seed` feeds the noise wrapper; it is unused when the detector's
/// `noise_std` is zero.
pub fn score_round(
    id_set: &SampleSet,
    ood_set: &SampleSet,
    round: &EvaluationRound,
    detector: &DetectorConfig,
    noise_seed: u64,
) -> Result<RoundScores, ScoreError> {
    let test_id_rows = rows_for(id_set, round.test_id.iter())?;
    let test_ood_rows = rows_for(ood_set, round.test_ood.iter())?;
    let wrap = |source| ScoreError::Detect { detector: detector.name.clone(), source };

    let (mut id, mut ood) = match detector.kind {
        DetectorKindConfig::Ebo => {
            let id_logits = payload(id_set.logits(), &detector.name, "logits")?;
            let ood_logits = payload(ood_set.logits(), &detector.name, "logits")?;
            let id = ebo_score(&id_logits.select_rows(&test_id_rows)).map_err(wrap)?;
            let ood = ebo_score(&ood_logits.select_rows(&test_ood_rows)).map_err(wrap)?;
            (id, ood)
        }
        DetectorKindConfig::Gen => {
            let defaults = GenParams::default();
            let params = GenParams {
                gamma: detector.gamma.unwrap_or(defaults.gamma),
                top_m: detector.top_m.unwrap_or(defaults.top_m),
            };
            let id_logits = payload(id_set.logits(), &detector.name, "logits")?;
            let ood_logits = payload(ood_set.logits(), &detector.name, "logits")?;
            let id = gen_score(&id_logits.select_rows(&test_id_rows), &params).map_err(wrap)?;
            let ood = gen_score(&ood_logits.select_rows(&test_ood_rows), &params).map_err(wrap)?;
            (id, ood)
        }
        DetectorKindConfig::Knn => {
            let features = payload(id_set.features(), &detector.name, "features")?;
            let ood_features = payload(ood_set.features(), &detector.name, "features")?;
            let train_rows = rows_for(id_set, round.train_id.iter())?;
            let train = features.select_rows(&train_rows);
            let k = detector.k_neighbors.unwrap_or_else(|| KnnDetector::default_k(train.rows()));
            let det = KnnDetector::fit(&train, k).map_err(wrap)?;
            let id = det.score(&features.select_rows(&test_id_rows)).map_err(wrap)?;
            let ood = det.score(&ood_features.select_rows(&test_ood_rows)).map_err(wrap)?;
            (id, ood)
        }
        DetectorKindConfig::Mds => {
            let features = payload(id_set.features(), &detector.name, "features")?;
            let ood_features = payload(ood_set.features(), &detector.name, "features")?;
            let train_rows = rows_for(id_set, round.train_id.iter())?;
            let level = id_set.taxonomy().classification_level();
            let labels: Vec<&str> = train_rows
                .iter()
                .map(|&r| id_set.records()[r].class_at(level))
                .collect();
            let det = MdsDetector::fit(&features.select_rows(&train_rows), &labels).map_err(wrap)?;
            let id = det.score(&features.select_rows(&test_id_rows)).map_err(wrap)?;
            let ood = det.score(&ood_features.select_rows(&test_ood_rows)).map_err(wrap)?;
            (id, ood)
        }
    };

    if detector.noise_std > 0.0 {
        add_noise(&mut id, &mut ood, detector.noise_std, noise_seed);
    }
    Ok(RoundScores { id, ood })
}

/// Perturbs scores in place with `noise_std · σ̂ · N(0, 1)`, where `σ̂` is
/// the sample standard deviation of the pooled clean scores, so the knob is
/// comparable across scorers with wildly different output scales. ID rows
/// consume the stream first, then OOD rows.
fn add_noise(id: &mut [f64], ood: &mut [f64], noise_std: f64, seed: u64) {
    let n = id.len() + ood.len();
    if n < 2 {
        return;
    }
    let mean = (id.iter().sum::<f64>() + ood.iter().sum::<f64>()) / n as f64;
    let ss: f64 = id
        .iter()
        .chain(ood.iter())
        .map(|&x| (x - mean) * (x - mean))
        .sum();
    let spread = (ss / (n - 1) as f64).sqrt();
    if spread <= 0.0 || !spread.is_finite() {
        return;
    }
    let mut rng = SplitMix64::new(seed);
    for x in id.iter_mut().chain(ood.iter_mut()) {
        *x += noise_std * spread * rng.next_standard_normal();
    }
}
