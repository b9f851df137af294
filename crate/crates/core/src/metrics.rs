//! Detection metrics over ID/OOD score tables.
//!
//! Scores follow the detector convention (higher = more OOD), OOD is the
//! positive class everywhere. All metrics are exact over the observed
//! empirical distributions — no interpolation, no binning — so equal scores
//! are handled by tie groups rather than by sample order.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("ID score list is empty")]
    EmptyId,
    #[error("OOD score list is empty")]
    EmptyOod,
    #[error("non-finite {side} score at index {index}")]
    NonFinite { side: &'static str, index: usize },
    #[error("invalid parameter `{name}`")]
    InvalidParameter { name: &'static str },
}

/// Validated pair of score lists; construction is the only place scores are
/// checked, so every metric below can assume finite, non-empty inputs.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    id: Vec<f64>,
    ood: Vec<f64>,
}

impl ScoreTable {
    pub fn new(id: Vec<f64>, ood: Vec<f64>) -> Result<Self, MetricError> {
        if id.is_empty() {
            return Err(MetricError::EmptyId);
        }
        if ood.is_empty() {
            return Err(MetricError::EmptyOod);
        }
        for (side, list) in [("id", &id), ("ood", &ood)] {
            if let Some(index) = list.iter().position(|v| !v.is_finite()) {
                return Err(MetricError::NonFinite { side, index });
            }
        }
        Ok(ScoreTable { id, ood })
    }

    pub fn id_scores(&self) -> &[f64] {
        &self.id
    }

    pub fn ood_scores(&self) -> &[f64] {
        &self.ood
    }

    pub fn n_id(&self) -> usize {
        self.id.len()
    }

    pub fn n_ood(&self) -> usize {
        self.ood.len()
    }
}

/// The five reported detection metrics, keyed for aggregation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    TprAtFpr,
    Auroc,
    Aupr,
    F1,
    Accuracy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::TprAtFpr,
        MetricKind::Auroc,
        MetricKind::Aupr,
        MetricKind::F1,
        MetricKind::Accuracy,
    ];

    /// Stable key used in result files and comparison tables (named after
    /// the default operating points: 5% FPR cap, 90th ID percentile).
    pub fn key(self) -> &'static str {
        match self {
            MetricKind::TprAtFpr => "tpr5",
            MetricKind::Auroc => "auroc",
            MetricKind::Aupr => "aupr",
            MetricKind::F1 => "f1",
            MetricKind::Accuracy => "acc90",
        }
    }

    pub fn from_key(key: &str) -> Option<MetricKind> {
        MetricKind::ALL.iter().copied().find(|k| k.key() == key)
    }
}

impl core::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.key())
    }
}

/// Operating points: the FPR budget for [`tpr_at_fpr`] and the ID score
/// percentile that sets the accuracy/F1 threshold.
#[derive(Debug, Clone, Copy)]
pub struct MetricParams {
    pub fpr_cap: f64,
    pub id_percentile: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { fpr_cap: 0.05, id_percentile: 0.90 }
    }
}

/// TPR at an FPR budget: sweeps candidate thresholds (every observed score,
/// ascending, then +∞) and stops at the smallest one whose FPR — the
/// fraction of ID scores ≥ t — fits the cap; returns the fraction of OOD
/// scores ≥ t there. The +∞ sentinel guarantees a feasible threshold, so
/// a hopeless detector scores 0 rather than erroring.
pub fn tpr_at_fpr(table: &ScoreTable, fpr_cap: f64) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&fpr_cap) || fpr_cap.is_nan() {
        return Err(MetricError::InvalidParameter { name: "fpr_cap" });
    }
    let mut id = table.id.clone();
    let mut ood = table.ood.clone();
    id.sort_unstable_by(f64::total_cmp);
    ood.sort_unstable_by(f64::total_cmp);

    let mut cands: Vec<f64> = id.iter().chain(ood.iter()).copied().collect();
    cands.sort_unstable_by(f64::total_cmp);
    cands.dedup();

    let n_id = id.len() as f64;
    let n_ood = ood.len() as f64;
    let (mut ip, mut op) = (0usize, 0usize);
    for t in cands {
        while ip < id.len() && id[ip] < t {
            ip += 1;
        }
        while op < ood.len() && ood[op] < t {
            op += 1;
        }
        let fpr = (id.len() - ip) as f64 / n_id;
        if fpr <= fpr_cap {
            return Ok((ood.len() - op) as f64 / n_ood);
        }
    }
    Ok(0.0)
}

/// AUROC via midranks (the rank-sum identity), exact under ties: equals the
/// pairwise count `P(ood > id) + ½·P(ood = id)`.
pub fn auroc(table: &ScoreTable) -> f64 {
    let mut all: Vec<(f64, bool)> = table
        .id
        .iter()
        .map(|&v| (v, false))
        .chain(table.ood.iter().map(|&v| (v, true)))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_ood = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_ood += midrank;
            }
        }
        i = j;
    }
    let n = table.id.len() as f64;
    let m = table.ood.len() as f64;
    (rank_sum_ood - m * (m + 1.0) / 2.0) / (n * m)
}

/// Average precision with OOD positive: walks the unique thresholds in
/// descending order (predict positive iff score ≥ t) and accumulates
/// `Σ (rᵢ - rᵢ₋₁) · pᵢ`. Tie groups enter as one step, which is what makes
/// the value exact rather than order-dependent.
pub fn aupr(table: &ScoreTable) -> f64 {
    let mut all: Vec<(f64, bool)> = table
        .id
        .iter()
        .map(|&v| (v, false))
        .chain(table.ood.iter().map(|&v| (v, true)))
        .collect();
    all.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let n_ood = table.ood.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_ood;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Nearest-rank percentile of the ID scores: the `⌈q·n⌉`-th smallest value
/// (1-based). The tiny subtraction keeps decimal `q`s exact — without it,
/// IEEE noise like 0.9·60 = 54.000000000000007 would bump the rank.
pub fn threshold_at_id_percentile(table: &ScoreTable, q: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(MetricError::InvalidParameter { name: "id_percentile" });
    }
    let mut xs = table.id.clone();
    xs.sort_unstable_by(f64::total_cmp);
    let k = libm::ceil(q * xs.len() as f64 - 1e-9) as usize;
    let k = k.clamp(1, xs.len());
    Ok(xs[k - 1])
}

/// Confusion counts at a threshold; prediction is OOD iff score is
/// *strictly* above `t`, which leaves the threshold sample itself (the
/// percentile witness) on the ID side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.tn + self.fn_;
        (self.tp + self.tn) as f64 / total as f64
    }
}

pub fn confusion_at(table: &ScoreTable, t: f64) -> Confusion {
    let tp = table.ood.iter().filter(|&&v| v > t).count();
    let fp = table.id.iter().filter(|&&v| v > t).count();
    Confusion { tp, fp, tn: table.id.len() - fp, fn_: table.ood.len() - tp }
}

/// One round's metric report.
#[derive(Debug, Clone, Copy)]
pub struct OodReport {
    pub tpr_at_fpr: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// The ID-percentile threshold behind `f1` and `accuracy`.
    pub threshold: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl OodReport {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::TprAtFpr => self.tpr_at_fpr,
            MetricKind::Auroc => self.auroc,
            MetricKind::Aupr => self.aupr,
            MetricKind::F1 => self.f1,
            MetricKind::Accuracy => self.accuracy,
        }
    }
}

/// Computes all five metrics at the given operating points.
pub fn evaluate(table: &ScoreTable, params: &MetricParams) -> Result<OodReport, MetricError> {
    let threshold = threshold_at_id_percentile(table, params.id_percentile)?;
    let c = confusion_at(table, threshold);
    Ok(OodReport {
        tpr_at_fpr: tpr_at_fpr(table, params.fpr_cap)?,
        auroc: auroc(table),
        aupr: aupr(table),
        f1: c.f1(),
        accuracy: c.accuracy(),
        threshold,
        n_id: table.n_id(),
        n_ood: table.n_ood(),
    })
}
