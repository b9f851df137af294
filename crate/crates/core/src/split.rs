//! Fold construction: stratified and group k-folds, the dual fold
//! constructions for flat and hierarchical datasets, index-wise fold joins,
//! and round assembly.
//!
//! Two properties drive every design choice here:
//!
//! * **Determinism** — assignments are pure functions of the canonical
//!   sample order and the seed (see [`crate::rng`]); shuffling manifest rows
//!   does not change a fold.
//! * **Leakage safety** — OOD folds keep each classification-level class
//!   whole, so a class used as training outlier exposure in a round can
//!   never appear in that round's OOD test set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::rng::{derive_seed, SplitMix64};
use crate::taxonomy::{SampleSet, TaxonomyError};

/// Errors from fold construction and round assembly.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("fold count k={k} is invalid (need k ≥ 2)")]
    InvalidK { k: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("level index {level} out of range")]
    UnknownLevel { level: usize },
    #[error("group k-fold needs at least k={k} classes, found {classes}")]
    TooFewGroups { classes: usize, k: usize },
    #[error("class `{class}` appears in both the ID and OOD datasets")]
    ClassOverlap { class: String },
    #[error("taxonomy has no strata level (flat or top-level classification)")]
    NoStrataLevel,
    #[error("OOD proportion {p} outside [0, 1]")]
    InvalidProportion { p: f64 },
    #[error("datasets do not share one taxonomy")]
    TaxonomyMismatch,
    #[error("fold counts differ: {left} vs {right}")]
    KMismatch { left: usize, right: usize },
    #[error("sample `{sample}` appears in more than one joined part")]
    SampleOverlap { sample: String },
    #[error("join_by_fold requires at least one part")]
    NoParts,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Non-fatal conditions surfaced to the caller and mirrored into fold
/// manifests / warning logs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitWarning {
    /// A stratified class has fewer samples than folds, so it cannot be
    /// present in every fold (and, with a single sample, not in every
    /// training side either).
    ClassFewerThanK { class: String, count: usize, k: usize },
    /// Alg. 2 selected zero OOD classes for a stratum despite p > 0
    /// (floor kept verbatim).
    StratumNoOod { stratum: String },
    /// A stratum entered hierarchical OOD folding with fewer classes than
    /// folds; its classes were rotated across distinct folds and the
    /// stratum is absent from the remaining folds.
    StratumUnderfilled { stratum: String, classes: usize, k: usize },
}

impl core::fmt::Display for SplitWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SplitWarning::ClassFewerThanK { class, count, k } => write!(
                f,
                "class `{class}` has {count} samples, fewer than k={k}; it cannot appear in every fold"
            ),
            SplitWarning::StratumNoOod { stratum } => {
                write!(f, "stratum `{stratum}` contributes no OOD classes (floor(p·N) = 0)")
            }
            SplitWarning::StratumUnderfilled { stratum, classes, k } => write!(
                f,
                "stratum `{stratum}` has {classes} OOD classes, fewer than k={k}; classes rotated across distinct folds"
            ),
        }
    }
}

/// How an assignment was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldMethod {
    Stratified,
    Group,
    HierarchicalOod,
    Plain,
}

impl FoldMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FoldMethod::Stratified => "stratified",
            FoldMethod::Group => "group",
            FoldMethod::HierarchicalOod => "hierarchical-ood",
            FoldMethod::Plain => "plain",
        }
    }
}

/// A partition of a sample set into `k` folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    k: usize,
    method: FoldMethod,
    seed: u64,
    level: usize,
    fold_of: BTreeMap<String, usize>,
    warnings: Vec<SplitWarning>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn method(&self) -> FoldMethod {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The level the split keyed on (stratify level for stratified,
    /// group level for group / hierarchical assignments).
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn warnings(&self) -> &[SplitWarning] {
        &self.warnings
    }

    /// Number of assigned samples.
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Fold index of one sample.
    pub fn fold_of(&self, sample_id: &str) -> Option<usize> {
        self.fold_of.get(sample_id).copied()
    }

    /// Iterates `(sample_id, fold)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.fold_of.iter().map(|(id, &f)| (id.as_str(), f))
    }

    /// Sample ids of one fold, canonically ordered.
    pub fn fold_members(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Parameters of the stratified ID/OOD class selection: the proportion `p`
/// of classification-level classes per stratum assigned to OOD, and the
/// selection seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub ood_fraction: f64,
    pub seed: u64,
}

/// One cross-validation round: test folds `r` of the ID and OOD
/// assignments, train = everything else. All lists are canonically ordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationRound {
    pub round_index: usize,
    pub train_id: Vec<String>,
    pub test_id: Vec<String>,
    pub train_ood: Vec<String>,
    pub test_ood: Vec<String>,
}

fn check_level(s: &SampleSet, level: usize) -> Result<(), SplitError> {
    if level >= s.taxonomy().n_levels() {
        return Err(SplitError::UnknownLevel { level });
    }
    Ok(())
}

/// Stratified k-fold at `level`: per class, samples are seeded-shuffled and
/// dealt round-robin to folds starting at `class_rank mod k`, so per-class
/// fold counts differ by at most one and remainders do not pile onto fold 0.
pub fn stratified_k_fold(
    s: &SampleSet,
    level: usize,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, SplitError> {
    if k < 2 {
        return Err(SplitError::InvalidK { k });
    }
    check_level(s, level)?;
    if s.is_empty() {
        return Err(SplitError::EmptyDataset);
    }

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in s.records() {
        groups.entry(r.class_at(level)).or_default().push(r.sample_id());
    }

    let mut rng = SplitMix64::new(seed);
    let mut fold_of = BTreeMap::new();
    let mut warnings = Vec::new();
    for (class_rank, (class, mut ids)) in groups.into_iter().enumerate() {
        if ids.len() < k {
            warnings.push(SplitWarning::ClassFewerThanK {
                class: class.to_string(),
                count: ids.len(),
                k,
            });
        }
        rng.shuffle(&mut ids);
        for (j, id) in ids.into_iter().enumerate() {
            fold_of.insert(id.to_string(), (class_rank + j) % k);
        }
    }

    Ok(FoldAssignment { k, method: FoldMethod::Stratified, seed, level, fold_of, warnings })
}

/// Plain (class-blind) k-fold: one seeded shuffle of all samples dealt
/// round-robin. Offered as the ID-side alternative for balanced datasets.
pub fn plain_k_fold(s: &SampleSet, k: usize, seed: u64) -> Result<FoldAssignment, SplitError> {
    if k < 2 {
        return Err(SplitError::InvalidK { k });
    }
    if s.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let mut ids: Vec<&str> = s.records().iter().map(|r| r.sample_id()).collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut ids);
    let fold_of = ids
        .into_iter()
        .enumerate()
        .map(|(j, id)| (id.to_string(), j % k))
        .collect();
    Ok(FoldAssignment {
        k,
        method: FoldMethod::Plain,
        seed,
        level: s.taxonomy().classification_level(),
        fold_of,
        warnings: Vec::new(),
    })
}

/// Group k-fold at `level`: every class stays whole. Classes are sorted by
/// descending sample count (ties seeded-shuffled), then greedily assigned to
/// the smallest fold by sample count, lowest fold index on ties — the
/// standard LPT balancing.
pub fn group_k_fold(
    s: &SampleSet,
    level: usize,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, SplitError> {
    if k < 2 {
        return Err(SplitError::InvalidK { k });
    }
    check_level(s, level)?;
    if s.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let counts = s.observed_classes(level);
    if counts.len() < k {
        return Err(SplitError::TooFewGroups { classes: counts.len(), k });
    }

    // Descending count, id-ascending within a count, then a seeded shuffle
    // inside each equal-count run so the tie-break is not silently
    // alphabetical.
    let mut order: Vec<(&str, usize)> = counts.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut rng = SplitMix64::new(seed);
    let mut start = 0;
    while start < order.len() {
        let run_count = order[start].1;
        let mut end = start + 1;
        while end < order.len() && order[end].1 == run_count {
            end += 1;
        }
        rng.shuffle(&mut order[start..end]);
        start = end;
    }

    let mut fold_sizes = alloc::vec![0usize; k];
    let mut fold_of_class: BTreeMap<&str, usize> = BTreeMap::new();
    for (class, count) in &order {
        let f = (0..k).min_by_key(|&f| (fold_sizes[f], f)).expect("k ≥ 2");
        fold_sizes[f] += count;
        fold_of_class.insert(class, f);
    }

    let fold_of = s
        .records()
        .iter()
        .map(|r| {
            let f = fold_of_class[r.class_at(level)];
            (r.sample_id().to_string(), f)
        })
        .collect();

    Ok(FoldAssignment {
        k,
        method: FoldMethod::Group,
        seed,
        level,
        fold_of,
        warnings: Vec::new(),
    })
}

/// Dual folds for flat datasets: stratified k-fold over the ID classes,
/// group k-fold over the OOD classes, rejecting any classification-level
/// class id shared by the two inputs. `plain_id` switches the ID side to
/// the class-blind k-fold.
pub fn build_folds_flat(
    d_id: &SampleSet,
    d_ood: &SampleSet,
    k: usize,
    seed: u64,
    plain_id: bool,
) -> Result<(FoldAssignment, FoldAssignment), SplitError> {
    let c_id = d_id.taxonomy().classification_level();
    let c_ood = d_ood.taxonomy().classification_level();
    let id_classes: BTreeSet<&str> = d_id.observed_classes(c_id).into_keys().collect();
    for (class, _) in d_ood.observed_classes(c_ood) {
        if id_classes.contains(class) {
            return Err(SplitError::ClassOverlap { class: class.to_string() });
        }
    }
    let id_seed = derive_seed(seed, "flat-id", 0);
    let ood_seed = derive_seed(seed, "flat-ood", 0);
    let f_id = if plain_id {
        plain_k_fold(d_id, k, id_seed)?
    } else {
        stratified_k_fold(d_id, c_id, k, id_seed)?
    };
    let f_ood = group_k_fold(d_ood, c_ood, k, ood_seed)?;
    Ok((f_id, f_ood))
}

/// Stratified ID/OOD class selection for hierarchical datasets: per stratum
/// `S_i` with `N_i` classification-level classes, draws exactly
/// `k_i = ⌊p·N_i⌋` classes without replacement into OOD; the rest are ID.
///
/// The floor is kept verbatim even when it yields `k_i = 0` (warning), and
/// is evaluated as `floor(p·N_i + 1e-9)` so that decimal proportions like
/// 0.7 are not betrayed by IEEE rounding (0.7·10 would otherwise floor
/// to 6).
pub fn select_id_ood_split(
    h: &SampleSet,
    spec: &SplitSpec,
) -> Result<(SampleSet, SampleSet, Vec<SplitWarning>), SplitError> {
    let Some(s_level) = h.taxonomy().strata_level() else {
        return Err(SplitError::NoStrataLevel);
    };
    let p = spec.ood_fraction;
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(SplitError::InvalidProportion { p });
    }
    if h.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let c_level = h.taxonomy().classification_level();

    // Observed classes per observed stratum, canonical at both levels.
    let mut strata: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in h.records() {
        strata
            .entry(r.class_at(s_level))
            .or_default()
            .insert(r.class_at(c_level));
    }

    let mut rng = SplitMix64::new(spec.seed);
    let mut ood_classes: BTreeSet<String> = BTreeSet::new();
    let mut id_classes: BTreeSet<String> = BTreeSet::new();
    let mut warnings = Vec::new();
    for (stratum, classes) in strata {
        let mut classes: Vec<&str> = classes.into_iter().collect();
        let n_i = classes.len();
        let k_i = libm::floor(p * n_i as f64 + 1e-9) as usize;
        if k_i == 0 && p > 0.0 {
            warnings.push(SplitWarning::StratumNoOod { stratum: stratum.to_string() });
        }
        rng.shuffle(&mut classes);
        for (rank, class) in classes.into_iter().enumerate() {
            if rank < k_i {
                ood_classes.insert(class.to_string());
            } else {
                id_classes.insert(class.to_string());
            }
        }
    }

    let d_id = h.filter_by_labels(&id_classes)?;
    let d_ood = h.filter_by_labels(&ood_classes)?;
    Ok((d_id, d_ood, warnings))
}

/// Dual folds for hierarchical datasets: the ID side is stratified over the
/// deepest level (so every leaf class is spread across folds), the OOD side
/// is a per-stratum group k-fold at the classification level, joined
/// index-wise.
///
/// Strata with fewer than `k` OOD classes cannot satisfy a strict group
/// k-fold; their classes are seeded-shuffled and rotated across *distinct*
/// folds via a cursor shared by all underfilled strata (so consecutive thin
/// strata land on different folds), with a [`SplitWarning::StratumUnderfilled`]
/// per stratum. No class is ever duplicated.
pub fn build_folds_hierarchical(
    h_id: &SampleSet,
    h_ood: &SampleSet,
    k: usize,
    seed: u64,
) -> Result<(FoldAssignment, FoldAssignment), SplitError> {
    if h_id.taxonomy() != h_ood.taxonomy() {
        return Err(SplitError::TaxonomyMismatch);
    }
    if k < 2 {
        return Err(SplitError::InvalidK { k });
    }
    let taxonomy = h_id.taxonomy();
    let Some(s_level) = taxonomy.strata_level() else {
        return Err(SplitError::NoStrataLevel);
    };
    let c_level = taxonomy.classification_level();
    if h_ood.is_empty() {
        return Err(SplitError::EmptyDataset);
    }

    let f_id = stratified_k_fold(h_id, taxonomy.deepest_level(), k, derive_seed(seed, "hier-id", 0))?;

    // Group the OOD records per stratum.
    let mut strata: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for r in h_ood.records() {
        strata
            .entry(r.class_at(s_level))
            .or_default()
            .insert(r.class_at(c_level).to_string());
    }

    let mut parts: Vec<FoldAssignment> = Vec::new();
    let mut warnings: Vec<SplitWarning> = Vec::new();
    let mut underfilled: Vec<(&str, Vec<String>)> = Vec::new();
    for (i, (stratum, classes)) in strata.into_iter().enumerate() {
        if classes.len() >= k {
            let sub = h_ood.filter_by_labels(&classes)?;
            let part = group_k_fold(&sub, c_level, k, derive_seed(seed, "hier-ood", i as u64))?;
            parts.push(part);
        } else {
            underfilled.push((stratum, classes.into_iter().collect()));
        }
    }

    if !underfilled.is_empty() {
        let mut rng = SplitMix64::new(derive_seed(seed, "hier-ood-under", 0));
        let mut cursor = rng.next_below(k as u64) as usize;
        let mut fold_of_class: BTreeMap<String, usize> = BTreeMap::new();
        for (stratum, mut classes) in underfilled {
            warnings.push(SplitWarning::StratumUnderfilled {
                stratum: stratum.to_string(),
                classes: classes.len(),
                k,
            });
            rng.shuffle(&mut classes);
            let n = classes.len();
            for (j, class) in classes.into_iter().enumerate() {
                fold_of_class.insert(class, (cursor + j) % k);
            }
            cursor = (cursor + n) % k;
        }
        let fold_of: BTreeMap<String, usize> = h_ood
            .records()
            .iter()
            .filter_map(|r| {
                fold_of_class
                    .get(r.class_at(c_level))
                    .map(|&f| (r.sample_id().to_string(), f))
            })
            .collect();
        parts.push(FoldAssignment {
            k,
            method: FoldMethod::Group,
            seed,
            level: c_level,
            fold_of,
            warnings: Vec::new(),
        });
    }

    let mut f_ood = join_by_fold(parts)?;
    f_ood.method = FoldMethod::HierarchicalOod;
    f_ood.seed = seed;
    f_ood.level = c_level;
    f_ood.warnings.extend(warnings);
    Ok((f_id, f_ood))
}

/// Index-wise fold union: fold `j` of the result is the union over parts of
/// their folds `j`. Parts must agree on `k` and be sample-disjoint.
///
/// The result reports the first part's method when all parts agree, and
/// `hierarchical-ood` for mixed inputs; seed and level are taken from the
/// first part.
pub fn join_by_fold(parts: Vec<FoldAssignment>) -> Result<FoldAssignment, SplitError> {
    let Some(first) = parts.first() else {
        return Err(SplitError::NoParts);
    };
    let k = first.k;
    let seed = first.seed;
    let level = first.level;
    let method = if parts.iter().all(|p| p.method == first.method) {
        first.method
    } else {
        FoldMethod::HierarchicalOod
    };

    let mut fold_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut warnings = Vec::new();
    for part in parts {
        if part.k != k {
            return Err(SplitError::KMismatch { left: k, right: part.k });
        }
        warnings.extend(part.warnings);
        for (id, f) in part.fold_of {
            if fold_of.insert(id.clone(), f).is_some() {
                return Err(SplitError::SampleOverlap { sample: id });
            }
        }
    }
    Ok(FoldAssignment { k, method, seed, level, fold_of, warnings })
}

/// Builds the K evaluation rounds: round `r` tests on fold `r` of each
/// assignment and trains on the union of the others.
///
/// Leakage safety (no classification-level OOD class with samples in both
/// `train_ood` and `test_ood`) holds whenever `f_ood` keeps classes whole,
/// which every OOD construction in this module does.
pub fn assemble_rounds(
    f_id: &FoldAssignment,
    f_ood: &FoldAssignment,
) -> Result<Vec<EvaluationRound>, SplitError> {
    if f_id.k != f_ood.k {
        return Err(SplitError::KMismatch { left: f_id.k, right: f_ood.k });
    }
    let k = f_id.k;
    let mut rounds = Vec::with_capacity(k);
    for r in 0..k {
        let split = |fa: &FoldAssignment| {
            let mut test = Vec::new();
            let mut train = Vec::new();
            for (id, f) in fa.iter() {
                if f == r {
                    test.push(id.to_string());
                } else {
                    train.push(id.to_string());
                }
            }
            (train, test)
        };
        let (train_id, test_id) = split(f_id);
        let (train_ood, test_ood) = split(f_ood);
        rounds.push(EvaluationRound { round_index: r, train_id, test_id, train_ood, test_ood });
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{ClassTaxonomy, SampleRecord};
    use alloc::format;
    use alloc::sync::Arc;
    use alloc::vec;

    fn flat(classes: &[(&str, usize)]) -> SampleSet {
        let t = Arc::new(ClassTaxonomy::flat(
            "class",
            classes.iter().map(|(c, _)| c.to_string()),
        ));
        let mut records = Vec::new();
        for (c, n) in classes {
            for i in 0..*n {
                records.push(SampleRecord::new(format!("{c}_{i:03}"), vec![c.to_string()]));
            }
        }
        SampleSet::new(t, records, None, None).unwrap()
    }

    /// 3-level taxonomy: `n_sup` superclasses × `n_class` classes ×
    /// `n_sub` subclasses × `n_per` samples, classification at subclass.
    fn hier(n_sup: usize, n_class: usize, n_sub: usize, n_per: usize) -> SampleSet {
        let mut nodes = Vec::new();
        let mut records = Vec::new();
        for a in 0..n_sup {
            let sup = format!("sup{a}");
            nodes.push((0, sup.clone(), None));
            for b in 0..n_class {
                let class = format!("{sup}.c{b}");
                nodes.push((1, class.clone(), Some(sup.clone())));
                for c in 0..n_sub {
                    let sub = format!("{class}.s{c}");
                    nodes.push((2, sub.clone(), Some(class.clone())));
                    for i in 0..n_per {
                        records.push(SampleRecord::new(
                            format!("{sub}#{i:03}"),
                            vec![sup.clone(), class.clone(), sub.clone()],
                        ));
                    }
                }
            }
        }
        let t = Arc::new(
            ClassTaxonomy::new(
                vec!["superclass".into(), "class".into(), "subclass".into()],
                nodes,
                2,
            )
            .unwrap(),
        );
        SampleSet::new(t, records, None, None).unwrap()
    }

    fn fold_sizes(fa: &FoldAssignment) -> Vec<usize> {
        let mut sizes = vec![0; fa.k()];
        for (_, f) in fa.iter() {
            sizes[f] += 1;
        }
        sizes
    }

    #[test]
    fn stratified_divisible_case_is_exactly_balanced() {
        let s = flat(&[("a", 10), ("b", 10)]);
        let fa = stratified_k_fold(&s, 0, 5, 7).unwrap();
        assert_eq!(fold_sizes(&fa), vec![4, 4, 4, 4, 4]);
        // per class exactly 2 per fold
        for class in ["a", "b"] {
            let mut per = vec![0; 5];
            for (id, f) in fa.iter() {
                if id.starts_with(class) {
                    per[f] += 1;
                }
            }
            assert_eq!(per, vec![2, 2, 2, 2, 2]);
        }
        assert!(fa.warnings().is_empty());
    }

    #[test]
    fn stratified_remainder_is_a_permutation_of_pigeonholes() {
        let s = flat(&[("only", 7)]);
        let fa = stratified_k_fold(&s, 0, 3, 11).unwrap();
        let mut sizes = fold_sizes(&fa);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn stratified_balance_within_every_class() {
        let s = flat(&[("a", 13), ("b", 4), ("c", 29), ("d", 5)]);
        let fa = stratified_k_fold(&s, 0, 4, 3).unwrap();
        for class in ["a", "b", "c", "d"] {
            let mut per = vec![0usize; 4];
            for (id, f) in fa.iter() {
                if id.starts_with(class) {
                    per[f] += 1;
                }
            }
            let (mn, mx) = (per.iter().min().unwrap(), per.iter().max().unwrap());
            assert!(mx - mn <= 1, "class {class}: {per:?}");
        }
    }

    #[test]
    fn stratified_warns_on_thin_class() {
        let s = flat(&[("thin", 2), ("fat", 20)]);
        let fa = stratified_k_fold(&s, 0, 5, 1).unwrap();
        assert!(matches!(
            fa.warnings(),
            [SplitWarning::ClassFewerThanK { class, count: 2, k: 5 }] if class == "thin"
        ));
    }

    #[test]
    fn stratified_rejects_bad_inputs() {
        let s = flat(&[("a", 3)]);
        assert!(matches!(stratified_k_fold(&s, 0, 1, 0), Err(SplitError::InvalidK { .. })));
        assert!(matches!(stratified_k_fold(&s, 3, 2, 0), Err(SplitError::UnknownLevel { .. })));
    }

    #[test]
    fn group_keeps_classes_whole_and_balances() {
        let s = flat(&[
            ("c0", 10), ("c1", 10), ("c2", 10), ("c3", 10), ("c4", 10),
            ("c5", 10), ("c6", 10), ("c7", 10), ("c8", 10), ("c9", 10),
        ]);
        let fa = group_k_fold(&s, 0, 5, 9).unwrap();
        assert_eq!(fold_sizes(&fa), vec![20, 20, 20, 20, 20]);
        // indivisibility
        for c in 0..10 {
            let folds: BTreeSet<usize> = fa
                .iter()
                .filter(|(id, _)| id.starts_with(&format!("c{c}_")))
                .map(|(_, f)| f)
                .collect();
            assert_eq!(folds.len(), 1, "class c{c} split across folds");
        }
    }

    #[test]
    fn group_five_uneven_classes_one_per_fold() {
        let s = flat(&[("a", 50), ("b", 10), ("c", 10), ("d", 10), ("e", 10)]);
        let fa = group_k_fold(&s, 0, 5, 4).unwrap();
        let mut sizes = fold_sizes(&fa);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10, 10, 10, 50]);
        // each fold exactly one class
        for f in 0..5 {
            let classes: BTreeSet<char> = fa
                .fold_members(f)
                .iter()
                .map(|id| id.chars().next().unwrap())
                .collect();
            assert_eq!(classes.len(), 1);
        }
    }

    #[test]
    fn group_rejects_too_few_classes() {
        let s = flat(&[("a", 5), ("b", 5), ("c", 5), ("d", 5)]);
        assert!(matches!(
            group_k_fold(&s, 0, 5, 0),
            Err(SplitError::TooFewGroups { classes: 4, k: 5 })
        ));
    }

    #[test]
    fn flat_dual_folds_reject_overlap() {
        let id = flat(&[("shared", 5), ("a", 5)]);
        let ood = flat(&[("shared", 5), ("b", 5)]);
        assert!(matches!(
            build_folds_flat(&id, &ood, 2, 0, false),
            Err(SplitError::ClassOverlap { class }) if class == "shared"
        ));
    }

    #[test]
    fn flat_dual_folds_shapes() {
        let id = flat(&[("i0", 20), ("i1", 20)]);
        let ood = flat(&[("o0", 8), ("o1", 8), ("o2", 8), ("o3", 8), ("o4", 8), ("o5", 8)]);
        let (f_id, f_ood) = build_folds_flat(&id, &ood, 2, 42, false).unwrap();
        assert_eq!(f_id.method(), FoldMethod::Stratified);
        assert_eq!(f_ood.method(), FoldMethod::Group);
        assert_eq!(f_id.len(), 40);
        assert_eq!(f_ood.len(), 48);

        let plain = build_folds_flat(&id, &ood, 2, 42, true).unwrap().0;
        assert_eq!(plain.method(), FoldMethod::Plain);
        assert_eq!(fold_sizes(&plain), vec![20, 20]);
    }

    #[test]
    fn select_split_respects_floor_per_stratum() {
        // 2 strata ("class" level) x 5 subclasses each, p=0.4 -> 2 OOD per stratum
        let h = hier(1, 2, 5, 3);
        let (d_id, d_ood, warnings) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.4, seed: 5 }).unwrap();
        assert!(warnings.is_empty());
        let c = h.taxonomy().classification_level();
        for (_, classes) in [("id", &d_id), ("ood", &d_ood)] {
            let _ = classes;
        }
        let ood_classes = d_ood.observed_classes(c);
        assert_eq!(ood_classes.len(), 4); // 2 per stratum x 2 strata
        let id_classes = d_id.observed_classes(c);
        assert_eq!(id_classes.len(), 6);
        // per stratum exactly 2
        for stratum in ["sup0.c0", "sup0.c1"] {
            let n = ood_classes.keys().filter(|cl| cl.starts_with(stratum)).count();
            assert_eq!(n, 2, "stratum {stratum}");
        }
        // disjoint, union = all
        assert!(id_classes.keys().all(|c| !ood_classes.contains_key(c)));
        assert_eq!(id_classes.len() + ood_classes.len(), 10);
    }

    #[test]
    fn select_split_p_zero_and_warnings() {
        let h = hier(1, 2, 5, 2);
        let (d_id, d_ood, w) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.0, seed: 1 }).unwrap();
        assert!(d_ood.is_empty());
        assert_eq!(d_id.len(), h.len());
        assert!(w.is_empty());

        // p small enough that floor gives 0 -> warning per stratum
        let (_, d_ood2, w2) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.1, seed: 1 }).unwrap();
        assert!(d_ood2.is_empty());
        assert_eq!(w2.len(), 2);
    }

    #[test]
    fn select_split_floor_guard_survives_decimal_proportions() {
        // 10 subclasses per stratum, p = 0.7: IEEE 0.7*10 = 6.999...; the
        // guard must still select 7.
        let h = hier(1, 1, 10, 2);
        let (_, d_ood, _) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.7, seed: 3 }).unwrap();
        let c = h.taxonomy().classification_level();
        assert_eq!(d_ood.observed_classes(c).len(), 7);
    }

    #[test]
    fn select_split_requires_strata() {
        let s = flat(&[("a", 4)]);
        assert!(matches!(
            select_id_ood_split(&s, &SplitSpec { ood_fraction: 0.5, seed: 0 }),
            Err(SplitError::NoStrataLevel)
        ));
    }

    #[test]
    fn hierarchical_full_strata_cover_every_fold() {
        // 2 strata x 10 subclasses, p=0.5 -> 5 OOD classes per stratum = k
        let h = hier(1, 2, 10, 4);
        let (d_id, d_ood, _) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.5, seed: 21 }).unwrap();
        let k = 5;
        let (f_id, f_ood) = build_folds_hierarchical(&d_id, &d_ood, k, 77).unwrap();
        assert_eq!(f_ood.method(), FoldMethod::HierarchicalOod);
        assert_eq!(f_id.len() + f_ood.len(), h.len());
        // every merged fold holds exactly one class per stratum
        let c = h.taxonomy().classification_level();
        for f in 0..k {
            let members = f_ood.fold_members(f);
            let mut per_stratum: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            for id in members {
                let idx = d_ood.index_of(id).unwrap();
                let r = &d_ood.records()[idx];
                per_stratum.entry(r.class_at(1)).or_default().insert(r.class_at(c));
            }
            assert_eq!(per_stratum.len(), 2, "fold {f} misses a stratum");
            for (stratum, classes) in per_stratum {
                assert_eq!(classes.len(), 1, "fold {f} stratum {stratum}");
            }
        }
    }

    #[test]
    fn hierarchical_underfilled_strata_rotate_without_duplication() {
        // 2 strata x 5 subclasses, p=0.4 -> 2 OOD classes per stratum < k=4
        let h = hier(1, 2, 5, 4);
        let (d_id, d_ood, _) =
            select_id_ood_split(&h, &SplitSpec { ood_fraction: 0.4, seed: 8 }).unwrap();
        let (_, f_ood) = build_folds_hierarchical(&d_id, &d_ood, 4, 13).unwrap();
        let under: Vec<_> = f_ood
            .warnings()
            .iter()
            .filter(|w| matches!(w, SplitWarning::StratumUnderfilled { .. }))
            .collect();
        assert_eq!(under.len(), 2);
        // each class whole, in exactly one fold; 4 classes over 4 folds ->
        // every fold gets exactly one class thanks to the shared cursor
        let c = h.taxonomy().classification_level();
        let mut class_folds: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (id, f) in f_ood.iter() {
            let r = &d_ood.records()[d_ood.index_of(id).unwrap()];
            class_folds.entry(r.class_at(c)).or_default().insert(f);
        }
        assert_eq!(class_folds.len(), 4);
        for (class, folds) in &class_folds {
            assert_eq!(folds.len(), 1, "class {class}");
        }
        let occupied: BTreeSet<usize> =
            class_folds.values().map(|s| *s.iter().next().unwrap()).collect();
        assert_eq!(occupied.len(), 4, "cursor failed to spread classes: {occupied:?}");
    }

    #[test]
    fn hierarchical_rejects_taxonomy_mismatch() {
        let a = hier(1, 2, 5, 2);
        let b = hier(2, 2, 5, 2);
        assert!(matches!(
            build_folds_hierarchical(&a, &b, 4, 0),
            Err(SplitError::TaxonomyMismatch)
        ));
    }

    #[test]
    fn join_by_fold_unions_and_rejects_overlap() {
        let s1 = flat(&[("a", 4), ("b", 4)]);
        let s2 = flat(&[("c", 4), ("d", 4)]);
        let f1 = stratified_k_fold(&s1, 0, 2, 1).unwrap();
        let f2 = stratified_k_fold(&s2, 0, 2, 2).unwrap();
        let joined = join_by_fold(vec![f1.clone(), f2.clone()]).unwrap();
        assert_eq!(joined.len(), 16);
        for (id, f) in f1.iter().chain(f2.iter()) {
            assert_eq!(joined.fold_of(id), Some(f));
        }
        // identity
        let single = join_by_fold(vec![f1.clone()]).unwrap();
        assert_eq!(single.len(), f1.len());
        assert_eq!(single.method(), FoldMethod::Stratified);
        // overlap
        assert!(matches!(
            join_by_fold(vec![f1.clone(), f1.clone()]),
            Err(SplitError::SampleOverlap { .. })
        ));
        // k mismatch
        let f3 = stratified_k_fold(&s2, 0, 4, 2).unwrap();
        assert!(matches!(
            join_by_fold(vec![f1, f3]),
            Err(SplitError::KMismatch { .. })
        ));
        assert!(matches!(join_by_fold(vec![]), Err(SplitError::NoParts)));
    }

    #[test]
    fn rounds_partition_and_leakage_safety() {
        let id = flat(&[("i0", 10), ("i1", 10)]);
        let ood = flat(&[("o0", 4), ("o1", 4), ("o2", 4), ("o3", 4)]);
        let (f_id, f_ood) = build_folds_flat(&id, &ood, 2, 5, false).unwrap();
        let rounds = assemble_rounds(&f_id, &f_ood).unwrap();
        assert_eq!(rounds.len(), 2);

        // each sample tested exactly once across rounds
        let mut tested: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &rounds {
            for id in r.test_id.iter().chain(&r.test_ood) {
                *tested.entry(id).or_insert(0) += 1;
            }
            // leakage safety at class level
            let classes = |ids: &[String]| -> BTreeSet<char> {
                ids.iter().map(|i| i.chars().nth(1).unwrap()).collect()
            };
            let train_c = classes(&r.train_ood);
            let test_c = classes(&r.test_ood);
            assert!(train_c.is_disjoint(&test_c), "round {}", r.round_index);
            // partition within round
            assert_eq!(r.train_id.len() + r.test_id.len(), 20);
            assert_eq!(r.train_ood.len() + r.test_ood.len(), 16);
        }
        assert_eq!(tested.len(), 36);
        assert!(tested.values().all(|&n| n == 1));
    }

    #[test]
    fn determinism_same_seed_same_folds() {
        let s = flat(&[("a", 17), ("b", 9), ("c", 23)]);
        let f1 = stratified_k_fold(&s, 0, 4, 99).unwrap();
        let f2 = stratified_k_fold(&s, 0, 4, 99).unwrap();
        assert!(f1.iter().eq(f2.iter()));
        let f3 = stratified_k_fold(&s, 0, 4, 100).unwrap();
        assert!(!f1.iter().eq(f3.iter()));
    }
}
