//! Class hierarchies, labeled samples, and their numeric payloads.
//!
//! Everything downstream (splitting, scoring, statistics) assumes a single
//! canonical ordering: sample records sorted lexicographically by the UTF-8
//! bytes of their ids, and class ids likewise wherever a class list is
//! enumerated. Seeded procedures operate on canonically ordered inputs, so a
//! given `(dataset, seed)` produces identical results regardless of manifest
//! row order or platform.
//!
//! A flat dataset is a 1-level taxonomy with `classification_level = 0` and
//! no strata level; the presence or absence of a strata level is what steers
//! fold construction between the flat and hierarchical algorithms.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use thiserror::Error;

use crate::matrix::Matrix;

/// Errors from taxonomy and sample-set construction or filtering.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy must declare at least one level")]
    EmptyLevels,
    #[error("classification_level {level} out of range for {n_levels} levels")]
    InvalidClassificationLevel { level: usize, n_levels: usize },
    #[error("level index {level} out of range for {n_levels} levels")]
    InvalidLevel { level: usize, n_levels: usize },
    #[error("node level {level} out of range for {n_levels} levels")]
    NodeLevelOutOfRange { level: usize, n_levels: usize },
    #[error("duplicate class id `{class}` at level {level}")]
    DuplicateClass { class: String, level: usize },
    #[error("class `{class}` references unknown parent or appears outside the taxonomy")]
    OrphanClass { class: String },
    #[error("top-level class `{class}` must not declare a parent")]
    TopLevelParent { class: String },
    #[error("sample `{sample}` path has {got} entries, taxonomy has {expected} levels")]
    PathLength { sample: String, expected: usize, got: usize },
    #[error("sample `{sample}` path entry `{child}` is not a child of `{parent}`")]
    PathLink { sample: String, parent: String, child: String },
    #[error("duplicate sample id `{sample}`")]
    DuplicateSample { sample: String },
    #[error("{what} has {got} rows, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col} of {what}")]
    NonFiniteValue { what: &'static str, row: usize, col: usize },
    #[error("unknown class `{class}` at the classification level")]
    UnknownClass { class: String },
}

/// A tree of class ids organized into named levels.
///
/// `nodes[l]` maps each class id at level `l` to its parent id at level
/// `l - 1` (`None` at level 0). The classification level `C` is where
/// ID/OOD membership is decided; the level immediately above it (when one
/// exists) is the strata level `S` used by the hierarchical split
/// algorithms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    levels: Vec<String>,
    nodes: Vec<BTreeMap<String, Option<String>>>,
    classification_level: usize,
}

impl ClassTaxonomy {
    /// Validates and builds a taxonomy from `(level, class-id, parent-id)`
    /// node triples.
    pub fn new(
        levels: Vec<String>,
        node_triples: impl IntoIterator<Item = (usize, String, Option<String>)>,
        classification_level: usize,
    ) -> Result<Self, TaxonomyError> {
        if levels.is_empty() {
            return Err(TaxonomyError::EmptyLevels);
        }
        if classification_level >= levels.len() {
            return Err(TaxonomyError::InvalidClassificationLevel {
                level: classification_level,
                n_levels: levels.len(),
            });
        }
        let mut nodes: Vec<BTreeMap<String, Option<String>>> =
            levels.iter().map(|_| BTreeMap::new()).collect();
        for (level, id, parent) in node_triples {
            if level >= levels.len() {
                return Err(TaxonomyError::NodeLevelOutOfRange { level, n_levels: levels.len() });
            }
            if level == 0 && parent.is_some() {
                return Err(TaxonomyError::TopLevelParent { class: id });
            }
            if nodes[level].insert(id.clone(), parent).is_some() {
                return Err(TaxonomyError::DuplicateClass { class: id, level });
            }
        }
        // Parent links must land on an existing class one level up.
        for level in 1..nodes.len() {
            for (id, parent) in &nodes[level] {
                match parent {
                    Some(p) if nodes[level - 1].contains_key(p) => {}
                    _ => return Err(TaxonomyError::OrphanClass { class: id.clone() }),
                }
            }
        }
        Ok(Self { levels, nodes, classification_level })
    }

    /// Convenience constructor for a flat, single-level taxonomy
    /// (`classification_level = 0`, no strata).
    pub fn flat(level_name: &str, class_ids: impl IntoIterator<Item = String>) -> Self {
        let mut nodes: Vec<BTreeMap<String, Option<String>>> = alloc::vec![BTreeMap::new()];
        for id in class_ids {
            nodes[0].insert(id, None);
        }
        Self {
            levels: alloc::vec![level_name.to_string()],
            nodes,
            classification_level: 0,
        }
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index of the classification level `C`.
    pub fn classification_level(&self) -> usize {
        self.classification_level
    }

    /// Index of the strata level `S = C − 1`, absent when `C` is the top
    /// level (flat datasets in particular).
    pub fn strata_level(&self) -> Option<usize> {
        self.classification_level.checked_sub(1)
    }

    /// Index of the deepest level `L`.
    pub fn deepest_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// True when `id` is a class at `level`.
    pub fn contains(&self, level: usize, id: &str) -> bool {
        self.nodes.get(level).is_some_and(|m| m.contains_key(id))
    }

    /// Parent id of `id` at `level` (None at level 0 or for unknown ids).
    pub fn parent(&self, level: usize, id: &str) -> Option<&str> {
        self.nodes.get(level)?.get(id)?.as_deref()
    }

    /// Class ids at `level` in canonical (lexicographic) order.
    pub fn canonical_class_order(&self, level: usize) -> Result<Vec<&str>, TaxonomyError> {
        let m = self
            .nodes
            .get(level)
            .ok_or(TaxonomyError::InvalidLevel { level, n_levels: self.levels.len() })?;
        Ok(m.keys().map(String::as_str).collect())
    }

    /// Number of classes at `level`.
    pub fn class_count(&self, level: usize) -> usize {
        self.nodes.get(level).map_or(0, BTreeMap::len)
    }
}

/// One labeled sample: an opaque id plus its class path from the top level
/// down to the deepest level. The leaf class is the last path entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    sample_id: String,
    path: Vec<String>,
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>, path: Vec<String>) -> Self {
        Self { sample_id: sample_id.into(), path }
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    /// Class id at the deepest level.
    pub fn leaf_class(&self) -> &str {
        self.path.last().expect("validated non-empty path")
    }

    /// Class id at an arbitrary level of the path.
    pub fn class_at(&self, level: usize) -> &str {
        &self.path[level]
    }
}

/// A validated, canonically ordered dataset: taxonomy + records + optional
/// dense payloads (features for distance-based scorers, logits for
/// probability-based scorers). Payload row `i` belongs to record `i`.
///
/// Immutable after construction; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct SampleSet {
    taxonomy: Arc<ClassTaxonomy>,
    records: Vec<SampleRecord>,
    features: Option<Matrix>,
    logits: Option<Matrix>,
}

impl SampleSet {
    /// Validates records against the taxonomy, sorts them into canonical
    /// order (permuting payload rows identically), and checks payload shape
    /// and finiteness.
    pub fn new(
        taxonomy: Arc<ClassTaxonomy>,
        records: Vec<SampleRecord>,
        features: Option<Matrix>,
        logits: Option<Matrix>,
    ) -> Result<Self, TaxonomyError> {
        for r in &records {
            if r.path.len() != taxonomy.n_levels() {
                return Err(TaxonomyError::PathLength {
                    sample: r.sample_id.clone(),
                    expected: taxonomy.n_levels(),
                    got: r.path.len(),
                });
            }
            if !taxonomy.contains(0, &r.path[0]) {
                return Err(TaxonomyError::OrphanClass { class: r.path[0].clone() });
            }
            for l in 1..r.path.len() {
                let (parent, child) = (&r.path[l - 1], &r.path[l]);
                if !taxonomy.contains(l, child) {
                    return Err(TaxonomyError::OrphanClass { class: child.clone() });
                }
                if taxonomy.parent(l, child) != Some(parent.as_str()) {
                    return Err(TaxonomyError::PathLink {
                        sample: r.sample_id.clone(),
                        parent: parent.clone(),
                        child: child.clone(),
                    });
                }
            }
        }

        // Canonical order: sort record indices by sample id, then apply the
        // same permutation to payload rows.
        let mut perm: Vec<usize> = (0..records.len()).collect();
        perm.sort_by(|&a, &b| records[a].sample_id.cmp(&records[b].sample_id));
        let mut sorted = Vec::with_capacity(records.len());
        let mut prev: Option<&str> = None;
        // Move records out in permutation order without cloning.
        let mut slots: Vec<Option<SampleRecord>> = records.into_iter().map(Some).collect();
        for &i in &perm {
            let r = slots[i].take().expect("permutation visits each index once");
            if prev == Some(r.sample_id.as_str()) {
                return Err(TaxonomyError::DuplicateSample { sample: r.sample_id });
            }
            sorted.push(r);
            prev = Some(sorted.last().expect("just pushed").sample_id());
        }

        let reorder = |m: Matrix, what: &'static str| -> Result<Matrix, TaxonomyError> {
            if m.rows() != sorted.len() {
                return Err(TaxonomyError::DimensionMismatch {
                    what,
                    expected: sorted.len(),
                    got: m.rows(),
                });
            }
            let m = m.select_rows(&perm);
            if let Some((row, col)) = m.first_non_finite() {
                return Err(TaxonomyError::NonFiniteValue { what, row, col });
            }
            Ok(m)
        };
        let features = features.map(|m| reorder(m, "features")).transpose()?;
        let logits = logits.map(|m| reorder(m, "logits")).transpose()?;

        Ok(Self { taxonomy, records: sorted, features, logits })
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn taxonomy_arc(&self) -> &Arc<ClassTaxonomy> {
        &self.taxonomy
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn logits(&self) -> Option<&Matrix> {
        self.logits.as_ref()
    }

    /// Canonical position of a sample id (also its payload row index).
    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.records
            .binary_search_by(|r| r.sample_id.as_str().cmp(sample_id))
            .ok()
    }

    /// Observed classes at `level` with their sample counts, canonically
    /// ordered. (Taxonomy-declared classes with zero samples do not appear.)
    pub fn observed_classes(&self, level: usize) -> BTreeMap<&str, usize> {
        let mut out: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.class_at(level)).or_insert(0) += 1;
        }
        out
    }

    /// Sub-dataset whose classification-level entry is in `classes`.
    ///
    /// Canonical order is preserved and payload rows are sliced
    /// consistently. The taxonomy is shared, not pruned, so hierarchical
    /// relationships remain available to later splitting stages.
    pub fn filter_by_labels(&self, classes: &BTreeSet<String>) -> Result<SampleSet, TaxonomyError> {
        let c = self.taxonomy.classification_level();
        for class in classes {
            if !self.taxonomy.contains(c, class) {
                return Err(TaxonomyError::UnknownClass { class: class.clone() });
            }
        }
        let keep: Vec<usize> = (0..self.records.len())
            .filter(|&i| classes.contains(self.records[i].class_at(c)))
            .collect();
        let records = keep.iter().map(|&i| self.records[i].clone()).collect();
        Ok(SampleSet {
            taxonomy: Arc::clone(&self.taxonomy),
            records,
            features: self.features.as_ref().map(|m| m.select_rows(&keep)),
            logits: self.logits.as_ref().map(|m| m.select_rows(&keep)),
        })
    }
}
