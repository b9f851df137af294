//! Seeded synthetic Gaussian datasets for desk-scale runs.
//!
//! Every sample is drawn from a unit-variance isotropic Gaussian around its
//! class mean, so the `separation` knob is calibrated in units of the noise
//! standard deviation. The interesting part is where the means go.
//!
//! Probability-based scorers see only logit *gaps*, never absolute
//! positions, so out-of-distribution classes translated far away along a
//! fresh direction are invisible to them. To keep every built-in scorer
//! responsive, OOD class means interpolate between the ID centroid and an
//! anchor ID class while simultaneously moving `separation` units along a
//! direction orthogonal to the span of the ID means:
//!
//! - `separation = 0` collapses each OOD class onto its anchor, making the
//!   two families identically distributed (AUROC ½ for everything);
//! - growing `separation` pulls the class toward the centroid (onto the ID
//!   decision boundary, where softmax gaps shrink) while the orthogonal leg
//!   grows the absolute distance that energy, neighbor, and Mahalanobis
//!   scorers measure.
//!
//! Logits are the exact negative half squared distances to the ID class
//! means; features are the raw coordinates. All randomness flows through
//! per-class derived streams, so adding a class never perturbs the others.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use dcv_rood_core::matrix::Matrix;
use dcv_rood_core::rng::{derive_seed, SplitMix64};
use dcv_rood_core::split::{select_id_ood_split, SplitSpec};
use dcv_rood_core::taxonomy::{ClassTaxonomy, SampleRecord, SampleSet};

use crate::config::PairConfig;
use crate::formats::{self, FormatError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatSynthSpec {
    pub n_id_classes: usize,
    pub n_ood_classes: usize,
    pub id_per_class: usize,
    pub ood_per_class: usize,
    pub dim: usize,
    /// Distance of each OOD class mean from the ID span, in noise units.
    pub separation: f64,
    /// Scale of the ID class mean placement (means are `spread · N(0, I)`).
    pub class_spread: f64,
    pub seed: u64,
}

impl Default for FlatSynthSpec {
    fn default() -> Self {
        FlatSynthSpec {
            n_id_classes: 10,
            n_ood_classes: 10,
            id_per_class: 50,
            ood_per_class: 50,
            dim: 16,
            separation: 2.0,
            class_spread: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierSynthSpec {
    pub n_super: usize,
    /// Mid-level classes per top-level class.
    pub n_classes: usize,
    /// Leaf classes per mid-level class; classification happens here.
    pub n_sub: usize,
    /// Samples per leaf class.
    pub per_class: usize,
    pub dim: usize,
    /// Push applied to each OOD leaf mean along a fresh random direction.
    pub separation: f64,
    /// Base spread; levels scale it by 2, 1, and ½ from top to leaf.
    pub class_spread: f64,
    /// Per-stratum proportion of leaf classes assigned to OOD.
    pub ood_fraction: f64,
    pub seed: u64,
}

impl Default for HierSynthSpec {
    fn default() -> Self {
        HierSynthSpec {
            n_super: 2,
            n_classes: 5,
            n_sub: 5,
            per_class: 20,
            dim: 16,
            separation: 2.0,
            class_spread: 1.5,
            ood_fraction: 0.5,
            seed: 0,
        }
    }
}

/// A generated ID/OOD dataset pair, payloads attached, ready to feed the
/// pipeline directly or to be written out as manifests.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub id: SampleSet,
    pub ood: SampleSet,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

fn gaussian_vec(rng: &mut SplitMix64, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.next_standard_normal()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gram-Schmidt with drop of near-dependent vectors; returns an orthonormal
/// basis of the span.
fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let dot: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= dot * bi;
            }
        }
        let n = norm(&w);
        if n > 1e-9 {
            for wi in &mut w {
                *wi /= n;
            }
            basis.push(w);
        }
    }
    basis
}

/// A unit vector orthogonal to `basis`, built from `raw`. Falls back to the
/// normalized raw draw when the residual degenerates or the basis already
/// spans the whole space.
fn orthogonal_unit(raw: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    let d = raw.len();
    let fallback = |mut v: Vec<f64>| {
        let n = norm(&v);
        for vi in &mut v {
            *vi /= n;
        }
        v
    };
    if basis.len() >= d {
        return fallback(raw);
    }
    let mut w = raw.clone();
    for b in basis {
        let dot: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
        for (wi, bi) in w.iter_mut().zip(b) {
            *wi -= dot * bi;
        }
    }
    let n = norm(&w);
    if n < 1e-9 {
        return fallback(raw);
    }
    for wi in &mut w {
        *wi /= n;
    }
    w
}

/// Exact negative half squared Euclidean distance from every row of `xs` to
/// every mean, the closed-form logits of an isotropic Gaussian classifier.
fn gaussian_logits(xs: &Matrix, means: &[Vec<f64>]) -> Matrix {
    let mut out = Matrix::zeros(xs.rows(), means.len());
    for i in 0..xs.rows() {
        let x = xs.row(i);
        for (c, mu) in means.iter().enumerate() {
            let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set(i, c, -0.5 * d2);
        }
    }
    out
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Draws `count` samples around `mean` from the given stream and appends
/// records + rows.
#[allow(clippy::too_many_arguments)]
fn draw_class(
    rng: &mut SplitMix64,
    mean: &[f64],
    count: usize,
    class_path: &[String],
    id_prefix: &str,
    idx_width: usize,
    records: &mut Vec<SampleRecord>,
    rows: &mut Vec<f64>,
) {
    for i in 0..count {
        let sample_id = format!("{id_prefix}_{i:0idx_width$}");
        records.push(SampleRecord::new(sample_id, class_path.to_vec()));
        for mu in mean {
            rows.push(mu + rng.next_standard_normal());
        }
    }
}

// ---------------------------------------------------------------------------
// Flat pairs
// ---------------------------------------------------------------------------

pub fn flat_pair(spec: &FlatSynthSpec) -> SynthPair {
    assert!(spec.n_id_classes > 0 && spec.n_ood_classes > 0, "need classes on both sides");
    assert!(spec.dim > 0 && spec.id_per_class > 0 && spec.ood_per_class > 0);
    let d = spec.dim;
    let cw_id = digits(spec.n_id_classes - 1).max(2);
    let cw_ood = digits(spec.n_ood_classes - 1).max(2);
    let iw = digits(spec.id_per_class.max(spec.ood_per_class) - 1).max(4);

    // ID class means.
    let id_means: Vec<Vec<f64>> = (0..spec.n_id_classes)
        .map(|c| {
            let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-id-mean", c as u64));
            gaussian_vec(&mut rng, d).iter().map(|g| spec.class_spread * g).collect()
        })
        .collect();
    let centroid: Vec<f64> = (0..d)
        .map(|j| id_means.iter().map(|m| m[j]).sum::<f64>() / id_means.len() as f64)
        .collect();
    let offsets: Vec<Vec<f64>> = id_means
        .iter()
        .map(|m| m.iter().zip(&centroid).map(|(a, b)| a - b).collect())
        .collect();
    let basis = orthonormal_basis(&offsets);

    // OOD class means: interpolate centroid → anchor, push orthogonally.
    let drift = (1.0 - spec.separation / 2.0).max(0.0);
    let ood_means: Vec<Vec<f64>> = (0..spec.n_ood_classes)
        .map(|j| {
            let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-ood-dir", j as u64));
            let w = orthogonal_unit(gaussian_vec(&mut rng, d), &basis);
            let anchor = &id_means[j % spec.n_id_classes];
            (0..d)
                .map(|t| {
                    centroid[t]
                        + drift * (anchor[t] - centroid[t])
                        + spec.separation * w[t]
                })
                .collect()
        })
        .collect();

    // Samples.
    let mut id_records = Vec::new();
    let mut id_rows = Vec::new();
    for (c, mean) in id_means.iter().enumerate() {
        let class = format!("id{c:0cw_id$}");
        let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-id-sample", c as u64));
        draw_class(
            &mut rng,
            mean,
            spec.id_per_class,
            std::slice::from_ref(&class),
            &class,
            iw,
            &mut id_records,
            &mut id_rows,
        );
    }
    let mut ood_records = Vec::new();
    let mut ood_rows = Vec::new();
    for (j, mean) in ood_means.iter().enumerate() {
        let class = format!("ood{j:0cw_ood$}");
        let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-ood-sample", j as u64));
        draw_class(
            &mut rng,
            mean,
            spec.ood_per_class,
            std::slice::from_ref(&class),
            &class,
            iw,
            &mut ood_records,
            &mut ood_rows,
        );
    }

    let id_features = Matrix::from_vec(id_records.len(), d, id_rows);
    let ood_features = Matrix::from_vec(ood_records.len(), d, ood_rows);
    // Class ids are zero-padded, so canonical class order equals mean index
    // order and the logit columns line up with `id_means`.
    let id_logits = gaussian_logits(&id_features, &id_means);
    let ood_logits = gaussian_logits(&ood_features, &id_means);

    let id_taxonomy = Arc::new(ClassTaxonomy::flat(
        "class",
        (0..spec.n_id_classes).map(|c| format!("id{c:0cw_id$}")),
    ));
    let ood_taxonomy = Arc::new(ClassTaxonomy::flat(
        "class",
        (0..spec.n_ood_classes).map(|j| format!("ood{j:0cw_ood$}")),
    ));
    SynthPair {
        id: SampleSet::new(id_taxonomy, id_records, Some(id_features), Some(id_logits))
            .expect("generated ID set is valid by construction"),
        ood: SampleSet::new(ood_taxonomy, ood_records, Some(ood_features), Some(ood_logits))
            .expect("generated OOD set is valid by construction"),
        warnings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Hierarchical pairs
// ---------------------------------------------------------------------------

/// Builds a three-level taxonomy (top × mid × leaf) with Gaussian means
/// nested at shrinking scales, runs the stratified ID/OOD leaf selection,
/// pushes each OOD leaf mean `separation` units along a fresh direction,
/// and only then draws samples and logits. Both returned sets share the
/// full taxonomy, which routes the pair to the hierarchical fold
/// construction downstream.
pub fn hier_pair(spec: &HierSynthSpec) -> SynthPair {
    assert!(spec.n_super > 0 && spec.n_classes > 0 && spec.n_sub > 0 && spec.per_class > 0);
    assert!(spec.dim > 0);
    let d = spec.dim;
    let sw = digits(spec.n_super - 1);
    let cw = digits(spec.n_classes - 1);
    let uw = digits(spec.n_sub - 1);
    let iw = digits(spec.per_class - 1).max(4);
    let scales = [2.0 * spec.class_spread, spec.class_spread, 0.5 * spec.class_spread];

    let super_name = |s: usize| format!("g{s:0sw$}");
    let class_name = |s: usize, c: usize| format!("g{s:0sw$}c{c:0cw$}");
    let sub_name = |s: usize, c: usize, u: usize| format!("g{s:0sw$}c{c:0cw$}u{u:0uw$}");

    // Nested means, one derived stream per node.
    let mut leaf_mean: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for s in 0..spec.n_super {
        let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-l0-mean", s as u64));
        let top: Vec<f64> = gaussian_vec(&mut rng, d).iter().map(|g| scales[0] * g).collect();
        for c in 0..spec.n_classes {
            let idx = (s * spec.n_classes + c) as u64;
            let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-l1-mean", idx));
            let mid: Vec<f64> =
                top.iter().zip(gaussian_vec(&mut rng, d)).map(|(t, g)| t + scales[1] * g).collect();
            for u in 0..spec.n_sub {
                let idx = ((s * spec.n_classes + c) * spec.n_sub + u) as u64;
                let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-l2-mean", idx));
                let leaf: Vec<f64> = mid
                    .iter()
                    .zip(gaussian_vec(&mut rng, d))
                    .map(|(m, g)| m + scales[2] * g)
                    .collect();
                leaf_mean.insert(sub_name(s, c, u), leaf);
            }
        }
    }

    // Taxonomy + payload-less records, then the stratified leaf selection.
    let mut nodes = Vec::new();
    for s in 0..spec.n_super {
        nodes.push((0, super_name(s), None));
        for c in 0..spec.n_classes {
            nodes.push((1, class_name(s, c), Some(super_name(s))));
            for u in 0..spec.n_sub {
                nodes.push((2, sub_name(s, c, u), Some(class_name(s, c))));
            }
        }
    }
    let taxonomy = Arc::new(
        ClassTaxonomy::new(
            vec!["super".into(), "class".into(), "subclass".into()],
            nodes,
            2,
        )
        .expect("generated taxonomy is valid by construction"),
    );
    let mut skeleton = Vec::new();
    let mut leaf_index = std::collections::BTreeMap::new();
    for s in 0..spec.n_super {
        for c in 0..spec.n_classes {
            for u in 0..spec.n_sub {
                let leaf = sub_name(s, c, u);
                leaf_index.insert(leaf.clone(), ((s * spec.n_classes + c) * spec.n_sub + u) as u64);
                for i in 0..spec.per_class {
                    skeleton.push(SampleRecord::new(
                        format!("{leaf}_{i:0iw$}"),
                        vec![super_name(s), class_name(s, c), leaf.clone()],
                    ));
                }
            }
        }
    }
    let slim = SampleSet::new(Arc::clone(&taxonomy), skeleton, None, None)
        .expect("generated records are valid by construction");
    let (id_slim, ood_slim, warnings) = select_id_ood_split(
        &slim,
        &SplitSpec {
            ood_fraction: spec.ood_fraction,
            seed: derive_seed(spec.seed, "synth-hier-select", 0),
        },
    )
    .expect("leaf selection on a generated taxonomy cannot fail");

    // OOD leaves move `separation` units along their own random direction;
    // ID leaves stay put and define the logit columns.
    let ood_leaves: Vec<String> =
        ood_slim.observed_classes(2).into_keys().map(str::to_string).collect();
    for leaf in &ood_leaves {
        let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-ood-dir", leaf_index[leaf]));
        let mut w = gaussian_vec(&mut rng, d);
        let n = norm(&w);
        for wi in &mut w {
            *wi /= n;
        }
        let mean = leaf_mean.get_mut(leaf).expect("selected leaf has a mean");
        for (m, wi) in mean.iter_mut().zip(&w) {
            *m += spec.separation * wi;
        }
    }
    let id_mean_list: Vec<Vec<f64>> = id_slim
        .observed_classes(2)
        .into_keys()
        .map(|leaf| leaf_mean[leaf].clone())
        .collect();

    let realize = |slim: &SampleSet| {
        let mut rows = Vec::with_capacity(slim.len() * d);
        // Records are canonically ordered, so each leaf's samples are
        // contiguous and in draw order; one stream per leaf as usual.
        let mut current_leaf: Option<&str> = None;
        let mut rng = SplitMix64::new(0);
        for r in slim.records() {
            let leaf = r.class_at(2);
            if current_leaf != Some(leaf) {
                rng = SplitMix64::new(derive_seed(spec.seed, "synth-hier-sample", leaf_index[leaf]));
                current_leaf = Some(leaf);
            }
            let mean = &leaf_mean[leaf];
            for mu in mean {
                rows.push(mu + rng.next_standard_normal());
            }
        }
        let features = Matrix::from_vec(slim.len(), d, rows);
        let logits = gaussian_logits(&features, &id_mean_list);
        SampleSet::new(
            slim.taxonomy_arc().clone(),
            slim.records().to_vec(),
            Some(features),
            Some(logits),
        )
        .expect("realized set is valid by construction")
    };

    SynthPair {
        id: realize(&id_slim),
        ood: realize(&ood_slim),
        warnings: warnings.iter().map(|w| w.to_string()).collect(),
    }
}

// ---------------------------------------------------------------------------
// Writing pairs out
// ---------------------------------------------------------------------------

/// Writes the pair as two manifests plus binary payloads under `dir` and
/// returns a ready-to-embed pair entry.
pub fn write_pair(dir: &Path, name: &str, pair: &SynthPair) -> Result<PairConfig, FormatError> {
    std::fs::create_dir_all(dir).map_err(|e| FormatError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}"));
    let id_manifest = file("id.json");
    let ood_manifest = file("ood.json");
    let id_features = file("id_features.dcvr");
    let id_logits = file("id_logits.dcvr");
    let ood_features = file("ood_features.dcvr");
    let ood_logits = file("ood_logits.dcvr");

    formats::write_manifest(&id_manifest, pair.id.taxonomy(), pair.id.records())?;
    formats::write_manifest(&ood_manifest, pair.ood.taxonomy(), pair.ood.records())?;
    formats::write_matrix_binary(&id_features, pair.id.features().expect("synth has features"))?;
    formats::write_matrix_binary(&id_logits, pair.id.logits().expect("synth has logits"))?;
    formats::write_matrix_binary(&ood_features, pair.ood.features().expect("synth has features"))?;
    formats::write_matrix_binary(&ood_logits, pair.ood.logits().expect("synth has logits"))?;

    Ok(PairConfig {
        name: name.to_string(),
        id_manifest: Some(id_manifest),
        id_features: Some(id_features),
        id_logits: Some(id_logits),
        ood_manifest: Some(ood_manifest),
        ood_features: Some(ood_features),
        ood_logits: Some(ood_logits),
        manifest: None,
        features: None,
        logits: None,
        ood_fraction: None,
        split_seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_pair_is_deterministic() {
        let spec = FlatSynthSpec { n_id_classes: 3, n_ood_classes: 2, ..Default::default() };
        let a = flat_pair(&spec);
        let b = flat_pair(&spec);
        assert_eq!(a.id.features().unwrap().data(), b.id.features().unwrap().data());
        assert_eq!(a.ood.logits().unwrap().data(), b.ood.logits().unwrap().data());
    }

    #[test]
    fn zero_separation_collapses_ood_onto_id_anchors() {
        let spec = FlatSynthSpec {
            n_id_classes: 2,
            n_ood_classes: 2,
            id_per_class: 400,
            ood_per_class: 400,
            separation: 0.0,
            ..Default::default()
        };
        let pair = flat_pair(&spec);
        // With separation 0 the OOD class mean equals its anchor ID mean,
        // so per-class sample means agree up to Monte-Carlo error.
        let mean_of = |set: &SampleSet, class: &str| -> Vec<f64> {
            let rows: Vec<usize> = set
                .records()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.class_at(0) == class)
                .map(|(i, _)| i)
                .collect();
            let f = set.features().unwrap();
            (0..f.cols())
                .map(|j| rows.iter().map(|&i| f.get(i, j)).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let id0 = mean_of(&pair.id, "id00");
        let ood0 = mean_of(&pair.ood, "ood00");
        let gap: f64 = id0
            .iter()
            .zip(&ood0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(gap < 0.5, "anchored OOD mean drifted by {gap}");
    }

    #[test]
    fn separation_pushes_orthogonally_to_the_id_span() {
        let spec = FlatSynthSpec {
            n_id_classes: 3,
            n_ood_classes: 1,
            id_per_class: 1,
            ood_per_class: 1,
            separation: 4.0,
            ..Default::default()
        };
        // Reconstruct the class means the generator used.
        let d = spec.dim;
        let id_means: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-id-mean", c));
                gaussian_vec(&mut rng, d).iter().map(|g| spec.class_spread * g).collect()
            })
            .collect();
        let centroid: Vec<f64> =
            (0..d).map(|j| id_means.iter().map(|m| m[j]).sum::<f64>() / 3.0).collect();
        let mut rng = SplitMix64::new(derive_seed(spec.seed, "synth-ood-dir", 0));
        let offsets: Vec<Vec<f64>> = id_means
            .iter()
            .map(|m| m.iter().zip(&centroid).map(|(a, b)| a - b).collect())
            .collect();
        let w = orthogonal_unit(gaussian_vec(&mut rng, d), &orthonormal_basis(&offsets));
        for o in &offsets {
            let dot: f64 = w.iter().zip(o).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9, "push direction leaks into the ID span: {dot}");
        }
        // drift = max(0, 1 - 4/2) = 0, so the OOD mean is centroid + 4w.
        let expected: Vec<f64> =
            (0..d).map(|t| centroid[t] + spec.separation * w[t]).collect();
        let pair = flat_pair(&spec);
        let x = pair.ood.features().unwrap().row(0);
        let dist: f64 =
            x.iter().zip(&expected).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        // single sample = mean + unit noise; χ₁₆ is ~4 ± 1
        assert!(dist < 8.0, "sample implausibly far from the expected mean: {dist}");
    }

    #[test]
    fn logit_columns_follow_canonical_id_class_order() {
        let spec = FlatSynthSpec {
            n_id_classes: 3,
            n_ood_classes: 1,
            id_per_class: 5,
            ood_per_class: 5,
            ..Default::default()
        };
        let pair = flat_pair(&spec);
        let logits = pair.id.logits().unwrap();
        assert_eq!(logits.cols(), 3);
        // A sample of class c should be closest to mean c: its own column
        // carries the largest logit for the vast majority of samples.
        let mut hits = 0;
        for (i, r) in pair.id.records().iter().enumerate() {
            let own: usize = r.class_at(0)[2..].parse().unwrap();
            let row = logits.row(i);
            let best = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            if best == own {
                hits += 1;
            }
        }
        assert!(hits >= 12, "only {hits}/15 samples nearest their own mean");
    }

    #[test]
    fn hier_pair_splits_leaves_and_shares_the_taxonomy() {
        let spec = HierSynthSpec::default();
        let pair = hier_pair(&spec);
        assert_eq!(pair.id.taxonomy(), pair.ood.taxonomy());
        assert_eq!(pair.id.taxonomy().n_levels(), 3);
        // 2×5×5 = 50 leaves, ood_fraction ½ → 2 of 5 per stratum (floor).
        let id_leaves = pair.id.observed_classes(2).len();
        let ood_leaves = pair.ood.observed_classes(2).len();
        assert_eq!(ood_leaves, 20);
        assert_eq!(id_leaves, 30);
        assert_eq!(pair.id.len(), 30 * spec.per_class);
        assert_eq!(pair.ood.len(), 20 * spec.per_class);
        // logits span the 30 ID leaves
        assert_eq!(pair.ood.logits().unwrap().cols(), 30);
    }

    #[test]
    fn written_pair_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FlatSynthSpec {
            n_id_classes: 2,
            n_ood_classes: 2,
            id_per_class: 4,
            ood_per_class: 4,
            ..Default::default()
        };
        let pair = flat_pair(&spec);
        let entry = write_pair(dir.path(), "toy", &pair).unwrap();
        let id = formats::load_sample_set(
            entry.id_manifest.as_ref().unwrap(),
            entry.id_features.as_deref(),
            entry.id_logits.as_deref(),
        )
        .unwrap();
        assert_eq!(id.len(), pair.id.len());
        // float32 round-trip: equal to within single precision
        for (a, b) in id
            .features()
            .unwrap()
            .data()
            .iter()
            .zip(pair.id.features().unwrap().data())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
