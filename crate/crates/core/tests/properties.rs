//! Property-based invariants for fold construction, metrics, and the rank
//! test. These complement the frozen goldens: goldens pin exact values,
//! properties pin the structure that must hold for *any* input.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dcv_rood_core::metrics::{
    aupr, auroc, evaluate, tpr_at_fpr, MetricKind, MetricParams, ScoreTable,
};
use dcv_rood_core::rng::SplitMix64;
use dcv_rood_core::split::{
    assemble_rounds, build_folds_flat, group_k_fold, select_id_ood_split, stratified_k_fold,
    SplitSpec,
};
use dcv_rood_core::stats::{mann_whitney_u, shapiro_wilk, t_test_pooled, MwuMethod};
use dcv_rood_core::taxonomy::{ClassTaxonomy, SampleRecord, SampleSet};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn flat_set(class_sizes: &[usize], shuffle_seed: u64) -> SampleSet {
    let taxonomy = Arc::new(ClassTaxonomy::flat(
        "class",
        class_sizes.iter().enumerate().map(|(c, _)| format!("c{c:02}")),
    ));
    let mut records = Vec::new();
    for (c, &n) in class_sizes.iter().enumerate() {
        for i in 0..n {
            records.push(SampleRecord::new(
                format!("c{c:02}_s{i:03}"),
                vec![format!("c{c:02}")],
            ));
        }
    }
    // input order must not matter; feed the constructor a scrambled copy
    SplitMix64::new(shuffle_seed).shuffle(&mut records);
    SampleSet::new(taxonomy, records, None, None).unwrap()
}

fn scores_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    // one-decimal grid forces plenty of ties
    prop::collection::vec((-200i32..200).prop_map(|v| v as f64 / 10.0), 1..max_len)
}

fn auroc_brute(table: &ScoreTable) -> f64 {
    let mut num = 0.0;
    for &o in table.ood_scores() {
        for &i in table.id_scores() {
            if o > i {
                num += 1.0;
            } else if o == i {
                num += 0.5;
            }
        }
    }
    num / (table.n_id() as f64 * table.n_ood() as f64)
}

// ---------------------------------------------------------------------------
// fold invariants
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stratified_folds_partition_and_balance(
        sizes in prop::collection::vec(1usize..12, 2..8),
        k in 2usize..6,
        seed in any::<u64>(),
        order_seed in any::<u64>(),
    ) {
        let s = flat_set(&sizes, 0);
        let fa = stratified_k_fold(&s, 0, k, seed).unwrap();

        // partition: every sample exactly once, folds in range
        prop_assert_eq!(fa.len(), s.len());
        let mut per_class_fold: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (id, fold) in fa.iter() {
            prop_assert!(fold < k);
            per_class_fold.entry(&id[..3]).or_default().push(fold);
        }

        // per-class balance: fold counts differ by at most one
        for (class, folds) in per_class_fold {
            let mut counts = vec![0usize; k];
            for f in folds {
                counts[f] += 1;
            }
            let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(mx - mn <= 1, "class {} counts {:?}", class, counts);
        }

        // input order independence
        let reshuffled = flat_set(&sizes, order_seed);
        let fb = stratified_k_fold(&reshuffled, 0, k, seed).unwrap();
        prop_assert!(fa.iter().eq(fb.iter()));
    }

    #[test]
    fn group_folds_keep_classes_whole(
        sizes in prop::collection::vec(1usize..15, 5..12),
        k in 2usize..6,
        seed in any::<u64>(),
        order_seed in any::<u64>(),
    ) {
        prop_assume!(sizes.len() >= k);
        let s = flat_set(&sizes, 3);
        let fa = group_k_fold(&s, 0, k, seed).unwrap();
        prop_assert_eq!(fa.len(), s.len());

        // indivisibility: one fold per class
        let mut fold_of_class: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (id, fold) in fa.iter() {
            fold_of_class.entry(&id[..3]).or_default().insert(fold);
        }
        for (class, folds) in &fold_of_class {
            prop_assert_eq!(folds.len(), 1, "class {} in folds {:?}", class, folds);
        }

        // every fold non-empty (num classes >= k)
        let occupied: BTreeSet<usize> = fa.iter().map(|(_, f)| f).collect();
        prop_assert_eq!(occupied.len(), k);

        // input order independence
        let fb = group_k_fold(&flat_set(&sizes, order_seed), 0, k, seed).unwrap();
        prop_assert!(fa.iter().eq(fb.iter()));
    }

    #[test]
    fn rounds_test_each_sample_once_without_leakage(
        id_sizes in prop::collection::vec(2usize..10, 2..6),
        ood_sizes in prop::collection::vec(1usize..8, 5..10),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(ood_sizes.len() >= k);
        let taxonomy_id = flat_set(&id_sizes, 1);
        // give OOD classes disjoint names by building from a different label space
        let taxonomy = Arc::new(ClassTaxonomy::flat(
            "class",
            ood_sizes.iter().enumerate().map(|(c, _)| format!("o{c:02}")),
        ));
        let mut records = Vec::new();
        for (c, &n) in ood_sizes.iter().enumerate() {
            for i in 0..n {
                records.push(SampleRecord::new(format!("o{c:02}_s{i:03}"), vec![format!("o{c:02}")]));
            }
        }
        let ood = SampleSet::new(taxonomy, records, None, None).unwrap();

        let (f_id, f_ood) = build_folds_flat(&taxonomy_id, &ood, k, seed, false).unwrap();
        let rounds = assemble_rounds(&f_id, &f_ood).unwrap();
        prop_assert_eq!(rounds.len(), k);

        let mut tested: BTreeMap<String, usize> = BTreeMap::new();
        for round in &rounds {
            // disjoint train/test partitions per side
            prop_assert_eq!(round.train_id.len() + round.test_id.len(), taxonomy_id.len());
            prop_assert_eq!(round.train_ood.len() + round.test_ood.len(), ood.len());
            for id in round.test_id.iter().chain(&round.test_ood) {
                *tested.entry(id.clone()).or_insert(0) += 1;
            }
            // leakage safety: no OOD class on both sides of a round
            let class_of = |sample: &str| sample[..3].to_string();
            let train: BTreeSet<String> = round.train_ood.iter().map(|s| class_of(s)).collect();
            let test: BTreeSet<String> = round.test_ood.iter().map(|s| class_of(s)).collect();
            prop_assert!(train.is_disjoint(&test));
        }
        prop_assert_eq!(tested.len(), taxonomy_id.len() + ood.len());
        prop_assert!(tested.values().all(|&n| n == 1));
    }
}

// hierarchical selection: 2-level sets built inline
proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn id_ood_selection_honors_per_stratum_floor(
        strata in prop::collection::vec(1usize..9, 2..5),
        per_class in 1usize..4,
        p_percent in 0usize..=100,
        seed in any::<u64>(),
    ) {
        let p = p_percent as f64 / 100.0;
        let mut nodes = Vec::new();
        let mut records = Vec::new();
        for (si, &n_classes) in strata.iter().enumerate() {
            let stratum = format!("s{si}");
            nodes.push((0usize, stratum.clone(), None));
            for c in 0..n_classes {
                let class = format!("{stratum}.c{c}");
                nodes.push((1, class.clone(), Some(stratum.clone())));
                for i in 0..per_class {
                    records.push(SampleRecord::new(
                        format!("{class}#{i}"),
                        vec![stratum.clone(), class.clone()],
                    ));
                }
            }
        }
        let taxonomy = Arc::new(ClassTaxonomy::new(
            vec!["stratum".into(), "class".into()],
            nodes,
            1,
        ).unwrap());
        let set = SampleSet::new(taxonomy, records, None, None).unwrap();

        let (d_id, d_ood, _) = select_id_ood_split(&set, &SplitSpec { ood_fraction: p, seed }).unwrap();

        // per-stratum floor: each stratum contributes exactly floor(p * N_i)
        let id_classes = d_id.observed_classes(1);
        let ood_classes = d_ood.observed_classes(1);
        for (si, &n_classes) in strata.iter().enumerate() {
            let want = (p * n_classes as f64 + 1e-9).floor() as usize;
            let got = ood_classes.keys().filter(|c| c.starts_with(&format!("s{si}."))).count();
            prop_assert_eq!(got, want, "stratum {} with {} classes, p {}", si, n_classes, p);
        }

        // ID and OOD class sets form a partition
        let total: usize = strata.iter().sum();
        prop_assert_eq!(id_classes.len() + ood_classes.len(), total);
        prop_assert!(id_classes.keys().all(|c| !ood_classes.contains_key(*c)));
        prop_assert_eq!(d_id.len() + d_ood.len(), set.len());
    }
}

// ---------------------------------------------------------------------------
// metric invariants
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auroc_equals_brute_force_and_swaps(
        id in scores_strategy(40),
        ood in scores_strategy(40),
    ) {
        let t = ScoreTable::new(id.clone(), ood.clone()).unwrap();
        let fast = auroc(&t);
        prop_assert!((fast - auroc_brute(&t)).abs() < 1e-12);

        // swapping the roles mirrors the statistic
        let swapped = ScoreTable::new(ood, id).unwrap();
        prop_assert!((auroc(&swapped) - (1.0 - fast)).abs() < 1e-12);
    }

    #[test]
    fn auroc_is_invariant_under_monotone_transforms(
        id in scores_strategy(30),
        ood in scores_strategy(30),
        scale in 1u32..50,
        shift in -100i32..100,
    ) {
        let t = ScoreTable::new(id.clone(), ood.clone()).unwrap();
        let base = auroc(&t);

        let affine = |v: &f64| *v * scale as f64 + shift as f64;
        let t2 = ScoreTable::new(id.iter().map(affine).collect(), ood.iter().map(affine).collect()).unwrap();
        prop_assert!((auroc(&t2) - base).abs() < 1e-12);

        // a strictly increasing nonlinear map preserves order exactly
        let expish = |v: &f64| (*v / 25.0).exp();
        let t3 = ScoreTable::new(id.iter().map(expish).collect(), ood.iter().map(expish).collect()).unwrap();
        prop_assert!((auroc(&t3) - base).abs() < 1e-12);
    }

    #[test]
    fn all_metrics_stay_in_unit_interval(
        id in scores_strategy(40),
        ood in scores_strategy(40),
    ) {
        let t = ScoreTable::new(id, ood).unwrap();
        let report = evaluate(&t, &MetricParams::default()).unwrap();
        for kind in MetricKind::ALL {
            let v = report.get(kind);
            prop_assert!((0.0..=1.0).contains(&v), "{} = {}", kind, v);
        }
        prop_assert!(report.threshold.is_finite());
    }

    #[test]
    fn tpr_is_monotone_in_the_fpr_budget(
        id in scores_strategy(30),
        ood in scores_strategy(30),
    ) {
        let t = ScoreTable::new(id, ood).unwrap();
        let mut prev = 0.0;
        for cap in [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0] {
            let tpr = tpr_at_fpr(&t, cap).unwrap();
            prop_assert!(tpr + 1e-15 >= prev, "cap {}: {} < {}", cap, tpr, prev);
            prev = tpr;
        }
    }

    #[test]
    fn aupr_of_separated_tables_is_one(
        id in scores_strategy(20),
        ood_base in scores_strategy(20),
    ) {
        let id_max = id.iter().cloned().fold(f64::MIN, f64::max);
        let ood: Vec<f64> = ood_base.iter().map(|v| id_max + 1.0 + v.abs()).collect();
        let t = ScoreTable::new(id, ood).unwrap();
        prop_assert!((aupr(&t) - 1.0).abs() < 1e-12);
        prop_assert!((auroc(&t) - 1.0).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Mann-Whitney exact test vs full enumeration
// ---------------------------------------------------------------------------

fn enumerated_two_sided_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let total_n = pooled.len();
    let n = x.len();

    let u_of = |mask: u32| -> usize {
        let mut u = 0;
        for i in 0..total_n {
            if mask & (1 << i) == 0 {
                continue;
            }
            for j in 0..total_n {
                if mask & (1 << j) == 0 && pooled[i] > pooled[j] {
                    u += 1;
                }
            }
        }
        u
    };

    let observed = {
        // the observed assignment is the identity: first n entries are x
        let mask = (1u32 << n) - 1;
        u_of(mask)
    };

    let mut le = 0usize;
    let mut ge = 0usize;
    let mut total = 0usize;
    for mask in 0u32..(1 << total_n) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let u = u_of(mask);
        total += 1;
        if u <= observed {
            le += 1;
        }
        if u >= observed {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn exact_mwu_matches_enumeration(
        n in 1usize..5,
        m in 1usize..5,
        perm_seed in any::<u64>(),
    ) {
        // distinct values by construction, scrambled assignment
        let mut values: Vec<f64> = (0..n + m).map(|i| i as f64 * 1.7 + 0.3).collect();
        SplitMix64::new(perm_seed).shuffle(&mut values);
        let (x, y) = values.split_at(n);

        let got = mann_whitney_u(x, y, MwuMethod::Exact).unwrap();
        prop_assert!(got.used_exact);
        let want = enumerated_two_sided_p(x, y);
        prop_assert!((got.p - want).abs() < 1e-12, "p {} vs enumerated {}", got.p, want);
    }

    #[test]
    fn rank_and_location_tests_respect_affine_maps(
        x in prop::collection::vec(-100i32..100, 4..20),
        y in prop::collection::vec(-100i32..100, 4..20),
        scale in 1u32..40,
        shift in -50i32..50,
    ) {
        let fx: Vec<f64> = x.iter().map(|&v| v as f64 / 7.0).collect();
        let fy: Vec<f64> = y.iter().map(|&v| v as f64 / 7.0).collect();
        let map = |v: &f64| *v * scale as f64 + shift as f64;
        let gx: Vec<f64> = fx.iter().map(map).collect();
        let gy: Vec<f64> = fy.iter().map(map).collect();

        // ranks are untouched, so the MWU p is bit-identical
        let a = mann_whitney_u(&fx, &fy, MwuMethod::Auto).unwrap();
        let b = mann_whitney_u(&gx, &gy, MwuMethod::Auto).unwrap();
        prop_assert_eq!(a.p, b.p);

        // the t statistic is scale-free up to rounding
        let ta = t_test_pooled(&fx, &fy).unwrap();
        let tb = t_test_pooled(&gx, &gy).unwrap();
        prop_assert!((ta.p - tb.p).abs() < 1e-9, "{} vs {}", ta.p, tb.p);

        // Shapiro's W is affine-invariant too
        if fx.iter().any(|&v| v != fx[0]) {
            let wa = shapiro_wilk(&fx).unwrap();
            let wb = shapiro_wilk(&gx).unwrap();
            prop_assert!((wa.w - wb.w).abs() < 1e-9);
        }
    }
}
