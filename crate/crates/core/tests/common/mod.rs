//! Strategies and property bodies shared by the property and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use tdgan::data::{absent_support, mixture_weights, new_support, LabelId, LabelStore};

pub fn counts() -> impl Strategy<Value = BTreeMap<LabelId, u64>> {
    prop::collection::btree_map((0usize..12).prop_map(LabelId), 0u64..500, 1..8)
        .prop_filter("needs a positive count", |m| m.values().any(|&c| c > 0))
}

pub fn stores() -> impl Strategy<Value = LabelStore> {
    prop::option::of(counts()).prop_map(|c| c.map(LabelStore::from_counts).unwrap_or_default())
}

pub fn sizes() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..10_000, 1..6)
}

/// Merging equals the `(1 − α) s_old + α g_new` mixture with `α = n_new / (N_old + n_new)`.
pub fn merge_matches_alpha_mixture(old: &LabelStore, new: &BTreeMap<LabelId, u64>) -> Result<(), TestCaseError> {
    let before = old.distribution();
    let n_new: u64 = new.values().sum();
    let g: BTreeMap<LabelId, f64> = new.iter().map(|(&y, &c)| (y, c as f64 / n_new as f64)).collect();
    let (merged, alpha) = old.merged(new).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((alpha - n_new as f64 / (old.total() + n_new) as f64).abs() < 1e-15);
    if old.is_empty() {
        prop_assert_eq!(alpha, 1.0);
    }
    let labels: BTreeSet<LabelId> = before.keys().chain(g.keys()).copied().collect();
    for y in labels {
        let mix = (1.0 - alpha) * before.get(&y).copied().unwrap_or(0.0) + alpha * g.get(&y).copied().unwrap_or(0.0);
        prop_assert!((merged.probability(y) - mix).abs() < 1e-12, "{y}: {} vs {mix}", merged.probability(y));
    }
    Ok(())
}

pub fn distributions_normalize(store: &LabelStore, sizes: &[u64]) -> Result<(), TestCaseError> {
    if !store.is_empty() {
        let total: f64 = store.distribution().values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
    let pi = mixture_weights(sizes).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    prop_assert!(pi.iter().all(|&p| p > 0.0));
    Ok(())
}

pub fn support_only_grows(old: &LabelStore, new: &BTreeMap<LabelId, u64>) -> Result<(), TestCaseError> {
    let current: BTreeSet<LabelId> = new.iter().filter(|(_, &c)| c > 0).map(|(&y, _)| y).collect();
    let (merged, _) = old.merged(new).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(old.support().is_subset(&merged.support()));
    prop_assert!(current.is_subset(&merged.support()));
    let fresh = new_support(old, &current);
    let absent = absent_support(old, &current);
    prop_assert!(fresh.is_disjoint(&old.support()));
    prop_assert!(absent.is_disjoint(&current));
    let rebuilt: BTreeSet<LabelId> = old.support().union(&fresh).copied().collect();
    prop_assert_eq!(rebuilt, merged.support());
    Ok(())
}
