//! Per-round metric computation: accuracy gain, consistency, data quality,
//! participation frequency, and the recovery signal.
//!
//! All metrics are normalized to [0, 1]. A small epsilon guards every
//! division; cosine similarity of near-zero vectors is defined as 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NodeId;

pub const EPSILON: f64 = 1e-12;

/// Dense real vector representing the global model or a per-node delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| v * c).collect())
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Held-out validation set owned by the coordinator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ValidationSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Mean squared error of `model` on the validation set.
pub fn validation_loss(model: &ModelVector, valset: &ValidationSet) -> Result<f64> {
    if valset.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let d = model.dim();
    let mut total = 0.0;
    for (x, y) in valset.inputs.iter().zip(&valset.targets) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let pred: f64 = x.iter().zip(&model.0).map(|(a, b)| a * b).sum();
        let r = pred - y;
        total += r * r;
    }
    Ok(total / valset.len() as f64)
}

/// Validation-loss improvement of applying `update` to `global`.
/// Positive means the update helps.
pub fn raw_gain(
    global: &ModelVector,
    update: &ModelVector,
    valset: &ValidationSet,
) -> Result<f64> {
    let candidate = global.add(update)?;
    Ok(validation_loss(global, valset)? - validation_loss(&candidate, valset)?)
}

/// Per-round accuracy normalization: positive part of each gain divided by
/// the best positive gain. All zeros when no node improved.
pub fn normalize_accuracy(gains: &BTreeMap<NodeId, f64>) -> Result<BTreeMap<NodeId, f64>> {
    if gains.is_empty() {
        return Err(Error::EmptyInput("gains"));
    }
    let best = gains.values().fold(0.0_f64, |m, &g| m.max(g.max(0.0)));
    Ok(gains
        .iter()
        .map(|(id, &g)| (id.clone(), g.max(0.0) / (best + EPSILON)))
        .collect())
}

/// Coordinate-wise unweighted median of the submitted updates; even counts
/// take the midpoint of the two central values.
pub fn reference_direction(updates: &[&ModelVector]) -> Result<ModelVector> {
    let first = updates.first().ok_or(Error::EmptyInput("updates"))?;
    let d = first.dim();
    for u in updates {
        if u.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: u.dim(),
            });
        }
    }
    let mut out = Vec::with_capacity(d);
    let mut col = Vec::with_capacity(updates.len());
    for k in 0..d {
        col.clear();
        col.extend(updates.iter().map(|u| u.0[k]));
        col.sort_by(f64::total_cmp);
        let n = col.len();
        let m = if n % 2 == 1 {
            col[n / 2]
        } else {
            (col[n / 2 - 1] + col[n / 2]) / 2.0
        };
        out.push(m);
    }
    Ok(ModelVector(out))
}

/// Clamped cosine similarity of an update against the round reference.
pub fn data_quality(update: &ModelVector, reference: &ModelVector) -> Result<f64> {
    if update.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: update.dim(),
        });
    }
    let nu = update.norm();
    let nr = reference.norm();
    if nu < EPSILON || nr < EPSILON {
        return Ok(0.0);
    }
    Ok((update.dot(reference) / (nu * nr)).clamp(0.0, 1.0))
}

/// Exponential smoothing of the per-round accept/reject outcome.
pub fn update_consistency(prev: f64, accepted: bool, rho: f64) -> f64 {
    (1.0 - rho) * prev + rho * if accepted { 1.0 } else { 0.0 }
}

/// Participation frequency over the trailing window.
///
/// `window` holds one `(eligible, submitted)` pair per recent round; when no
/// eligible rounds fall inside it, the previous value carries forward.
pub fn update_frequency(window: &[(bool, bool)], prev: f64) -> f64 {
    let eligible = window.iter().filter(|(e, _)| *e).count();
    if eligible == 0 {
        return prev;
    }
    let submitted = window.iter().filter(|(e, s)| *e && *s).count();
    submitted as f64 / eligible as f64
}

/// Normalized recent-improvement signal feeding trust recovery: the positive
/// part of the current utility minus the mean of up to the last three
/// utilities. Zero when there is no prior history.
pub fn recovery_signal(prev_utilities: &[f64], current: f64) -> f64 {
    if prev_utilities.is_empty() {
        return 0.0;
    }
    let k = prev_utilities.len().min(3);
    let tail = &prev_utilities[prev_utilities.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    (current - mean).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vs(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> ValidationSet {
        ValidationSet { inputs, targets }
    }

    #[test]
    fn loss_exact_fit_is_zero() {
        let w = ModelVector(vec![2.0, -1.0]);
        let set = vs(vec![vec![1.0, 0.0], vec![0.0, 3.0]], vec![2.0, -3.0]);
        assert_eq!(validation_loss(&w, &set).unwrap(), 0.0);
    }

    #[test]
    fn loss_zero_model_zero_targets() {
        let w = ModelVector(vec![0.0]);
        let set = vs(vec![vec![5.0], vec![-2.0]], vec![0.0, 0.0]);
        assert_eq!(validation_loss(&w, &set).unwrap(), 0.0);
    }

    #[test]
    fn loss_hand_computed() {
        let w = ModelVector(vec![1.0]);
        let set = vs(vec![vec![1.0], vec![2.0]], vec![0.0, 0.0]);
        assert!((validation_loss(&w, &set).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn loss_dimension_mismatch() {
        let w = ModelVector(vec![1.0, 2.0]);
        let set = vs(vec![vec![1.0]], vec![0.0]);
        assert!(validation_loss(&w, &set).is_err());
    }

    #[test]
    fn gain_of_zero_update_is_zero() {
        let g = ModelVector(vec![0.3, -0.7]);
        let set = vs(vec![vec![1.0, 1.0], vec![2.0, -1.0]], vec![1.0, 0.5]);
        let z = ModelVector::zeros(2);
        assert_eq!(raw_gain(&g, &z, &set).unwrap(), 0.0);
    }

    #[test]
    fn gain_matches_two_loss_calls() {
        let g = ModelVector(vec![0.9]);
        let u = ModelVector(vec![0.05]);
        let set = vs(vec![vec![1.0], vec![2.0], vec![-1.0]], vec![1.0, 2.0, -1.0]);
        let direct = raw_gain(&g, &u, &set).unwrap();
        let oracle =
            validation_loss(&g, &set).unwrap() - validation_loss(&g.add(&u).unwrap(), &set).unwrap();
        assert!((direct - oracle).abs() < 1e-15);
    }

    #[test]
    fn regressing_fitted_model_to_origin_worsens() {
        let g = ModelVector(vec![1.0]);
        let set = vs(vec![vec![1.0], vec![2.0]], vec![1.0, 2.0]);
        let neg = g.scale(-1.0);
        assert!(raw_gain(&g, &neg, &set).unwrap() < 0.0);
    }

    fn gains(pairs: &[(&str, f64)]) -> BTreeMap<NodeId, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn accuracy_single_node_self_normalizes() {
        let a = normalize_accuracy(&gains(&[("n", 0.5)])).unwrap();
        assert!((a["n"] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_all_negative_is_zero() {
        let a = normalize_accuracy(&gains(&[("a", -0.1), ("b", -2.0)])).unwrap();
        assert_eq!(a["a"], 0.0);
        assert_eq!(a["b"], 0.0);
    }

    #[test]
    fn accuracy_hand_example() {
        let a = normalize_accuracy(&gains(&[("a", 0.4), ("b", 0.2), ("c", -0.1)])).unwrap();
        assert!((a["a"] - 1.0).abs() < 1e-9);
        assert!((a["b"] - 0.5).abs() < 1e-9);
        assert!((a["c"] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_empty_rejected() {
        assert!(normalize_accuracy(&BTreeMap::new()).is_err());
    }

    #[test]
    fn reference_single_is_itself() {
        let u = ModelVector(vec![1.0, -3.0]);
        assert_eq!(reference_direction(&[&u]).unwrap(), u);
    }

    #[test]
    fn reference_median_by_sorting() {
        let a = ModelVector(vec![0.0]);
        let b = ModelVector(vec![0.0]);
        let c = ModelVector(vec![9.0]);
        assert_eq!(reference_direction(&[&a, &b, &c]).unwrap().0, vec![0.0]);
    }

    #[test]
    fn reference_even_count_midpoint() {
        let a = ModelVector(vec![-1.0]);
        let b = ModelVector(vec![1.0]);
        assert_eq!(reference_direction(&[&a, &b]).unwrap().0, vec![0.0]);
    }

    #[test]
    fn quality_self_similarity() {
        let u = ModelVector(vec![0.3, 0.4]);
        assert!((data_quality(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quality_negated_clamps_to_zero() {
        let u = ModelVector(vec![0.3, 0.4]);
        assert_eq!(data_quality(&u.scale(-1.0), &u).unwrap(), 0.0);
    }

    #[test]
    fn quality_orthogonal_is_zero() {
        let u = ModelVector(vec![1.0, 0.0]);
        let r = ModelVector(vec![0.0, 1.0]);
        assert!(data_quality(&u, &r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quality_zero_vector_is_zero() {
        let z = ModelVector::zeros(2);
        let r = ModelVector(vec![1.0, 1.0]);
        assert_eq!(data_quality(&z, &r).unwrap(), 0.0);
    }

    #[test]
    fn consistency_examples() {
        assert!((update_consistency(1.0, true, 0.3) - 1.0).abs() < 1e-12);
        assert!((update_consistency(0.5, true, 0.3) - 0.65).abs() < 1e-12);
        assert!((update_consistency(0.5, false, 0.3) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn frequency_examples() {
        let full = vec![(true, true); 5];
        assert_eq!(update_frequency(&full, 1.0), 1.0);
        let mut partial = vec![(true, false); 3];
        partial.push((true, true));
        assert_eq!(update_frequency(&partial, 1.0), 0.25);
        let idle = vec![(false, false); 4];
        assert_eq!(update_frequency(&idle, 0.7), 0.7);
    }

    #[test]
    fn recovery_signal_examples() {
        assert_eq!(recovery_signal(&[], 0.9), 0.0);
        assert_eq!(recovery_signal(&[0.4, 0.4], 0.4), 0.0);
        assert!((recovery_signal(&[0.1, 0.1, 0.1], 0.9) - 0.8).abs() < 1e-12);
        // only the last three count
        assert!((recovery_signal(&[0.9, 0.1, 0.1, 0.1], 0.9) - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn quality_is_scale_invariant(
            u in proptest::collection::vec(-10.0..10.0f64, 3),
            r in proptest::collection::vec(-10.0..10.0f64, 3),
            c in 0.01..100.0f64,
        ) {
            let u = ModelVector(u);
            let r = ModelVector(r);
            let d1 = data_quality(&u, &r).unwrap();
            let d2 = data_quality(&u.scale(c), &r).unwrap();
            // both sides may snap to zero when a norm crosses the epsilon guard
            if u.norm() >= 1e-6 && (u.norm() * c) >= 1e-6 {
                prop_assert!((d1 - d2).abs() < 1e-9);
            }
        }

        #[test]
        fn reference_within_coordinate_bounds(
            rows in proptest::collection::vec(
                proptest::collection::vec(-5.0..5.0f64, 4), 1..8),
        ) {
            let vecs: Vec<ModelVector> = rows.into_iter().map(ModelVector).collect();
            let refs: Vec<&ModelVector> = vecs.iter().collect();
            let med = reference_direction(&refs).unwrap();
            for k in 0..4 {
                let lo = vecs.iter().map(|v| v.0[k]).fold(f64::INFINITY, f64::min);
                let hi = vecs.iter().map(|v| v.0[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(med.0[k] >= lo - 1e-12 && med.0[k] <= hi + 1e-12);
            }
        }

        #[test]
        fn accuracy_preserves_positive_ranking(
            gs in proptest::collection::vec(-1.0..1.0f64, 2..6),
        ) {
            let m: BTreeMap<NodeId, f64> = gs.iter().enumerate()
                .map(|(i, g)| (format!("n{i}"), *g)).collect();
            let a = normalize_accuracy(&m).unwrap();
            for (i1, g1) in &m {
                for (i2, g2) in &m {
                    if *g1 > 0.0 && *g2 > 0.0 && g1 > g2 {
                        prop_assert!(a[i1] >= a[i2]);
                    }
                    prop_assert!(a[i1] >= 0.0 && a[i1] <= 1.0);
                    let _ = i2;
                }
            }
        }
    }
}
