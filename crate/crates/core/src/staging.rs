//! Patient staging along a fitted event ordering.
//!
//! A subject's stage distribution assigns each stage `k` the product of the
//! first `k` ordered event posteriors and the complements of the rest. The
//! continuous stage is the stage-weighted mean of per-event center values,
//! with stage zero contributing no event. Event centers themselves are
//! estimated from the cohort by a provisional staging pass followed by
//! isotonic regression along the ordering.

use crate::datamodel::{check_permutation, PosteriorMatrix};
use crate::scalar::Real;

/// Posteriors are clamped to this distance from 0 and 1 before products are
/// taken, so no stage weight is exactly zero.
const POSTERIOR_CLAMP: f64 = 1e-12;

/// Unnormalized stage weights of one subject; entry `k` covers the state
/// "exactly the first `k` ordered events have occurred".
#[derive(Debug, Clone, PartialEq)]
pub struct StageDistribution<F: Real = f64> {
    pub weights: Vec<F>,
}

impl<F: Real> StageDistribution<F> {
    /// Number of events behind the distribution.
    pub fn n_events(&self) -> usize {
        self.weights.len() - 1
    }

    /// Weights scaled to sum to one.
    pub fn normalized(&self) -> Vec<F> {
        let total: F = self.weights.iter().copied().sum();
        self.weights.iter().map(|&w| w / total).collect()
    }

    /// Most probable stage, earliest on ties.
    pub fn map_stage(&self) -> usize {
        let mut best = 0;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = k;
            }
        }
        best
    }
}

fn clamped<F: Real>(p: F) -> F {
    let eps = F::of(POSTERIOR_CLAMP);
    p.max(eps).min(F::one() - eps)
}

/// Stage weights of one subject under an event ordering.
pub fn stage_weights<F: Real>(order: &[usize], posteriors: &[F]) -> StageDistribution<F> {
    assert_eq!(
        order.len(),
        posteriors.len(),
        "ordering and posteriors disagree on the number of events"
    );
    check_permutation(order).expect("order must be a permutation");
    let n = order.len();
    let mut suffix = vec![F::one(); n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] * (F::one() - clamped(posteriors[order[k]]));
    }
    let mut weights = Vec::with_capacity(n + 1);
    let mut prefix = F::one();
    weights.push(suffix[0]);
    for k in 0..n {
        prefix *= clamped(posteriors[order[k]]);
        weights.push(prefix * suffix[k + 1]);
    }
    StageDistribution { weights }
}

/// Continuous stage of one subject: the stage-weighted mean of the centers
/// of the events that have occurred, with stage zero contributing zero.
///
/// `centers` is indexed by event and must hold values in [0, 1].
pub fn patient_stage<F: Real>(order: &[usize], centers: &[F], posteriors: &[F]) -> F {
    assert_eq!(
        centers.len(),
        order.len(),
        "need exactly one center per event"
    );
    let dist = stage_weights(order, posteriors);
    let total: F = dist.weights.iter().copied().sum();
    let mut acc = F::zero();
    for k in 1..dist.weights.len() {
        acc += centers[order[k - 1]] * dist.weights[k];
    }
    acc / total
}

/// Estimates per-event center values from the cohort.
///
/// Events get provisional centers uniformly spaced along the ordering,
/// subjects get provisional stages from those, and each event's center
/// becomes the responsibility-weighted mean stage of the subjects at its
/// position, using per-subject normalized stage weights. Isotonic
/// regression along the ordering and a clamp to [0, 1] make the result a
/// valid center vector.
pub fn estimate_event_centers<F: Real>(
    order: &[usize],
    posteriors: &PosteriorMatrix<F>,
) -> Vec<F> {
    let n = order.len();
    assert_eq!(
        n,
        posteriors.n_events(),
        "ordering does not match the event count"
    );
    check_permutation(order).expect("order must be a permutation");
    let m = posteriors.n_subjects();
    let mut provisional = vec![F::zero(); n];
    for (k, &e) in order.iter().enumerate() {
        provisional[e] = F::of_usize(k + 1) / F::of_usize(n + 1);
    }

    // Responsibility-weighted mean provisional stage per position.
    let mut weighted_stage = vec![F::zero(); n];
    let mut responsibility = vec![F::zero(); n];
    for j in 0..m {
        let row = posteriors.subject(j);
        let row = row.as_slice().expect("posterior rows are contiguous");
        let dist = stage_weights(order, row);
        let total: F = dist.weights.iter().copied().sum();
        let stage = patient_stage(order, &provisional, row);
        for k in 1..=n {
            let r = dist.weights[k] / total;
            weighted_stage[k - 1] += r * stage;
            responsibility[k - 1] += r;
        }
    }
    let mut centers_by_position: Vec<F> = (0..n)
        .map(|k| {
            if responsibility[k] > F::zero() {
                weighted_stage[k] / responsibility[k]
            } else {
                provisional[order[k]]
            }
        })
        .collect();
    isotonic_non_decreasing(&mut centers_by_position);

    let mut centers = vec![F::zero(); n];
    for (k, &e) in order.iter().enumerate() {
        centers[e] = centers_by_position[k].max(F::zero()).min(F::one());
    }
    centers
}

/// Pool-adjacent-violators with equal weights, in place.
fn isotonic_non_decreasing<F: Real>(values: &mut [F]) {
    let n = values.len();
    // Blocks of (mean, count), merged while the tail violates monotonicity.
    let mut means: Vec<F> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for k in 0..n {
        means.push(values[k]);
        counts.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, c2) = (means.pop().unwrap(), counts.pop().unwrap());
            let last = means.len() - 1;
            let c1 = counts[last];
            means[last] = (means[last] * F::of_usize(c1) + m2 * F::of_usize(c2))
                / F::of_usize(c1 + c2);
            counts[last] = c1 + c2;
        }
    }
    let mut k = 0;
    for (mean, count) in means.into_iter().zip(counts) {
        for _ in 0..count {
            values[k] = mean;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    #[test]
    fn stage_weights_reference_values() {
        let dist = stage_weights(&[0, 1], &[0.8, 0.3]);
        assert_abs_diff_eq!(dist.weights[0], 0.14, epsilon = 1e-9);
        assert_abs_diff_eq!(dist.weights[1], 0.56, epsilon = 1e-9);
        assert_abs_diff_eq!(dist.weights[2], 0.24, epsilon = 1e-9);
        let total: f64 = dist.weights.iter().sum();
        assert_abs_diff_eq!(total, 0.94, epsilon = 1e-9);
        assert_eq!(dist.map_stage(), 1);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let dist = stage_weights(&[1, 0, 2], &[0.2, 0.9, 0.5]);
        let normalized = dist.normalized();
        assert_abs_diff_eq!(normalized.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let total: f64 = dist.weights.iter().sum();
        for (raw, norm) in dist.weights.iter().zip(&normalized) {
            assert_abs_diff_eq!(*norm, raw / total, epsilon = 1e-15);
        }
        assert_eq!(dist.n_events(), 3);
    }

    #[test]
    fn extreme_posteriors_stay_positive() {
        let dist = stage_weights(&[0, 1], &[1.0, 0.0]);
        assert!(dist.weights.iter().all(|&w| w > 0.0));
        assert_eq!(dist.map_stage(), 1);
    }

    #[test]
    fn patient_stage_reference_value() {
        // Weights (0.14, 0.56, 0.24) against centers 0.3 and 0.9 along the
        // ordering: (0.3 * 0.56 + 0.9 * 0.24) / 0.94.
        let stage = patient_stage(&[0, 1], &[0.3, 0.9], &[0.8, 0.3]);
        assert_abs_diff_eq!(stage, 0.4085106382978723, epsilon = 1e-9);
    }

    #[test]
    fn stage_zero_contributes_nothing() {
        // All posteriors near zero: stage weight mass sits at stage 0 and
        // the continuous stage approaches 0.
        let stage = patient_stage(&[0, 1, 2], &[0.25, 0.5, 0.75], &[1e-9, 1e-9, 1e-9]);
        assert!(stage < 1e-6);
        // All posteriors near one: the stage approaches the last center.
        let late = patient_stage(
            &[0, 1, 2],
            &[0.25, 0.5, 0.75],
            &[1.0 - 1e-9, 1.0 - 1e-9, 1.0 - 1e-9],
        );
        assert_abs_diff_eq!(late, 0.75, epsilon = 1e-5);
    }

    #[test]
    fn stage_is_monotone_over_a_staircase() {
        let order = [0, 1, 2, 3];
        let centers = [0.2, 0.4, 0.6, 0.8];
        let mut prev = -1.0;
        for stage in 0..=4usize {
            let p: Vec<f64> = (0..4)
                .map(|e| if e < stage { 0.95 } else { 0.05 })
                .collect();
            let s = patient_stage(&order, &centers, &p);
            assert!(s > prev, "stage {stage}: {s} <= {prev}");
            assert!((0.0..=1.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn isotonic_regression_pools_violators() {
        let mut v = vec![3.0, 1.0, 2.0];
        isotonic_non_decreasing(&mut v);
        assert_eq!(v, vec![2.0, 2.0, 2.0]);

        let mut v = vec![1.0, 2.0, 2.0, 1.5];
        isotonic_non_decreasing(&mut v);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        for x in &v[1..] {
            assert_abs_diff_eq!(*x, 5.5 / 3.0, epsilon = 1e-12);
        }

        let mut sorted = vec![0.1, 0.2, 0.5];
        isotonic_non_decreasing(&mut sorted);
        assert_eq!(sorted, vec![0.1, 0.2, 0.5]);
    }

    #[test]
    fn estimated_centers_are_monotone_and_bounded() {
        // Staircase cohort: stage k subjects have the first k events.
        let n = 5;
        let mut rows = Vec::new();
        for stage in 0..=n {
            for _ in 0..4 {
                rows.extend((0..n).map(|e| if e < stage { 0.92 } else { 0.08 }));
            }
        }
        let m = rows.len() / n;
        let p = PosteriorMatrix::new(Array2::from_shape_vec((m, n), rows).unwrap()).unwrap();
        let order = [0, 1, 2, 3, 4];
        let centers = estimate_event_centers(&order, &p);
        for w in order.windows(2) {
            assert!(centers[w[0]] <= centers[w[1]]);
        }
        assert!(centers.iter().all(|c| (0.0..=1.0).contains(c)));
        // Later events should sit later on the timeline by a clear margin.
        assert!(centers[4] - centers[0] > 0.2);
    }

    #[test]
    fn centers_follow_the_ordering_not_event_indices() {
        let n = 3;
        let order = [2, 0, 1];
        let mut rows = Vec::new();
        for stage in 0..=n {
            for _ in 0..5 {
                rows.extend((0..n).map(|e| {
                    let position = order.iter().position(|&o| o == e).unwrap();
                    if position < stage {
                        0.9
                    } else {
                        0.1
                    }
                }));
            }
        }
        let m = rows.len() / n;
        let p = PosteriorMatrix::new(Array2::from_shape_vec((m, n), rows).unwrap()).unwrap();
        let centers = estimate_event_centers(&order, &p);
        assert!(centers[2] <= centers[0]);
        assert!(centers[0] <= centers[1]);
    }
}
