//! Property tests for the contracts that hold on every input, not just the
//! seeded fixtures: probability bounds, permutation identities, and metric
//! algebra.

use proptest::prelude::*;

use ebmkit::eval::{auc, kendall_distance_normalized};
use ebmkit::gmm::{posterior, BiomarkerMixture};
use ebmkit::ordering::{ebm_log_likelihood, prob_kendall_distance, subject_ordering};
use ebmkit::simbiote::softplus;
use ebmkit::ssvm::PlattCalibration;
use ebmkit::staging::{patient_stage, stage_weights};
use ebmkit::PosteriorMatrix;

fn posterior_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..8)
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn subject_ordering_is_a_permutation(p in posterior_row()) {
        let mut order = subject_ordering(&p);
        order.sort_unstable();
        prop_assert_eq!(order, (0..p.len()).collect::<Vec<_>>());
    }

    #[test]
    fn own_ordering_has_zero_distance(p in posterior_row()) {
        let order = subject_ordering(&p);
        prop_assert!(prob_kendall_distance(&order, &p).abs() <= 1e-12);
    }

    #[test]
    fn kendall_distance_is_bounded_by_total_pair_weight(
        p in posterior_row().prop_flat_map(|p| (permutation(p.len()), Just(p)))
    ) {
        let (order, p) = p;
        let d = prob_kendall_distance(&order, &p);
        let mut total = 0.0;
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                total += (p[a] - p[b]).abs();
            }
        }
        prop_assert!(d >= 0.0);
        prop_assert!(d <= total + 1e-12, "distance {} exceeds pair weight {}", d, total);
    }

    #[test]
    fn normalized_kendall_is_a_bounded_symmetric_metric(
        perms in (2usize..8).prop_flat_map(|n| (permutation(n), permutation(n)))
    ) {
        let (a, b) = perms;
        let d_ab = kendall_distance_normalized(&a, &b);
        let d_ba = kendall_distance_normalized(&b, &a);
        prop_assert!((0.0..=1.0).contains(&d_ab));
        prop_assert_eq!(d_ab, d_ba);
        prop_assert_eq!(kendall_distance_normalized(&a, &a), 0.0);
    }

    #[test]
    fn ebm_log_likelihood_is_finite_and_nonpositive(
        rows in prop::collection::vec(posterior_row(), 1..6),
        seed in any::<u64>(),
    ) {
        // Rows are trimmed to a common width so they form a matrix.
        let n = rows.iter().map(Vec::len).min().unwrap();
        let m = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r[..n].iter().copied()).collect();
        let p = PosteriorMatrix::new(ndarray::Array2::from_shape_vec((m, n), flat).unwrap())
            .unwrap();
        // An arbitrary but valid ordering derived from the seed.
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((seed as usize) % n.max(1));
        let ll = ebm_log_likelihood(&order, &p);
        prop_assert!(ll.is_finite());
        prop_assert!(ll <= 1e-12, "log-likelihood {} above zero", ll);
    }

    #[test]
    fn stage_weights_stay_positive_and_normalize(
        p in posterior_row().prop_flat_map(|p| (permutation(p.len()), Just(p)))
    ) {
        let (order, p) = p;
        let dist = stage_weights(&order, &p);
        prop_assert_eq!(dist.weights.len(), p.len() + 1);
        prop_assert!(dist.weights.iter().all(|&w| w > 0.0));
        let normalized = dist.normalized();
        let total: f64 = normalized.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "normalized sum {}", total);
        prop_assert!(dist.map_stage() <= p.len());
    }

    #[test]
    fn patient_stage_stays_on_the_timeline(
        p in posterior_row().prop_flat_map(|p| {
            let n = p.len();
            (permutation(n), prop::collection::vec(0.0..=1.0f64, n..=n), Just(p))
        })
    ) {
        let (order, mut centers, p) = p;
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let stage = patient_stage(&order, &centers, &p);
        prop_assert!((0.0..=1.0).contains(&stage), "stage {}", stage);
    }

    #[test]
    fn mixture_posterior_is_a_probability(
        x in -10.0..10.0f64,
        mu_n in -5.0..5.0f64,
        mu_a in -5.0..5.0f64,
        sd_n in 0.1..3.0f64,
        sd_a in 0.1..3.0f64,
        pi in 0.01..0.99f64,
    ) {
        let mix = BiomarkerMixture {
            mu_normal: mu_n,
            sd_normal: sd_n,
            mu_abnormal: mu_a,
            sd_abnormal: sd_a,
            pi_abnormal: pi,
        };
        let p = posterior(x, &mix);
        prop_assert!((0.0..=1.0).contains(&p), "posterior {}", p);
    }

    #[test]
    fn platt_probability_is_bounded_and_monotone(
        slope in -20.0..=0.0f64,
        intercept in -10.0..10.0f64,
        d1 in -50.0..50.0f64,
        d2 in -50.0..50.0f64,
    ) {
        let cal = PlattCalibration { slope, intercept };
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (p_lo, p_hi) = (cal.probability(lo), cal.probability(hi));
        prop_assert!((0.0..=1.0).contains(&p_lo));
        prop_assert!((0.0..=1.0).contains(&p_hi));
        // Nonpositive slope makes the probability nondecreasing in d.
        prop_assert!(p_lo <= p_hi + 1e-15);
    }

    #[test]
    fn auc_complement_identity_holds_under_ties(
        neg in prop::collection::vec(0u8..10, 1..30),
        pos in prop::collection::vec(0u8..10, 1..30),
    ) {
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let forward = auc(&neg, &pos).unwrap();
        let backward = auc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&forward));
        prop_assert!((forward + backward - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softplus_dominates_its_asymptotes(x in -500.0..500.0f64, y in -500.0..500.0f64) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(softplus(lo) >= 0.0);
        prop_assert!(softplus(lo) >= lo);
        prop_assert!(softplus(lo) <= softplus(hi) + 1e-12);
    }
}
