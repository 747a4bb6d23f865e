//! Event ordering estimation.
//!
//! Two routes to a central event ordering. The discriminative route sorts
//! each subject's events by descending posterior, scores a candidate central
//! ordering by the probabilistic Kendall distance summed over subjects, and
//! minimizes that objective. The classic route maximizes the event-based
//! model likelihood, which marginalizes each subject over all stages under a
//! uniform stage prior.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::datamodel::{check_permutation, PosteriorMatrix};
use crate::rng::{stream, substream};
use crate::scalar::Real;

/// Exhaustive subset dynamic programming is used up to this many events;
/// beyond it the search falls back to a seeded heuristic.
const EXACT_LIMIT: usize = 18;

/// Log floor that keeps degenerate subjects from collapsing the likelihood.
const LOG_FLOOR: f64 = 1e-300;

/// Events of one subject sorted by descending posterior, ties by index.
pub fn subject_ordering<F: Real>(posteriors: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..posteriors.len()).collect();
    order.sort_by(|&a, &b| {
        posteriors[b]
            .partial_cmp(&posteriors[a])
            .expect("posteriors are finite")
            .then(a.cmp(&b))
    });
    order
}

/// Probabilistic Kendall distance between a central ordering and one
/// subject's posteriors.
///
/// Every event pair the subject orders differently from the central ordering
/// contributes the absolute posterior difference, so confidently mis-ordered
/// pairs cost more than coin flips.
pub fn prob_kendall_distance<F: Real>(order: &[usize], posteriors: &[F]) -> F {
    assert_eq!(
        order.len(),
        posteriors.len(),
        "ordering and posteriors disagree on the number of events"
    );
    check_permutation(order).expect("order must be a permutation");
    let mut dist = F::zero();
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            // Central ordering puts a before b; the subject disagrees when
            // the posterior for b is strictly larger.
            if posteriors[b] > posteriors[a] {
                dist += posteriors[b] - posteriors[a];
            }
        }
    }
    dist
}

/// A central ordering with its summed distance objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralOrderingFit<F: Real = f64> {
    pub order: Vec<usize>,
    pub objective: F,
}

/// Minimizes the summed probabilistic Kendall distance over orderings.
///
/// The objective decomposes over ordered pairs, so a pairwise cost matrix is
/// accumulated once and the minimum is found by dynamic programming over
/// event subsets, which is exact, up to [`EXACT_LIMIT`] events. Beyond that
/// a mean-posterior start refined by steepest-descent pair swaps is used,
/// which is a local minimum under adjacent transpositions but carries no
/// global guarantee.
pub fn central_ordering<F: Real>(posteriors: &PosteriorMatrix<F>) -> CentralOrderingFit<F> {
    let n = posteriors.n_events();
    if n == 0 {
        return CentralOrderingFit {
            order: Vec::new(),
            objective: F::zero(),
        };
    }
    // cost[a][b]: total cost of placing a anywhere before b.
    let mut cost = Array2::zeros((n, n));
    for j in 0..posteriors.n_subjects() {
        let row = posteriors.subject(j);
        for a in 0..n {
            for b in 0..n {
                if row[b] > row[a] {
                    cost[(a, b)] += row[b] - row[a];
                }
            }
        }
    }
    let order = if n <= EXACT_LIMIT {
        exact_min_ordering(&cost, n)
    } else {
        heuristic_min_ordering(posteriors, &cost, n)
    };
    let objective = pairwise_objective(&order, &cost);
    CentralOrderingFit { order, objective }
}

fn pairwise_objective<F: Real>(order: &[usize], cost: &Array2<F>) -> F {
    let mut total = F::zero();
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            total += cost[(a, b)];
        }
    }
    total
}

/// Held-Karp style scan: `dp[mask]` is the minimal cost of placing `mask` as
/// the prefix of the ordering. Appending event `e` adds the cost of `e`
/// against everything still unplaced.
fn exact_min_ordering<F: Real>(cost: &Array2<F>, n: usize) -> Vec<usize> {
    let full = 1usize << n;
    let totals: Vec<F> = (0..n).map(|e| (0..n).map(|f| cost[(e, f)]).sum()).collect();
    let mut dp = vec![F::infinity(); full];
    let mut parent = vec![usize::MAX; full];
    dp[0] = F::zero();
    for mask in 0..full {
        if dp[mask] == F::infinity() {
            continue;
        }
        for e in 0..n {
            if mask & (1 << e) != 0 {
                continue;
            }
            // Cost of e against events after it: all unplaced except e.
            let mut add = totals[e] - cost[(e, e)];
            let mut placed = mask;
            while placed != 0 {
                let f = placed.trailing_zeros() as usize;
                placed &= placed - 1;
                add -= cost[(e, f)];
            }
            let next = mask | (1 << e);
            let candidate = dp[mask] + add;
            if candidate < dp[next] {
                dp[next] = candidate;
                parent[next] = e;
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full - 1;
    while mask != 0 {
        let e = parent[mask];
        order.push(e);
        mask &= !(1 << e);
    }
    order.reverse();
    order
}

fn heuristic_min_ordering<F: Real>(
    posteriors: &PosteriorMatrix<F>,
    cost: &Array2<F>,
    n: usize,
) -> Vec<usize> {
    // Events with higher mean posterior tend to happen earlier.
    let m = F::of_usize(posteriors.n_subjects());
    let means: Vec<F> = (0..n)
        .map(|e| {
            (0..posteriors.n_subjects())
                .map(|j| posteriors.get(j, e))
                .sum::<F>()
                / m
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .partial_cmp(&means[a])
            .expect("posterior means are finite")
            .then(a.cmp(&b))
    });
    let mut best = pairwise_objective(&order, cost);
    loop {
        let mut improved = false;
        let mut swap = (0, 0);
        let mut swap_objective = best;
        for i in 0..n {
            for j in i + 1..n {
                order.swap(i, j);
                let candidate = pairwise_objective(&order, cost);
                order.swap(i, j);
                if candidate < swap_objective {
                    swap_objective = candidate;
                    swap = (i, j);
                    improved = true;
                }
            }
        }
        if !improved {
            return order;
        }
        order.swap(swap.0, swap.1);
        best = swap_objective;
    }
}

/// Stage-marginalized log-likelihood of the data under an event ordering,
/// with a uniform prior over the `N + 1` stages.
pub fn ebm_log_likelihood<F: Real>(order: &[usize], posteriors: &PosteriorMatrix<F>) -> F {
    let n = posteriors.n_events();
    assert_eq!(order.len(), n, "ordering does not match the event count");
    check_permutation(order).expect("order must be a permutation");
    let stages = F::of_usize(n + 1);
    let floor = F::of(LOG_FLOOR);
    let mut total = F::zero();
    let mut suffix = vec![F::one(); n + 1];
    for j in 0..posteriors.n_subjects() {
        let row = posteriors.subject(j);
        // suffix[k] = prod_{i >= k} (1 - p at position i)
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] * (F::one() - row[order[k]]);
        }
        let mut prefix = F::one();
        let mut likelihood = suffix[0];
        for k in 0..n {
            prefix *= row[order[k]];
            likelihood += prefix * suffix[k + 1];
        }
        total += (likelihood / stages).max(floor).ln();
    }
    total
}

/// A maximum-likelihood ordering with its log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct EbmFit<F: Real = f64> {
    pub order: Vec<usize>,
    pub log_likelihood: F,
}

/// Greedy ascent on [`ebm_log_likelihood`] over pairwise swaps, from
/// `restarts` seeded random starting permutations.
///
/// Each restart applies the best improving swap until none exists, so every
/// restart ends in a local maximum under adjacent and general transpositions;
/// the best restart wins, with earlier restarts keeping ties.
pub fn fit_ebm<F: Real>(
    posteriors: &PosteriorMatrix<F>,
    restarts: usize,
    seed: u64,
) -> EbmFit<F> {
    assert!(restarts > 0, "need at least one restart");
    let n = posteriors.n_events();
    let mut best_order: Vec<usize> = (0..n).collect();
    let mut best_ll = F::neg_infinity();
    for r in 0..restarts {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(seed, &[stream::EBM_RESTART, r as u64]));
        let mut ll = ebm_log_likelihood(&order, posteriors);
        loop {
            let mut improved = false;
            let mut swap = (0, 0);
            let mut swap_ll = ll;
            for i in 0..n {
                for j in i + 1..n {
                    order.swap(i, j);
                    let candidate = ebm_log_likelihood(&order, posteriors);
                    order.swap(i, j);
                    if candidate > swap_ll {
                        swap_ll = candidate;
                        swap = (i, j);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
            order.swap(swap.0, swap.1);
            ll = swap_ll;
        }
        if ll > best_ll {
            best_ll = ll;
            best_order = order;
        }
    }
    EbmFit {
        order: best_order,
        log_likelihood: best_ll,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use rand::Rng;

    fn random_posteriors(seed: u64, m: usize, n: usize) -> PosteriorMatrix {
        let mut rng = substream(seed, &[0x97]);
        let mut p = Array2::zeros((m, n));
        for j in 0..m {
            for e in 0..n {
                p[(j, e)] = rng.random::<f64>();
            }
        }
        PosteriorMatrix::new(p).unwrap()
    }

    /// Stage-structured posteriors whose noiseless optimum is 0..n in order.
    fn staircase(m_per_stage: usize, n: usize, soft: f64) -> PosteriorMatrix {
        let mut rows = Vec::new();
        for stage in 0..=n {
            for _ in 0..m_per_stage {
                let row: Vec<f64> = (0..n)
                    .map(|e| if e < stage { 1.0 - soft } else { soft })
                    .collect();
                rows.push(row);
            }
        }
        let m = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        PosteriorMatrix::new(Array2::from_shape_vec((m, n), flat).unwrap()).unwrap()
    }

    #[test]
    fn subject_ordering_sorts_descending_with_stable_ties() {
        assert_eq!(subject_ordering(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(subject_ordering(&[0.5, 0.5, 0.2]), vec![0, 1, 2]);
        assert_eq!(subject_ordering::<f64>(&[]), Vec::<usize>::new());
    }

    #[test]
    fn kendall_distance_reference_values() {
        let p = [0.9, 0.1];
        assert_abs_diff_eq!(prob_kendall_distance(&[0, 1], &p), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(prob_kendall_distance(&[1, 0], &p), 0.8, epsilon = 1e-15);
        // Ties cost nothing in either direction.
        let tied = [0.4, 0.4];
        assert_abs_diff_eq!(prob_kendall_distance(&[1, 0], &tied), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kendall_distance_matches_pairwise_definition() {
        let mut rng = substream(17, &[1]);
        for _ in 0..20 {
            let n = 6;
            let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            // Independent definition: positions in both orderings, summed
            // cost over discordant pairs.
            let subj = subject_ordering(&p);
            let mut pos_c = vec![0; n];
            let mut pos_s = vec![0; n];
            for (k, &e) in order.iter().enumerate() {
                pos_c[e] = k;
            }
            for (k, &e) in subj.iter().enumerate() {
                pos_s[e] = k;
            }
            let mut expected = 0.0;
            for a in 0..n {
                for b in a + 1..n {
                    let central_says = pos_c[a] < pos_c[b];
                    let subject_says = pos_s[a] < pos_s[b];
                    if central_says != subject_says {
                        expected += (p[a] - p[b]).abs();
                    }
                }
            }
            assert_abs_diff_eq!(
                prob_kendall_distance(&order, &p),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn central_ordering_recovers_clean_staircase() {
        let p = staircase(3, 5, 0.0);
        let fit = central_ordering(&p);
        assert_eq!(fit.order, vec![0, 1, 2, 3, 4]);
        assert_abs_diff_eq!(fit.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn central_ordering_matches_exhaustive_minimum() {
        for seed in 0..6u64 {
            let p = random_posteriors(seed, 25, 5);
            let fit = central_ordering(&p);
            let brute = (0..5)
                .permutations(5)
                .map(|perm| {
                    (0..p.n_subjects())
                        .map(|j| prob_kendall_distance(&perm, p.subject(j).as_slice().unwrap()))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(fit.objective, brute, epsilon = 1e-9);
        }
    }

    #[test]
    fn objective_equals_summed_subject_distances() {
        let p = random_posteriors(3, 40, 7);
        let fit = central_ordering(&p);
        let total: f64 = (0..p.n_subjects())
            .map(|j| prob_kendall_distance(&fit.order, p.subject(j).as_slice().unwrap()))
            .sum();
        assert_abs_diff_eq!(fit.objective, total, epsilon = 1e-9);
    }

    #[test]
    fn heuristic_path_agrees_with_exhaustive_on_small_inputs() {
        // Force the fallback and compare it against brute force; with five
        // events the pair-swap landscape has no local traps here.
        for seed in 20..24u64 {
            let p = random_posteriors(seed, 30, 5);
            let cost = {
                let mut cost = Array2::zeros((5, 5));
                for j in 0..p.n_subjects() {
                    let row = p.subject(j);
                    for a in 0..5 {
                        for b in 0..5 {
                            if row[b] > row[a] {
                                cost[(a, b)] += row[b] - row[a];
                            }
                        }
                    }
                }
                cost
            };
            let order = heuristic_min_ordering(&p, &cost, 5);
            let value = pairwise_objective(&order, &cost);
            let exact = pairwise_objective(&exact_min_ordering(&cost, 5), &cost);
            assert!(value >= exact - 1e-12);
            assert!(value <= exact + 1e-6, "heuristic {value} vs exact {exact}");
        }
    }

    #[test]
    fn ebm_log_likelihood_reference_values() {
        let p1 = PosteriorMatrix::new(Array2::from_shape_vec((1, 1), vec![0.8]).unwrap()).unwrap();
        assert_abs_diff_eq!(
            ebm_log_likelihood(&[0], &p1),
            (0.5f64).ln(),
            epsilon = 1e-12
        );
        let p2 =
            PosteriorMatrix::new(Array2::from_shape_vec((1, 2), vec![0.9, 0.1]).unwrap()).unwrap();
        assert_abs_diff_eq!(
            ebm_log_likelihood(&[0, 1], &p2),
            -1.1086626245216111,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            ebm_log_likelihood(&[1, 0], &p2),
            -2.7593434954897607,
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_posteriors_hit_the_log_floor() {
        let p =
            PosteriorMatrix::new(Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap()).unwrap();
        let ll: f64 = ebm_log_likelihood(&[1, 0], &p);
        assert!(ll.is_finite());
        // Subject likelihood is exactly zero for this ordering.
        let p_rev =
            PosteriorMatrix::new(Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap()).unwrap();
        let ll_rev = ebm_log_likelihood(&[1, 0], &p_rev);
        assert_abs_diff_eq!(ll_rev, 1e-300f64.ln(), epsilon = 1e-6);
        assert!(ll > ll_rev);
    }

    #[test]
    fn fit_ebm_matches_exhaustive_argmax() {
        for seed in 0..5u64 {
            let p = random_posteriors(100 + seed, 30, 4);
            let fit = fit_ebm(&p, 8, seed);
            let brute = (0..4)
                .permutations(4)
                .map(|perm| ebm_log_likelihood(&perm, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(fit.log_likelihood, brute, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_ebm_prefers_the_staircase_order() {
        let p = staircase(5, 4, 0.05);
        let fit = fit_ebm(&p, 6, 3);
        assert_eq!(fit.order, vec![0, 1, 2, 3]);
        assert!(
            ebm_log_likelihood(&[3, 2, 1, 0], &p) < fit.log_likelihood,
            "reversed order should be worse"
        );
    }

    #[test]
    fn fit_ebm_is_deterministic() {
        let p = random_posteriors(9, 50, 6);
        let a = fit_ebm(&p, 5, 42);
        let b = fit_ebm(&p, 5, 42);
        assert_eq!(a.order, b.order);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }
}
