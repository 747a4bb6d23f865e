//! Weighted soft-margin linear SVM.
//!
//! Minimizes `0.5 ||w||^2 + sum_j c_j max(0, 1 - y_j (w . x_j + b))` with a
//! per-sample cost vector and an unregularized bias. The dual (box
//! constraints `0 <= alpha_j <= c_j`, one equality constraint) is solved by
//! sequential minimal optimization with second-order working-set selection.
//! The bias is then recovered exactly by minimizing the primal over `b` for
//! the fixed `w`, which is a weighted-median scan over the hinge kinks, and
//! the solution is certified by the relative primal-dual gap.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("rows ({rows}), labels ({labels}), and costs ({costs}) disagree")]
    LengthMismatch {
        rows: usize,
        labels: usize,
        costs: usize,
    },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label at index {index} must be -1 or +1")]
    InvalidLabel { index: usize },
    #[error("cost at index {index} must be positive and finite")]
    InvalidCost { index: usize },
    #[error("non-finite feature value at row {row}")]
    NonFinite { row: usize },
    #[error("gram matrix is {rows}x{cols}, expected {n}x{n}")]
    GramShape { rows: usize, cols: usize, n: usize },
    #[error("solver stalled at relative duality gap {gap:e}, tolerance {tolerance:e}")]
    NoConvergence { gap: f64, tolerance: f64 },
}

/// A linear decision function `w . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier<F: Real = f64> {
    pub weights: Vec<F>,
    pub bias: F,
}

impl<F: Real> LinearClassifier<F> {
    pub fn decision(&self, x: &[F]) -> F {
        assert_eq!(x.len(), self.weights.len(), "feature dimension mismatch");
        let mut acc = self.bias;
        for (w, v) in self.weights.iter().zip(x) {
            acc += *w * *v;
        }
        acc
    }
}

/// Converged solution with its optimality certificate.
#[derive(Debug, Clone)]
pub struct SvmSolution<F: Real = f64> {
    pub classifier: LinearClassifier<F>,
    pub alpha: Vec<F>,
    pub primal_objective: F,
    pub dual_objective: F,
    /// `(primal - dual) / max(1, |primal|)`.
    pub duality_gap: F,
    pub iterations: usize,
}

/// Linear kernel matrix `X X^T`.
pub fn linear_gram<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.dot(&x.t())
}

/// Trains on `x` with labels in {-1, +1} and positive per-sample costs,
/// until the relative duality gap is at most `tolerance`.
pub fn train_weighted_svm<F: Real>(
    x: &Array2<F>,
    y: &[i8],
    costs: &[F],
    tolerance: F,
) -> Result<SvmSolution<F>, SvmError> {
    let gram = linear_gram(x);
    train_weighted_svm_with_gram(x, &gram, y, costs, tolerance)
}

/// As [`train_weighted_svm`], with a precomputed gram matrix. Callers that
/// retrain on the same rows repeatedly keep the gram across calls.
pub fn train_weighted_svm_with_gram<F: Real>(
    x: &Array2<F>,
    gram: &Array2<F>,
    y: &[i8],
    costs: &[F],
    tolerance: F,
) -> Result<SvmSolution<F>, SvmError> {
    let n = x.nrows();
    if y.len() != n || costs.len() != n {
        return Err(SvmError::LengthMismatch {
            rows: n,
            labels: y.len(),
            costs: costs.len(),
        });
    }
    if gram.nrows() != n || gram.ncols() != n {
        return Err(SvmError::GramShape {
            rows: gram.nrows(),
            cols: gram.ncols(),
            n,
        });
    }
    for (index, &label) in y.iter().enumerate() {
        if label != 1 && label != -1 {
            return Err(SvmError::InvalidLabel { index });
        }
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(SvmError::SingleClass);
    }
    for (index, c) in costs.iter().enumerate() {
        if !(*c > F::zero()) || !c.is_finite() {
            return Err(SvmError::InvalidCost { index });
        }
    }
    for (row, r) in x.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite { row });
        }
    }

    let yv: Vec<F> = y.iter().map(|&l| F::of(l as f64)).collect();
    let mut alpha = vec![F::zero(); n];
    let mut grad = vec![-F::one(); n];
    let budget = 100_000 + 50 * n;
    let mut iterations = 0usize;
    // The pair tolerance only has to be tight enough for the gap check;
    // start loose and refine until the certificate holds.
    let mut eps_pair = F::of(1e-3);

    loop {
        iterations += smo_pass(
            gram,
            &yv,
            costs,
            &mut alpha,
            &mut grad,
            eps_pair,
            budget.saturating_sub(iterations),
        );

        let (classifier, primal, dual) = assemble(x, &yv, costs, &alpha, &grad);
        let gap = (primal - dual) / F::one().max(primal.abs());
        if gap <= tolerance {
            return Ok(SvmSolution {
                classifier,
                alpha,
                primal_objective: primal,
                dual_objective: dual,
                duality_gap: gap,
                iterations,
            });
        }
        if iterations >= budget || eps_pair <= F::of(1e-14) {
            return Err(SvmError::NoConvergence {
                gap: gap.to_f64().unwrap_or(f64::NAN),
                tolerance: tolerance.to_f64().unwrap_or(f64::NAN),
            });
        }
        eps_pair = eps_pair * F::of(1e-2);
    }
}

/// Runs SMO iterations until the maximal KKT violating pair is within
/// `eps_pair` or the budget runs out. Returns iterations used.
fn smo_pass<F: Real>(
    gram: &Array2<F>,
    yv: &[F],
    costs: &[F],
    alpha: &mut [F],
    grad: &mut [F],
    eps_pair: F,
    budget: usize,
) -> usize {
    let n = yv.len();
    let tau = F::of(1e-12);
    let two = F::of(2.0);
    let mut iters = 0usize;
    while iters < budget {
        // First index: the steepest ascent direction among points that can
        // increase their alpha along +y.
        let mut up_best = F::neg_infinity();
        let mut i = usize::MAX;
        for t in 0..n {
            let movable = if yv[t] > F::zero() {
                alpha[t] < costs[t]
            } else {
                alpha[t] > F::zero()
            };
            if movable {
                let v = -yv[t] * grad[t];
                if v > up_best {
                    up_best = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            break;
        }
        let gram_i = gram.row(i);

        // Second index: the largest second-order decrease among points
        // movable in the opposite direction.
        let mut low_best = F::infinity();
        let mut score_best = F::infinity();
        let mut j = usize::MAX;
        for t in 0..n {
            let movable = if yv[t] > F::zero() {
                alpha[t] > F::zero()
            } else {
                alpha[t] < costs[t]
            };
            if movable {
                let v = -yv[t] * grad[t];
                if v < low_best {
                    low_best = v;
                }
                if v < up_best {
                    let diff = up_best - v;
                    let mut quad = gram[(i, i)] + gram[(t, t)] - two * gram_i[t];
                    if quad <= F::zero() {
                        quad = tau;
                    }
                    let score = -(diff * diff) / quad;
                    if score < score_best {
                        score_best = score;
                        j = t;
                    }
                }
            }
        }
        if up_best - low_best <= eps_pair || j == usize::MAX {
            break;
        }

        // Two-variable subproblem on (i, j), clipped to the box while
        // preserving sum_t alpha_t y_t = 0.
        let ci = costs[i];
        let cj = costs[j];
        let old_i = alpha[i];
        let old_j = alpha[j];
        let mut quad = gram[(i, i)] + gram[(j, j)] - two * gram[(i, j)];
        if quad <= F::zero() {
            quad = tau;
        }
        if yv[i] * yv[j] < F::zero() {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > F::zero() {
                if alpha[j] < F::zero() {
                    alpha[j] = F::zero();
                    alpha[i] = diff;
                }
            } else if alpha[i] < F::zero() {
                alpha[i] = F::zero();
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < F::zero() {
                alpha[j] = F::zero();
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < F::zero() {
                alpha[i] = F::zero();
                alpha[j] = sum;
            }
        }

        let coef_i = yv[i] * (alpha[i] - old_i);
        let coef_j = yv[j] * (alpha[j] - old_j);
        let gram_j = gram.row(j);
        for t in 0..n {
            grad[t] += yv[t] * (coef_i * gram_i[t] + coef_j * gram_j[t]);
        }
        iters += 1;
    }
    iters
}

/// Recovers `w`, the primal-optimal bias for that `w`, and both objectives.
fn assemble<F: Real>(
    x: &Array2<F>,
    yv: &[F],
    costs: &[F],
    alpha: &[F],
    grad: &[F],
) -> (LinearClassifier<F>, F, F) {
    let n = x.nrows();
    let d = x.ncols();
    let mut weights = vec![F::zero(); d];
    for t in 0..n {
        if alpha[t] > F::zero() {
            let coef = alpha[t] * yv[t];
            for (w, v) in weights.iter_mut().zip(x.row(t)) {
                *w += coef * *v;
            }
        }
    }
    let scores: Vec<F> = x
        .rows()
        .into_iter()
        .map(|row| {
            let mut acc = F::zero();
            for (w, v) in weights.iter().zip(row) {
                acc += *w * *v;
            }
            acc
        })
        .collect();
    let bias = optimal_bias(yv, costs, &scores);

    let norm_sq: F = weights.iter().map(|&w| w * w).sum();
    let mut hinge = F::zero();
    for t in 0..n {
        let margin = F::one() - yv[t] * (scores[t] + bias);
        if margin > F::zero() {
            hinge += costs[t] * margin;
        }
    }
    let primal = norm_sq / F::of(2.0) + hinge;

    let sum_alpha: F = alpha.iter().copied().sum();
    let alpha_grad: F = alpha.iter().zip(grad).map(|(&a, &g)| a * g).sum();
    let dual = (sum_alpha - alpha_grad) / F::of(2.0);

    (LinearClassifier { weights, bias }, primal, dual)
}

/// Minimizes `sum_t c_t max(0, 1 - y_t (s_t + b))` over `b`.
///
/// The objective is piecewise linear and convex in `b` with one kink per
/// sample; the subgradient starts negative and gains `c_t` at each kink, so
/// the minimum is at the kink where it crosses zero, or at the midpoint of a
/// flat stretch when it reaches exactly zero.
fn optimal_bias<F: Real>(yv: &[F], costs: &[F], scores: &[F]) -> F {
    let mut kinks: Vec<(F, F)> = yv
        .iter()
        .zip(scores)
        .zip(costs)
        .map(|((&y, &s), &c)| (y - s, c))
        .collect();
    kinks.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite kink positions"));
    let mut slope = -yv
        .iter()
        .zip(costs)
        .filter(|(&y, _)| y > F::zero())
        .map(|(_, &c)| c)
        .sum::<F>();
    let mut idx = 0;
    while idx < kinks.len() {
        let at = kinks[idx].0;
        let mut next = idx;
        while next < kinks.len() && kinks[next].0 == at {
            slope += kinks[next].1;
            next += 1;
        }
        if slope > F::zero() {
            return at;
        }
        if slope == F::zero() {
            // Flat optimum between this kink and the next one.
            return if next < kinks.len() {
                (at + kinks[next].0) / F::of(2.0)
            } else {
                at
            };
        }
        idx = next;
    }
    kinks.last().map_or(F::zero(), |k| k.0)
}
