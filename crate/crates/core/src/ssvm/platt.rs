//! Platt scaling: maps decision values to probabilities.
//!
//! Fits `p(d) = 1 / (1 + exp(slope * d + intercept))` by minimizing the
//! cross-entropy against smoothed targets `(n_pos + 1) / (n_pos + 2)` and
//! `1 / (n_neg + 2)`, which keeps the optimum finite even for perfectly
//! separated inputs. The two-parameter problem is solved by Newton's method
//! with a backtracking line search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum PlattError {
    #[error("decision values ({decisions}) and labels ({labels}) disagree")]
    LengthMismatch { decisions: usize, labels: usize },
    #[error("calibration data contains a single class")]
    SingleClass,
    #[error("non-finite decision value at index {index}")]
    NonFinite { index: usize },
    #[error("label at index {index} must be -1 or +1")]
    InvalidLabel { index: usize },
    #[error("no convergence after {0} Newton iterations")]
    NoConvergence(usize),
}

/// Fitted sigmoid `p(d) = 1 / (1 + exp(slope * d + intercept))`.
///
/// When larger decision values mean the positive class, the fitted slope is
/// negative, making `p` increase with `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattCalibration<F: Real = f64> {
    pub slope: F,
    pub intercept: F,
}

impl<F: Real> PlattCalibration<F> {
    /// Probability of the positive class at decision value `d`.
    pub fn probability(&self, d: F) -> F {
        let f = self.slope * d + self.intercept;
        if f >= F::zero() {
            let e = (-f).exp();
            e / (F::one() + e)
        } else {
            F::one() / (F::one() + f.exp())
        }
    }
}

const MAX_ITERS: usize = 200;

/// Fits the calibration on decision values with labels in {-1, +1}.
pub fn fit_platt<F: Real>(decisions: &[F], y: &[i8]) -> Result<PlattCalibration<F>, PlattError> {
    if decisions.len() != y.len() {
        return Err(PlattError::LengthMismatch {
            decisions: decisions.len(),
            labels: y.len(),
        });
    }
    for (index, d) in decisions.iter().enumerate() {
        if !d.is_finite() {
            return Err(PlattError::NonFinite { index });
        }
    }
    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    for (index, &label) in y.iter().enumerate() {
        match label {
            1 => n_pos += 1,
            -1 => n_neg += 1,
            _ => return Err(PlattError::InvalidLabel { index }),
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(PlattError::SingleClass);
    }

    let hi = F::of((n_pos as f64 + 1.0) / (n_pos as f64 + 2.0));
    let lo = F::of(1.0 / (n_neg as f64 + 2.0));
    let targets: Vec<F> = y
        .iter()
        .map(|&l| if l == 1 { hi } else { lo })
        .collect();

    let min_step = F::of(1e-10);
    let ridge = F::of(1e-12);
    // Tight in f64; scaled up in lower precision where 1e-10 is unreachable.
    let grad_tol = F::of(1e-10).max(F::epsilon() * F::of_usize(decisions.len()) * F::of(100.0));

    let mut a = F::zero();
    let mut b = F::of(((n_neg as f64) + 1.0) / ((n_pos as f64) + 1.0)).ln();
    let mut fval = objective(decisions, &targets, a, b);

    for _ in 0..MAX_ITERS {
        // Gradient and Hessian of the cross-entropy in (a, b).
        let mut h11 = ridge;
        let mut h22 = ridge;
        let mut h21 = F::zero();
        let mut g1 = F::zero();
        let mut g2 = F::zero();
        for (&d, &t) in decisions.iter().zip(&targets) {
            let f = a * d + b;
            // p = P(target side | d), computed on the safe branch.
            let (p, q) = if f >= F::zero() {
                let e = (-f).exp();
                (e / (F::one() + e), F::one() / (F::one() + e))
            } else {
                let e = f.exp();
                (F::one() / (F::one() + e), e / (F::one() + e))
            };
            let w = p * q;
            h11 += d * d * w;
            h22 += w;
            h21 += d * w;
            let delta = t - p;
            g1 += d * delta;
            g2 += delta;
        }
        if g1.abs() < grad_tol && g2.abs() < grad_tol {
            return Ok(PlattCalibration {
                slope: a,
                intercept: b,
            });
        }

        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let descent = g1 * da + g2 * db;

        let mut step = F::one();
        loop {
            let na = a + step * da;
            let nb = b + step * db;
            let nf = objective(decisions, &targets, na, nb);
            if nf < fval + F::of(1e-4) * step * descent {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step = step / F::of(2.0);
            if step < min_step {
                // No measurable decrease at any step length: the remaining
                // improvement is below rounding noise, so the current point
                // is the optimum as far as the objective can resolve.
                return Ok(PlattCalibration {
                    slope: a,
                    intercept: b,
                });
            }
        }
    }
    Err(PlattError::NoConvergence(MAX_ITERS))
}

/// Cross-entropy of the sigmoid against the smoothed targets, written so the
/// exponent never overflows.
fn objective<F: Real>(decisions: &[F], targets: &[F], a: F, b: F) -> F {
    let mut acc = F::zero();
    for (&d, &t) in decisions.iter().zip(targets) {
        let f = a * d + b;
        if f >= F::zero() {
            acc += t * f + (-f).exp().ln_1p();
        } else {
            acc += (t - F::one()) * f + f.exp().ln_1p();
        }
    }
    acc
}
