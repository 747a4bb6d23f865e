//! Semi-supervised event posteriors from high-dimensional region features.
//!
//! An initial class-balanced weighted SVM is trained on the CN and DE rows.
//! Softly classified labeled rows, the ones whose margin does not clear a
//! low percentile of the correct margins, join the prodromal rows as an
//! untrusted pool. Platt scaling on the trusted rows turns decision values
//! into posteriors, the untrusted pool re-enters training with pseudo-labels
//! and confidence-proportional costs, and the train/calibrate/relabel loop
//! repeats until the untrusted posteriors stop moving. The final posteriors
//! are the event probabilities used by the ordering and staging stages.

pub mod platt;
pub mod solver;

pub use platt::{fit_platt, PlattCalibration, PlattError};
pub use solver::{
    linear_gram, train_weighted_svm, train_weighted_svm_with_gram, LinearClassifier, SvmError,
    SvmSolution,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::SubjectLabel;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SsvmError {
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Platt(#[from] PlattError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rows ({rows}) and labels ({labels}) disagree")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("need at least 2 {label}-labeled rows, got {got}")]
    TooFewLabeled { label: &'static str, got: usize },
    #[error("threshold selection needs at least one correctly classified row")]
    NoCorrectPredictions,
    #[error("fraction {0} is outside [0, 1)")]
    InvalidFraction(f64),
}

/// Knobs of the semi-supervised fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsvmConfig {
    /// Cost applied to trusted labeled rows.
    pub base_cost: f64,
    /// Fraction of the correct margins treated as too soft to trust.
    pub unlabeled_fraction: f64,
    /// Mean-squared change in untrusted posteriors that stops the loop.
    pub em_tolerance: f64,
    pub max_em_iters: usize,
    /// Relative duality gap required of every SVM solve.
    pub solver_tolerance: f64,
}

impl Default for SsvmConfig {
    fn default() -> Self {
        SsvmConfig {
            base_cost: 1.0,
            unlabeled_fraction: 0.05,
            em_tolerance: 1e-4,
            max_em_iters: 20,
            solver_tolerance: 1e-4,
        }
    }
}

impl SsvmConfig {
    pub fn validate(&self) -> Result<(), SsvmError> {
        let mut problems = Vec::new();
        if !(self.base_cost > 0.0) || !self.base_cost.is_finite() {
            problems.push(format!("base_cost {} must be positive and finite", self.base_cost));
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            problems.push(format!(
                "unlabeled_fraction {} must lie in [0, 1)",
                self.unlabeled_fraction
            ));
        }
        if !(self.em_tolerance > 0.0) {
            problems.push(format!("em_tolerance {} must be positive", self.em_tolerance));
        }
        if self.max_em_iters == 0 {
            problems.push("max_em_iters must be at least 1".to_string());
        }
        if !(self.solver_tolerance > 0.0) {
            problems.push(format!(
                "solver_tolerance {} must be positive",
                self.solver_tolerance
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SsvmError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Classifier plus calibration for one region, in raw feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPosteriorModel<F: Real = f64> {
    pub classifier: LinearClassifier<F>,
    pub calibration: PlattCalibration<F>,
}

impl<F: Real> RegionPosteriorModel<F> {
    /// Posterior probability that the region's event has occurred.
    pub fn posterior(&self, x: &[F]) -> F {
        self.calibration.probability(self.classifier.decision(x))
    }
}

/// Result of the semi-supervised fit on one region.
#[derive(Debug, Clone)]
pub struct SemiSupervisedFit<F: Real = f64> {
    /// Event posterior for every row, in input order.
    pub posteriors: Vec<F>,
    pub model: RegionPosteriorModel<F>,
    /// Margin threshold below which labeled rows were not trusted.
    pub threshold: F,
    /// Retraining rounds actually run (0 when nothing was untrusted).
    pub em_iterations: usize,
}

/// Margin threshold for the trusted/untrusted split.
///
/// Margins are `y * d`; rows with positive margin are correct. The threshold
/// is the `ceil(fraction * n_correct)`-th smallest correct margin, or zero
/// when `fraction` is zero, and rows qualify as trusted only with a margin
/// strictly above it, so misclassified rows never do.
pub fn select_threshold_dt<F: Real>(
    decisions: &[F],
    y: &[i8],
    fraction: F,
) -> Result<F, SsvmError> {
    if decisions.len() != y.len() {
        return Err(SsvmError::LengthMismatch {
            rows: decisions.len(),
            labels: y.len(),
        });
    }
    if !(fraction >= F::zero() && fraction < F::one()) {
        return Err(SsvmError::InvalidFraction(
            fraction.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let mut correct: Vec<F> = decisions
        .iter()
        .zip(y)
        .map(|(&d, &l)| F::of(l as f64) * d)
        .filter(|&m| m > F::zero())
        .collect();
    if correct.is_empty() {
        return Err(SsvmError::NoCorrectPredictions);
    }
    let k = (fraction * F::of_usize(correct.len()))
        .ceil()
        .to_usize()
        .expect("fraction * count is a small non-negative integer");
    if k == 0 {
        return Ok(F::zero());
    }
    correct.sort_by(|a, b| a.partial_cmp(b).expect("margins are finite"));
    Ok(correct[k - 1])
}

/// Runs the full semi-supervised pipeline on one region's feature matrix.
///
/// Features are standardized internally; the returned model is folded back
/// to raw feature space, so `model.posterior(row)` reproduces `posteriors`.
pub fn semi_supervised_posteriors<F: Real>(
    features: &Array2<F>,
    labels: &[SubjectLabel],
    cfg: &SsvmConfig,
) -> Result<SemiSupervisedFit<F>, SsvmError> {
    cfg.validate()?;
    let m = features.nrows();
    if labels.len() != m {
        return Err(SsvmError::LengthMismatch {
            rows: m,
            labels: labels.len(),
        });
    }
    for (row, r) in features.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite { row }.into());
        }
    }
    let n_cn = labels.iter().filter(|&&l| l == SubjectLabel::Cn).count();
    let n_de = labels.iter().filter(|&&l| l == SubjectLabel::De).count();
    if n_cn < 2 {
        return Err(SsvmError::TooFewLabeled {
            label: "CN",
            got: n_cn,
        });
    }
    if n_de < 2 {
        return Err(SsvmError::TooFewLabeled {
            label: "DE",
            got: n_de,
        });
    }

    let cost = F::of(cfg.base_cost);
    let solver_tol = F::of(cfg.solver_tolerance);

    // Standardize per column; constant columns pass through unscaled.
    let d = features.ncols();
    let mut mu = vec![F::zero(); d];
    let mut sd = vec![F::one(); d];
    for c in 0..d {
        let col = features.column(c);
        let mean = col.iter().copied().sum::<F>() / F::of_usize(m);
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / F::of_usize(m);
        mu[c] = mean;
        if var > F::zero() {
            sd[c] = var.sqrt();
        }
    }
    let mut z = features.clone();
    for c in 0..d {
        let mut col = z.column_mut(c);
        col.mapv_inplace(|v| (v - mu[c]) / sd[c]);
    }
    let gram = linear_gram(&z);

    let labeled: Vec<usize> = (0..m)
        .filter(|&j| labels[j] != SubjectLabel::Prodromal)
        .collect();
    let y_labeled: Vec<i8> = labeled
        .iter()
        .map(|&j| if labels[j] == SubjectLabel::De { 1 } else { -1 })
        .collect();

    // Initial supervised fit with class-balanced costs.
    let n_lab = labeled.len();
    let balanced: Vec<F> = y_labeled
        .iter()
        .map(|&l| {
            let class = if l == 1 { n_de } else { n_cn };
            cost * F::of_usize(n_lab) / (F::of(2.0) * F::of_usize(class))
        })
        .collect();
    let sub_x = gather_rows(&z, &labeled);
    let sub_gram = gather_gram(&gram, &labeled);
    let mut solution =
        train_weighted_svm_with_gram(&sub_x, &sub_gram, &y_labeled, &balanced, solver_tol)?;

    let mut decisions = decide_all(&z, &solution.classifier);
    let labeled_decisions: Vec<F> = labeled.iter().map(|&j| decisions[j]).collect();
    let threshold =
        select_threshold_dt(&labeled_decisions, &y_labeled, F::of(cfg.unlabeled_fraction))?;

    let mut trusted = Vec::new();
    let mut trusted_y = Vec::new();
    let mut untrusted: Vec<usize> = Vec::new();
    for (t, &j) in labeled.iter().enumerate() {
        let margin = F::of(y_labeled[t] as f64) * decisions[j];
        if margin > threshold {
            trusted.push(j);
            trusted_y.push(y_labeled[t]);
        } else {
            untrusted.push(j);
        }
    }
    untrusted.extend((0..m).filter(|&j| labels[j] == SubjectLabel::Prodromal));
    untrusted.sort_unstable();

    let trusted_decisions = |decisions: &[F]| -> Vec<F> {
        trusted.iter().map(|&j| decisions[j]).collect()
    };
    let mut calibration = fit_platt(&trusted_decisions(&decisions), &trusted_y)?;

    let mut em_iterations = 0;
    if !untrusted.is_empty() {
        let mut p_u: Vec<F> = untrusted
            .iter()
            .map(|&j| calibration.probability(decisions[j]))
            .collect();
        let half = F::of(0.5);
        let two = F::of(2.0);
        for _ in 0..cfg.max_em_iters {
            em_iterations += 1;
            let mut idx = trusted.clone();
            let mut yy = trusted_y.clone();
            let mut cc = vec![cost; trusted.len()];
            for (u, &j) in untrusted.iter().enumerate() {
                let confidence = (two * p_u[u] - F::one()).abs();
                let w = cost * confidence;
                if w > F::zero() {
                    idx.push(j);
                    yy.push(if p_u[u] >= half { 1 } else { -1 });
                    cc.push(w);
                }
            }
            let sub_x = gather_rows(&z, &idx);
            let sub_gram = gather_gram(&gram, &idx);
            solution = train_weighted_svm_with_gram(&sub_x, &sub_gram, &yy, &cc, solver_tol)?;
            decisions = decide_all(&z, &solution.classifier);
            calibration = fit_platt(&trusted_decisions(&decisions), &trusted_y)?;

            let p_new: Vec<F> = untrusted
                .iter()
                .map(|&j| calibration.probability(decisions[j]))
                .collect();
            let change = p_new
                .iter()
                .zip(&p_u)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<F>()
                / F::of_usize(untrusted.len());
            p_u = p_new;
            if change < F::of(cfg.em_tolerance) {
                break;
            }
        }
    }

    let posteriors: Vec<F> = decisions
        .iter()
        .map(|&d| calibration.probability(d))
        .collect();

    // Fold the standardization into the classifier so it applies to raw rows.
    let mut weights = Vec::with_capacity(d);
    let mut bias = solution.classifier.bias;
    for c in 0..d {
        let w = solution.classifier.weights[c] / sd[c];
        weights.push(w);
        bias -= w * mu[c];
    }

    Ok(SemiSupervisedFit {
        posteriors,
        model: RegionPosteriorModel {
            classifier: LinearClassifier { weights, bias },
            calibration,
        },
        threshold,
        em_iterations,
    })
}

fn decide_all<F: Real>(z: &Array2<F>, clf: &LinearClassifier<F>) -> Vec<F> {
    z.rows()
        .into_iter()
        .map(|row| {
            let mut acc = clf.bias;
            for (w, v) in clf.weights.iter().zip(row) {
                acc += *w * *v;
            }
            acc
        })
        .collect()
}

fn gather_rows<F: Real>(x: &Array2<F>, idx: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn gather_gram<F: Real>(gram: &Array2<F>, idx: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((idx.len(), idx.len()));
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(r, c)] = gram[(i, j)];
        }
    }
    out
}
