//! Two-component Gaussian mixtures over one scalar biomarker.
//!
//! The normal component models pre-event measurements, the abnormal one
//! post-event. Labels seed the initialization (CN values initialize the
//! normal component, DE the abnormal) and fix which side is which; the EM
//! iterations themselves run unsupervised over all subjects, so prodromal
//! subjects shape the fit too.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::SubjectLabel;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("values ({values}) and labels ({labels}) have different lengths")]
    LengthMismatch { values: usize, labels: usize },
    #[error("need at least 2 {label}-labeled values, got {got}")]
    TooFewLabeled { label: &'static str, got: usize },
    #[error("non-finite biomarker value at index {index}")]
    NonFinite { index: usize },
    #[error("component collapse: biomarker values have zero variance")]
    ComponentCollapse,
}

/// Fitted mixture for one biomarker: a normal and an abnormal component with
/// the abnormal mixing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerMixture<F: Real = f64> {
    pub mu_normal: F,
    pub sd_normal: F,
    pub mu_abnormal: F,
    pub sd_abnormal: F,
    pub pi_abnormal: F,
}

/// Result of an EM fit: the mixture plus the log-likelihood trace, one entry
/// per parameter state starting at the initialization.
#[derive(Debug, Clone)]
pub struct MixtureFit<F: Real = f64> {
    pub mixture: BiomarkerMixture<F>,
    pub log_likelihood: F,
    pub iterations: usize,
    pub ll_trace: Vec<F>,
}

const MAX_ITERS: usize = 500;

/// Fits the mixture by EM.
///
/// Initialization: component means and stds from the CN- and DE-labeled
/// values, abnormal weight from the DE fraction. Stds are floored at
/// `sqrt(1e-6 * var(values))` throughout, and the fit stops when the
/// log-likelihood moves less than 1e-6 or after 500 iterations. If an
/// M-step would flip the components relative to the labeled means, they are
/// swapped back, which leaves the likelihood unchanged.
pub fn fit_mixture<F: Real>(
    values: &[F],
    labels: &[SubjectLabel],
) -> Result<MixtureFit<F>, GmmError> {
    if values.len() != labels.len() {
        return Err(GmmError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(GmmError::NonFinite { index });
        }
    }
    let cn: Vec<F> = select(values, labels, SubjectLabel::Cn);
    let de: Vec<F> = select(values, labels, SubjectLabel::De);
    if cn.len() < 2 {
        return Err(GmmError::TooFewLabeled {
            label: "CN",
            got: cn.len(),
        });
    }
    if de.len() < 2 {
        return Err(GmmError::TooFewLabeled {
            label: "DE",
            got: de.len(),
        });
    }

    let m = F::of_usize(values.len());
    let data_var = variance(values);
    if !(data_var > F::zero()) {
        return Err(GmmError::ComponentCollapse);
    }
    let sd_floor = (F::of(1e-6) * data_var).sqrt();

    let mean_cn = mean(&cn);
    let mean_de = mean(&de);
    // Which side of the normal component the abnormal one belongs on.
    let labeled_dir = if mean_de >= mean_cn { F::one() } else { -F::one() };

    let mut mix = BiomarkerMixture {
        mu_normal: mean_cn,
        sd_normal: variance(&cn).sqrt().max(sd_floor),
        mu_abnormal: mean_de,
        sd_abnormal: variance(&de).sqrt().max(sd_floor),
        pi_abnormal: F::of_usize(de.len()) / m,
    };

    let mut ll_trace = Vec::new();
    let tol = F::of(1e-6);
    loop {
        // Joint log-densities under each component, and the data likelihood.
        let mut ll = F::zero();
        let mut resp = Vec::with_capacity(values.len());
        for &x in values {
            let (ln_n, ln_a) = component_logs(x, &mix);
            ll += log_sum_exp(ln_n, ln_a);
            resp.push(stable_sigmoid(ln_a - ln_n));
        }
        ll_trace.push(ll);
        let t = ll_trace.len() - 1;
        if t > 0 && (ll - ll_trace[t - 1]).abs() < tol {
            break;
        }
        if t >= MAX_ITERS {
            break;
        }

        // M-step. A component with vanishing responsibility keeps its shape
        // and only its weight moves, which is still an ascent step.
        let sum_a: F = resp.iter().copied().sum();
        let sum_n = m - sum_a;
        let tiny = F::of(1e-12);
        if sum_a > tiny {
            let mu = weighted_mean(values, &resp, sum_a, false);
            mix.mu_abnormal = mu;
            mix.sd_abnormal = weighted_sd(values, &resp, mu, sum_a, false).max(sd_floor);
        }
        if sum_n > tiny {
            let mu = weighted_mean(values, &resp, sum_n, true);
            mix.mu_normal = mu;
            mix.sd_normal = weighted_sd(values, &resp, mu, sum_n, true).max(sd_floor);
        }
        mix.pi_abnormal = sum_a / m;
        if (mix.mu_abnormal - mix.mu_normal) * labeled_dir < F::zero() {
            std::mem::swap(&mut mix.mu_normal, &mut mix.mu_abnormal);
            std::mem::swap(&mut mix.sd_normal, &mut mix.sd_abnormal);
            mix.pi_abnormal = F::one() - mix.pi_abnormal;
        }
    }

    Ok(MixtureFit {
        log_likelihood: *ll_trace.last().expect("at least one iteration"),
        iterations: ll_trace.len() - 1,
        mixture: mix,
        ll_trace,
    })
}

/// Posterior probability that `x` comes from the abnormal component.
pub fn posterior<F: Real>(x: F, mix: &BiomarkerMixture<F>) -> F {
    assert!(x.is_finite(), "biomarker value must be finite");
    let (ln_n, ln_a) = component_logs(x, mix);
    stable_sigmoid(ln_a - ln_n)
}

/// Log of weight times normal density for both components.
fn component_logs<F: Real>(x: F, mix: &BiomarkerMixture<F>) -> (F, F) {
    let pi_a = mix.pi_abnormal;
    let ln_n = ln_weighted_normal(x, mix.mu_normal, mix.sd_normal, F::one() - pi_a);
    let ln_a = ln_weighted_normal(x, mix.mu_abnormal, mix.sd_abnormal, pi_a);
    (ln_n, ln_a)
}

fn ln_weighted_normal<F: Real>(x: F, mu: F, sd: F, weight: F) -> F {
    // 0.5 * ln(2 pi)
    let half_ln_tau = F::of(0.918_938_533_204_672_7);
    let z = (x - mu) / sd;
    let ln_pdf = -half_ln_tau - sd.ln() - z * z / F::of(2.0);
    if weight > F::zero() {
        weight.ln() + ln_pdf
    } else {
        F::neg_infinity()
    }
}

/// `1 / (1 + exp(-t))` without overflow; `ln(exp(a) + exp(b))` likewise.
fn stable_sigmoid<F: Real>(t: F) -> F {
    if t >= F::zero() {
        F::one() / (F::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (F::one() + e)
    }
}

fn log_sum_exp<F: Real>(a: F, b: F) -> F {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == F::neg_infinity() {
        return F::neg_infinity();
    }
    hi + (lo - hi).exp().ln_1p()
}

fn select<F: Real>(values: &[F], labels: &[SubjectLabel], wanted: SubjectLabel) -> Vec<F> {
    values
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == wanted)
        .map(|(&v, _)| v)
        .collect()
}

fn mean<F: Real>(values: &[F]) -> F {
    values.iter().copied().sum::<F>() / F::of_usize(values.len())
}

fn variance<F: Real>(values: &[F]) -> F {
    let mu = mean(values);
    values.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / F::of_usize(values.len())
}

fn weighted_mean<F: Real>(values: &[F], resp: &[F], total: F, complement: bool) -> F {
    let mut acc = F::zero();
    for (&x, &r) in values.iter().zip(resp) {
        let w = if complement { F::one() - r } else { r };
        acc += w * x;
    }
    acc / total
}

fn weighted_sd<F: Real>(values: &[F], resp: &[F], mu: F, total: F, complement: bool) -> F {
    let mut acc = F::zero();
    for (&x, &r) in values.iter().zip(resp) {
        let w = if complement { F::one() - r } else { r };
        acc += w * (x - mu) * (x - mu);
    }
    (acc / total).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_mixture() -> BiomarkerMixture {
        BiomarkerMixture {
            mu_normal: 0.0,
            sd_normal: 1.0,
            mu_abnormal: 4.0,
            sd_abnormal: 1.0,
            pi_abnormal: 0.5,
        }
    }

    fn two_cluster_data(seed: u64, sep: f64) -> (Vec<f64>, Vec<SubjectLabel>) {
        let mut rng = substream(seed, &[0xda7a]);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let g: f64 = StandardNormal.sample(&mut rng);
            values.push(0.5 * g);
            labels.push(if i < 12 {
                SubjectLabel::Cn
            } else {
                SubjectLabel::Prodromal
            });
        }
        for i in 0..60 {
            let g: f64 = StandardNormal.sample(&mut rng);
            values.push(sep + 0.5 * g);
            labels.push(if i >= 48 {
                SubjectLabel::De
            } else {
                SubjectLabel::Prodromal
            });
        }
        (values, labels)
    }

    #[test]
    fn posterior_matches_reference_values() {
        let mix = unit_mixture();
        assert_abs_diff_eq!(posterior(4.0, &mix), 0.9996646498695336, epsilon = 1e-12);
        assert_abs_diff_eq!(posterior(2.0, &mix), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            posterior(0.0, &mix),
            1.0 - 0.9996646498695336,
            epsilon = 1e-12
        );
    }

    #[test]
    fn posterior_is_monotone_for_increasing_marker() {
        let mix = unit_mixture();
        let mut prev = -1.0;
        for i in -20..=20 {
            let p = posterior(i as f64 * 0.5, &mix);
            assert!(p >= prev);
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn recovers_separated_clusters() {
        let (values, labels) = two_cluster_data(5, 3.0);
        let fit = fit_mixture(&values, &labels).unwrap();
        let mix = fit.mixture;
        assert_abs_diff_eq!(mix.mu_normal, 0.0, epsilon = 0.2);
        assert_abs_diff_eq!(mix.mu_abnormal, 3.0, epsilon = 0.2);
        assert_abs_diff_eq!(mix.pi_abnormal, 0.5, epsilon = 0.1);
        assert!(mix.sd_normal > 0.3 && mix.sd_normal < 0.7);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..10u64 {
            let (values, labels) = two_cluster_data(seed, 1.2);
            let fit = fit_mixture(&values, &labels).unwrap();
            for w in fit.ll_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "ll dropped from {} to {} (seed {seed})",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn orientation_follows_labels_for_decreasing_marker() {
        let (values, labels) = two_cluster_data(3, 2.0);
        let flipped: Vec<f64> = values.iter().map(|&v| -v).collect();
        let fit = fit_mixture(&flipped, &labels).unwrap();
        assert!(fit.mixture.mu_abnormal < fit.mixture.mu_normal);
        assert!(posterior(-2.0, &fit.mixture) > 0.9);
        assert!(posterior(0.5, &fit.mixture) < 0.1);
    }

    #[test]
    fn constant_values_collapse() {
        let values = vec![1.0; 10];
        let mut labels = vec![SubjectLabel::Prodromal; 10];
        labels[0] = SubjectLabel::Cn;
        labels[1] = SubjectLabel::Cn;
        labels[8] = SubjectLabel::De;
        labels[9] = SubjectLabel::De;
        assert!(matches!(
            fit_mixture(&values, &labels),
            Err(GmmError::ComponentCollapse)
        ));
    }

    #[test]
    fn too_few_labeled_is_rejected() {
        let values = vec![0.0, 0.5, 1.0, 1.5];
        let labels = vec![
            SubjectLabel::Cn,
            SubjectLabel::Prodromal,
            SubjectLabel::De,
            SubjectLabel::De,
        ];
        assert!(matches!(
            fit_mixture(&values, &labels),
            Err(GmmError::TooFewLabeled { label: "CN", .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let (values, labels) = two_cluster_data(2, 3.0);
        let values32: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        let fit = fit_mixture(&values32, &labels).unwrap();
        assert!((fit.mixture.mu_abnormal - 3.0).abs() < 0.3);
    }
}
