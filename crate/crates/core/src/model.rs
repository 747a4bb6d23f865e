//! End-to-end fitting: per-biomarker posteriors, event ordering, centers.
//!
//! Three methods share one pipeline shape. `ebm` and `debm` turn scalar
//! biomarkers into event posteriors with two-component mixtures; `ndebm`
//! turns region voxel tables into posteriors with semi-supervised linear
//! classifiers. `ebm` then maximizes the stage-marginalized data likelihood
//! over orderings, while `debm` and `ndebm` minimize the summed probabilistic
//! Kendall distance to the per-subject orderings. Every fitted model carries
//! event centers so subjects can be staged on a common [0, 1] timeline.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{atomic_write, BiomarkerDataset, DataError, EventOrdering, PosteriorMatrix};
use crate::gmm::{fit_mixture, posterior as mixture_posterior, BiomarkerMixture, GmmError};
use crate::ordering::{central_ordering, fit_ebm};
use crate::ssvm::{semi_supervised_posteriors, RegionPosteriorModel, SsvmConfig, SsvmError};
use crate::staging::{estimate_event_centers, patient_stage, stage_weights, StageDistribution};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("method {method} needs the scalar biomarker table, which the dataset lacks")]
    MissingScalars { method: Method },
    #[error("method {method} needs region voxel tables, which the dataset lacks")]
    MissingRegions { method: Method },
    #[error("biomarker {name:?}: {source}")]
    Mixture {
        name: String,
        #[source]
        source: GmmError,
    },
    #[error("region {name:?}: {source}")]
    Region {
        name: String,
        #[source]
        source: SsvmError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading {path:?}: {source}")]
    Read {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model was fitted on biomarkers {expected:?} but the dataset has {got:?}")]
    BiomarkerMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("region {name:?} has {got} voxels, the model expects {expected}")]
    RegionWidth {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown method {0:?}, expected ebm, debm, or ndebm")]
    UnknownMethod(String),
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
}

/// Which event-ordering method a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ebm,
    Debm,
    Ndebm,
}

impl Method {
    pub fn token(self) -> &'static str {
        match self {
            Method::Ebm => "ebm",
            Method::Debm => "debm",
            Method::Ndebm => "ndebm",
        }
    }

    /// Whether the method reads region voxel tables instead of scalars.
    pub fn needs_regions(self) -> bool {
        matches!(self, Method::Ndebm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ebm" => Ok(Method::Ebm),
            "debm" => Ok(Method::Debm),
            "ndebm" => Ok(Method::Ndebm),
            _ => Err(PipelineError::UnknownMethod(s.to_string())),
        }
    }
}

/// Knobs shared by all fits; `ssvm` only matters for `ndebm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub ssvm: SsvmConfig,
    /// Random restarts of the likelihood ascent used by `ebm`.
    pub ebm_restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ssvm: SsvmConfig::default(),
            ebm_restarts: 10,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.ebm_restarts == 0 {
            return Err(PipelineError::InvalidOptions(
                "ebm_restarts must be at least 1".into(),
            ));
        }
        self.ssvm
            .validate()
            .map_err(|e| PipelineError::InvalidOptions(e.to_string()))
    }
}

/// The per-biomarker posterior stage of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorModel {
    /// One scalar mixture per biomarker, used by `ebm` and `debm`.
    Mixtures { mixtures: Vec<BiomarkerMixture> },
    /// One region classifier per biomarker, used by `ndebm`.
    Classifiers {
        classifiers: Vec<RegionPosteriorModel>,
    },
}

/// A complete fitted model, sufficient to stage new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub method: Method,
    pub biomarker_names: Vec<String>,
    /// Central or maximum-likelihood ordering, always with centers.
    pub ordering: EventOrdering,
    /// Log-likelihood for `ebm`, summed ordering distance otherwise.
    pub objective: f64,
    pub posterior_model: PosteriorModel,
    pub options: FitOptions,
}

impl FittedModel {
    /// Fits `method` to `dataset` end to end.
    pub fn fit(
        method: Method,
        dataset: &BiomarkerDataset,
        options: &FitOptions,
    ) -> Result<FittedModel, PipelineError> {
        dataset.check()?;
        options.validate()?;
        let (posteriors, posterior_model) = fit_posteriors(method, dataset, options)?;
        let (order, objective) = match method {
            Method::Ebm => {
                let fit = fit_ebm(&posteriors, options.ebm_restarts, options.seed);
                (fit.order, fit.log_likelihood)
            }
            Method::Debm | Method::Ndebm => {
                let fit = central_ordering(&posteriors);
                (fit.order, fit.objective)
            }
        };
        let centers = estimate_event_centers(&order, &posteriors);
        let ordering = EventOrdering::with_centers(order, centers)?;
        Ok(FittedModel {
            method,
            biomarker_names: dataset.biomarker_names.clone(),
            ordering,
            objective,
            posterior_model,
            options: options.clone(),
        })
    }

    /// Event posteriors for every subject of `dataset` under this model.
    pub fn posterior_matrix(
        &self,
        dataset: &BiomarkerDataset,
    ) -> Result<PosteriorMatrix, PipelineError> {
        if dataset.biomarker_names != self.biomarker_names {
            return Err(PipelineError::BiomarkerMismatch {
                expected: self.biomarker_names.clone(),
                got: dataset.biomarker_names.clone(),
            });
        }
        let m = dataset.n_subjects();
        let n = dataset.n_biomarkers();
        let mut p = Array2::zeros((m, n));
        match &self.posterior_model {
            PosteriorModel::Mixtures { mixtures } => {
                let scalars = dataset.scalars.as_ref().ok_or(PipelineError::MissingScalars {
                    method: self.method,
                })?;
                for (e, mixture) in mixtures.iter().enumerate() {
                    for j in 0..m {
                        p[[j, e]] = mixture_posterior(scalars[[j, e]], mixture);
                    }
                }
            }
            PosteriorModel::Classifiers { classifiers } => {
                let regions = dataset.regions.as_ref().ok_or(PipelineError::MissingRegions {
                    method: self.method,
                })?;
                for (e, model) in classifiers.iter().enumerate() {
                    let expected = model.classifier.weights.len();
                    if regions[e].ncols() != expected {
                        return Err(PipelineError::RegionWidth {
                            name: self.biomarker_names[e].clone(),
                            expected,
                            got: regions[e].ncols(),
                        });
                    }
                    for j in 0..m {
                        let row = regions[e].row(j);
                        let row = row.as_slice().expect("region rows are contiguous");
                        p[[j, e]] = model.posterior(row);
                    }
                }
            }
        }
        Ok(PosteriorMatrix::new(p)?)
    }

    /// Event centers along `[0, 1]`, indexed by event.
    pub fn centers(&self) -> &[f64] {
        self.ordering
            .centers()
            .expect("fitted models always carry centers")
    }

    /// Continuous stages of every subject in `posteriors`.
    pub fn stage_posteriors(&self, posteriors: &PosteriorMatrix) -> Vec<f64> {
        let order = self.ordering.order();
        let centers = self.centers();
        (0..posteriors.n_subjects())
            .map(|j| {
                let row = posteriors.subject(j);
                let row = row.as_slice().expect("posterior rows are contiguous");
                patient_stage(order, centers, row)
            })
            .collect()
    }

    /// Stage weight distributions of every subject in `posteriors`.
    pub fn stage_distributions(&self, posteriors: &PosteriorMatrix) -> Vec<StageDistribution> {
        let order = self.ordering.order();
        (0..posteriors.n_subjects())
            .map(|j| {
                let row = posteriors.subject(j);
                let row = row.as_slice().expect("posterior rows are contiguous");
                stage_weights(order, row)
            })
            .collect()
    }

    /// Posterior extraction and staging in one step.
    pub fn stage_dataset(&self, dataset: &BiomarkerDataset) -> Result<Vec<f64>, PipelineError> {
        let posteriors = self.posterior_matrix(dataset)?;
        Ok(self.stage_posteriors(&posteriors))
    }

    /// Writes the model as pretty JSON, atomically.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        Ok(atomic_write(path, json.as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<FittedModel, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits the posterior stage and returns the training posteriors with it.
fn fit_posteriors(
    method: Method,
    dataset: &BiomarkerDataset,
    options: &FitOptions,
) -> Result<(PosteriorMatrix, PosteriorModel), PipelineError> {
    let m = dataset.n_subjects();
    let n = dataset.n_biomarkers();
    let mut p = Array2::zeros((m, n));
    let model = if method.needs_regions() {
        let regions = dataset
            .regions
            .as_ref()
            .ok_or(PipelineError::MissingRegions { method })?;
        let mut classifiers = Vec::with_capacity(n);
        for (e, name) in dataset.biomarker_names.iter().enumerate() {
            let fit = semi_supervised_posteriors(&regions[e], &dataset.labels, &options.ssvm)
                .map_err(|source| PipelineError::Region {
                    name: name.clone(),
                    source,
                })?;
            for (j, &q) in fit.posteriors.iter().enumerate() {
                p[[j, e]] = q;
            }
            classifiers.push(fit.model);
        }
        PosteriorModel::Classifiers { classifiers }
    } else {
        let scalars = dataset
            .scalars
            .as_ref()
            .ok_or(PipelineError::MissingScalars { method })?;
        let mut mixtures = Vec::with_capacity(n);
        for (e, name) in dataset.biomarker_names.iter().enumerate() {
            let column: Vec<f64> = scalars.column(e).to_vec();
            let fit = fit_mixture(&column, &dataset.labels).map_err(|source| {
                PipelineError::Mixture {
                    name: name.clone(),
                    source,
                }
            })?;
            for (j, &x) in column.iter().enumerate() {
                p[[j, e]] = mixture_posterior(x, &fit.mixture);
            }
            mixtures.push(fit.mixture);
        }
        PosteriorModel::Mixtures { mixtures }
    };
    Ok((PosteriorMatrix::new(p)?, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbiote::{simulate_dataset, SimulationConfig};

    fn tiny_config(events: usize, subjects: usize) -> SimulationConfig {
        SimulationConfig {
            subjects,
            events,
            latent_dim: 4,
            voxel_dim: 8,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn method_tokens_round_trip() {
        for method in [Method::Ebm, Method::Debm, Method::Ndebm] {
            let parsed: Method = method.token().parse().unwrap();
            assert_eq!(parsed, method);
        }
        assert_eq!("DEBM".parse::<Method>().unwrap(), Method::Debm);
        assert!("gmm".parse::<Method>().is_err());
    }

    #[test]
    fn scalar_methods_reject_scalarless_data() {
        let (mut ds, _) = simulate_dataset(&tiny_config(3, 30), 7).unwrap();
        ds.scalars = None;
        let err = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingScalars { .. }));
    }

    #[test]
    fn ndebm_rejects_regionless_data() {
        let (mut ds, _) = simulate_dataset(&tiny_config(3, 30), 7).unwrap();
        ds.regions = None;
        let err = FittedModel::fit(Method::Ndebm, &ds, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingRegions { .. }));
    }

    #[test]
    fn zero_restarts_rejected() {
        let (ds, _) = simulate_dataset(&tiny_config(3, 30), 7).unwrap();
        let options = FitOptions {
            ebm_restarts: 0,
            ..FitOptions::default()
        };
        let err = FittedModel::fit(Method::Ebm, &ds, &options).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidOptions(_)));
    }

    #[test]
    fn debm_fit_stages_cohort_sensibly() {
        let (ds, truth) = simulate_dataset(&tiny_config(4, 80), 11).unwrap();
        let model = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap();
        assert_eq!(model.ordering.n_events(), 4);
        assert_eq!(model.centers().len(), 4);
        let stages = model.stage_dataset(&ds).unwrap();
        assert!(stages.iter().all(|s| (0.0..=1.0).contains(s)));
        // Stages should track the generating progression scores.
        let de_mean = mean_where(&stages, &ds, crate::datamodel::SubjectLabel::De);
        let cn_mean = mean_where(&stages, &ds, crate::datamodel::SubjectLabel::Cn);
        assert!(
            de_mean > cn_mean + 0.2,
            "DE mean {de_mean} vs CN mean {cn_mean}"
        );
        let _ = truth;
    }

    #[test]
    fn ebm_fit_produces_finite_objective() {
        let (ds, _) = simulate_dataset(&tiny_config(4, 60), 3).unwrap();
        let model = FittedModel::fit(Method::Ebm, &ds, &FitOptions::default()).unwrap();
        assert!(model.objective.is_finite());
        assert!(model.objective < 0.0);
    }

    #[test]
    fn model_json_round_trips() {
        let (ds, _) = simulate_dataset(&tiny_config(3, 40), 5).unwrap();
        let model = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = FittedModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        let stages = model.stage_dataset(&ds).unwrap();
        let reloaded_stages = loaded.stage_dataset(&ds).unwrap();
        assert_eq!(stages, reloaded_stages);
    }

    #[test]
    fn posterior_matrix_rejects_foreign_biomarkers() {
        let (ds, _) = simulate_dataset(&tiny_config(3, 40), 5).unwrap();
        let model = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap();
        let mut other = ds.clone();
        other.biomarker_names[0] = "elsewhere".into();
        let err = model.posterior_matrix(&other).unwrap_err();
        assert!(matches!(err, PipelineError::BiomarkerMismatch { .. }));
    }

    fn mean_where(
        stages: &[f64],
        ds: &BiomarkerDataset,
        label: crate::datamodel::SubjectLabel,
    ) -> f64 {
        let idx = ds.label_indices(label);
        idx.iter().map(|&j| stages[j]).sum::<f64>() / idx.len() as f64
    }
}
