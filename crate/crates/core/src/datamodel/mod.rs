//! Core data types: datasets, labels, posterior matrices, orderings, and
//! the ground truth attached to simulated cohorts.

mod io;

pub use io::{
    atomic_write, load_dataset, load_ground_truth, load_labels, save_dataset, save_ground_truth,
};

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Errors from dataset construction, validation, and persistence.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path} line {line}: unknown label `{token}` (expected CN, PRODROMAL, or DE)")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("invalid dataset: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("posterior {value} at subject {subject}, event {event} is outside [0, 1]")]
    InvalidPosterior {
        subject: usize,
        event: usize,
        value: String,
    },
    #[error("order {order:?} is not a permutation of 0..{expected}")]
    NotAPermutation { order: Vec<usize>, expected: usize },
    #[error("event centers are not monotone non-decreasing along the ordering")]
    CentersNotMonotone,
    #[error("expected {expected} event centers, got {actual}")]
    CenterCount { expected: usize, actual: usize },
}

/// Clinical label of a subject.
///
/// `Cn` and `De` anchor the two ends of progression; `Prodromal` subjects sit
/// in between and carry no event labels during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubjectLabel {
    Cn,
    Prodromal,
    De,
}

impl SubjectLabel {
    pub const ALL: [SubjectLabel; 3] = [SubjectLabel::Cn, SubjectLabel::Prodromal, SubjectLabel::De];

    pub fn token(self) -> &'static str {
        match self {
            SubjectLabel::Cn => "CN",
            SubjectLabel::Prodromal => "PRODROMAL",
            SubjectLabel::De => "DE",
        }
    }
}

impl fmt::Display for SubjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SubjectLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CN" => Ok(SubjectLabel::Cn),
            "PRODROMAL" => Ok(SubjectLabel::Prodromal),
            "DE" => Ok(SubjectLabel::De),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// A cross-sectional cohort: per-subject labels plus scalar biomarkers,
/// per-region feature matrices, or both.
///
/// `scalars` has one column per biomarker; `regions` has one matrix per
/// biomarker with one row per subject and one column per feature (voxel).
/// `tags` carries optional free-form annotations (the simulator uses them to
/// mark converters among prodromal subjects).
#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerDataset {
    pub subject_ids: Vec<String>,
    pub labels: Vec<SubjectLabel>,
    pub tags: Vec<Option<String>>,
    pub biomarker_names: Vec<String>,
    pub scalars: Option<Array2<f64>>,
    pub regions: Option<Vec<Array2<f64>>>,
}

impl BiomarkerDataset {
    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_biomarkers(&self) -> usize {
        self.biomarker_names.len()
    }

    /// Indices of subjects carrying `label`, in dataset order.
    pub fn label_indices(&self, label: SubjectLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_label(&self, label: SubjectLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Lists every invariant violation; empty means the dataset is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let m = self.n_subjects();
        let n = self.n_biomarkers();
        if m < 2 {
            problems.push(format!("dataset has {m} subjects, need at least 2"));
        }
        if self.labels.len() != m {
            problems.push(format!(
                "labels length {} does not match subject count {m}",
                self.labels.len()
            ));
        }
        if self.tags.len() != m {
            problems.push(format!(
                "tags length {} does not match subject count {m}",
                self.tags.len()
            ));
        }
        let mut seen = HashSet::new();
        for id in &self.subject_ids {
            if !seen.insert(id.as_str()) {
                problems.push(format!("duplicate subject id `{id}`"));
            }
            if id.is_empty() || id.contains([',', '\n', '\r']) {
                problems.push(format!("subject id `{id}` is empty or contains `,` or a newline"));
            }
        }
        for name in &self.biomarker_names {
            if name.is_empty() || name.contains([',', '\n', '\r']) {
                problems.push(format!(
                    "biomarker name `{name}` is empty or contains `,` or a newline"
                ));
            }
        }
        for tag in self.tags.iter().flatten() {
            if tag.contains([',', '\n', '\r']) {
                problems.push(format!("tag `{tag}` contains `,` or a newline"));
            }
        }
        if self.labels.len() == m {
            if self.count_label(SubjectLabel::Cn) == 0 {
                problems.push("no CN-labeled subjects".to_string());
            }
            if self.count_label(SubjectLabel::De) == 0 {
                problems.push("no DE-labeled subjects".to_string());
            }
        }
        if n == 0 {
            problems.push("dataset declares no biomarkers".to_string());
        }
        if self.scalars.is_none() && self.regions.is_none() {
            problems.push("dataset has neither scalar nor region features".to_string());
        }
        if let Some(scalars) = &self.scalars {
            if scalars.nrows() != m || scalars.ncols() != n {
                problems.push(format!(
                    "scalar matrix is {}x{}, expected {m}x{n}",
                    scalars.nrows(),
                    scalars.ncols()
                ));
            }
            if let Some((r, c)) = first_non_finite(scalars) {
                problems.push(format!("non-finite scalar value at row {r}, column {c}"));
            }
        }
        if let Some(regions) = &self.regions {
            if regions.len() != n {
                problems.push(format!(
                    "dataset has {} region matrices, expected {n}",
                    regions.len()
                ));
            }
            for (i, region) in regions.iter().enumerate() {
                if region.nrows() != m {
                    problems.push(format!(
                        "region {i} has {} rows, expected {m}",
                        region.nrows()
                    ));
                }
                if region.ncols() == 0 {
                    problems.push(format!("region {i} has zero feature columns"));
                }
                if let Some((r, c)) = first_non_finite(region) {
                    problems.push(format!(
                        "non-finite value in region {i} at row {r}, column {c}"
                    ));
                }
            }
        }
        problems
    }

    /// Errs with the full violation list if the dataset is invalid.
    pub fn check(&self) -> Result<(), DataError> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Invalid(problems))
        }
    }

    /// Extracts the subjects at `indices`, in the given order.
    ///
    /// Indices may repeat (bootstrap resamples do); repeated ids are suffixed
    /// `__2`, `__3`, ... so the result still has unique subject ids.
    pub fn select_subjects(&self, indices: &[usize]) -> BiomarkerDataset {
        let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        let mut subject_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            let id = self.subject_ids[i].as_str();
            let n = counts.entry(id).or_insert(0);
            *n += 1;
            if *n == 1 {
                subject_ids.push(id.to_string());
            } else {
                subject_ids.push(format!("{id}__{n}"));
            }
        }
        let take_rows = |m: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((indices.len(), m.ncols()));
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).assign(&m.row(i));
            }
            out
        };
        BiomarkerDataset {
            subject_ids,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            tags: indices.iter().map(|&i| self.tags[i].clone()).collect(),
            biomarker_names: self.biomarker_names.clone(),
            scalars: self.scalars.as_ref().map(&take_rows),
            regions: self
                .regions
                .as_ref()
                .map(|rs| rs.iter().map(&take_rows).collect()),
        }
    }
}

fn first_non_finite(m: &Array2<f64>) -> Option<(usize, usize)> {
    for (r, row) in m.rows().into_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Per-subject, per-event abnormality posteriors, each in [0, 1].
///
/// Rows are subjects, columns are events.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix<F: Real = f64> {
    values: Array2<F>,
}

impl<F: Real> PosteriorMatrix<F> {
    /// Wraps a subjects-by-events matrix, rejecting values outside [0, 1].
    pub fn new(values: Array2<F>) -> Result<Self, DataError> {
        for (subject, row) in values.rows().into_iter().enumerate() {
            for (event, &v) in row.iter().enumerate() {
                if !(v >= F::zero() && v <= F::one()) {
                    return Err(DataError::InvalidPosterior {
                        subject,
                        event,
                        value: format!("{v}"),
                    });
                }
            }
        }
        Ok(PosteriorMatrix { values })
    }

    pub fn n_subjects(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_events(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, subject: usize, event: usize) -> F {
        self.values[(subject, event)]
    }

    /// Posteriors of one subject across all events.
    pub fn subject(&self, subject: usize) -> ndarray::ArrayView1<'_, F> {
        self.values.row(subject)
    }

    pub fn as_array(&self) -> &Array2<F> {
        &self.values
    }
}

/// An event ordering, optionally annotated with per-event centers.
///
/// `order[k]` is the event placed at position `k`. `centers`, when present,
/// is indexed by event (not position), lies in [0, 1], and is monotone
/// non-decreasing along the ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOrdering {
    order: Vec<usize>,
    centers: Option<Vec<f64>>,
}

impl EventOrdering {
    pub fn new(order: Vec<usize>) -> Result<Self, DataError> {
        check_permutation(&order)?;
        Ok(EventOrdering {
            order,
            centers: None,
        })
    }

    pub fn with_centers(order: Vec<usize>, centers: Vec<f64>) -> Result<Self, DataError> {
        check_permutation(&order)?;
        if centers.len() != order.len() {
            return Err(DataError::CenterCount {
                expected: order.len(),
                actual: centers.len(),
            });
        }
        let along: Vec<f64> = order.iter().map(|&e| centers[e]).collect();
        let monotone = along.windows(2).all(|w| w[0] <= w[1]);
        let in_range = centers.iter().all(|&c| (0.0..=1.0).contains(&c));
        if !monotone || !in_range {
            return Err(DataError::CentersNotMonotone);
        }
        Ok(EventOrdering {
            order,
            centers: Some(centers),
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn centers(&self) -> Option<&[f64]> {
        self.centers.as_deref()
    }

    pub fn n_events(&self) -> usize {
        self.order.len()
    }

    /// Position of each event in the ordering: `positions()[order()[k]] == k`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (k, &e) in self.order.iter().enumerate() {
            pos[e] = k;
        }
        pos
    }
}

pub(crate) fn check_permutation(order: &[usize]) -> Result<(), DataError> {
    let n = order.len();
    let mut seen = vec![false; n];
    for &e in order {
        if e >= n || seen[e] {
            return Err(DataError::NotAPermutation {
                order: order.to_vec(),
                expected: n,
            });
        }
        seen[e] = true;
    }
    Ok(())
}

/// Generating parameters of a simulated cohort.
///
/// `true_order` is the event ordering implied by the onset centers, i.e. the
/// events sorted by ascending `mu_xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_order: Vec<usize>,
    pub mu_xi: Vec<f64>,
    pub sigma_xi: f64,
    pub rho: Vec<f64>,
    pub noise_std: f64,
    pub psi: Vec<f64>,
    pub seed: u64,
    pub latent_dim: usize,
    pub voxel_dim: usize,
    pub separation: f64,
    pub voxel_noise_std: f64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.mu_xi.len();
        if self.true_order.len() != n || self.rho.len() != n {
            return Err(DataError::InvalidGroundTruth(format!(
                "expected {n} entries in true_order and rho, got {} and {}",
                self.true_order.len(),
                self.rho.len()
            )));
        }
        check_permutation(&self.true_order).map_err(|_| {
            DataError::InvalidGroundTruth("true_order is not a permutation".to_string())
        })?;
        let sorted = self
            .true_order
            .windows(2)
            .all(|w| self.mu_xi[w[0]] <= self.mu_xi[w[1]]);
        if !sorted {
            return Err(DataError::InvalidGroundTruth(
                "true_order does not sort mu_xi ascending".to_string(),
            ));
        }
        Ok(())
    }
}
