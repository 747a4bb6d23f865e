//! Event-based disease progression modeling.
//!
//! The crate provides three related models over cross-sectional biomarker
//! data: the classic event-based model (EBM), the discriminative event-based
//! model (DEBM), and a non-parametric variant (nDEBM) that replaces the
//! per-biomarker Gaussian mixture with a semi-supervised weighted SVM whose
//! decision values are calibrated into event posteriors. On top of the fitted
//! ordering, every model stages subjects on a continuous [0, 1] scale.
//!
//! A synthetic cohort generator with known ground-truth event ordering lives
//! in [`simbiote`], and [`eval`] holds the recovery metrics, cross-validation
//! and bootstrap drivers used to compare methods against that ground truth.
//!
//! Numeric kernels (mixtures, SVM, calibration, ordering, staging, metrics)
//! are generic over the scalar type through the [`scalar::Real`] trait, so
//! they run in `f32` as well as the default `f64`. The concrete pipeline
//! (datasets, simulation, model fitting, serialization) is `f64`.

pub mod datamodel;
pub mod eval;
pub mod gmm;
pub mod model;
pub mod ordering;
pub mod rng;
pub mod scalar;
pub mod simbiote;
pub mod ssvm;
pub mod staging;

pub use datamodel::{BiomarkerDataset, EventOrdering, GroundTruth, PosteriorMatrix, SubjectLabel};
pub use model::{FitOptions, FittedModel, Method};
pub use scalar::Real;

/// Single-precision aliases for the scalar-generic kernels. The default type
/// parameter on each struct already selects `f64`.
pub type PosteriorMatrixF32 = datamodel::PosteriorMatrix<f32>;
pub type BiomarkerMixtureF32 = gmm::BiomarkerMixture<f32>;
pub type LinearClassifierF32 = ssvm::LinearClassifier<f32>;
pub type PlattCalibrationF32 = ssvm::PlattCalibration<f32>;
pub type StageDistributionF32 = staging::StageDistribution<f32>;
