//! Synthetic cohort generator with known ground truth.
//!
//! Each subject sits at a disease time `psi` on [0, 1]. Each biomarker
//! (region) has an onset center `mu_xi`, and a subject's onset for that event
//! is drawn around the center, so individual event orderings vary around the
//! central one. The abnormality of subject `j` in region `n` follows a
//! sigmoid in `psi - xi` plus measurement noise; a latent point with exactly
//! that abnormality is drawn in the region's latent space and decoded into
//! non-negative voxel intensities. The stored scalar biomarker is the sum of
//! the voxels, which buries the direction of progression in aggregate volume
//! and makes the voxel-level models earn their keep.
//!
//! Labels follow the `psi` order statistics: the lowest block is CN, the
//! middle PRODROMAL, the top DE. The upper half of the PRODROMAL band is
//! tagged `converter`, the lower half `nonconverter`.

mod latent;

pub use latent::{softplus, DecoderModel, LatentRegionModel};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{BiomarkerDataset, GroundTruth, SubjectLabel};
use crate::rng::{stream, substream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("degenerate latent geometry: CN and DE means coincide")]
    DegenerateGeometry,
}

/// Full generator configuration.
///
/// `mu_xi` defaults to onset centers equally spaced in the interior of
/// [0, 1], and `sigma_xi` to the spacing between them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Cohort size.
    pub subjects: usize,
    /// Number of biomarkers (regions, events).
    pub events: usize,
    /// Sigmoid steepness, shared by all events.
    pub rho: f64,
    /// Onset centers per event; `None` means equally spaced.
    pub mu_xi: Option<Vec<f64>>,
    /// Std of per-subject onset around each center; `None` means the spacing.
    pub sigma_xi: Option<f64>,
    /// Std of the abnormality measurement noise.
    pub noise_std: f64,
    /// CN / PRODROMAL / DE fractions; must sum to 1.
    pub label_fractions: [f64; 3],
    /// Latent dimension K of each region.
    pub latent_dim: usize,
    /// Voxels D per region.
    pub voxel_dim: usize,
    /// Distance between the CN and DE latent means.
    pub separation: f64,
    /// Std of the voxel observation noise.
    pub voxel_noise_std: f64,
    /// How many projected stds the progression axis extends beyond each
    /// class mean.
    pub extension_sigmas: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            subjects: 1737,
            events: 15,
            rho: 10.0,
            mu_xi: None,
            sigma_xi: None,
            noise_std: 0.05,
            label_fractions: [0.25, 0.55, 0.20],
            latent_dim: 32,
            voxel_dim: 512,
            separation: 4.0,
            voxel_noise_std: 0.1,
            extension_sigmas: 3.0,
        }
    }
}

impl SimulationConfig {
    /// Onset centers: configured, or `(i + 1) / (N + 1)` for event `i`.
    pub fn onset_centers(&self) -> Vec<f64> {
        match &self.mu_xi {
            Some(centers) => centers.clone(),
            None => (0..self.events)
                .map(|i| (i + 1) as f64 / (self.events + 1) as f64)
                .collect(),
        }
    }

    /// Onset std: configured, or the default center spacing `1 / (N + 1)`.
    pub fn onset_std(&self) -> f64 {
        self.sigma_xi
            .unwrap_or(1.0 / (self.events + 1) as f64)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if self.subjects < 4 {
            problems.push(format!("subjects is {}, need at least 4", self.subjects));
        }
        if self.events == 0 {
            problems.push("events must be positive".to_string());
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            problems.push(format!("rho is {}, must be positive and finite", self.rho));
        }
        if let Some(mu) = &self.mu_xi {
            if mu.len() != self.events {
                problems.push(format!(
                    "mu_xi has {} entries, expected {}",
                    mu.len(),
                    self.events
                ));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                problems.push("mu_xi contains a non-finite value".to_string());
            }
        }
        if !(self.onset_std() >= 0.0) || !self.onset_std().is_finite() {
            problems.push("sigma_xi must be non-negative and finite".to_string());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            problems.push("noise_std must be non-negative and finite".to_string());
        }
        if !(self.voxel_noise_std >= 0.0) || !self.voxel_noise_std.is_finite() {
            problems.push("voxel_noise_std must be non-negative and finite".to_string());
        }
        let frac_sum: f64 = self.label_fractions.iter().sum();
        if self.label_fractions.iter().any(|&f| f < 0.0) || (frac_sum - 1.0).abs() > 1e-9 {
            problems.push(format!(
                "label fractions must sum to 1 and be non-negative, got {:?}",
                self.label_fractions
            ));
        }
        if self.latent_dim == 0 {
            problems.push("latent_dim must be positive".to_string());
        }
        if self.voxel_dim == 0 {
            problems.push("voxel_dim must be positive".to_string());
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            problems.push("separation must be positive and finite".to_string());
        }
        if !(self.extension_sigmas >= 0.0) || !self.extension_sigmas.is_finite() {
            problems.push("extension_sigmas must be non-negative and finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Sigmoid abnormality of a subject at disease time `psi` for an event with
/// onset `xi` and steepness `rho`, plus measurement noise `eps`.
///
/// Panics on non-finite input or non-positive `rho`.
pub fn abnormality(psi: f64, rho: f64, xi: f64, eps: f64) -> f64 {
    assert!(
        psi.is_finite() && rho.is_finite() && xi.is_finite() && eps.is_finite(),
        "abnormality inputs must be finite"
    );
    assert!(rho > 0.0, "rho must be positive");
    1.0 / (1.0 + (-rho * (psi - xi)).exp()) + eps
}

/// Scalar biomarker computed from a region's voxel intensities: their sum.
pub fn scalar_aggregate(voxels: &[f64]) -> f64 {
    voxels.iter().sum()
}

/// Assigns labels by `psi` order statistics with the given fractions, using
/// largest-remainder rounding so the counts sum to the cohort size.
///
/// Returns per-subject labels and tags in cohort order.
fn assign_labels(
    psi: &[f64],
    fractions: [f64; 3],
) -> Result<(Vec<SubjectLabel>, Vec<Option<String>>), SimError> {
    let m = psi.len();
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut assigned = 0usize;
    for (c, &f) in fractions.iter().enumerate() {
        let exact = f * m as f64;
        counts[c] = exact.floor() as usize;
        assigned += counts[c];
        remainders.push((c, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(c, _) in remainders.iter().take(m - assigned) {
        counts[c] += 1;
    }
    if counts[0] < 2 || counts[2] < 2 {
        return Err(SimError::InvalidConfig(format!(
            "label fractions give {} CN and {} DE subjects, need at least 2 of each",
            counts[0], counts[2]
        )));
    }

    let mut by_psi: Vec<usize> = (0..m).collect();
    by_psi.sort_by(|&a, &b| psi[a].partial_cmp(&psi[b]).unwrap().then(a.cmp(&b)));

    let mut labels = vec![SubjectLabel::Cn; m];
    let mut tags = vec![None; m];
    let prodromal_start = counts[0];
    let de_start = counts[0] + counts[1];
    // Converters are the upper half of the prodromal psi band, taking the
    // middle subject when the band has odd size.
    let converter_start = de_start - counts[1].div_ceil(2);
    for (rank, &subject) in by_psi.iter().enumerate() {
        if rank < prodromal_start {
            labels[subject] = SubjectLabel::Cn;
        } else if rank < de_start {
            labels[subject] = SubjectLabel::Prodromal;
            tags[subject] = Some(if rank >= converter_start {
                "converter".to_string()
            } else {
                "nonconverter".to_string()
            });
        } else {
            labels[subject] = SubjectLabel::De;
        }
    }
    Ok((labels, tags))
}

/// Generates a cohort with voxel features, scalar aggregates, labels, and
/// the full set of generating parameters.
///
/// Every random draw comes from a named substream of `seed`, with one stream
/// per (consumer, region, subject) combination, so the output is a pure
/// function of `(cfg, seed)`.
pub fn simulate_dataset(
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<(BiomarkerDataset, GroundTruth), SimError> {
    cfg.validate()?;
    let m = cfg.subjects;
    let n = cfg.events;
    let mu_xi = cfg.onset_centers();
    let sigma_xi = cfg.onset_std();

    let mut psi_rng = substream(seed, &[stream::PSI]);
    let psi: Vec<f64> = (0..m).map(|_| psi_rng.random::<f64>()).collect();
    let (labels, tags) = assign_labels(&psi, cfg.label_fractions)?;

    // Per-subject onsets and measurement noise, one stream per subject.
    let mut xi = Array2::zeros((m, n));
    let mut eps = Array2::zeros((m, n));
    for j in 0..m {
        let mut xi_rng = substream(seed, &[stream::XI, j as u64]);
        let mut eps_rng = substream(seed, &[stream::EPSILON, j as u64]);
        for e in 0..n {
            let gx: f64 = StandardNormal.sample(&mut xi_rng);
            xi[(j, e)] = mu_xi[e] + sigma_xi * gx;
            let ge: f64 = StandardNormal.sample(&mut eps_rng);
            eps[(j, e)] = cfg.noise_std * ge;
        }
    }

    let mut regions: Vec<Array2<f64>> = Vec::with_capacity(n);
    let mut scalars = Array2::zeros((m, n));
    for region in 0..n {
        let mut pop_rng = substream(seed, &[stream::LATENT_POP, region as u64]);
        let mu_cn: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| StandardNormal.sample(&mut pop_rng))
            .collect();
        let axis: Vec<f64> = loop {
            let g: Vec<f64> = (0..cfg.latent_dim)
                .map(|_| StandardNormal.sample(&mut pop_rng))
                .collect();
            let len = g.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if len > 1e-12 {
                break g.iter().map(|&v| v / len).collect();
            }
        };
        let mu_de: Vec<f64> = (0..cfg.latent_dim)
            .map(|d| mu_cn[d] + cfg.separation * axis[d])
            .collect();
        let sigma_cn: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| pop_rng.random_range(0.6..1.4))
            .collect();
        let sigma_de: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| pop_rng.random_range(0.6..1.4))
            .collect();
        let model = LatentRegionModel::new(
            &mu_cn,
            &sigma_cn,
            &mu_de,
            &sigma_de,
            cfg.extension_sigmas,
            &mut pop_rng,
        )?;
        let decoder = DecoderModel::random(
            cfg.latent_dim,
            cfg.voxel_dim,
            cfg.voxel_noise_std,
            &mut substream(seed, &[stream::DECODER, region as u64]),
        );

        let mut voxels = Array2::zeros((m, cfg.voxel_dim));
        for j in 0..m {
            let a = abnormality(psi[j], cfg.rho, xi[(j, region)], eps[(j, region)]);
            let z = model.sample_latent_at(
                a,
                &mut substream(seed, &[stream::LATENT_SUBJECT, region as u64, j as u64]),
            );
            let row = decoder.decode(
                &z,
                &mut substream(seed, &[stream::VOXEL_NOISE, region as u64, j as u64]),
            );
            scalars[(j, region)] = scalar_aggregate(&row);
            for (v, &val) in row.iter().enumerate() {
                voxels[(j, v)] = val;
            }
        }
        regions.push(voxels);
    }

    let width = (m.max(2) - 1).to_string().len();
    let subject_ids = (0..m).map(|j| format!("subj_{j:0width$}")).collect();
    let name_width = (n.max(2) - 1).to_string().len().max(2);
    let biomarker_names = (0..n)
        .map(|e| format!("region_{e:0name_width$}"))
        .collect();

    let mut true_order: Vec<usize> = (0..n).collect();
    true_order.sort_by(|&a, &b| mu_xi[a].partial_cmp(&mu_xi[b]).unwrap().then(a.cmp(&b)));

    let ds = BiomarkerDataset {
        subject_ids,
        labels,
        tags,
        biomarker_names,
        scalars: Some(scalars),
        regions: Some(regions),
    };
    let gt = GroundTruth {
        true_order,
        mu_xi,
        sigma_xi,
        rho: vec![cfg.rho; n],
        noise_std: cfg.noise_std,
        psi,
        seed,
        latent_dim: cfg.latent_dim,
        voxel_dim: cfg.voxel_dim,
        separation: cfg.separation,
        voxel_noise_std: cfg.voxel_noise_std,
    };
    debug_assert!(ds.validate().is_empty());
    debug_assert!(gt.validate().is_ok());
    Ok((ds, gt))
}
