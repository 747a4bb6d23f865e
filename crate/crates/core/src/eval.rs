//! Evaluation: ranking metrics, cross-validated staging, bootstrap spread.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{BiomarkerDataset, SubjectLabel};
use crate::model::{FitOptions, FittedModel, Method, PipelineError};
use crate::rng::{stream, substream};

/// Resample draws per bootstrap replicate before giving up; resamples whose
/// fit degenerates (for example a biomarker column collapsing to one repeated
/// value) are redrawn from the same stream.
const BOOTSTRAP_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("need at least 1 repeat")]
    NoRepeats,
    #[error("repeat {repeat}: no fold produced usable test stages")]
    NoUsableFolds { repeat: usize },
    #[error("need at least 1 bootstrap resample")]
    NoResamples,
    #[error("bootstrap resample {resample} failed {attempts} times, last error: {last}")]
    ResampleExhausted {
        resample: usize,
        attempts: usize,
        last: String,
    },
}

/// Area under the ROC curve of `positive` scores against `negative` ones,
/// by the rank-sum formulation with average ranks on ties. `None` when
/// either side is empty.
pub fn auc(negative: &[f64], positive: &[f64]) -> Option<f64> {
    if negative.is_empty() || positive.is_empty() {
        return None;
    }
    let mut pooled: Vec<(f64, bool)> = negative
        .iter()
        .map(|&s| (s, false))
        .chain(positive.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must be finite"));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the tie, so each gets the group mean.
        let rank = (i + 1 + j) as f64 / 2.0;
        for entry in &pooled[i..j] {
            if entry.1 {
                positive_rank_sum += rank;
            }
        }
        i = j;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Some((positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Kendall distance between two orderings of the same events, as the
/// fraction of event pairs they place in opposite relative order.
pub fn kendall_distance_normalized(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "orderings must cover the same events");
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let pos = |order: &[usize]| {
        let mut p = vec![usize::MAX; n];
        for (k, &e) in order.iter().enumerate() {
            assert!(e < n && p[e] == usize::MAX, "not a permutation");
            p[e] = k;
        }
        p
    };
    let pa = pos(a);
    let pb = pos(b);
    let mut discordant = 0usize;
    for e in 0..n {
        for f in e + 1..n {
            if (pa[e] < pa[f]) != (pb[e] < pb[f]) {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalOptions {
    pub folds: usize,
    pub repeats: usize,
    pub fit: FitOptions,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions {
            folds: 10,
            repeats: 10,
            fit: FitOptions::default(),
        }
    }
}

/// Test-set staging quality of one repeat, pooled over its folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub repeat: usize,
    /// DE against CN discrimination of pooled test stages.
    pub auc_de_cn: f64,
    /// Converter against nonconverter discrimination, when tags allow it.
    pub auc_converters: Option<f64>,
    pub folds_used: usize,
    /// Held-out subjects staged across the repeat's usable folds.
    pub subjects_staged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWarning {
    pub repeat: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub method: Method,
    pub folds: usize,
    pub metrics: Vec<RepeatMetrics>,
    pub warnings: Vec<FoldWarning>,
}

/// Stratified fold assignment of one cross-validation repeat: shuffles each
/// label class and deals its members round robin, so every subject lands in
/// exactly one fold and class proportions are balanced across folds.
pub fn stratified_fold_assignment(
    dataset: &BiomarkerDataset,
    folds: usize,
    seed: u64,
    repeat: usize,
) -> Vec<usize> {
    let mut rng = substream(seed, &[stream::CROSSVAL, repeat as u64]);
    let mut fold_of = vec![0usize; dataset.n_subjects()];
    for label in [SubjectLabel::Cn, SubjectLabel::Prodromal, SubjectLabel::De] {
        let mut members = dataset.label_indices(label);
        members.shuffle(&mut rng);
        for (i, &j) in members.iter().enumerate() {
            fold_of[j] = i % folds;
        }
    }
    fold_of
}

/// Repeated stratified k-fold cross-validation of out-of-sample staging.
///
/// Each repeat assigns folds with [`stratified_fold_assignment`], fits on
/// each training split, and stages its held-out subjects; stages are pooled
/// per repeat before the AUCs are taken. Folds whose training split cannot
/// support a fit are skipped with a warning.
pub fn crossval(
    method: Method,
    dataset: &BiomarkerDataset,
    options: &CrossvalOptions,
) -> Result<CrossvalReport, EvalError> {
    if options.folds < 2 {
        return Err(EvalError::TooFewFolds(options.folds));
    }
    if options.repeats == 0 {
        return Err(EvalError::NoRepeats);
    }
    dataset.check().map_err(PipelineError::from)?;
    options.fit.validate()?;
    let m = dataset.n_subjects();
    let mut metrics = Vec::with_capacity(options.repeats);
    let mut warnings = Vec::new();
    for repeat in 0..options.repeats {
        let fold_of = stratified_fold_assignment(dataset, options.folds, options.fit.seed, repeat);
        let mut pooled: Vec<(usize, f64)> = Vec::with_capacity(m);
        let mut folds_used = 0;
        for fold in 0..options.folds {
            let train: Vec<usize> = (0..m).filter(|&j| fold_of[j] != fold).collect();
            let test: Vec<usize> = (0..m).filter(|&j| fold_of[j] == fold).collect();
            if test.is_empty() {
                continue;
            }
            let train_ds = dataset.select_subjects(&train);
            let cn = train_ds.count_label(SubjectLabel::Cn);
            let de = train_ds.count_label(SubjectLabel::De);
            if cn < 2 || de < 2 {
                warnings.push(FoldWarning {
                    repeat,
                    fold,
                    message: format!(
                        "skipped: training split has {cn} CN and {de} DE subjects"
                    ),
                });
                continue;
            }
            let model = match FittedModel::fit(method, &train_ds, &options.fit) {
                Ok(model) => model,
                Err(err) => {
                    warnings.push(FoldWarning {
                        repeat,
                        fold,
                        message: format!("skipped: {err}"),
                    });
                    continue;
                }
            };
            let test_ds = dataset.select_subjects(&test);
            let stages = model.stage_dataset(&test_ds)?;
            pooled.extend(test.iter().copied().zip(stages));
            folds_used += 1;
        }
        if pooled.is_empty() {
            return Err(EvalError::NoUsableFolds { repeat });
        }
        let stages_of = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
            pooled
                .iter()
                .filter(|(j, _)| keep(*j))
                .map(|&(_, s)| s)
                .collect()
        };
        let cn_stages = stages_of(&|j| dataset.labels[j] == SubjectLabel::Cn);
        let de_stages = stages_of(&|j| dataset.labels[j] == SubjectLabel::De);
        let auc_de_cn = auc(&cn_stages, &de_stages)
            .expect("dataset validation guarantees both classes are present");
        let tagged = |wanted: &str| -> Vec<f64> {
            stages_of(&|j| dataset.tags[j].as_deref() == Some(wanted))
        };
        let auc_converters = auc(&tagged("nonconverter"), &tagged("converter"));
        metrics.push(RepeatMetrics {
            repeat,
            auc_de_cn,
            auc_converters,
            folds_used,
            subjects_staged: pooled.len(),
        });
    }
    Ok(CrossvalReport {
        method,
        folds: options.folds,
        metrics,
        warnings,
    })
}

/// Bootstrap spread of one event's placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub event: usize,
    pub name: String,
    pub mean_center: f64,
    pub std_center: f64,
    pub mean_position: f64,
    pub std_position: f64,
}

/// Bootstrap report; rows follow the full-data fit's ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub method: Method,
    pub resamples: usize,
    pub full_fit_order: Vec<usize>,
    pub rows: Vec<BootstrapRow>,
}

/// Nonparametric bootstrap of event centers and ordering positions.
///
/// Each replicate resamples every label class with replacement at its
/// original size, refits, and records each event's center and position.
/// Spreads are population standard deviations over replicates, so a single
/// replicate reports zeros.
pub fn bootstrap_event_centers(
    method: Method,
    dataset: &BiomarkerDataset,
    options: &FitOptions,
    resamples: usize,
) -> Result<BootstrapReport, EvalError> {
    if resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    dataset.check().map_err(PipelineError::from)?;
    options.validate()?;
    let full = FittedModel::fit(method, dataset, options)?;
    let n = dataset.n_biomarkers();
    let by_label: Vec<Vec<usize>> = [SubjectLabel::Cn, SubjectLabel::Prodromal, SubjectLabel::De]
        .iter()
        .map(|&l| dataset.label_indices(l))
        .collect();
    let mut center_samples = vec![Vec::with_capacity(resamples); n];
    let mut position_samples = vec![Vec::with_capacity(resamples); n];
    for b in 0..resamples {
        let mut rng = substream(options.seed, &[stream::BOOTSTRAP, b as u64]);
        let mut last_err = String::new();
        let mut fitted = None;
        for _ in 0..BOOTSTRAP_ATTEMPTS {
            let mut picks = Vec::with_capacity(dataset.n_subjects());
            for members in &by_label {
                for _ in 0..members.len() {
                    picks.push(members[rng.random_range(0..members.len())]);
                }
            }
            let resampled = dataset.select_subjects(&picks);
            match FittedModel::fit(method, &resampled, options) {
                Ok(model) => {
                    fitted = Some(model);
                    break;
                }
                Err(err) => last_err = err.to_string(),
            }
        }
        let model = fitted.ok_or(EvalError::ResampleExhausted {
            resample: b,
            attempts: BOOTSTRAP_ATTEMPTS,
            last: last_err,
        })?;
        let positions = model.ordering.positions();
        for e in 0..n {
            center_samples[e].push(model.centers()[e]);
            position_samples[e].push(positions[e] as f64);
        }
    }
    let rows = full
        .ordering
        .order()
        .iter()
        .map(|&e| {
            let (mean_center, std_center) = mean_std(&center_samples[e]);
            let (mean_position, std_position) = mean_std(&position_samples[e]);
            BootstrapRow {
                event: e,
                name: dataset.biomarker_names[e].clone(),
                mean_center,
                std_center,
                mean_position,
                std_position,
            }
        })
        .collect();
    Ok(BootstrapReport {
        method,
        resamples,
        full_fit_order: full.ordering.order().to_vec(),
        rows,
    })
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
