//! End-to-end flows across simulation, fitting, staging, and evaluation.

use approx::assert_abs_diff_eq;
use ebmkit::datamodel::{load_dataset, save_dataset};
use ebmkit::eval::{bootstrap_event_centers, crossval, kendall_distance_normalized, CrossvalOptions};
use ebmkit::model::{FitOptions, FittedModel, Method, PosteriorModel};
use ebmkit::simbiote::{simulate_dataset, SimulationConfig};
use ebmkit::SubjectLabel;

fn label_mean(stages: &[f64], ds: &ebmkit::BiomarkerDataset, label: SubjectLabel) -> f64 {
    let idx = ds.label_indices(label);
    idx.iter().map(|&j| stages[j]).sum::<f64>() / idx.len() as f64
}

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
fn all_three_methods_fit_and_stage_one_cohort() {
    let (ds, truth) = simulate_dataset(&tiny_config(4, 80), 33).unwrap();
    for method in [Method::Ebm, Method::Debm, Method::Ndebm] {
        let model = FittedModel::fit(method, &ds, &FitOptions::default()).unwrap();
        assert_eq!(model.method, method);
        assert_eq!(model.biomarker_names, ds.biomarker_names);
        let distance = kendall_distance_normalized(model.ordering.order(), &truth.true_order);
        assert!(
            distance <= 0.5,
            "{method}: recovered ordering no better than chance ({distance})"
        );
        let stages = model.stage_dataset(&ds).unwrap();
        assert!(stages.iter().all(|s| (0.0..=1.0).contains(s)));
        let de_mean = label_mean(&stages, &ds, SubjectLabel::De);
        let cn_mean = label_mean(&stages, &ds, SubjectLabel::Cn);
        assert!(
            de_mean > cn_mean,
            "{method}: DE stage mean {de_mean} not above CN {cn_mean}"
        );
    }
}

#[test]
fn fitting_a_saved_dataset_matches_fitting_the_original() {
    let (ds, _) = simulate_dataset(&tiny_config(3, 50), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, ds);
    let a = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap();
    let b = FittedModel::fit(Method::Debm, &loaded, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ndebm_model_round_trips_through_json_with_identical_posteriors() {
    let (ds, _) = simulate_dataset(&tiny_config(3, 50), 7).unwrap();
    let model = FittedModel::fit(Method::Ndebm, &ds, &FitOptions::default()).unwrap();
    assert!(matches!(
        model.posterior_model,
        PosteriorModel::Classifiers { .. }
    ));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = FittedModel::load(&path).unwrap();
    assert_eq!(loaded, model);
    let p = model.posterior_matrix(&ds).unwrap();
    let q = loaded.posterior_matrix(&ds).unwrap();
    assert_eq!(p.as_array(), q.as_array());
}

#[test]
fn staging_new_subjects_with_a_stored_model() {
    // Fit on one cohort, stage a different cohort drawn from the same
    // generating process; stages must stay in range and ordered by class.
    let (train, _) = simulate_dataset(&tiny_config(4, 80), 33).unwrap();
    let (fresh, _) = simulate_dataset(&tiny_config(4, 60), 34).unwrap();
    let model = FittedModel::fit(Method::Debm, &train, &FitOptions::default()).unwrap();
    let stages = model.stage_dataset(&fresh).unwrap();
    assert_eq!(stages.len(), 60);
    assert!(stages.iter().all(|s| (0.0..=1.0).contains(s)));
    let de_mean = label_mean(&stages, &fresh, SubjectLabel::De);
    let cn_mean = label_mean(&stages, &fresh, SubjectLabel::Cn);
    assert!(de_mean > cn_mean);
}

#[test]
fn evaluation_drivers_run_on_the_ndebm_path() {
    let (ds, _) = simulate_dataset(&tiny_config(3, 48), 11).unwrap();
    let options = CrossvalOptions {
        folds: 3,
        repeats: 1,
        ..CrossvalOptions::default()
    };
    let cv = crossval(Method::Ndebm, &ds, &options).unwrap();
    assert_eq!(cv.metrics.len(), 1);
    assert!(cv.metrics[0].auc_de_cn.is_finite());

    let boot = bootstrap_event_centers(Method::Ndebm, &ds, &FitOptions::default(), 2).unwrap();
    assert_eq!(boot.rows.len(), 3);
    for row in &boot.rows {
        assert!(row.std_center.is_finite());
        assert!(row.std_position.is_finite());
    }
}

#[test]
fn stage_weights_agree_between_helper_paths() {
    let (ds, _) = simulate_dataset(&tiny_config(3, 40), 3).unwrap();
    let model = FittedModel::fit(Method::Debm, &ds, &FitOptions::default()).unwrap();
    let posteriors = model.posterior_matrix(&ds).unwrap();
    let stages = model.stage_posteriors(&posteriors);
    let dists = model.stage_distributions(&posteriors);
    let centers = model.centers();
    let order = model.ordering.order();
    for (stage, dist) in stages.iter().zip(&dists) {
        let total: f64 = dist.weights.iter().sum();
        let mut acc = 0.0;
        for k in 1..dist.weights.len() {
            acc += centers[order[k - 1]] * dist.weights[k];
        }
        assert_abs_diff_eq!(*stage, acc / total, epsilon = 1e-12);
    }
}
