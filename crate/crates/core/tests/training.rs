//! End-to-end training behavior of the optimizer on small problems.

use enhope::data::{normalize, stratified_split, Dataset, NormMode, Split};
use enhope::embedding::{init_high_order, Embedding, EmbeddingModel, HighOrderDims};
use enhope::exemplars::{build_exemplars, ExemplarConfig, ExemplarMode, ExemplarSet};
use enhope::knn::classify_with_model;
use enhope::objective::{exemplar_loss, exemplar_loss_value, ExemplarLossState, Kernel, PairwiseLossConfig};
use enhope::optimizer::{minimize, train, CgConfig, LineSearchConfig, LossMode, Objective};
use enhope::synthetic::{blobs, BlobSpec};
use enhope::{NormStats, Result};
use ndarray::{array, Array2};

struct LinearExemplarObjective {
    x: Array2<f64>,
    labels: Vec<usize>,
    state: ExemplarLossState,
}

impl LinearExemplarObjective {
    fn model(theta: &[f64]) -> Embedding {
        Embedding::linear(Array2::from_shape_vec((1, 1), theta.to_vec()).unwrap()).unwrap()
    }
}

impl Objective for LinearExemplarObjective {
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        exemplar_loss_value(&Self::model(theta), self.x.view(), &self.labels, &self.state)
    }

    fn value_and_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lv = exemplar_loss(&Self::model(theta), self.x.view(), &self.labels, &self.state)?;
        Ok((lv.loss, lv.grad_params))
    }
}

#[test]
fn single_class_collapses_onto_exemplar() {
    let x = array![[-1.5], [-0.2], [0.3], [0.9], [2.0]];
    let mean = x.mean().unwrap();
    let ex = ExemplarSet::new(array![[mean]], vec![0]).unwrap();
    let mut obj = LinearExemplarObjective {
        x: x.clone(),
        labels: vec![0; 5],
        state: ExemplarLossState::fixed(ex),
    };
    let mut theta = vec![1.0];
    let rep = minimize(&mut obj, &mut theta, LineSearchConfig::default(), 20, 500, 1e-14).unwrap();
    let max_dist = x.iter().map(|v| (theta[0] * (v - mean)).abs()).fold(0.0, f64::max);
    assert!(max_dist <= 1e-3, "max distance {max_dist} after {} iterations", rep.iterations);
    for s in &rep.steps {
        assert!(s.f_after <= s.f_before);
    }
}

fn blob_problem(points: usize, seed: u64) -> (Dataset, Dataset, NormStats) {
    let all = blobs(&BlobSpec::simple(points, 3, 10, 8.0, seed)).unwrap();
    let n_test = points / 4;
    let test = all.subset(&(0..n_test).collect::<Vec<_>>()).unwrap();
    let train = all.subset(&(n_test..points).collect::<Vec<_>>()).unwrap();
    let (train_n, stats) = normalize(&train, NormMode::MinMax01);
    (train_n, test, stats)
}

fn small_model(input: usize, seed: u64) -> Embedding {
    init_high_order(
        HighOrderDims {
            input,
            output: 2,
            factors: 40,
            hidden: 20,
        },
        2,
        seed,
    )
    .unwrap()
}

#[test]
fn learns_separable_blobs_and_is_deterministic() {
    let (train_ds, test_ds, stats) = blob_problem(800, 11);
    let split = stratified_split(&train_ds, 0.1, 3).unwrap();
    let fit_ds = train_ds.subset(&split.train).unwrap();
    let ex = build_exemplars(&fit_ds, &ExemplarConfig::new(3, ExemplarMode::KMeans, 5)).unwrap();
    let cfg = CgConfig {
        max_epochs: 30,
        patience: 30,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let model = EmbeddingModel::new(small_model(10, 1), stats.clone()).unwrap();
        train(
            model,
            &train_ds,
            &split,
            Some(ExemplarLossState::fixed(ex.clone())),
            LossMode::Exemplar,
            &cfg,
            &mut |_| {},
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.model, b.model);
    assert!(a.report.full_batch);

    let exemplars = a.exemplars.as_ref().unwrap();
    let result = classify_with_model(&a.model, exemplars, &test_ds, 1).unwrap();
    assert!(result.error < 0.05, "test error {}", result.error);

    // full-batch steps never increase the loss and chain from one another
    for s in &a.report.steps {
        assert!(s.fallback || s.satisfies_armijo(1e-4), "{s:?}");
    }
    for w in a.report.steps.windows(2) {
        assert!((w[1].f_before - w[0].f_after).abs() <= 1e-9 * w[0].f_after.abs().max(1.0));
    }
    let sel = a.report.selected().unwrap();
    assert!(a.report.epochs.iter().all(|e| e.val_err >= sel.val_err));
    assert!(a.report.epochs.iter().filter(|e| e.epoch < sel.epoch).all(|e| e.val_err > sel.val_err));
}

#[test]
fn learned_exemplars_move_and_minibatches_run() {
    let (train_ds, _, stats) = blob_problem(400, 2);
    let split = Split::all_train(train_ds.len());
    let ex = build_exemplars(&train_ds, &ExemplarConfig::new(6, ExemplarMode::LearnedFromKMeans, 1)).unwrap();
    let cfg = CgConfig {
        max_epochs: 3,
        batch_size: Some(100),
        ..Default::default()
    };
    let model = EmbeddingModel::new(small_model(10, 4), stats).unwrap();
    let out = train(
        model,
        &train_ds,
        &split,
        Some(ExemplarLossState::learned(ex.clone())),
        LossMode::Exemplar,
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    assert!(!out.report.full_batch);
    assert_eq!(out.report.epochs.len(), 3);
    assert_eq!(out.report.steps.len(), 3 * 3 * 3);
    assert_ne!(out.exemplars.unwrap().vectors, ex.vectors);
    // without validation data every epoch counts as the latest best
    assert_eq!(out.report.selected_epoch, 3);
}

#[test]
fn counts_distance_evaluations_per_objective_call() {
    let (train_ds, _, stats) = blob_problem(400, 8);
    let split = Split::all_train(train_ds.len());
    let ex = build_exemplars(&train_ds, &ExemplarConfig::new(3, ExemplarMode::KMeans, 1)).unwrap();
    let cfg = CgConfig {
        max_epochs: 2,
        ..Default::default()
    };
    let model = EmbeddingModel::new(small_model(10, 4), stats).unwrap();
    let out = train(model, &train_ds, &split, Some(ExemplarLossState::fixed(ex)), LossMode::Exemplar, &cfg, &mut |_| {}).unwrap();
    assert!(out.report.objective_evals > 0);
    assert_eq!(out.report.distance_evals, out.report.objective_evals * 300 * 3);
}

#[test]
fn pairwise_training_reduces_loss() {
    let (train_ds, _, stats) = blob_problem(200, 5);
    let split = stratified_split(&train_ds, 0.2, 0).unwrap();
    let mut lines = Vec::new();
    let cfg = CgConfig {
        max_epochs: 5,
        patience: 5,
        ..Default::default()
    };
    let model = EmbeddingModel::new(small_model(10, 2), stats).unwrap();
    let out = train(
        model,
        &train_ds,
        &split,
        None,
        LossMode::Pairwise(PairwiseLossConfig { kernel: Kernel::StudentT }),
        &cfg,
        &mut |r| lines.push(r.to_string()),
    )
    .unwrap();
    assert!(out.exemplars.is_none());
    let first = out.report.steps.first().unwrap().f_before;
    let last = out.report.steps.last().unwrap().f_after;
    assert!(last < first);
    assert_eq!(lines.len(), out.report.epochs.len());
    assert!(lines[0].starts_with("epoch=1 loss="));
}

#[test]
fn exemplar_mode_requires_exemplars() {
    let (train_ds, _, stats) = blob_problem(100, 1);
    let model = EmbeddingModel::new(small_model(10, 2), stats).unwrap();
    let err = train(
        model,
        &train_ds,
        &Split::all_train(train_ds.len()),
        None,
        LossMode::Exemplar,
        &CgConfig::default(),
        &mut |_| {},
    )
    .unwrap_err();
    assert_eq!(err.kind(), "argument");
}
