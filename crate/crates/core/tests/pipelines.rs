mod common;

use std::collections::BTreeSet;

use common::*;
use mddspls::classify::{classify_fit, classify_predict, dummy_code, indicator_matrix, LabelVector, LdaModel};
use mddspls::evaluate::{
    benchmark_scaling, default_lambda_grid, loo_cv, low_rank_complete, max_abs_correlation, rmsep,
    standardized_rmsep, BenchBase, CvOptions, Mode, Pipeline, SweepParam,
};
use mddspls::numkernel::standardize;
use mddspls::simulate::{simulate, SimConfig};
use mddspls::{mdd_fit, reunification_predict, tribe_impute, Error, MultiBlockDataset, TribeOptions};
use ndarray::{array, s, Array2, Axis};

#[test]
fn single_block_super_component_spans_block_component() {
    let data = linear_dataset(1, 40, &[6], 3, 0.5);
    let model = mdd_fit(&data, 0.1, 2).unwrap();
    let beta = &model.beta[0];
    let gram = beta.t().dot(beta);
    assert!(max_abs(&(&gram - &Array2::<f64>::eye(2))) < 1e-10);
    // T_super = X U beta with beta orthogonal: same column space as X U
    let xu = model.block_models[0].x_std.dot(&model.block_models[0].u);
    let back = model.t_super.dot(&beta.t());
    assert!(max_abs(&(&back - &xu)) < 1e-8);
}

#[test]
fn thresholding_everything_gives_the_mean_predictor() {
    let data = linear_dataset(2, 30, &[4, 5], 2, 1.0);
    let top = max_abs_correlation(&data).unwrap();
    let model = mdd_fit(&data, top + 1e-9, 2).unwrap();
    assert!(model.is_null());
    let mut r = rng(3);
    let test: Vec<Array2<f64>> = data.block_widths().iter().map(|&p| gaussian(&mut r, 7, p)).collect();
    let pred = model.predict(&test.iter().map(|t| t.view()).collect::<Vec<_>>()).unwrap();
    let means = data.response.as_ref().unwrap().mean_axis(Axis(0)).unwrap();
    for row in pred.axis_iter(Axis(0)) {
        assert!((&row - &means).iter().all(|e| e.abs() < 1e-12));
    }
}

#[test]
fn simulated_model_explains_variance() {
    let cfg = SimConfig {
        n: 50,
        n_blocks: 3,
        linked_blocks: 2,
        missing_prop: 0.0,
        seed: 4,
        ..SimConfig::default()
    };
    let (data, _) = simulate::<f64>(&cfg).unwrap();
    let model = mdd_fit(&data, 0.3, 1).unwrap();
    let (y_std, _) = standardize(data.response.as_ref().unwrap().view()).unwrap();
    let mut fitted = Array2::<f64>::zeros(y_std.dim());
    for (t, b) in model.block_models.iter().enumerate() {
        fitted += &b.x_std.dot(&model.b[t]);
    }
    let resid = mddspls::numkernel::frobenius((&y_std - &fitted).view());
    assert!(resid < mddspls::numkernel::frobenius(y_std.view()));
}

#[test]
fn rank_one_training_predictions_are_accurate() {
    let cfg = SimConfig {
        n: 60,
        n_blocks: 4,
        n_groups: 2,
        group_size: 10,
        linked_blocks: 2,
        theta_choices: vec![10],
        missing_prop: 0.0,
        seed: 6,
        ..SimConfig::default()
    };
    let (data, truth) = simulate::<f64>(&cfg).unwrap();
    // noiseless: keep only the informative covariates of the linked blocks
    let blocks: Vec<Array2<f64>> = truth
        .linked_blocks
        .iter()
        .zip(&truth.informative_indices)
        .map(|(&t, cols)| data.blocks[t].select(Axis(1), cols))
        .collect();
    let clean = MultiBlockDataset::new(blocks, data.response.clone()).unwrap();
    let model = mdd_fit(&clean, 0.0, 1).unwrap();
    let pred = model.predict(&clean.block_views()).unwrap();
    let err = standardized_rmsep(pred.view(), clean.response.as_ref().unwrap().view(), &model.y_params).unwrap();
    assert!(err[0] < 0.1, "rmsep {}", err[0]);
}

#[test]
fn explained_structure_reports_selected_variables() {
    let data = linear_dataset(7, 40, &[5, 5], 1, 0.3);
    let model = mdd_fit(&data, 0.3, 1).unwrap();
    let report = model.explained_structure();
    let selected = model.selected_covariates();
    for block in &report.blocks {
        let listed: BTreeSet<usize> = block.variables.iter().map(|v| v.index).collect();
        assert_eq!(listed, selected[block.block]);
        assert!(block.variables.iter().all(|v| v.impact > 0.0));
    }
    let null = mdd_fit(&data, 1.0, 1).unwrap().explained_structure();
    assert!(null.blocks.iter().all(|b| b.variables.is_empty()));
    assert!(null.selected_responses.is_empty());
}

#[test]
fn tribe_stage_recovers_a_rank_one_row() {
    let data = rank_one_dataset(8, 30, &[4, 5, 3]);
    let truth = data.clone();
    let masked = data.with_missing(vec![[5].into(), BTreeSet::new(), BTreeSet::new()]).unwrap();
    let fit = tribe_impute(&masked, 0.0, 1, TribeOptions::default()).unwrap();
    assert!(fit.converged);
    let params = fit.model.x_params(0);
    let got = params.apply(fit.completed_train.blocks[0].slice(s![5..6, ..])).unwrap();
    let want = params.apply(truth.blocks[0].slice(s![5..6, ..])).unwrap();
    for &j in &fit.selected_vars[0] {
        assert!((got[[0, j]] - want[[0, j]]).abs() < 0.1, "variable {j}");
    }
}

#[test]
fn reunification_completes_rank_one_test_rows() {
    let data = rank_one_dataset(9, 35, &[4, 5, 3]);
    let train = data.subset_rows(&(0..30).collect::<Vec<_>>());
    let test_full = data.subset_rows(&(30..35).collect::<Vec<_>>());
    let test = test_full
        .without_response()
        .with_missing(vec![[0, 1].into(), [2].into(), BTreeSet::new()])
        .unwrap();
    let fit = tribe_impute(&train, 0.0, 1, TribeOptions::default()).unwrap();
    let out = reunification_predict(&fit, &test, 0.0, 1).unwrap();
    assert!(!out.completed_test.has_missing());
    let err = standardized_rmsep(out.predicted.view(), test_full.response.as_ref().unwrap().view(), &fit.model.y_params).unwrap();
    assert!(err[0] < 0.1, "rmsep {}", err[0]);
}

#[test]
fn null_tribe_model_predicts_the_mean_everywhere() {
    let data = small_missing(10);
    let fit = tribe_impute(&data, 1.0, 1, TribeOptions::default()).unwrap();
    assert!(fit.model.is_null());
    let test = data.without_response();
    let out = reunification_predict(&fit, &test, 1.0, 1).unwrap();
    let mean = data.response.as_ref().unwrap().mean_axis(Axis(0)).unwrap();
    for row in out.predicted.axis_iter(Axis(0)) {
        assert!((&row - &mean).iter().all(|e| e.abs() < 1e-12));
    }
}

fn small_missing(seed: u64) -> MultiBlockDataset<f64> {
    let cfg = SimConfig {
        n: 40,
        n_blocks: 4,
        n_groups: 2,
        group_size: 6,
        linked_blocks: 2,
        theta_choices: vec![3, 6],
        missing_prop: 0.3,
        seed,
        ..SimConfig::default()
    };
    simulate::<f64>(&cfg).unwrap().0
}

#[test]
fn default_simulation_converges_in_three_fits() {
    let cfg = SimConfig {
        seed: 2,
        ..SimConfig::default()
    };
    let (data, _) = simulate::<f64>(&cfg).unwrap();
    let fit = tribe_impute(&data, 0.4, 1, TribeOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.iterations, 3);
}

#[test]
fn low_rank_baseline_fills_and_keeps_observed_cells() {
    let data = small_missing(11);
    let out = low_rank_complete(&data, 2, TribeOptions::default()).unwrap();
    assert!(out.completed.blocks.iter().all(|b| b.iter().all(|v| v.is_finite())));
    for t in 0..data.n_blocks() {
        for i in 0..data.n() {
            if !data.missing_rows[t].contains(&i) {
                assert_eq!(out.completed.blocks[t].row(i), data.blocks[t].row(i));
            }
        }
    }
    let mut opts = CvOptions::regression(vec![0.2], 1);
    opts.pipeline = Pipeline::LowRank { rank: 2 };
    let report = loo_cv(&data, &opts).unwrap();
    assert!(report.per_lambda[0].mean_rmsep.is_finite());
}

#[test]
fn dummy_coding_examples() {
    let labels = LabelVector::new(["a", "b", "a"]).unwrap();
    assert_eq!(indicator_matrix::<f64>(&labels), array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
    let balanced = LabelVector::new(["a", "b", "a", "b"]).unwrap();
    let z = dummy_code::<f64>(&balanced).unwrap();
    assert_eq!(z.column(0), z.column(1).mapv(|v| -v));
    let three = LabelVector::new((0..36).map(|i| ["p", "q", "r"][i % 3])).unwrap();
    let ind = indicator_matrix::<f64>(&three);
    for col in ind.axis_iter(Axis(1)) {
        assert!((col.mean().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
    let constant = LabelVector::with_classes(vec!["a".into(); 3], vec!["a".into(), "b".into()]);
    assert!(constant.is_err() || matches!(dummy_code::<f64>(&constant.unwrap()), Err(Error::DegenerateLabel(_))));
}

#[test]
fn lda_decision_rule_examples() {
    let feats = array![[-1.0], [-1.0], [1.0], [1.0]];
    let labels = LabelVector::new(["a", "a", "b", "b"]).unwrap();
    let lda = LdaModel::fit(feats.view(), &labels).unwrap();
    let pred = lda.predict(array![[-1.0], [1.0], [0.0]].view());
    assert_eq!(pred.labels, vec!["a", "b", "a"]);
}

#[test]
fn separable_classes_are_learned_and_null_model_uses_priors() {
    let (data, labels) = planted_classes(12, 12, 50);
    let fit = classify_fit(&data, &labels, 0.5, 2, TribeOptions::default()).unwrap();
    let pred = classify_predict(&fit, &data).unwrap();
    assert_eq!(pred.labels, labels.labels);

    let skewed = LabelVector::new((0..36).map(|i| if i < 20 { "big" } else if i < 28 { "mid" } else { "small" })).unwrap();
    let null = classify_fit(&data, &skewed, 1.0, 2, TribeOptions::default()).unwrap();
    assert!(null.fit.model.is_null());
    let pred = classify_predict(&null, &data).unwrap();
    assert!(pred.labels.iter().all(|l| l == "big"));
}

#[test]
fn planted_fixture_is_separable_by_the_oracle() {
    let (data, labels) = planted_classes(13, 12, 200);
    let oracle = nearest_mean_loo(&data.blocks[0], &[0, 1, 2, 3], &labels);
    assert_eq!(oracle, labels.labels);
}

#[test]
fn classification_cv_reports_misassignment() {
    let (data, labels) = planted_classes(14, 8, 40);
    let opts = CvOptions {
        lambda_grid: vec![0.5, 0.7],
        ncomp: 2,
        mode: Mode::Classification,
        pipeline: Pipeline::KohLanta,
        tribe: TribeOptions::default(),
        labels: Some(labels),
    };
    let report = loo_cv(&data, &opts).unwrap();
    for r in &report.per_lambda {
        let rate = r.misassignment_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
    assert_eq!(report.best().misassignment_rate, Some(0.0));
}

#[test]
fn rmsep_of_mean_predictions_is_close_to_one() {
    let mut r = rng(15);
    let y = gaussian(&mut r, 80, 2);
    let n = y.nrows();
    let mut sq = [0.0f64; 2];
    for i in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let (_, params) = standardize(y.select(Axis(0), &rows).view()).unwrap();
        let pred = params.means.clone().insert_axis(Axis(0));
        let truth = y.select(Axis(0), &[i]);
        let e = standardized_rmsep(pred.view(), truth.view(), &params).unwrap();
        for j in 0..2 {
            sq[j] += e[j] * e[j];
        }
    }
    for s in sq {
        assert!(((s / n as f64).sqrt() - 1.0).abs() < 0.15);
    }
    assert_eq!(rmsep(y.view(), y.view()).unwrap().to_vec(), vec![0.0, 0.0]);
}

#[test]
fn pure_noise_gives_null_level_error() {
    let mut total = 0.0;
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let blocks = vec![gaussian(&mut r, 30, 5), gaussian(&mut r, 30, 5)];
        let y = gaussian(&mut r, 30, 1);
        let data = MultiBlockDataset::new(blocks, Some(y)).unwrap();
        let top = max_abs_correlation(&data).unwrap();
        let report = loo_cv(&data, &CvOptions::regression(vec![0.9 * top], 1)).unwrap();
        total += report.per_lambda[0].mean_rmsep;
    }
    let mean = total / 20.0;
    assert!((0.85..=1.15).contains(&mean), "mean rmsep {mean}");
}

#[test]
fn overthresholded_grid_selects_nothing() {
    let data = small_missing(16);
    let top = max_abs_correlation(&data).unwrap();
    let report = loo_cv(&data, &CvOptions::regression(vec![top + 1e-3], 1)).unwrap();
    let res = &report.per_lambda[0];
    assert!(res.selection_counts.iter().all(|&c| c == 0));
    assert_eq!(report.best_lambda, top + 1e-3);
}

#[test]
fn default_grid_has_eight_points_from_zero() {
    let data = small_missing(17);
    let grid = default_lambda_grid(&data, 8).unwrap();
    assert_eq!(grid.len(), 8);
    assert_eq!(grid[0], 0.0);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    assert!(*grid.last().unwrap() < max_abs_correlation(&data).unwrap());
}

#[test]
fn degenerate_folds_are_skipped_and_counted() {
    let mut data = linear_dataset(18, 8, &[3, 3], 1, 0.5);
    for i in 2..8 {
        data.blocks[1].row_mut(i).fill(f64::NAN);
    }
    data.missing_rows[1] = (2..8).collect();
    data.validate().unwrap();
    let report = loo_cv(&data, &CvOptions::regression(vec![0.1], 1)).unwrap();
    let res = &report.per_lambda[0];
    assert_eq!(res.folds_skipped, 2);
    assert_eq!(res.folds_run, 6);
    assert_eq!(res.skipped_reasons.len(), 2);
}

#[test]
fn cv_rejects_bad_arguments() {
    let data = small_missing(19);
    assert!(loo_cv(&data, &CvOptions::regression(vec![], 1)).is_err());
    assert!(loo_cv(&data, &CvOptions::regression(vec![-0.1], 1)).is_err());
    let tiny = data.subset_rows(&[0, 1]);
    assert!(matches!(
        loo_cv(&tiny, &CvOptions::regression(vec![0.1], 1)),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn bench_reports_positive_times() {
    let base = BenchBase {
        n: 40,
        n_blocks: 2,
        p: 20,
        q: 3,
        ncomp: 1,
        lambda: 0.0,
        seed: 1,
    };
    let report = benchmark_scaling(&base, SweepParam::P, &[10, 20, 40], 3).unwrap();
    assert_eq!(report.points.len(), 3);
    assert!(report.points.iter().all(|p| p.mean_secs > 0.0 && p.seconds.len() == 3));
    assert!(report.slope.is_finite());
    assert!(benchmark_scaling(&base, SweepParam::P, &[10], 3).is_err());
}
