//! Leave-one-out cross-validation over a lambda grid, prediction-error
//! metrics, baseline imputation pipelines and the fit-time scaling bench.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_fit, classify_predict, LabelVector};
use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::koh_lanta::{reunification_predict, tribe_impute, TribeOptions};
use crate::mdd_spls::{self, mdd_fit, mdd_fit_blocks};
use crate::numkernel::{self, StandardizationParams};
use crate::scalar::Scalar;

pub const DEFAULT_GRID_SIZE: usize = 8;
const BEST_LAMBDA_TIE: f64 = 1e-12;

/// Per-column root mean squared difference.
pub fn rmsep<T: Scalar>(y_hat: ArrayView2<'_, T>, y_true: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if y_hat.dim() != y_true.dim() {
        return Err(Error::Shape(format!(
            "predictions are {:?} but truth is {:?}",
            y_hat.dim(),
            y_true.dim()
        )));
    }
    if y_hat.nrows() == 0 {
        return Err(Error::Shape("no rows to score".into()));
    }
    let m = T::from_usize_lossy(y_hat.nrows());
    Ok(y_hat
        .axis_iter(Axis(1))
        .zip(y_true.axis_iter(Axis(1)))
        .map(|(a, b)| {
            (a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / m).sqrt()
        })
        .collect())
}

/// [`rmsep`] after scaling both matrices by the training response scale, so
/// predicting the training mean scores close to 1.
pub fn standardized_rmsep<T: Scalar>(
    y_hat: ArrayView2<'_, T>,
    y_true: ArrayView2<'_, T>,
    train: &StandardizationParams<T>,
) -> Result<Array1<T>> {
    let scale = |m: ArrayView2<'_, T>| -> Result<Array2<T>> {
        let mut shifted = train.clone();
        shifted.sds.mapv_inplace(|s| if s > T::zero() { s } else { T::one() });
        shifted.apply(m)
    };
    rmsep(scale(y_hat)?.view(), scale(y_true)?.view())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Regression,
    Classification,
}

/// How missing block-rows are handled inside each fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    /// Tribe Stage on the training rows, Reunification Stage on the held-out row.
    KohLanta,
    /// Training column means fill both training and test gaps.
    MeanImputation,
    /// Iterative rank-`rank` SVD completion of the concatenated covariates.
    LowRank { rank: usize },
}

#[derive(Clone, Debug)]
pub struct CvOptions {
    pub lambda_grid: Vec<f64>,
    pub ncomp: usize,
    pub mode: Mode,
    pub pipeline: Pipeline,
    pub tribe: TribeOptions,
    /// Required in classification mode.
    pub labels: Option<LabelVector>,
}

impl CvOptions {
    pub fn regression(lambda_grid: Vec<f64>, ncomp: usize) -> Self {
        Self {
            lambda_grid,
            ncomp,
            mode: Mode::Regression,
            pipeline: Pipeline::KohLanta,
            tribe: TribeOptions::default(),
            labels: None,
        }
    }
}

/// Cross-validation results for one lambda.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    /// Per-response RMSEP on the standardized scale (empty in classification mode).
    pub rmsep: Vec<f64>,
    pub mean_rmsep: f64,
    /// Folds in which each response had a nonzero `V_super` row.
    pub selection_counts: Vec<usize>,
    pub misassignment_rate: Option<f64>,
    pub folds_run: usize,
    pub folds_skipped: usize,
    pub skipped_reasons: Vec<String>,
    pub convergence_rate: f64,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambda_grid: Vec<f64>,
    pub per_lambda: Vec<LambdaResult>,
    pub best_lambda: f64,
    pub n_folds: usize,
    pub mode: Mode,
    pub pipeline: Pipeline,
}

impl CvReport {
    pub fn best(&self) -> &LambdaResult {
        self.per_lambda
            .iter()
            .find(|r| r.lambda == self.best_lambda)
            .expect("best lambda comes from the grid")
    }

    fn criterion(r: &LambdaResult) -> f64 {
        r.misassignment_rate.unwrap_or(r.mean_rmsep)
    }
}

/// Evenly spaced values from 0 (inclusive) up to the largest absolute
/// response/covariate correlation (exclusive), which is the null-model level.
pub fn default_lambda_grid<T: Scalar>(data: &MultiBlockDataset<T>, size: usize) -> Result<Vec<f64>> {
    let top = max_abs_correlation(data)?;
    Ok((0..size).map(|k| top * k as f64 / size as f64).collect())
}

/// Largest absolute correlation between the response and a covariate, each
/// block using its observed rows only.
pub fn max_abs_correlation<T: Scalar>(data: &MultiBlockDataset<T>) -> Result<f64> {
    let y = data.response_or_err()?;
    let sets = data.index_sets();
    let mut best = 0.0f64;
    for (t, block) in data.blocks.iter().enumerate() {
        let rows = &sets.present[t];
        if rows.len() < 2 {
            continue;
        }
        let x = block.select(Axis(0), rows);
        let yy = y.select(Axis(0), rows);
        best = best.max(mdd_spls::max_abs_correlation(&[x.view()], yy.view())?.as_f64());
    }
    Ok(best)
}

struct FoldOutcome<T> {
    prediction: Option<Array2<T>>,
    y_params: StandardizationParams<T>,
    misassigned: Option<bool>,
    selected: Vec<bool>,
    converged: bool,
    iterations: usize,
}

enum FoldResult<T> {
    Done(FoldOutcome<T>),
    Skipped(String),
}

fn is_fold_degeneracy(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateBlock(_) | Error::FoldDegeneracy(_) | Error::DegenerateLabel(_) | Error::InsufficientData { .. }
    )
}

fn run_fold<T: Scalar>(
    train: &MultiBlockDataset<T>,
    test: &MultiBlockDataset<T>,
    lambda: T,
    opts: &CvOptions,
    held_out: usize,
) -> Result<FoldOutcome<T>> {
    let ncomp = opts.ncomp;
    if opts.mode == Mode::Classification {
        let labels = opts
            .labels
            .as_ref()
            .ok_or_else(|| Error::Precondition("classification mode needs labels".into()))?;
        let train_rows: Vec<usize> = (0..labels.len()).filter(|&i| i != held_out).collect();
        let train_labels = labels.subset(&train_rows);
        let classifier = classify_fit(train, &train_labels, lambda, ncomp, opts.tribe)?;
        let pred = classify_predict(&classifier, test)?;
        let model = &classifier.fit.model;
        return Ok(FoldOutcome {
            prediction: None,
            y_params: model.y_params.clone(),
            misassigned: Some(pred.labels[0] != labels.labels[held_out]),
            selected: selection_flags(model.selected_responses(), model.n_responses()),
            converged: classifier.fit.converged,
            iterations: classifier.fit.iterations,
        });
    }
    let (model, prediction, converged, iterations) = match opts.pipeline {
        Pipeline::KohLanta => {
            let fit = tribe_impute(train, lambda, ncomp, opts.tribe)?;
            let reunion = reunification_predict(&fit, test, lambda, ncomp)?;
            (fit.model, reunion.predicted, fit.converged, fit.iterations)
        }
        Pipeline::MeanImputation => {
            let means = train.observed_means()?;
            let model = mdd_fit(&train.imputed_with(&means), lambda, ncomp)?;
            let pred = model.predict(&test.imputed_with(&means).block_views())?;
            (model, pred, true, 1)
        }
        Pipeline::LowRank { rank } => {
            let stacked = stack_covariates(train, test);
            let completion = low_rank_complete(&stacked, rank, opts.tribe)?;
            let n = train.n();
            let train_blocks: Vec<ArrayView2<'_, T>> = completion
                .completed
                .blocks
                .iter()
                .map(|b| b.slice(ndarray::s![..n, ..]))
                .collect();
            let test_blocks: Vec<ArrayView2<'_, T>> = completion
                .completed
                .blocks
                .iter()
                .map(|b| b.slice(ndarray::s![n.., ..]))
                .collect();
            let y = train.response_or_err()?;
            let model = mdd_fit_blocks(&train_blocks, y.view(), lambda, ncomp)?;
            let pred = model.predict(&test_blocks)?;
            (model, pred, completion.converged, completion.iterations)
        }
    };
    Ok(FoldOutcome {
        prediction: Some(prediction),
        y_params: model.y_params.clone(),
        misassigned: None,
        selected: selection_flags(model.selected_responses(), model.n_responses()),
        converged,
        iterations,
    })
}

fn selection_flags(selected: std::collections::BTreeSet<usize>, q: usize) -> Vec<bool> {
    (0..q).map(|j| selected.contains(&j)).collect()
}

fn stack_covariates<T: Scalar>(train: &MultiBlockDataset<T>, test: &MultiBlockDataset<T>) -> MultiBlockDataset<T> {
    let n = train.n();
    let mut out = train.without_response();
    out.ids.extend(test.ids.iter().cloned());
    for t in 0..train.n_blocks() {
        out.blocks[t] = ndarray::concatenate(Axis(0), &[train.blocks[t].view(), test.blocks[t].view()])
            .expect("same widths");
        out.missing_rows[t].extend(test.missing_rows[t].iter().map(|&i| i + n));
    }
    out
}

/// Leave-one-out cross-validation of every lambda in the grid.
///
/// Folds whose training part leaves a block with fewer than two observed rows
/// (or a class without instances) are skipped and reported.
pub fn loo_cv<T: Scalar>(data: &MultiBlockDataset<T>, opts: &CvOptions) -> Result<CvReport> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if opts.lambda_grid.is_empty() {
        return Err(Error::InvalidParameter("lambda grid is empty".into()));
    }
    if opts.lambda_grid.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::InvalidParameter("lambda values must be >= 0".into()));
    }
    let y = match opts.mode {
        Mode::Regression => Some(data.response_or_err()?.clone()),
        Mode::Classification => {
            let labels = opts
                .labels
                .as_ref()
                .ok_or_else(|| Error::Precondition("classification mode needs labels".into()))?;
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} individuals", labels.len())));
            }
            None
        }
    };

    let folds: Vec<Vec<FoldResult<T>>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<FoldResult<T>>> {
            let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let train = data.subset_rows(&rows);
            let test = data.subset_rows(&[i]).without_response();
            opts.lambda_grid
                .iter()
                .map(|&lambda| match run_fold(&train, &test, T::lit(lambda), opts, i) {
                    Ok(outcome) => Ok(FoldResult::Done(outcome)),
                    Err(e) if is_fold_degeneracy(&e) => Ok(FoldResult::Skipped(format!("fold {i}: {e}"))),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let q = y.as_ref().map(|m| m.ncols()).unwrap_or_else(|| {
        opts.labels.as_ref().map(|l| l.n_classes()).unwrap_or(0)
    });
    let mut per_lambda = Vec::with_capacity(opts.lambda_grid.len());
    for (k, &lambda) in opts.lambda_grid.iter().enumerate() {
        let mut sq = vec![0.0f64; q];
        let mut counts = vec![0usize; q];
        let mut run = 0usize;
        let mut skipped = Vec::new();
        let mut misassigned = 0usize;
        let mut converged = 0usize;
        let mut iterations = 0usize;
        for (i, fold) in folds.iter().enumerate() {
            match &fold[k] {
                FoldResult::Skipped(reason) => skipped.push(reason.clone()),
                FoldResult::Done(o) => {
                    run += 1;
                    converged += usize::from(o.converged);
                    iterations += o.iterations;
                    for (c, &s) in counts.iter_mut().zip(&o.selected) {
                        *c += usize::from(s);
                    }
                    if let Some(m) = o.misassigned {
                        misassigned += usize::from(m);
                    }
                    if let (Some(pred), Some(y)) = (&o.prediction, &y) {
                        let truth = y.select(Axis(0), &[i]);
                        let err = standardized_rmsep(pred.view(), truth.view(), &o.y_params)?;
                        for (acc, e) in sq.iter_mut().zip(err.iter()) {
                            *acc += e.as_f64().powi(2);
                        }
                    }
                }
            }
        }
        let denom = run.max(1) as f64;
        let (rmsep, mean_rmsep, misassignment_rate) = match opts.mode {
            Mode::Regression => {
                let r: Vec<f64> = if run == 0 {
                    vec![f64::NAN; q]
                } else {
                    sq.iter().map(|s| (s / denom).sqrt()).collect()
                };
                let mean = r.iter().sum::<f64>() / q.max(1) as f64;
                (r, mean, None)
            }
            Mode::Classification => {
                let rate = if run == 0 { f64::NAN } else { misassigned as f64 / denom };
                (Vec::new(), f64::NAN, Some(rate))
            }
        };
        per_lambda.push(LambdaResult {
            lambda,
            rmsep,
            mean_rmsep,
            selection_counts: counts,
            misassignment_rate,
            folds_run: run,
            folds_skipped: skipped.len(),
            skipped_reasons: skipped,
            convergence_rate: if run == 0 { 0.0 } else { converged as f64 / denom },
            mean_iterations: if run == 0 { 0.0 } else { iterations as f64 / denom },
        });
    }

    let best_lambda = best_lambda(&per_lambda);
    Ok(CvReport {
        lambda_grid: opts.lambda_grid.clone(),
        per_lambda,
        best_lambda,
        n_folds: n,
        mode: opts.mode,
        pipeline: opts.pipeline,
    })
}

/// Minimizer of the criterion; ties (within 1e-12) go to the largest lambda.
fn best_lambda(results: &[LambdaResult]) -> f64 {
    let finite: Vec<&LambdaResult> = results.iter().filter(|r| CvReport::criterion(r).is_finite()).collect();
    let Some(min) = finite
        .iter()
        .map(|r| CvReport::criterion(r))
        .min_by(|a, b| a.total_cmp(b))
    else {
        return results.iter().map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max);
    };
    finite
        .iter()
        .filter(|r| CvReport::criterion(r) <= min + BEST_LAMBDA_TIE)
        .map(|r| r.lambda)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Result of [`low_rank_complete`].
#[derive(Clone, Debug)]
pub struct LowRankCompletion<T> {
    pub completed: MultiBlockDataset<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Baseline imputation ignoring the block structure and the response: the
/// concatenated covariates are repeatedly replaced, on missing cells only, by
/// their rank-`rank` reconstruction around the column means, starting from
/// mean imputation. Convergence is the relative change of the reconstruction.
pub fn low_rank_complete<T: Scalar>(
    data: &MultiBlockDataset<T>,
    rank: usize,
    options: TribeOptions,
) -> Result<LowRankCompletion<T>> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be >= 1".into()));
    }
    let widths = data.block_widths();
    let filled = data.mean_imputed()?;
    if !data.has_missing() {
        return Ok(LowRankCompletion {
            completed: filled,
            iterations: 0,
            converged: true,
        });
    }
    let views: Vec<ArrayView2<'_, T>> = filled.block_views();
    let mut x = ndarray::concatenate(Axis(1), &views).expect("same rows");
    let mut mask = Array2::from_elem(x.dim(), false);
    let mut offset = 0;
    for (t, w) in widths.iter().enumerate() {
        for &i in &data.missing_rows[t] {
            for j in offset..offset + w {
                mask[[i, j]] = true;
            }
        }
        offset += w;
    }
    let n = x.nrows();
    let rank = rank.min(n);
    let mut previous: Option<Array2<T>> = None;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        let means = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &means;
        let gram = centered.dot(&centered.t());
        let (_, vecs) = numkernel::symmetric_eigen(gram.view())?;
        let u = vecs.slice(ndarray::s![.., ..rank]).to_owned();
        let recon = u.dot(&u.t().dot(&centered)) + &means;
        for ((v, &m), &r) in x.iter_mut().zip(mask.iter()).zip(recon.iter()) {
            if m {
                *v = r;
            }
        }
        if let Some(prev) = &previous {
            let diff = numkernel::frobenius((&recon - prev).view()).as_f64();
            let base = numkernel::frobenius(prev.view()).as_f64().max(1.0);
            if diff / base < options.tol {
                converged = true;
                break;
            }
        }
        previous = Some(recon);
    }
    let mut completed = filled;
    let mut offset = 0;
    for (t, w) in widths.iter().enumerate() {
        completed.blocks[t].assign(&x.slice(ndarray::s![.., offset..offset + w]));
        offset += w;
    }
    Ok(LowRankCompletion {
        completed,
        iterations,
        converged,
    })
}

/// Dimension swept by [`benchmark_scaling`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    N,
    Blocks,
    P,
    Q,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Self::N),
            "T" | "t" | "blocks" => Ok(Self::Blocks),
            "p" => Ok(Self::P),
            "q" => Ok(Self::Q),
            other => Err(Error::InvalidParameter(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::N => "n",
            Self::Blocks => "T",
            Self::P => "p",
            Self::Q => "q",
        })
    }
}

/// Problem shape for timing: `n_blocks` Gaussian blocks of `p` columns and a
/// Gaussian response with `q` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchBase {
    pub n: usize,
    pub n_blocks: usize,
    pub p: usize,
    pub q: usize,
    pub ncomp: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl BenchBase {
    fn with(&self, param: SweepParam, value: usize) -> Self {
        let mut out = self.clone();
        match param {
            SweepParam::N => out.n = value,
            SweepParam::Blocks => out.n_blocks = value,
            SweepParam::P => out.p = value,
            SweepParam::Q => out.q = value,
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub value: usize,
    pub seconds: Vec<f64>,
    pub mean_secs: f64,
    pub sd_secs: f64,
    pub median_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub param: SweepParam,
    pub base: BenchBase,
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of log(median time) against log(value).
    pub slope: f64,
}

/// Times complete-data fits while one dimension varies. Data generation is
/// excluded from the timings.
pub fn benchmark_scaling(
    base: &BenchBase,
    param: SweepParam,
    values: &[usize],
    repeats: usize,
) -> Result<BenchReport> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter("need at least two sweep values".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = base.with(param, value);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ value as u64);
        let mut gaussian = |r: usize, c: usize| -> Array2<f64> {
            Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
        };
        let blocks: Vec<Array2<f64>> = (0..cfg.n_blocks).map(|_| gaussian(cfg.n, cfg.p)).collect();
        let y = gaussian(cfg.n, cfg.q);
        let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
        // warm-up
        mdd_fit_blocks(&views, y.view(), cfg.lambda, cfg.ncomp)?;
        let mut seconds = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let model = mdd_fit_blocks(&views, y.view(), cfg.lambda, cfg.ncomp)?;
            seconds.push(start.elapsed().as_secs_f64().max(1e-9));
            std::hint::black_box(&model);
        }
        let mean = seconds.iter().sum::<f64>() / repeats as f64;
        let var = if repeats > 1 {
            seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64
        } else {
            0.0
        };
        let mut sorted = seconds.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if repeats % 2 == 1 {
            sorted[repeats / 2]
        } else {
            0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
        };
        points.push(BenchPoint {
            value,
            seconds,
            mean_secs: mean,
            sd_secs: var.sqrt(),
            median_secs: median,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.value as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_secs.ln()).collect();
    Ok(BenchReport {
        param,
        base: base.clone(),
        slope: log_log_slope(&xs, &ys),
        points,
    })
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
