//! Koh-Lanta handling of missing block-rows.
//!
//! The Tribe Stage imputes the training set by alternating a multi-block fit
//! with a per-block back-regression of the selected variables on the response
//! super-component. The Reunification Stage completes test individuals from
//! the partial components of the blocks they do have, one inner model per
//! missing-block pattern, then predicts their response.

use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::mdd_spls::{mdd_fit_blocks, MddsplsModel};
use crate::numkernel;
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TribeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TribeOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Output of the Tribe Stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KohLantaFit<T> {
    /// Model fitted on `completed_train`.
    pub model: MddsplsModel<T>,
    pub completed_train: MultiBlockDataset<T>,
    /// Per block, covariates selected by `model`.
    pub selected_vars: Vec<BTreeSet<usize>>,
    /// Number of model fits performed.
    pub iterations: usize,
    pub converged: bool,
    /// Relative change of `T_super V_ort` between successive fits.
    pub criterion_history: Vec<f64>,
    pub options: TribeOptions,
}

/// Completed test blocks and their predicted responses.
#[derive(Clone, Debug)]
pub struct Reunification<T> {
    pub completed_test: MultiBlockDataset<T>,
    pub predicted: Array2<T>,
}

fn relative_change<T: Scalar>(current: &Array2<T>, previous: &Array2<T>) -> f64 {
    if current.dim() != previous.dim() {
        return f64::INFINITY;
    }
    let diff = numkernel::frobenius((current - previous).view()).as_f64();
    let base = numkernel::frobenius(previous.view()).as_f64();
    diff / base.max(1.0)
}

fn check_training_layout<T: Scalar>(train: &MultiBlockDataset<T>) -> Result<()> {
    train.validate()?;
    train.response_or_err()?;
    if let Some(&i) = train.fully_missing_individuals().first() {
        return Err(Error::UnsupportedPattern(format!(
            "individual {} has every block missing",
            train.ids[i]
        )));
    }
    let sets = train.index_sets();
    for (t, present) in sets.present.iter().enumerate() {
        if present.len() < 2 {
            return Err(Error::DegenerateBlock(format!(
                "block {} has {} observed rows, at least 2 are needed",
                train.block_names[t],
                present.len()
            )));
        }
    }
    Ok(())
}

/// Tribe Stage: imputes the training set and returns the final model.
pub fn tribe_impute<T: Scalar>(
    train: &MultiBlockDataset<T>,
    lambda: T,
    ncomp: usize,
    options: TribeOptions,
) -> Result<KohLantaFit<T>> {
    check_training_layout(train)?;
    if options.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let y = train.response_or_err()?.clone();
    let sets = train.index_sets();
    let block_means = train.observed_means()?;
    let mut completed = train.imputed_with(&block_means);

    let mut history = Vec::new();
    let mut previous: Option<Array2<T>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut model;
    loop {
        model = mdd_fit_blocks(&completed.block_views(), y.view(), lambda, ncomp)?;
        iterations += 1;
        let current = model.convergence_matrix();
        if let Some(prev) = &previous {
            let crit = relative_change(&current, prev);
            history.push(crit);
            if crit < options.tol {
                converged = true;
                break;
            }
        }
        if !train.has_missing() {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        let selected = model.selected_covariates();
        for t in 0..train.n_blocks() {
            if sets.missing[t].is_empty() {
                continue;
            }
            let filled = impute_block(
                &completed.blocks[t],
                &model,
                &sets.present[t],
                &sets.missing[t],
                &selected[t],
                &block_means[t],
                lambda,
                ncomp,
            )?;
            completed.blocks[t] = filled;
        }
        previous = Some(current);
    }

    Ok(KohLantaFit {
        selected_vars: model.selected_covariates(),
        model,
        completed_train: completed,
        iterations,
        converged,
        criterion_history: history,
        options,
    })
}

/// Re-imputes the missing rows of one block from the response super-component.
#[allow(clippy::too_many_arguments)]
fn impute_block<T: Scalar>(
    block: &Array2<T>,
    model: &MddsplsModel<T>,
    present: &[usize],
    missing: &[usize],
    selected: &BTreeSet<usize>,
    means: &Array1<T>,
    lambda: T,
    ncomp: usize,
) -> Result<Array2<T>> {
    let mut out = block.clone();
    for &i in missing {
        out.row_mut(i).assign(means);
    }
    if selected.is_empty() {
        return Ok(out);
    }
    let vars: Vec<usize> = selected.iter().copied().collect();
    let predictor = model.s_super.select(Axis(0), present);
    let response = block.select(Axis(0), present).select(Axis(1), &vars);
    let inner = mdd_fit_blocks(&[predictor.view()], response.view(), lambda, ncomp)?;
    if inner.is_null() {
        return Ok(out);
    }
    let target = model.s_super.select(Axis(0), missing);
    let imputed = inner.predict(&[target.view()])?;
    for (r, &i) in missing.iter().enumerate() {
        for (c, &j) in vars.iter().enumerate() {
            out[[i, j]] = imputed[[r, c]];
        }
    }
    Ok(out)
}

/// Reunification Stage: completes the test blocks and predicts the response.
pub fn reunification_predict<T: Scalar>(
    fit: &KohLantaFit<T>,
    test: &MultiBlockDataset<T>,
    lambda: T,
    ncomp: usize,
) -> Result<Reunification<T>> {
    let model = &fit.model;
    if test.block_widths() != model.block_widths() {
        return Err(Error::Shape(format!(
            "test block widths {:?} do not match training {:?}",
            test.block_widths(),
            model.block_widths()
        )));
    }
    if let Some(&i) = test.fully_missing_individuals().first() {
        return Err(Error::UnsupportedPattern(format!(
            "test individual {} has every block missing",
            test.ids[i]
        )));
    }

    let mut completed = test.clone();
    completed.missing_rows = vec![BTreeSet::new(); test.n_blocks()];
    let patterns = test.index_sets().patterns();
    if !patterns.is_empty() {
        let train_parts = model.partial_components(&fit.completed_train.block_views())?;
        for (missing_blocks, rows) in patterns {
            complete_pattern(fit, test, &mut completed, &train_parts, &missing_blocks, &rows, lambda, ncomp)?;
        }
    }
    let predicted = model.predict(&completed.block_views())?;
    Ok(Reunification {
        completed_test: completed,
        predicted,
    })
}

#[allow(clippy::too_many_arguments)]
fn complete_pattern<T: Scalar>(
    fit: &KohLantaFit<T>,
    test: &MultiBlockDataset<T>,
    completed: &mut MultiBlockDataset<T>,
    train_parts: &[Array2<T>],
    missing_blocks: &BTreeSet<usize>,
    rows: &[usize],
    lambda: T,
    ncomp: usize,
) -> Result<()> {
    let model = &fit.model;
    for &t in missing_blocks {
        let means = &model.x_params(t).means;
        for &i in rows {
            completed.blocks[t].row_mut(i).assign(means);
        }
    }

    // (block, variable) layout of the inner response
    let targets: Vec<(usize, usize)> = missing_blocks
        .iter()
        .flat_map(|&t| fit.selected_vars[t].iter().map(move |&j| (t, j)))
        .collect();
    if targets.is_empty() {
        return Ok(());
    }
    let present: Vec<usize> = (0..test.n_blocks()).filter(|t| !missing_blocks.contains(t)).collect();

    let response_cols: Vec<Array2<T>> = missing_blocks
        .iter()
        .map(|&t| {
            let vars: Vec<usize> = fit.selected_vars[t].iter().copied().collect();
            fit.completed_train.blocks[t].select(Axis(1), &vars)
        })
        .collect();
    let response_views: Vec<ArrayView2<'_, T>> = response_cols.iter().map(|r| r.view()).collect();
    let response = concatenate(Axis(1), &response_views).expect("same number of rows");

    let predictors: Vec<ArrayView2<'_, T>> = present.iter().map(|&t| train_parts[t].view()).collect();
    let inner = mdd_fit_blocks(&predictors, response.view(), lambda, ncomp)?;
    if inner.is_null() {
        return Ok(());
    }

    let test_parts = present
        .iter()
        .map(|&t| {
            let x = test.blocks[t].select(Axis(0), rows);
            Ok(model.x_params(t).apply(x.view())?.dot(&model.u_super[t]))
        })
        .collect::<Result<Vec<_>>>()?;
    let test_views: Vec<ArrayView2<'_, T>> = test_parts.iter().map(|p| p.view()).collect();
    let imputed = inner.predict(&test_views)?;
    for (r, &i) in rows.iter().enumerate() {
        for (c, &(t, j)) in targets.iter().enumerate() {
            completed.blocks[t][[i, j]] = imputed[[r, c]];
        }
    }
    Ok(())
}
