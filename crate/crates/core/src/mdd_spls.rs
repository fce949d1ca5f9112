//! Multi-block estimator: one thresholded-correlation fit per block, a second
//! SVD that combines the blocks through super-weights, and a regression of the
//! response super-component on the covariate super-component.

use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::ct_spls::{self, CtSplsModel};
use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::numkernel::{self, StandardizationParams};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MddsplsModel<T> {
    pub block_models: Vec<CtSplsModel<T>>,
    /// Per block, the `R x R` slice of the stacked super-weights.
    pub beta: Vec<Array2<T>>,
    /// Per block, `U_t beta_t` (`p_t x R`).
    pub u_super: Vec<Array2<T>>,
    /// `q x R`.
    pub v_super: Array2<T>,
    /// `n x R` covariate super-component on the training rows.
    pub t_super: Array2<T>,
    /// `n x R` response super-component on the training rows.
    pub s_super: Array2<T>,
    /// Right singular vectors of `t_super` (`R x R`).
    pub v_ort: Array2<T>,
    pub b0: Array2<T>,
    /// Per block regression matrix `p_t x q`.
    pub b: Vec<Array2<T>>,
    pub lambda: T,
    pub ncomp: usize,
    pub y_params: StandardizationParams<T>,
}

/// Variables kept by a fitted model, with their weight x super-weight impact.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub blocks: Vec<BlockImpact>,
    pub selected_responses: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockImpact {
    pub block: usize,
    pub variables: Vec<VariableImpact>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariableImpact {
    pub index: usize,
    /// `|u_{t,i} . beta_t[:, r]|` for each component `r`.
    pub per_component: Vec<f64>,
    /// Sum of `per_component`.
    pub impact: f64,
}

impl<T: Scalar> MddsplsModel<T> {
    pub fn n_blocks(&self) -> usize {
        self.block_models.len()
    }

    pub fn block_widths(&self) -> Vec<usize> {
        self.block_models.iter().map(|m| m.n_covariates()).collect()
    }

    pub fn n_responses(&self) -> usize {
        self.v_super.nrows()
    }

    pub fn x_params(&self, t: usize) -> &StandardizationParams<T> {
        &self.block_models[t].x_params
    }

    pub fn is_null(&self) -> bool {
        self.block_models.iter().all(|m| m.is_null())
    }

    /// Per block, covariates with a nonzero row in `U_t`.
    pub fn selected_covariates(&self) -> Vec<BTreeSet<usize>> {
        self.block_models
            .iter()
            .map(|m| numkernel::nonzero_rows(m.u.view()).into_iter().collect())
            .collect()
    }

    /// Responses with a nonzero row in `V_super`.
    pub fn selected_responses(&self) -> BTreeSet<usize> {
        numkernel::nonzero_rows(self.v_super.view()).into_iter().collect()
    }

    /// `T_super V_ort`, the matrix whose stabilization defines convergence of
    /// the imputation loop.
    pub fn convergence_matrix(&self) -> Array2<T> {
        self.t_super.dot(&self.v_ort)
    }

    fn check_blocks(&self, blocks: &[ArrayView2<'_, T>]) -> Result<usize> {
        if blocks.len() != self.n_blocks() {
            return Err(Error::Shape(format!(
                "model has {} blocks, got {}",
                self.n_blocks(),
                blocks.len()
            )));
        }
        let m = blocks[0].nrows();
        for (t, (b, width)) in blocks.iter().zip(self.block_widths()).enumerate() {
            if b.ncols() != width {
                return Err(Error::Shape(format!(
                    "block {t} has {} columns, model expects {width}",
                    b.ncols()
                )));
            }
            if b.nrows() != m {
                return Err(Error::Shape("test blocks disagree on the number of rows".into()));
            }
        }
        Ok(m)
    }

    /// Per-block partial components `std(X_t) U_{t,super}` for new rows.
    pub fn partial_components(&self, blocks: &[ArrayView2<'_, T>]) -> Result<Vec<Array2<T>>> {
        self.check_blocks(blocks)?;
        blocks
            .iter()
            .enumerate()
            .map(|(t, b)| Ok(self.x_params(t).apply(*b)?.dot(&self.u_super[t])))
            .collect()
    }

    /// Covariate super-component `sum_t std(X_t) U_{t,super}` for new rows.
    pub fn super_component(&self, blocks: &[ArrayView2<'_, T>]) -> Result<Array2<T>> {
        let m = self.check_blocks(blocks)?;
        let mut out = Array2::zeros((m, self.ncomp));
        for part in self.partial_components(blocks)? {
            out += &part;
        }
        Ok(out)
    }

    /// Prediction operator: `sum_t std(X_t) B_t`, rescaled by the response
    /// scale and shifted by its mean. Responses never selected are predicted
    /// at their training mean.
    pub fn predict(&self, blocks: &[ArrayView2<'_, T>]) -> Result<Array2<T>> {
        let m = self.check_blocks(blocks)?;
        if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Precondition(
                "prediction input contains missing cells; complete it first".into(),
            ));
        }
        let q = self.n_responses();
        let mut y_std = Array2::zeros((m, q));
        for (t, b) in blocks.iter().enumerate() {
            y_std += &self.x_params(t).apply(*b)?.dot(&self.b[t]);
        }
        let selected = self.selected_responses();
        let mut out = Array2::zeros((m, q));
        for j in 0..q {
            let mu = self.y_params.means[j];
            let sd = self.y_params.sds[j];
            let mut col = out.column_mut(j);
            if selected.contains(&j) && sd > T::zero() {
                col.assign(&y_std.column(j).mapv(|v| v * sd + mu));
            } else {
                col.fill(mu);
            }
        }
        Ok(out)
    }

    /// Selected covariates per block with `|U_t beta_t|` impact scores, and
    /// the selected responses.
    pub fn explained_structure(&self) -> StructureReport {
        let mut blocks = Vec::new();
        for (t, bm) in self.block_models.iter().enumerate() {
            let scores = impact_scores(bm.u.view(), self.beta[t].view());
            let variables: Vec<VariableImpact> = numkernel::nonzero_rows(bm.u.view())
                .into_iter()
                .map(|i| {
                    let per_component: Vec<f64> = scores.row(i).iter().map(|v| v.as_f64()).collect();
                    let impact = per_component.iter().sum();
                    VariableImpact {
                        index: i,
                        per_component,
                        impact,
                    }
                })
                .filter(|v| v.impact > 0.0)
                .collect();
            if !variables.is_empty() {
                blocks.push(BlockImpact { block: t, variables });
            }
        }
        StructureReport {
            blocks,
            selected_responses: self.selected_responses().into_iter().collect(),
        }
    }
}

/// `|U beta|` entrywise: the weight times super-weight impact of each
/// covariate on each component.
pub fn impact_scores<T: Scalar>(u: ArrayView2<'_, T>, beta: ArrayView2<'_, T>) -> Array2<T> {
    u.dot(&beta).mapv(|v| v.abs())
}

/// Fits the multi-block model on complete data.
pub fn mdd_fit<T: Scalar>(data: &MultiBlockDataset<T>, lambda: T, ncomp: usize) -> Result<MddsplsModel<T>> {
    if data.has_missing() {
        return Err(Error::Precondition(
            "dataset has missing block-rows; use the Koh-Lanta imputation".into(),
        ));
    }
    let y = data.response_or_err()?;
    mdd_fit_blocks(&data.block_views(), y.view(), lambda, ncomp)
}

/// Fits the multi-block model on raw matrices sharing their rows.
pub fn mdd_fit_blocks<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    y: ArrayView2<'_, T>,
    lambda: T,
    ncomp: usize,
) -> Result<MddsplsModel<T>> {
    if blocks.is_empty() {
        return Err(Error::Shape("at least one covariate block is required".into()));
    }
    if ncomp == 0 {
        return Err(Error::InvalidParameter("number of components must be >= 1".into()));
    }
    let n = y.nrows();
    let q = y.ncols();
    let r = ncomp;

    let block_models = blocks
        .iter()
        .map(|x| ct_spls::ct_spls_fit(*x, y, lambda, r))
        .collect::<Result<Vec<_>>>()?;
    let n_blocks = block_models.len();
    let y_params = block_models[0].y_params.clone();

    let z_parts: Vec<Array2<T>> = block_models.iter().map(|m| m.m.dot(&m.u)).collect();
    let z_views: Vec<ArrayView2<'_, T>> = z_parts.iter().map(|z| z.view()).collect();
    let z = concatenate(Axis(1), &z_views).expect("blocks share q rows");

    let mut beta_stacked = Array2::zeros((r * n_blocks, r));
    if z.iter().any(|&v| v != T::zero()) {
        let svd = numkernel::thin_svd(z.view())?;
        let keep = r.min(svd.numerical_rank());
        beta_stacked
            .slice_mut(s![.., ..keep])
            .assign(&svd.right_vectors.slice(s![.., ..keep]));
    }
    let beta: Vec<Array2<T>> = (0..n_blocks)
        .map(|t| beta_stacked.slice(s![t * r..(t + 1) * r, ..]).to_owned())
        .collect();

    let u_super: Vec<Array2<T>> = block_models
        .iter()
        .zip(&beta)
        .map(|(m, bt)| m.u.dot(bt))
        .collect();
    let mut t_super = Array2::zeros((n, r));
    for (m, us) in block_models.iter().zip(&u_super) {
        t_super += &m.x_std.dot(us);
    }
    let v_super = numkernel::norm2_cols(z.dot(&beta_stacked).view());
    let s_super = block_models[0].y_std.dot(&v_super);

    let v_ort = if t_super.iter().any(|&v| v != T::zero()) {
        numkernel::thin_svd(t_super.view())?.right_vectors
    } else {
        Array2::eye(r)
    };
    let b0 = numkernel::pinv_regress(t_super.view(), s_super.view())?;
    let b = u_super
        .iter()
        .map(|us| us.dot(&b0).dot(&v_super.t()))
        .collect();

    debug_assert_eq!(v_super.nrows(), q);
    Ok(MddsplsModel {
        block_models,
        beta,
        u_super,
        v_super,
        t_super,
        s_super,
        v_ort,
        b0,
        b,
        lambda,
        ncomp,
        y_params,
    })
}

/// Largest absolute correlation between the response and any covariate, over
/// all blocks. Thresholding at or above this value yields the null model.
pub fn max_abs_correlation<T: Scalar>(blocks: &[ArrayView2<'_, T>], y: ArrayView2<'_, T>) -> Result<T> {
    let (y_std, _) = numkernel::standardize(y)?;
    let mut best = T::zero();
    for x in blocks {
        let (x_std, _) = numkernel::standardize(*x)?;
        let c = ct_spls::correlation(y_std.view(), x_std.view());
        best = c.iter().fold(best, |acc, &v| acc.max(v.abs()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_blocks() -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let x1 = array![
            [1.0, 0.3, 2.0],
            [2.0, -0.1, 1.0],
            [3.0, 0.4, 0.5],
            [4.0, 0.0, 2.5],
            [5.0, 0.2, 1.5],
            [6.0, -0.3, 0.0]
        ];
        let x2 = array![[0.5, 1.0], [0.1, 2.2], [0.9, 2.9], [0.2, 4.1], [0.7, 5.2], [0.3, 5.8]];
        let y = array![[1.1], [1.9], [3.2], [3.9], [5.1], [6.0]];
        (x1, x2, y)
    }

    #[test]
    fn impact_examples() {
        let u = array![[1.0_f64]];
        let beta = array![[-0.961]];
        assert!((impact_scores(u.view(), beta.view())[[0, 0]] - 0.961).abs() < 1e-12);
        let u = array![[0.388_f64], [0.922]];
        let beta = array![[0.277]];
        let s = impact_scores(u.view(), beta.view());
        assert!((s[[0, 0]] - 0.107).abs() < 5e-4);
        assert!((s[[1, 0]] - 0.255).abs() < 5e-4);
    }

    #[test]
    fn null_model_predicts_the_mean() {
        let (x1, x2, y) = toy_blocks();
        let model = mdd_fit_blocks(&[x1.view(), x2.view()], y.view(), 1.0, 1).unwrap();
        assert!(model.is_null());
        assert!(model.explained_structure().blocks.is_empty());
        assert!(model.explained_structure().selected_responses.is_empty());
        let pred = model.predict(&[x1.view(), x2.view()]).unwrap();
        let mean = y.mean().unwrap();
        assert!(pred.iter().all(|&p| (p - mean).abs() < 1e-12));
    }

    #[test]
    fn mean_row_predicts_the_mean() {
        let (x1, x2, y) = toy_blocks();
        let model = mdd_fit_blocks(&[x1.view(), x2.view()], y.view(), 0.1, 1).unwrap();
        assert!(!model.is_null());
        let m1 = x1.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let m2 = x2.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let pred = model.predict(&[m1.view(), m2.view()]).unwrap();
        assert!((pred[[0, 0]] - y.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn predict_checks_shapes() {
        let (x1, x2, y) = toy_blocks();
        let model = mdd_fit_blocks(&[x1.view(), x2.view()], y.view(), 0.1, 1).unwrap();
        assert!(matches!(model.predict(&[x1.view()]), Err(Error::Shape(_))));
        assert!(matches!(model.predict(&[x2.view(), x1.view()]), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_rows_are_rejected() {
        let (x1, x2, y) = toy_blocks();
        let ds = MultiBlockDataset::new(vec![x1, x2], Some(y))
            .unwrap()
            .with_missing(vec![[0].into(), BTreeSet::new()])
            .unwrap();
        assert!(matches!(mdd_fit(&ds, 0.1, 1), Err(Error::Precondition(_))));
    }
}
