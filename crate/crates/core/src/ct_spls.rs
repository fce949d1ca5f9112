//! Single-block sparse PLS by soft-thresholding the empirical correlation
//! matrix between responses and covariates.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{self, StandardizationParams};
use crate::scalar::Scalar;

/// Fitted single-block model.
///
/// `m` is `q x p`, `u` is `p x R` and `v` is `q x R`. When thresholding leaves
/// fewer than `R` informative directions the trailing columns of `u` and `v`
/// are zero. The standardized training copies are not serialized.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CtSplsModel<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
    pub m: Array2<T>,
    pub singular_values: Array1<T>,
    pub x_params: StandardizationParams<T>,
    pub y_params: StandardizationParams<T>,
    pub lambda: T,
    pub ncomp: usize,
    #[serde(skip)]
    pub x_std: Array2<T>,
    #[serde(skip)]
    pub y_std: Array2<T>,
}

/// Weights obtained directly from a correlation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationWeights<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
    pub singular_values: Array1<T>,
    /// Number of leading components that carry a nonzero singular value.
    pub effective_ncomp: usize,
}

impl<T: Scalar> CtSplsModel<T> {
    pub fn is_null(&self) -> bool {
        self.m.iter().all(|&v| v == T::zero())
    }

    pub fn n_covariates(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_responses(&self) -> usize {
        self.v.nrows()
    }
}

/// Fits `U = SVD_R(M)`, `V = norm2(M U)` with `M = S_lambda(Y'X / (n - 1))`
/// computed on internally standardized copies of `x` and `y`.
///
/// `lambda` is meaningful on `[0, 1]` since `M` is a correlation matrix, but
/// any nonnegative value is accepted.
pub fn ct_spls_fit<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView2<'_, T>,
    lambda: T,
    ncomp: usize,
) -> Result<CtSplsModel<T>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "covariates have {} rows but responses have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if ncomp == 0 {
        return Err(Error::InvalidParameter("number of components must be >= 1".into()));
    }
    let (x_std, x_params) = numkernel::standardize(x)?;
    let (y_std, y_params) = numkernel::standardize(y)?;
    let corr = correlation(y_std.view(), x_std.view());
    let weights = from_correlation(corr.view(), lambda, ncomp)?;
    let m = numkernel::soft_threshold(corr.view(), lambda)?;
    Ok(CtSplsModel {
        u: weights.u,
        v: weights.v,
        m,
        singular_values: weights.singular_values,
        x_params,
        y_params,
        lambda,
        ncomp,
        x_std,
        y_std,
    })
}

/// `Y'X / (n - 1)` for already standardized inputs.
pub fn correlation<T: Scalar>(y_std: ArrayView2<'_, T>, x_std: ArrayView2<'_, T>) -> Array2<T> {
    let denom = T::from_usize_lossy(x_std.nrows().saturating_sub(1).max(1));
    y_std.t().dot(&x_std).mapv(|v| v / denom)
}

/// Weights from a precomputed `q x p` correlation matrix.
///
/// The number of returned components is always `ncomp`; components beyond the
/// numerical rank of the thresholded matrix (or beyond `min(p, q)`) are zero.
pub fn from_correlation<T: Scalar>(
    corr: ArrayView2<'_, T>,
    lambda: T,
    ncomp: usize,
) -> Result<CorrelationWeights<T>> {
    let (q, p) = corr.dim();
    if q == 0 || p == 0 {
        return Err(Error::Shape("correlation matrix must be non-empty".into()));
    }
    if ncomp == 0 {
        return Err(Error::InvalidParameter("number of components must be >= 1".into()));
    }
    let m = numkernel::soft_threshold(corr, lambda)?;
    let mut u = Array2::zeros((p, ncomp));
    let mut v = Array2::zeros((q, ncomp));
    let mut singular_values = Array1::zeros(ncomp);
    if m.iter().all(|&e| e == T::zero()) {
        return Ok(CorrelationWeights {
            u,
            v,
            singular_values,
            effective_ncomp: 0,
        });
    }
    // all-zero rows and columns of M get exactly zero weights
    let rows = numkernel::nonzero_rows(m.view());
    let cols = numkernel::nonzero_rows(m.t());
    let core = m.select(Axis(0), &rows).select(Axis(1), &cols);
    let svd = numkernel::thin_svd(core.view())?;
    let r = ncomp.min(svd.numerical_rank());
    for (k, &j) in cols.iter().enumerate() {
        u.slice_mut(s![j, ..r])
            .assign(&svd.right_vectors.slice(s![k, ..r]));
    }
    singular_values
        .slice_mut(s![..r])
        .assign(&svd.singular_values.slice(s![..r]));
    v.assign(&numkernel::norm2_cols(m.dot(&u).view()));
    Ok(CorrelationWeights {
        u,
        v,
        singular_values,
        effective_ncomp: r,
    })
}

/// Covariates and responses with a nonzero weight on some component.
pub fn selected_variables<T: Scalar>(model: &CtSplsModel<T>) -> (BTreeSet<usize>, BTreeSet<usize>) {
    (
        numkernel::nonzero_rows(model.u.view()).into_iter().collect(),
        numkernel::nonzero_rows(model.v.view()).into_iter().collect(),
    )
}
