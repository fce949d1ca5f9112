//! Classification: the multi-block model is fitted on the standardized
//! indicator coding of the classes and a linear discriminant analysis is run
//! on the resulting super-components.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::koh_lanta::{reunification_predict, tribe_impute, KohLantaFit, TribeOptions};
use crate::numkernel;
use crate::scalar::Scalar;

/// Class labels with a fixed class order (used for coding and tie-breaks).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub labels: Vec<String>,
    pub classes: Vec<String>,
}

impl LabelVector {
    /// Classes are the sorted distinct labels.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        Self::with_classes(labels, classes)
    }

    pub fn with_classes(labels: Vec<String>, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::DegenerateLabel(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        if classes.iter().collect::<BTreeSet<_>>().len() != classes.len() {
            return Err(Error::DegenerateLabel("class list has duplicates".into()));
        }
        if let Some(bad) = labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::DegenerateLabel(format!("label {bad:?} is not a known class")));
        }
        Ok(Self { labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class index of every label.
    pub fn codes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| self.classes.iter().position(|c| c == l).expect("validated"))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for c in self.codes() {
            counts[c] += 1;
        }
        counts
    }
}

/// 0/1 membership matrix, one column per class.
pub fn indicator_matrix<T: Scalar>(labels: &LabelVector) -> Array2<T> {
    let mut out = Array2::zeros((labels.len(), labels.n_classes()));
    for (i, c) in labels.codes().into_iter().enumerate() {
        out[[i, c]] = T::one();
    }
    out
}

/// Standardized complete disjunctive coding of the labels.
pub fn dummy_code<T: Scalar>(labels: &LabelVector) -> Result<Array2<T>> {
    for (c, &count) in labels.counts().iter().enumerate() {
        if count == 0 || count == labels.len() {
            return Err(Error::DegenerateLabel(format!(
                "class {:?} has {count} of {} rows; its indicator is constant",
                labels.classes[c],
                labels.len()
            )));
        }
    }
    let (z, _) = numkernel::standardize(indicator_matrix::<T>(labels).view())?;
    Ok(z)
}

/// Linear discriminant analysis with a shared covariance matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LdaModel<T> {
    pub classes: Vec<String>,
    /// `g x R`.
    pub class_means: Array2<T>,
    /// `R x R`, ridge-stabilized.
    pub pooled_cov: Array2<T>,
    pub precision: Array2<T>,
    pub priors: Vec<T>,
}

/// Discriminant scores and the resulting assignments.
#[derive(Clone, Debug)]
pub struct ClassPrediction<T> {
    pub labels: Vec<String>,
    pub class_index: Vec<usize>,
    /// `m x g` linear discriminant scores.
    pub scores: Array2<T>,
    /// Row-wise softmax of `scores`.
    pub probabilities: Array2<T>,
}

const RIDGE_TRIGGER: f64 = 1e-10;
const RIDGE_SCALE: f64 = 1e-8;

impl<T: Scalar> LdaModel<T> {
    /// Fits on `n x R` features. Priors are the empirical class frequencies.
    pub fn fit(features: ArrayView2<'_, T>, labels: &LabelVector) -> Result<Self> {
        let (n, r) = features.dim();
        if n != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                n,
                labels.len()
            )));
        }
        let g = labels.n_classes();
        let counts = labels.counts();
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::FoldDegeneracy(format!(
                "class {:?} has no training instance",
                labels.classes[c]
            )));
        }
        let codes = labels.codes();
        let mut class_means = Array2::<T>::zeros((g, r));
        for (i, &c) in codes.iter().enumerate() {
            let mut row = class_means.row_mut(c);
            row += &features.row(i);
        }
        for (c, &k) in counts.iter().enumerate() {
            class_means.row_mut(c).mapv_inplace(|v| v / T::from_usize_lossy(k));
        }
        let mut cov = Array2::<T>::zeros((r, r));
        for (i, &c) in codes.iter().enumerate() {
            let d = &features.row(i) - &class_means.row(c);
            for a in 0..r {
                for b in 0..r {
                    cov[[a, b]] += d[a] * d[b];
                }
            }
        }
        let dof = if n > g { n - g } else { n };
        cov.mapv_inplace(|v| v / T::from_usize_lossy(dof));

        let (values, _) = numkernel::symmetric_eigen(cov.view())?;
        let smallest = values.iter().fold(T::infinity(), |acc, &v| acc.min(v));
        if smallest < T::lit(RIDGE_TRIGGER) {
            let trace: T = (0..r).map(|a| cov[[a, a]]).sum();
            let mut ridge = T::lit(RIDGE_SCALE) * trace / T::from_usize_lossy(r.max(1));
            if ridge.is_nan() || ridge <= T::zero() {
                ridge = T::lit(RIDGE_SCALE);
            }
            for a in 0..r {
                cov[[a, a]] += ridge;
            }
        }
        let (values, vectors) = numkernel::symmetric_eigen(cov.view())?;
        let inv = Array2::from_diag(&values.mapv(|v| T::one() / v));
        let precision = vectors.dot(&inv).dot(&vectors.t());
        let priors = counts
            .iter()
            .map(|&k| T::from_usize_lossy(k) / T::from_usize_lossy(n))
            .collect();
        Ok(Self {
            classes: labels.classes.clone(),
            class_means,
            pooled_cov: cov,
            precision,
            priors,
        })
    }

    /// `log(prior_k) + x' S^-1 mu_k - mu_k' S^-1 mu_k / 2` for every row and class.
    pub fn scores(&self, features: ArrayView2<'_, T>) -> Array2<T> {
        let proj = self.precision.dot(&self.class_means.t()); // R x g
        let half = T::lit(0.5);
        let offsets: Array1<T> = (0..self.classes.len())
            .map(|k| self.priors[k].ln() - half * self.class_means.row(k).dot(&proj.column(k)))
            .collect();
        let mut s = features.dot(&proj);
        for mut row in s.axis_iter_mut(Axis(0)) {
            row += &offsets;
        }
        s
    }

    pub fn predict(&self, features: ArrayView2<'_, T>) -> ClassPrediction<T> {
        let scores = self.scores(features);
        let class_index: Vec<usize> = scores.axis_iter(Axis(0)).map(argmax_first).collect();
        let probabilities = softmax_rows(scores.view());
        ClassPrediction {
            labels: class_index.iter().map(|&k| self.classes[k].clone()).collect(),
            class_index,
            scores,
            probabilities,
        }
    }
}

/// Index of the largest entry; the earliest wins ties.
fn argmax_first<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn softmax_rows<T: Scalar>(scores: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = scores.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let top = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - top).exp());
        let total: T = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Fitted classifier: the (possibly imputed) multi-block model and its LDA.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassifierFit<T> {
    pub fit: KohLantaFit<T>,
    pub lda: LdaModel<T>,
}

/// Fits the classifier. Training rows with missing blocks go through the
/// Tribe Stage; complete data reduces to a single multi-block fit.
pub fn classify_fit<T: Scalar>(
    data: &MultiBlockDataset<T>,
    labels: &LabelVector,
    lambda: T,
    ncomp: usize,
    options: TribeOptions,
) -> Result<ClassifierFit<T>> {
    if labels.len() != data.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} individuals",
            labels.len(),
            data.n()
        )));
    }
    if let Some(c) = labels.counts().iter().position(|&k| k == 0) {
        return Err(Error::FoldDegeneracy(format!(
            "class {:?} has no training instance",
            labels.classes[c]
        )));
    }
    let mut coded = data.clone();
    coded.response = Some(dummy_code::<T>(labels)?);
    coded.response_names = labels.classes.clone();
    let fit = tribe_impute(&coded, lambda, ncomp, options)?;
    let lda = LdaModel::fit(fit.model.t_super.view(), labels)?;
    Ok(ClassifierFit { fit, lda })
}

/// Assigns test individuals, completing missing blocks first.
pub fn classify_predict<T: Scalar>(
    classifier: &ClassifierFit<T>,
    test: &MultiBlockDataset<T>,
) -> Result<ClassPrediction<T>> {
    let model = &classifier.fit.model;
    let completed = if test.has_missing() {
        reunification_predict(&classifier.fit, test, model.lambda, model.ncomp)?.completed_test
    } else {
        test.clone()
    };
    let components = model.super_component(&completed.block_views())?;
    Ok(classifier.lda.predict(components.view()))
}
