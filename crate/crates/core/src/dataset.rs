use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `T` covariate blocks observed on the same individuals, plus an optional
/// response block.
///
/// Missingness is whole block-rows only: row `i` of block `t` is either fully
/// observed or listed in `missing_rows[t]`, in which case its cells hold NaN.
/// The response block is never missing; test sets carry no response at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MultiBlockDataset<T> {
    pub ids: Vec<String>,
    pub blocks: Vec<Array2<T>>,
    pub block_names: Vec<String>,
    pub variable_names: Vec<Vec<String>>,
    pub response: Option<Array2<T>>,
    pub response_names: Vec<String>,
    pub missing_rows: Vec<BTreeSet<usize>>,
}

/// Row partitions of a dataset by block.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSets {
    /// Per block, rows with the block observed.
    pub present: Vec<Vec<usize>>,
    /// Per block, rows with the block missing.
    pub missing: Vec<Vec<usize>>,
    /// Per individual, blocks that are missing.
    pub missing_blocks: Vec<BTreeSet<usize>>,
}

impl IndexSets {
    /// Individuals grouped by their set of missing blocks (empty patterns skipped).
    pub fn patterns(&self) -> BTreeMap<BTreeSet<usize>, Vec<usize>> {
        let mut out: BTreeMap<BTreeSet<usize>, Vec<usize>> = BTreeMap::new();
        for (i, k) in self.missing_blocks.iter().enumerate() {
            if !k.is_empty() {
                out.entry(k.clone()).or_default().push(i);
            }
        }
        out
    }
}

impl<T: Scalar> MultiBlockDataset<T> {
    /// Complete dataset with generated names (`id1..`, `block1..`, `x1..`, `y1..`).
    pub fn new(blocks: Vec<Array2<T>>, response: Option<Array2<T>>) -> Result<Self> {
        let n = blocks
            .first()
            .map(|b| b.nrows())
            .or_else(|| response.as_ref().map(|y| y.nrows()))
            .ok_or_else(|| Error::Shape("dataset needs at least one block".into()))?;
        let block_names = (1..=blocks.len()).map(|t| format!("block{t}")).collect();
        let variable_names = blocks
            .iter()
            .map(|b| (1..=b.ncols()).map(|j| format!("x{j}")).collect())
            .collect();
        let response_names = response
            .as_ref()
            .map(|y| (1..=y.ncols()).map(|j| format!("y{j}")).collect())
            .unwrap_or_default();
        let ds = Self {
            ids: (1..=n).map(|i| i.to_string()).collect(),
            missing_rows: vec![BTreeSet::new(); blocks.len()],
            blocks,
            block_names,
            variable_names,
            response,
            response_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Marks block-rows as missing and overwrites their cells with NaN.
    pub fn with_missing(mut self, missing_rows: Vec<BTreeSet<usize>>) -> Result<Self> {
        if missing_rows.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "missing-row sets given for {} blocks, dataset has {}",
                missing_rows.len(),
                self.blocks.len()
            )));
        }
        for (t, rows) in missing_rows.iter().enumerate() {
            for &i in rows {
                if i >= self.n() {
                    return Err(Error::Shape(format!("missing row {i} out of range in block {t}")));
                }
                self.blocks[t].row_mut(i).fill(T::nan());
            }
        }
        self.missing_rows = missing_rows;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.blocks.is_empty() {
            return Err(Error::Shape("dataset needs at least one block".into()));
        }
        for (t, b) in self.blocks.iter().enumerate() {
            if b.nrows() != n {
                return Err(Error::Shape(format!("block {t} has {} rows, expected {n}", b.nrows())));
            }
            if b.ncols() == 0 {
                return Err(Error::Shape(format!("block {t} has no columns")));
            }
        }
        if let Some(y) = &self.response {
            if y.nrows() != n {
                return Err(Error::Shape(format!("response has {} rows, expected {n}", y.nrows())));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Precondition("the response block cannot contain missing values".into()));
            }
        }
        if self.ids.len() != n
            || self.block_names.len() != self.blocks.len()
            || self.variable_names.len() != self.blocks.len()
            || self.missing_rows.len() != self.blocks.len()
        {
            return Err(Error::Shape("dataset metadata lengths disagree with its blocks".into()));
        }
        for (t, b) in self.blocks.iter().enumerate() {
            for (i, row) in b.axis_iter(Axis(0)).enumerate() {
                let missing = self.missing_rows[t].contains(&i);
                if !missing && row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::UnsupportedPattern(format!(
                        "block {t}, row {i} has non-finite cells but is not a missing block-row"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.missing_rows.iter().any(|m| !m.is_empty())
    }

    pub fn n_missing_block_rows(&self) -> usize {
        self.missing_rows.iter().map(|m| m.len()).sum()
    }

    pub fn block_views(&self) -> Vec<ArrayView2<'_, T>> {
        self.blocks.iter().map(|b| b.view()).collect()
    }

    pub fn response_or_err(&self) -> Result<&Array2<T>> {
        self.response
            .as_ref()
            .ok_or_else(|| Error::Precondition("dataset has no response block".into()))
    }

    pub fn index_sets(&self) -> IndexSets {
        let n = self.n();
        let mut present = Vec::with_capacity(self.n_blocks());
        let mut missing = Vec::with_capacity(self.n_blocks());
        let mut missing_blocks = vec![BTreeSet::new(); n];
        for (t, rows) in self.missing_rows.iter().enumerate() {
            present.push((0..n).filter(|i| !rows.contains(i)).collect());
            missing.push(rows.iter().copied().collect());
            for &i in rows {
                missing_blocks[i].insert(t);
            }
        }
        IndexSets {
            present,
            missing,
            missing_blocks,
        }
    }

    /// Individuals with every block missing.
    pub fn fully_missing_individuals(&self) -> Vec<usize> {
        let sets = self.index_sets();
        sets.missing_blocks
            .iter()
            .enumerate()
            .filter(|(_, k)| k.len() == self.n_blocks())
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let pick = |m: &Array2<T>| m.select(Axis(0), rows);
        let position: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            blocks: self.blocks.iter().map(pick).collect(),
            block_names: self.block_names.clone(),
            variable_names: self.variable_names.clone(),
            response: self.response.as_ref().map(pick),
            response_names: self.response_names.clone(),
            missing_rows: self
                .missing_rows
                .iter()
                .map(|m| m.iter().filter_map(|i| position.get(i).copied()).collect())
                .collect(),
        }
    }

    /// Same covariates without the response.
    pub fn without_response(&self) -> Self {
        let mut out = self.clone();
        out.response = None;
        out.response_names.clear();
        out
    }

    /// Fills every missing block-row with the column means of the block's
    /// observed rows. Returns an error if a block has no observed row.
    pub fn mean_imputed(&self) -> Result<Self> {
        let means = self.observed_means()?;
        Ok(self.imputed_with(&means))
    }

    /// Column means over observed rows, per block.
    pub fn observed_means(&self) -> Result<Vec<ndarray::Array1<T>>> {
        let sets = self.index_sets();
        self.blocks
            .iter()
            .enumerate()
            .map(|(t, b)| {
                if sets.present[t].is_empty() {
                    return Err(Error::DegenerateBlock(format!(
                        "block {} has no observed rows",
                        self.block_names[t]
                    )));
                }
                Ok(b.select(Axis(0), &sets.present[t])
                    .mean_axis(Axis(0))
                    .expect("non-empty"))
            })
            .collect()
    }

    /// Fills missing block-rows with the supplied per-block column values.
    pub fn imputed_with(&self, fill: &[ndarray::Array1<T>]) -> Self {
        let mut out = self.clone();
        for (t, rows) in self.missing_rows.iter().enumerate() {
            for &i in rows {
                out.blocks[t].row_mut(i).assign(&fill[t]);
            }
        }
        out.missing_rows = vec![BTreeSet::new(); self.n_blocks()];
        out
    }
}
