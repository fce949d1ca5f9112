//! Synthetic multi-block data with grouped inter/intra-block correlation, a
//! response built from a random subset of informative covariates, and a
//! whole-row missingness mask.
//!
//! Variable `j` of group `d < D` in block `t` correlates `rho_d` with the other
//! variables of its group in the same block, `rho_t` with variable `j` of group
//! `d` in every other block, and `rho_d * rho_t` with the remaining variables
//! of that group in other blocks. The last group of every block is independent
//! noise. Within a group the covariance is therefore the Kronecker product of
//! two compound-symmetry matrices, whose eigenstructure is known in closed
//! form; sampling uses its symmetric square root.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiBlockDataset;
use crate::error::{Error, Result};
use crate::numkernel;
use crate::scalar::Scalar;

const PSD_CLIP: f64 = 1e-8;
const EXTRA_RESPONSE_NOISE_SD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub n_blocks: usize,
    pub n_groups: usize,
    pub group_size: usize,
    pub rho_t: f64,
    pub rho_d: f64,
    pub linked_blocks: usize,
    pub theta_choices: Vec<usize>,
    pub q: usize,
    pub missing_prop: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            n_blocks: 10,
            n_groups: 4,
            group_size: 40,
            rho_t: 0.9,
            rho_d: 0.9,
            linked_blocks: 5,
            theta_choices: (1..=10).map(|k| 4 * k).collect(),
            q: 1,
            missing_prop: 0.3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn block_width(&self) -> usize {
        self.n_groups * self.group_size
    }

    pub fn n_variables(&self) -> usize {
        self.n_blocks * self.block_width()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, rho) in [("rho_t", self.rho_t), ("rho_d", self.rho_d)] {
            if !(0.0..1.0).contains(&rho) {
                return bad(format!("{name} must lie in [0, 1), got {rho}"));
            }
        }
        if self.n < 2 {
            return bad(format!("n must be >= 2, got {}", self.n));
        }
        if self.n_blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.n_groups < 2 {
            return bad(format!("at least 2 groups per block are required, got {}", self.n_groups));
        }
        if self.group_size == 0 {
            return bad("group size must be >= 1".into());
        }
        if self.linked_blocks == 0 || self.linked_blocks > self.n_blocks {
            return bad(format!(
                "linked_blocks must lie in [1, {}], got {}",
                self.n_blocks, self.linked_blocks
            ));
        }
        if self.theta_choices.is_empty()
            || self.theta_choices.iter().any(|&t| t == 0 || t > self.group_size)
        {
            return bad(format!(
                "theta choices must be non-empty and within [1, {}]",
                self.group_size
            ));
        }
        if self.q == 0 {
            return bad("q must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.missing_prop) {
            return bad(format!("missing_prop must lie in [0, 1), got {}", self.missing_prop));
        }
        let min_eig = min_eigenvalue(self);
        if min_eig < -PSD_CLIP {
            return Err(Error::InfeasibleCorrelation {
                rho_d: self.rho_d,
                rho_t: self.rho_t,
                min_eigenvalue: min_eig,
            });
        }
        Ok(())
    }
}

/// Ground truth behind a generated response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub linked_blocks: Vec<usize>,
    pub thetas: Vec<usize>,
    /// Per linked block, informative column indices within the block (all in group 1).
    pub informative_indices: Vec<Vec<usize>>,
    /// Leading left singular vector of the informative covariates.
    pub latent_scores: Vec<f64>,
}

/// Eigenvalues of the compound-symmetry matrix `(1 - rho) I + rho 11'` of size `k`.
fn compound_eigenvalues(k: usize, rho: f64) -> [f64; 2] {
    [1.0 - rho, 1.0 + (k as f64 - 1.0) * rho]
}

fn min_eigenvalue(cfg: &SimConfig) -> f64 {
    let a = compound_eigenvalues(cfg.n_blocks, cfg.rho_t);
    let b = compound_eigenvalues(cfg.group_size, cfg.rho_d);
    // the unit diagonal of the noise group contributes eigenvalue 1
    let mut smallest: f64 = 1.0;
    for x in a {
        for y in b {
            smallest = smallest.min(x * y);
        }
    }
    smallest
}

/// Full covariance of all `T * D * group_size` covariates.
pub fn gen_covariance(cfg: &SimConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let width = cfg.block_width();
    let p = cfg.n_variables();
    let g = cfg.group_size;
    let mut sigma = Array2::<f64>::eye(p);
    for t1 in 0..cfg.n_blocks {
        for t2 in 0..cfg.n_blocks {
            for d in 0..cfg.n_groups - 1 {
                for j1 in 0..g {
                    for j2 in 0..g {
                        let a = t1 * width + d * g + j1;
                        let b = t2 * width + d * g + j2;
                        sigma[[a, b]] = match (t1 == t2, j1 == j2) {
                            (true, true) => 1.0,
                            (true, false) => cfg.rho_d,
                            (false, true) => cfg.rho_t,
                            (false, false) => cfg.rho_d * cfg.rho_t,
                        };
                    }
                }
            }
        }
    }
    Ok(sigma)
}

/// Applies the symmetric square root of `(1 - rho) I + rho 11'` to `v` in place.
fn apply_compound_sqrt(v: &mut [f64], rho: f64) {
    let k = v.len();
    let [small, large] = compound_eigenvalues(k, rho);
    let a = small.max(0.0).sqrt();
    let c = large.max(0.0).sqrt();
    let mean = v.iter().sum::<f64>() / k as f64;
    for x in v.iter_mut() {
        *x = a * *x + (c - a) * mean;
    }
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, p));
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    out
}

/// Draws `n` rows from the zero-mean normal with covariance [`gen_covariance`].
pub fn sample_covariates(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let width = cfg.block_width();
    let g = cfg.group_size;
    let nb = cfg.n_blocks;
    let mut blocks: Vec<Array2<f64>> = (0..nb).map(|_| standard_normals(rng, cfg.n, width)).collect();
    let mut grid = vec![0.0; nb * g];
    let mut line = vec![0.0; nb.max(g)];
    for i in 0..cfg.n {
        for d in 0..cfg.n_groups - 1 {
            for t in 0..nb {
                for j in 0..g {
                    grid[t * g + j] = blocks[t][[i, d * g + j]];
                }
            }
            // sqrt(C_T) on the block axis, sqrt(C_g) on the variable axis
            for j in 0..g {
                for t in 0..nb {
                    line[t] = grid[t * g + j];
                }
                apply_compound_sqrt(&mut line[..nb], cfg.rho_t);
                for t in 0..nb {
                    grid[t * g + j] = line[t];
                }
            }
            for t in 0..nb {
                apply_compound_sqrt(&mut grid[t * g..(t + 1) * g], cfg.rho_d);
            }
            for t in 0..nb {
                for j in 0..g {
                    blocks[t][[i, d * g + j]] = grid[t * g + j];
                }
            }
        }
    }
    Ok(blocks)
}

/// Leading left singular vector through the smaller Gram matrix, with the
/// sign fixed on the paired right vector.
fn leading_left_vector(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, k) = a.dim();
    let (u, v) = if k <= n {
        let gram = a.t().dot(&a);
        let (_, vecs) = numkernel::symmetric_eigen(gram.view())?;
        let v = vecs.column(0).to_owned();
        let mut u = a.dot(&v);
        let norm = u.dot(&u).sqrt();
        u.mapv_inplace(|x| x / norm);
        (u, v)
    } else {
        let gram = a.dot(&a.t());
        let (_, vecs) = numkernel::symmetric_eigen(gram.view())?;
        let u = vecs.column(0).to_owned();
        let v = a.t().dot(&u);
        (u, v)
    };
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    let sign = if v[best] < 0.0 { -1.0 } else { 1.0 };
    Ok(u.iter().map(|x| x * sign).collect())
}

/// Complete dataset and its generating truth. The response is the leading
/// left singular vector of the informative covariates, scaled by `sqrt(n)`.
pub fn gen_dataset<T: Scalar>(cfg: &SimConfig) -> Result<(MultiBlockDataset<T>, SimTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blocks = sample_covariates(cfg, &mut rng)?;

    let mut linked: Vec<usize> = index::sample(&mut rng, cfg.n_blocks, cfg.linked_blocks).into_vec();
    linked.sort_unstable();
    let mut thetas = Vec::with_capacity(linked.len());
    let mut informative = Vec::with_capacity(linked.len());
    let mut columns: Vec<Array2<f64>> = Vec::new();
    for &t in &linked {
        let theta = *cfg.theta_choices.choose(&mut rng).expect("validated non-empty");
        let mut keep: Vec<usize> = index::sample(&mut rng, cfg.group_size, theta).into_vec();
        keep.sort_unstable();
        let keep_set: BTreeSet<usize> = keep.iter().copied().collect();
        for j in 0..cfg.group_size {
            if !keep_set.contains(&j) {
                for i in 0..cfg.n {
                    blocks[t][[i, j]] = StandardNormal.sample(&mut rng);
                }
            }
        }
        columns.push(blocks[t].select(Axis(1), &keep));
        thetas.push(theta);
        informative.push(keep);
    }
    let views: Vec<ArrayView2<'_, f64>> = columns.iter().map(|c| c.view()).collect();
    let informative_matrix = ndarray::concatenate(Axis(1), &views).expect("same rows");
    let latent = leading_left_vector(informative_matrix.view())?;

    let scale = (cfg.n as f64).sqrt();
    let mut y = Array2::<f64>::zeros((cfg.n, cfg.q));
    for i in 0..cfg.n {
        y[[i, 0]] = latent[i] * scale;
    }
    for j in 1..cfg.q {
        for i in 0..cfg.n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[[i, j]] = latent[i] * scale + EXTRA_RESPONSE_NOISE_SD * e;
        }
    }

    let convert = |m: &Array2<f64>| m.mapv(T::lit);
    let mut ds = MultiBlockDataset::new(blocks.iter().map(convert).collect(), Some(convert(&y)))?;
    for (t, names) in ds.variable_names.iter_mut().enumerate() {
        for (j, name) in names.iter_mut().enumerate() {
            *name = format!("b{}_g{}_v{}", t + 1, j / cfg.group_size + 1, j % cfg.group_size + 1);
        }
    }
    Ok((
        ds,
        SimTruth {
            linked_blocks: linked,
            thetas,
            informative_indices: informative,
            latent_scores: latent,
        },
    ))
}

/// Marks uniformly random block-rows missing until `round(prop * n * T)` are
/// missing, never removing an individual's last observed block.
pub fn mask_missing<T: Scalar>(data: &MultiBlockDataset<T>, prop: f64, seed: u64) -> Result<MultiBlockDataset<T>> {
    let n = data.n();
    let nb = data.n_blocks();
    if !(0.0..1.0).contains(&prop) {
        return Err(Error::InvalidParameter(format!("missing proportion must lie in [0, 1), got {prop}")));
    }
    let total = n * nb;
    let target = (prop * total as f64).round() as usize;
    let capacity = n * (nb - 1);
    if target > capacity {
        return Err(Error::InfeasibleMask(format!(
            "{target} missing block-rows requested but at most {capacity} keep one block per individual"
        )));
    }
    let mut missing = data.missing_rows.clone();
    let mut count: usize = missing.iter().map(|m| m.len()).sum();
    let mut present_per_individual: Vec<usize> = (0..n)
        .map(|i| (0..nb).filter(|t| !missing[*t].contains(&i)).count())
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..nb).flat_map(|t| (0..n).map(move |i| (t, i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    for (t, i) in pairs {
        if count >= target {
            break;
        }
        if missing[t].contains(&i) || present_per_individual[i] <= 1 {
            continue;
        }
        missing[t].insert(i);
        present_per_individual[i] -= 1;
        count += 1;
    }
    if count < target {
        return Err(Error::InfeasibleMask(format!(
            "only {count} of {target} block-rows could be removed"
        )));
    }
    data.clone().with_missing(missing)
}

/// Seed used for the missingness mask of a configuration.
pub fn mask_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_5EED
}

/// Generates the dataset and applies the configured missingness.
pub fn simulate<T: Scalar>(cfg: &SimConfig) -> Result<(MultiBlockDataset<T>, SimTruth)> {
    let (ds, truth) = gen_dataset(cfg)?;
    let masked = if cfg.missing_prop > 0.0 {
        mask_missing(&ds, cfg.missing_prop, mask_seed(cfg.seed))?
    } else {
        ds
    };
    Ok((masked, truth))
}
