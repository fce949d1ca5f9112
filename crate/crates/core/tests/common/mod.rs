#![allow(dead_code)]

use mddspls::classify::LabelVector;
use mddspls::MultiBlockDataset;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Classical Jacobi: repeatedly annihilates the largest off-diagonal entry.
/// Eigenvalues descending, eigenvectors in columns.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..(100 * n * n).max(100) {
        let (mut p, mut q, mut best) = (0, 0, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                if a[[i, j]].abs() > best {
                    best = a[[i, j]].abs();
                    p = i;
                    q = j;
                }
            }
        }
        let scale: f64 = a.diag().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-300);
        if best <= 1e-300 || best < 1e-17 * scale {
            break;
        }
        let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let akp = a[[k, p]];
            let akq = a[[k, q]];
            a[[k, p]] = c * akp - s * akq;
            a[[k, q]] = s * akp + c * akq;
        }
        for k in 0..n {
            let apk = a[[p, k]];
            let aqk = a[[q, k]];
            a[[p, k]] = c * apk - s * aqk;
            a[[q, k]] = s * apk + c * aqk;
        }
        for k in 0..n {
            let vkp = v[[k, p]];
            let vkq = v[[k, q]];
            v[[k, p]] = c * vkp - s * vkq;
            v[[k, q]] = s * vkp + c * vkq;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let vals = order.iter().map(|&i| a[[i, i]]).collect();
    let vecs = v.select(Axis(1), &order);
    (vals, vecs)
}

/// Singular values and right singular vectors from the eigendecomposition of `M'M`.
pub fn svd_oracle(m: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (vals, vecs) = jacobi_eigen(&m.t().dot(m));
    (vals.mapv(|l| l.max(0.0).sqrt()), vecs)
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    let mut b = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap([col, k], [pivot, k]);
            }
            for k in 0..b.ncols() {
                b.swap([col, k], [pivot, k]);
            }
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            for k in 0..b.ncols() {
                b[[row, k]] -= f * b[[col, k]];
            }
        }
    }
    let mut x = Array2::<f64>::zeros(b.dim());
    for row in (0..n).rev() {
        for k in 0..b.ncols() {
            let mut acc = b[[row, k]];
            for j in row + 1..n {
                acc -= a[[row, j]] * x[[j, k]];
            }
            x[[row, k]] = acc / a[[row, row]];
        }
    }
    x
}

/// Maximum entrywise difference after flipping `b` columns to agree in sign with `a`.
pub fn sign_aligned_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (ca, cb) in a.axis_iter(Axis(1)).zip(b.axis_iter(Axis(1))) {
        let sign = if ca.dot(&cb) < 0.0 { -1.0 } else { 1.0 };
        for (x, y) in ca.iter().zip(cb.iter()) {
            worst = worst.max((x - sign * y).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Gaussian blocks with a response depending linearly on the first two
/// columns of every block plus noise.
pub fn linear_dataset(seed: u64, n: usize, widths: &[usize], q: usize, noise: f64) -> MultiBlockDataset<f64> {
    let mut r = rng(seed);
    let blocks: Vec<Array2<f64>> = widths.iter().map(|&p| gaussian(&mut r, n, p)).collect();
    let mut y = gaussian(&mut r, n, q) * noise;
    for b in &blocks {
        for k in 0..q {
            let mut col = y.column_mut(k);
            col += &(&b.column(0) * (1.0 + k as f64));
            if b.ncols() > 1 {
                col -= &(&b.column(1) * 0.5);
            }
        }
    }
    MultiBlockDataset::new(blocks, Some(y)).unwrap()
}

/// Every block is `z a_t'` for one latent score `z`; the response is `z`.
pub fn rank_one_dataset(seed: u64, n: usize, widths: &[usize]) -> MultiBlockDataset<f64> {
    let mut r = rng(seed);
    let z: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let blocks = widths
        .iter()
        .map(|&p| {
            let load: Vec<f64> = (0..p)
                .map(|_| {
                    let v: f64 = r.random_range(0.5..1.5);
                    if r.random_bool(0.5) { v } else { -v }
                })
                .collect();
            Array2::from_shape_fn((n, p), |(i, j)| z[i] * load[j])
        })
        .collect();
    let y = z.insert_axis(Axis(1));
    MultiBlockDataset::new(blocks, Some(y)).unwrap()
}

/// Three balanced classes of `per_class` individuals in one block of `p`
/// variables. Variables 0,1 carry the first discriminant direction and 2,3
/// the second; the rest is noise.
pub fn planted_classes(seed: u64, per_class: usize, p: usize) -> (MultiBlockDataset<f64>, LabelVector) {
    let mut r = rng(seed);
    let centers = [(3.0, 0.0), (-1.5, 2.6), (-1.5, -2.6)];
    let names = ["a", "b", "c"];
    let n = 3 * per_class;
    let mut x = gaussian(&mut r, n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 3;
        labels.push(names[k]);
        let (c1, c2) = centers[k];
        for j in 0..4 {
            let centre = if j < 2 { c1 } else { c2 };
            let e: f64 = StandardNormal.sample(&mut r);
            x[[i, j]] = centre + 0.3 * e;
        }
    }
    (
        MultiBlockDataset::new(vec![x], None).unwrap(),
        LabelVector::new(labels).unwrap(),
    )
}

/// Brute-force nearest-class-mean assignment on the chosen columns, leaving
/// each individual out of its own class mean.
pub fn nearest_mean_loo(x: &Array2<f64>, cols: &[usize], labels: &LabelVector) -> Vec<String> {
    let codes = labels.codes();
    let sub = x.select(Axis(1), cols);
    (0..sub.nrows())
        .map(|i| {
            let mut best = (f64::INFINITY, 0usize);
            for k in 0..labels.n_classes() {
                let members: Vec<usize> = (0..sub.nrows()).filter(|&r| r != i && codes[r] == k).collect();
                let mean = sub.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
                let d: f64 = (&sub.row(i) - &mean).mapv(|v| v * v).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            labels.classes[best.1].clone()
        })
        .collect()
}
