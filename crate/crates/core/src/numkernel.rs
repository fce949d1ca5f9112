//! Dense matrix primitives shared by the fitting code.
//!
//! Everything here is a pure function of its inputs. The singular value
//! decomposition is a one-sided (Hestenes) Jacobi iteration, which keeps high
//! relative accuracy on the small, often rank-deficient matrices produced by
//! soft-thresholding.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_JACOBI_SWEEPS: usize = 80;

/// Relative tolerance on squared singular values below which a direction is
/// treated as numerically absent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Relative gap under which two singular values are considered tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Per-column location and scale of a matrix (sample sd, divisor `n - 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StandardizationParams<T> {
    pub means: Array1<T>,
    pub sds: Array1<T>,
}

impl<T: Scalar> StandardizationParams<T> {
    pub fn ncols(&self) -> usize {
        self.means.len()
    }

    /// `(x - mean) / sd` column-wise. Columns recorded with `sd == 0` map to 0.
    pub fn apply(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.ncols() {
            return Err(Error::Shape(format!(
                "expected {} columns, got {}",
                self.ncols(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, sd) = (self.means[j], self.sds[j]);
            if sd > T::zero() {
                col.mapv_inplace(|v| (v - mu) / sd);
            } else {
                col.fill(T::zero());
            }
        }
        Ok(out)
    }

    /// Maps standardized values back to the original scale.
    pub fn unapply(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if z.ncols() != self.ncols() {
            return Err(Error::Shape(format!(
                "expected {} columns, got {}",
                self.ncols(),
                z.ncols()
            )));
        }
        let mut out = z.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, sd) = (self.means[j], self.sds[j]);
            col.mapv_inplace(|v| v * sd + mu);
        }
        Ok(out)
    }

    /// Restricts the parameters to a subset of columns.
    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            means: columns.iter().map(|&j| self.means[j]).collect(),
            sds: columns.iter().map(|&j| self.sds[j]).collect(),
        }
    }
}

/// Truncated singular value decomposition of a `rows x cols` matrix.
///
/// `right_vectors` is `cols x R`, `left_vectors` is `rows x R`. Each right
/// vector has its largest-magnitude entry positive (lowest index on ties) and
/// the paired left vector is flipped with it. Tied singular values are
/// ordered by ascending lexicographic order of their right vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SvdResult<T> {
    pub right_vectors: Array2<T>,
    pub left_vectors: Array2<T>,
    pub singular_values: Array1<T>,
}

impl<T: Scalar> SvdResult<T> {
    pub fn ncomp(&self) -> usize {
        self.singular_values.len()
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(mut self, r: usize) -> Self {
        let r = r.min(self.ncomp());
        self.right_vectors = self.right_vectors.slice(ndarray::s![.., ..r]).to_owned();
        self.left_vectors = self.left_vectors.slice(ndarray::s![.., ..r]).to_owned();
        self.singular_values = self.singular_values.slice(ndarray::s![..r]).to_owned();
        self
    }

    /// Number of singular values whose square exceeds
    /// `RANK_TOLERANCE * largest^2`.
    pub fn numerical_rank(&self) -> usize {
        numerical_rank(self.singular_values.view())
    }

    pub fn reconstruct(&self) -> Array2<T> {
        let mut scaled = self.left_vectors.clone();
        for (mut col, &s) in scaled.axis_iter_mut(Axis(1)).zip(self.singular_values.iter()) {
            col.mapv_inplace(|v| v * s);
        }
        scaled.dot(&self.right_vectors.t())
    }
}

pub fn numerical_rank<T: Scalar>(singular_values: ArrayView1<'_, T>) -> usize {
    let largest = singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s.abs()));
    if largest == T::zero() {
        return 0;
    }
    let cutoff = T::rel_tol(RANK_TOLERANCE) * largest * largest;
    singular_values
        .iter()
        .filter(|&&s| s * s > cutoff)
        .count()
}

#[inline]
pub fn soft_threshold_value<T: Scalar>(x: T, lambda: T) -> T {
    let shrunk = x.abs() - lambda;
    if shrunk > T::zero() {
        shrunk.copysign(x)
    } else {
        T::zero()
    }
}

/// Entrywise `sign(m) * max(|m| - lambda, 0)`.
pub fn soft_threshold<T: Scalar>(m: ArrayView2<'_, T>, lambda: T) -> Result<Array2<T>> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::InvalidParameter(format!(
            "soft-threshold level must be >= 0, got {lambda}"
        )));
    }
    Ok(m.mapv(|x| soft_threshold_value(x, lambda)))
}

/// Centers and scales every column to mean 0 and sample sd 1.
///
/// Constant columns come back as zeros with a recorded sd of 0.
pub fn standardize<T: Scalar>(m: ArrayView2<'_, T>) -> Result<(Array2<T>, StandardizationParams<T>)> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "cannot standardize a matrix with non-finite entries".into(),
        ));
    }
    let nf = T::from_usize_lossy(n);
    let denom = T::from_usize_lossy(n - 1);
    let mut means = Array1::zeros(m.ncols());
    let mut sds = Array1::zeros(m.ncols());
    for (j, col) in m.axis_iter(Axis(1)).enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            means[j] = first;
            continue;
        }
        let mut mu = col.sum() / nf;
        // second pass removes the rounding error of the first
        mu += col.iter().map(|&v| v - mu).sum::<T>() / nf;
        let ss: T = col.iter().map(|&v| (v - mu) * (v - mu)).sum();
        means[j] = mu;
        let sd = (ss / denom).sqrt();
        sds[j] = if sd > T::zero() { sd } else { T::zero() };
    }
    let params = StandardizationParams { means, sds };
    let out = params.apply(m)?;
    Ok((out, params))
}

/// Normalizes each nonzero column to unit Euclidean norm; zero columns stay zero.
pub fn norm2_cols<T: Scalar>(m: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = m.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// The leading `r` singular triplets of `m`.
pub fn svd_r<T: Scalar>(m: ArrayView2<'_, T>, r: usize) -> Result<SvdResult<T>> {
    let k = m.nrows().min(m.ncols());
    if r == 0 || r > k {
        return Err(Error::InvalidParameter(format!(
            "requested {r} singular vectors from a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(thin_svd(m)?.truncate(r))
}

/// All `min(rows, cols)` singular triplets of `m`, in canonical order and sign.
pub fn thin_svd<T: Scalar>(m: ArrayView2<'_, T>) -> Result<SvdResult<T>> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("cannot decompose an empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "cannot decompose a matrix with non-finite entries".into(),
        ));
    }
    let raw = if rows >= cols {
        // columns of m are orthogonalized; the rotations are the right vectors
        let j = one_sided_jacobi(m);
        RawSvd {
            right: j.rotations,
            left: j.normalized,
            values: j.values,
        }
    } else {
        let j = one_sided_jacobi(m.t());
        RawSvd {
            right: j.normalized,
            left: j.rotations,
            values: j.values,
        }
    };
    Ok(canonicalize(raw))
}

struct RawSvd<T> {
    right: Array2<T>,
    left: Array2<T>,
    values: Vec<T>,
}

struct JacobiOutput<T> {
    /// `k x k`, columns are the accumulated rotations.
    rotations: Array2<T>,
    /// `len x k`, orthogonalized columns scaled to unit norm (completed for
    /// vanishing singular values).
    normalized: Array2<T>,
    values: Vec<T>,
}

/// Hestenes iteration on the columns of a tall matrix `a` (`len x k`, `len >= k`).
fn one_sided_jacobi<T: Scalar>(a: ArrayView2<'_, T>) -> JacobiOutput<T> {
    let (len, k) = a.dim();
    // column j of `a` lives at work[j*len .. (j+1)*len]
    let mut work: Vec<T> = Vec::with_capacity(len * k);
    for col in a.axis_iter(Axis(1)) {
        work.extend(col.iter().copied());
    }
    let mut rot: Vec<T> = vec![T::zero(); k * k];
    for j in 0..k {
        rot[j * k + j] = T::one();
    }
    let eps = T::epsilon();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let (alpha, beta, gamma) = {
                    let ci = &work[i * len..(i + 1) * len];
                    let cj = &work[j * len..(j + 1) * len];
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for (&x, &y) in ci.iter().zip(cj) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = T::one().copysign(zeta) / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut work, len, i, j, c, s);
                rotate_pair(&mut rot, k, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let values: Vec<T> = (0..k)
        .map(|j| {
            work[j * len..(j + 1) * len]
                .iter()
                .map(|&v| v * v)
                .sum::<T>()
                .sqrt()
        })
        .collect();
    let largest = values.iter().fold(T::zero(), |acc, &v| acc.max(v));
    let negligible = largest * eps * T::from_usize_lossy(8 * len.max(k));

    let mut normalized = Array2::zeros((len, k));
    let mut missing = Vec::new();
    for j in 0..k {
        if largest > T::zero() && values[j] > negligible {
            let col = &work[j * len..(j + 1) * len];
            for (r, &v) in col.iter().enumerate() {
                normalized[[r, j]] = v / values[j];
            }
        } else {
            missing.push(j);
        }
    }
    complete_orthonormal(&mut normalized, &missing);

    let rotations = Array2::from_shape_fn((k, k), |(r, c)| rot[c * k + r]);
    JacobiOutput {
        rotations,
        normalized,
        values,
    }
}

#[inline]
fn rotate_pair<T: Scalar>(buf: &mut [T], len: usize, i: usize, j: usize, c: T, s: T) {
    debug_assert!(i < j);
    let (head, tail) = buf.split_at_mut(j * len);
    let ci = &mut head[i * len..(i + 1) * len];
    let cj = &mut tail[..len];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Fills the listed columns of `q` with unit vectors orthogonal to every other
/// column, drawn from the canonical basis by Gram-Schmidt in index order.
fn complete_orthonormal<T: Scalar>(q: &mut Array2<T>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let len = q.nrows();
    let mut filled: Vec<usize> = (0..q.ncols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0usize;
    for &target in missing {
        while candidate < len {
            let mut v = Array1::<T>::zeros(len);
            v[candidate] = T::one();
            candidate += 1;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for &f in &filled {
                    let col = q.column(f);
                    let proj = col.dot(&v);
                    v.scaled_add(-proj, &col);
                }
            }
            let norm = v.dot(&v).sqrt();
            if norm > T::lit(1e-3) {
                v.mapv_inplace(|x| x / norm);
                q.column_mut(target).assign(&v);
                filled.push(target);
                break;
            }
        }
    }
}

fn canonicalize<T: Scalar>(raw: RawSvd<T>) -> SvdResult<T> {
    let RawSvd {
        mut right,
        mut left,
        values,
    } = raw;
    let k = values.len();

    for j in 0..k {
        let col = right.column(j);
        let mut best = 0usize;
        for (idx, &v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = idx;
            }
        }
        if col[best] < T::zero() {
            right.column_mut(j).mapv_inplace(|v| -v);
            left.column_mut(j).mapv_inplace(|v| -v);
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));

    let largest = order.first().map(|&i| values[i]).unwrap_or(T::zero());
    let gap = T::rel_tol(TIE_TOLERANCE) * largest;
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && values[order[end - 1]] - values[order[end]] <= gap {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&a, &b| lexicographic(right.column(a), right.column(b)));
        }
        start = end;
    }

    let right_vectors = Array2::from_shape_fn((right.nrows(), k), |(r, c)| right[[r, order[c]]]);
    let left_vectors = Array2::from_shape_fn((left.nrows(), k), |(r, c)| left[[r, order[c]]]);
    let singular_values = order.iter().map(|&i| values[i]).collect();
    SvdResult {
        right_vectors,
        left_vectors,
        singular_values,
    }
}

fn lexicographic<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Least-squares coefficients `B0` of `S ~ T B0` through the truncated
/// pseudo-inverse of `T'T`.
///
/// Directions whose squared singular value falls below
/// `RANK_TOLERANCE * largest^2` are dropped, so rank-deficient or all-zero
/// `T` is handled without error.
pub fn pinv_regress<T: Scalar>(t: ArrayView2<'_, T>, s: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if t.nrows() != s.nrows() {
        return Err(Error::Shape(format!(
            "regression inputs have {} and {} rows",
            t.nrows(),
            s.nrows()
        )));
    }
    let r = t.ncols();
    let mut b0 = Array2::zeros((r, s.ncols()));
    if t.iter().all(|&v| v == T::zero()) {
        return Ok(b0);
    }
    let svd = thin_svd(t)?;
    let keep = svd.numerical_rank();
    let cross = t.t().dot(&s);
    for k in 0..keep {
        let sigma2 = svd.singular_values[k] * svd.singular_values[k];
        let v = svd.right_vectors.column(k);
        // v (v' cross) / sigma^2
        let proj = v.dot(&cross) / sigma2;
        for (i, &vi) in v.iter().enumerate() {
            b0.row_mut(i).scaled_add(vi, &proj);
        }
    }
    Ok(b0)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in nonincreasing order and the matching eigenvectors
/// as columns. Only the upper triangle is read.
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<'_, T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| if i <= j { a[[i, j]] } else { a[[j, i]] });
    let mut v = Array2::<T>::eye(n);
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let diag: T = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (apq + apq);
                let t = T::one().copysign(theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[[y, y]].partial_cmp(&m[[x, x]]).unwrap_or(Ordering::Equal));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    Ok((values, vectors))
}

/// Frobenius norm.
pub fn frobenius<T: Scalar>(m: ArrayView2<'_, T>) -> T {
    m.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Indices of rows with at least one nonzero entry.
pub fn nonzero_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&v| v != T::zero()))
        .map(|(i, _)| i)
        .collect()
}
