//! Sparse constraint matrices and the small dense kernels built on them.
//!
//! Constraint matrices are tall in columns (one per weight) and short in rows
//! (one per control), so every factorization happens on the dense `m x m`
//! gram matrix `A diag(s) A'` rather than on `A` itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Largest `min(rows, cols)` accepted by [`estimate_rank`].
pub const RANK_DENSE_LIMIT: usize = 2000;

/// Relative ridge multipliers tried, in order, when a gram factorization fails.
/// Each is scaled by `trace(G) / m`.
pub const RIDGE_SCHEDULE: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Compressed sparse matrix with both row and column views.
///
/// Duplicate `(row, col)` entries are summed on construction. Explicit zeros
/// may be stored and simply contribute nothing to products.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_vals: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite matrix entry at ({r}, {c})"
                )));
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        Ok(Self::from_sorted_unique(n_rows, n_cols, &merged))
    }

    fn from_sorted_unique(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let nnz = entries.len();
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(nnz);
        let mut row_vals = Vec::with_capacity(nnz);
        for &(r, c, v) in entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            row_vals.push(v);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }

        let mut col_ptr = vec![0usize; n_cols + 1];
        for &(_, c, _) in entries {
            col_ptr[c + 1] += 1;
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; nnz];
        let mut col_vals = vec![0.0; nnz];
        // entries are row-major, so each column's rows come out ascending
        for &(r, c, v) in entries {
            let k = next[c];
            row_idx[k] = r;
            col_vals[k] = v;
            next[c] += 1;
        }

        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            row_vals,
            col_ptr,
            row_idx,
            col_vals,
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_sorted_unique(n_rows, n_cols, &[])
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_sorted_unique(n, n, &entries)
    }

    /// Builds a matrix from dense rows, keeping only nonzero entries.
    pub fn from_dense_rows(rows: &[Vec<f64>], n_cols: usize) -> Result<Self> {
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            check_len("dense row", n_cols, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), n_cols, trip)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self::from_sorted_unique(m.nrows(), m.ncols(), &entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.row_vals[a..b])
    }

    /// Row indices (ascending) and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.col_vals[a..b])
    }

    /// Row-major `(row, col, value)` triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// True when row `i` has no nonzero entry.
    pub fn row_is_zero(&self, i: usize) -> bool {
        self.row(i).1.iter().all(|&v| v == 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let entries: Vec<_> = (0..self.n_cols)
            .flat_map(|j| {
                let (rows, vals) = self.col(j);
                rows.iter()
                    .zip(vals)
                    .map(move |(&i, &v)| (j, i, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_sorted_unique(self.n_cols, self.n_rows, &entries)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&SparseMatrix]) -> Result<Self> {
        let n_cols = blocks.first().map_or(0, |b| b.n_cols);
        let mut entries = Vec::new();
        let mut offset = 0;
        for b in blocks {
            check_len("vstack columns", n_cols, b.n_cols)?;
            entries.extend(b.triplets().map(|(i, j, v)| (i + offset, j, v)));
            offset += b.n_rows;
        }
        Ok(Self::from_sorted_unique(offset, n_cols, &entries))
    }

    /// Matrix made of the listed rows, in the listed order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut entries = Vec::new();
        for (new_i, &i) in rows.iter().enumerate() {
            if i >= self.n_rows {
                return Err(Error::IndexOutOfBounds {
                    row: i,
                    col: 0,
                    n_rows: self.n_rows,
                    n_cols: self.n_cols,
                });
            }
            let (cols, vals) = self.row(i);
            entries.extend(cols.iter().zip(vals).map(|(&j, &v)| (new_i, j, v)));
        }
        Ok(Self::from_sorted_unique(rows.len(), self.n_cols, &entries))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("spmv operand", self.n_cols, x.len())?;
        Ok((0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect())
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("transposed spmv operand", self.n_rows, x.len())?;
        Ok((0..self.n_cols)
            .map(|j| {
                let (rows, vals) = self.col(j);
                rows.iter().zip(vals).map(|(&i, &v)| v * x[i]).sum()
            })
            .collect())
    }
}

/// Non-negative diagonal scaling, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagScale(Vec<f64>);

impl DiagScale {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "scale entry {i} is {} (must be finite and non-negative)",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for DiagScale {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `A x` or `A' x`.
pub fn spmv(a: &SparseMatrix, x: &[f64], transpose: bool) -> Result<Vec<f64>> {
    if transpose {
        a.mul_t_vec(x)
    } else {
        a.mul_vec(x)
    }
}

/// Dense `A diag(scale) A'`.
pub fn gram(a: &SparseMatrix, scale: &[f64]) -> Result<DMatrix<f64>> {
    check_len("gram scale", a.n_cols(), scale.len())?;
    let m = a.n_rows();
    let mut g = vec![0.0; m * m];
    for (j, &d) in scale.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let (rows, vals) = a.col(j);
        for p in 0..rows.len() {
            let wp = d * vals[p];
            let base = rows[p] * m;
            for q in 0..=p {
                g[base + rows[q]] += wp * vals[q];
            }
        }
    }
    // lower triangle was filled (row-major index r_p*m + r_q with r_q <= r_p)
    for i in 0..m {
        for j in 0..i {
            g[j * m + i] = g[i * m + j];
        }
    }
    Ok(DMatrix::from_row_slice(m, m, &g))
}

/// Result of a symmetric solve, including the ridge that was actually needed.
#[derive(Debug, Clone)]
pub struct GramSolution {
    pub z: Vec<f64>,
    pub ridge: f64,
}

/// Solves `(G + ridge I) z = rhs` for symmetric positive semi-definite `G`,
/// escalating the ridge along [`RIDGE_SCHEDULE`] when the Cholesky
/// factorization fails or leaves a residual above `1e-8 (1 + |rhs|_inf + |G|_inf |z|_inf)`.
pub fn solve_spd(g: &DMatrix<f64>, rhs: &[f64], ridge: f64) -> Result<GramSolution> {
    let m = g.nrows();
    check_len("gram rhs", m, rhs.len())?;
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("ridge must be >= 0, got {ridge}")));
    }
    if m == 0 {
        return Ok(GramSolution {
            z: Vec::new(),
            ridge,
        });
    }
    let trace: f64 = (0..m).map(|i| g[(i, i)]).sum();
    let unit = if trace > 0.0 && trace.is_finite() {
        trace / m as f64
    } else {
        1.0
    };
    let b = DVector::from_column_slice(rhs);
    let rhs_norm = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bound = 1e-8 * (1.0 + rhs_norm);
    let mut last_ridge = ridge;
    for factor in RIDGE_SCHEDULE {
        let r = ridge + factor * unit;
        if factor > 0.0 && r == last_ridge {
            continue;
        }
        last_ridge = r;
        let mut shifted = g.clone();
        for i in 0..m {
            shifted[(i, i)] += r;
        }
        let Some(chol) = shifted.clone().cholesky() else {
            continue;
        };
        let z = chol.solve(&b);
        if z.iter().any(|v| !v.is_finite()) {
            continue;
        }
        // backward error relative to |G| |z|, so large multipliers on an
        // ill-conditioned but nonsingular gram are still accepted
        let g_norm = shifted.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let resid = (&shifted * &z - &b).amax();
        if resid <= bound + 1e-8 * g_norm * z.amax() {
            return Ok(GramSolution {
                z: z.as_slice().to_vec(),
                ridge: r,
            });
        }
    }
    Err(Error::SingularGram { ridge: last_ridge })
}

/// Solves `(A diag(scale) A' + ridge I) z = rhs`.
pub fn gram_solve(a: &SparseMatrix, scale: &DiagScale, rhs: &[f64], ridge: f64) -> Result<Vec<f64>> {
    check_len("gram rhs", a.n_rows(), rhs.len())?;
    let g = gram(a, scale.values())?;
    solve_spd(&g, rhs, ridge).map(|s| s.z)
}

/// Numerical rank: singular values above `tol` times the largest.
///
/// Wide matrices are first reduced by a QR of the transpose so the SVD runs
/// on an `m x m` triangle.
pub fn estimate_rank(a: &SparseMatrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("rank tolerance must be > 0, got {tol}")));
    }
    let (m, n) = (a.n_rows(), a.n_cols());
    if m == 0 || n == 0 {
        return Ok(0);
    }
    if m.min(n) > RANK_DENSE_LIMIT {
        return Err(Error::RankTooLarge {
            n_rows: m,
            n_cols: n,
            limit: RANK_DENSE_LIMIT,
        });
    }
    let dense = if m <= n {
        a.transpose().to_dense()
    } else {
        a.to_dense()
    };
    let r = dense.qr().r();
    let sv = r.singular_values();
    let smax = sv.iter().fold(0.0f64, |acc, &s| acc.max(s));
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> SparseMatrix {
        let mut trip = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    trip.push((i, j, rng.random_range(-2.0..2.0)));
                }
            }
        }
        SparseMatrix::from_triplets(m, n, trip).unwrap()
    }

    #[test]
    fn spmv_identity_and_row_sum() {
        let i2 = SparseMatrix::identity(2);
        assert_eq!(spmv(&i2, &[3.0, 4.0], false).unwrap(), vec![3.0, 4.0]);
        let ones = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0]], 2).unwrap();
        assert_eq!(spmv(&ones, &[1.0, 1.0], false).unwrap(), vec![2.0]);
        assert_eq!(spmv(&ones, &[5.0], true).unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn spmv_rejects_bad_length() {
        let i2 = SparseMatrix::identity(2);
        assert!(matches!(
            spmv(&i2, &[1.0], false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicates_are_summed_and_zeros_ignored() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 0.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.mul_vec(&[1.0, 7.0]).unwrap(), vec![3.0, 0.0]);
        assert!(a.row_is_zero(1));
    }

    #[test]
    fn out_of_bounds_triplet_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn spmv_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sparse(&mut rng, 50, 80, 0.1);
        let d = a.to_dense();
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.mul_vec(&x).unwrap();
        let oracle = &d * DVector::from_column_slice(&x);
        for i in 0..50 {
            assert!((y[i] - oracle[i]).abs() < 1e-12);
        }
        let u: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yt = a.mul_t_vec(&u).unwrap();
        let oracle_t = d.transpose() * DVector::from_column_slice(&u);
        for j in 0..80 {
            assert!((yt[j] - oracle_t[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_solve_small_cases() {
        let z = gram_solve(&SparseMatrix::identity(2), &DiagScale::ones(2), &[1.0, 2.0], 0.0).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 2.0).abs() < 1e-14);
        let ones = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0]], 2).unwrap();
        let z = gram_solve(&ones, &DiagScale::ones(2), &[4.0], 0.0).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gram_solve_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sparse(&mut rng, 10, 30, 0.4);
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..3.0)).collect();
        let rhs: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = gram_solve(&a, &DiagScale::new(s.clone()).unwrap(), &rhs, 0.0).unwrap();
        let d = a.to_dense();
        let g = &d * DMatrix::from_diagonal(&DVector::from_vec(s)) * d.transpose();
        let oracle = g.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..10 {
            assert!((z[i] - oracle[i]).abs() < 1e-8 * (1.0 + oracle[i].abs()));
        }
    }

    #[test]
    fn gram_solve_handles_singular_gram() {
        // duplicated row: gram is singular but the right-hand side is consistent
        let a = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]], 2).unwrap();
        let g = gram(&a, &[1.0, 1.0]).unwrap();
        let sol = solve_spd(&g, &[2.0, 2.0], 0.0).unwrap();
        let gz = &g * DVector::from_vec(sol.z.clone());
        assert!((gz[0] - 2.0).abs() < 1e-8 && (gz[1] - 2.0).abs() < 1e-8);
        let zero = SparseMatrix::zeros(1, 2);
        let g0 = gram(&zero, &[1.0, 1.0]).unwrap();
        assert!(solve_spd(&g0, &[1.0], 0.0).unwrap().ridge > 0.0);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(estimate_rank(&SparseMatrix::identity(3), 1e-10).unwrap(), 3);
        let rep = SparseMatrix::from_dense_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]], 2).unwrap();
        assert_eq!(estimate_rank(&rep, 1e-10).unwrap(), 1);
        assert_eq!(estimate_rank(&SparseMatrix::zeros(3, 4), 1e-10).unwrap(), 0);
    }

    #[test]
    fn rank_of_constructed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n, r) in &[(12, 40, 5), (30, 8, 3), (20, 20, 20)] {
            let b = DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
            let a = SparseMatrix::from_dmatrix(&(b * c));
            assert_eq!(estimate_rank(&a, 1e-10).unwrap(), r);
        }
    }
}
