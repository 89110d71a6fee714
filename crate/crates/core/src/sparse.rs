//! Compressed sparse row matrices and the symmetric positive definite solvers
//! used throughout: Jacobi-preconditioned conjugate gradients, a banded
//! Cholesky factorization for the repeated linearized solves, and a dense LU
//! fallback for small test systems.

use crate::error::{Error, Result};

/// Sparse matrix in compressed row storage. Column indices are strictly
/// increasing within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Position of entry (i, j) in the value array, if stored.
    pub fn entry_position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| lo + k)
    }

    /// Mutable access to the stored values (sparsity pattern is fixed).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// y = A^T x.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let xi = x[i];
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * xi;
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Maximum relative asymmetry max |a_ij - a_ji| / max|a|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(*c, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                d[i][*c] = *v;
            }
        }
        d
    }

    /// Extracts the square submatrix with the given (sorted) index set on both
    /// sides. `position[k]` must give the new index of old index k, or None.
    pub fn restrict(&self, keep_position: &[Option<usize>], new_dim: usize) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let Some(ni) = keep_position[i] else { continue };
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if let Some(nc) = keep_position[*c] {
                    triplets.push((ni, nc, *v));
                }
            }
        }
        CsrMatrix::from_triplets(new_dim, new_dim, &triplets)
    }

    /// Restricts rows only (for rectangular vertex-by-cell couplings).
    pub fn restrict_rows(&self, keep_position: &[Option<usize>], new_rows: usize) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let Some(ni) = keep_position[i] else { continue };
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((ni, *c, *v));
            }
        }
        CsrMatrix::from_triplets(new_rows, self.ncols, &triplets)
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.vals {
            *v *= factor;
        }
    }

    /// self + other, requiring equal shapes.
    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for i in 0..m.nrows {
                let (cols, vals) = m.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    triplets.push((i, *c, *v));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Maximum |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.nrows {
            let (cols, _) = self.row(i);
            for c in cols {
                bw = bw.max(i.abs_diff(*c));
            }
        }
        bw
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of a converged conjugate gradient solve.
#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub const CG_DEFAULT_TOL: f64 = 1e-12;
pub const CG_DEFAULT_MAX_ITER: usize = 20_000;

/// Jacobi-preconditioned conjugate gradients for SPD systems.
///
/// Terminates when the true residual satisfies ||Ax - b|| <= tol_rel * ||b||.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], tol_rel: f64, max_iter: usize) -> Result<(Vec<f64>, CgOutcome)> {
    assert_eq!(a.nrows(), a.ncols());
    assert_eq!(b.len(), a.nrows());
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], CgOutcome { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolve { iterations: it, residual: norm2(&r) / bnorm });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm2(&r) <= tol_rel * bnorm {
            // Recurrence residual can drift; confirm with the true residual.
            a.matvec_into(&x, &mut ap);
            let mut true_res = 0.0;
            for i in 0..n {
                let d = ap[i] - b[i];
                true_res += d * d;
            }
            let true_res = true_res.sqrt();
            if true_res <= tol_rel * bnorm {
                return Ok((x, CgOutcome { iterations: it, relative_residual: true_res / bnorm }));
            }
            r.copy_from_slice(b);
            for i in 0..n {
                r[i] -= ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve { iterations: max_iter, residual: norm2(&r) / bnorm })
}

/// Banded Cholesky factorization L L^T of an SPD matrix with small bandwidth.
///
/// The structured meshes produce interior systems with bandwidth n, so a band
/// factorization makes the repeated Newton / adjoint / Hessian solves cheap
/// and bit-reproducible.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    dim: usize,
    bw: usize,
    // Row-major lower band: entry (i, j), j in [i-bw, i], stored at
    // band[i * (bw+1) + bw - (i - j)].
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let dim = a.nrows();
        let bw = a.bandwidth();
        let ld = bw + 1;
        let mut band = vec![0.0; dim * ld];
        for i in 0..dim {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= i {
                    band[i * ld + bw - (i - c)] = *v;
                }
            }
        }
        for i in 0..dim {
            let j_lo = i.saturating_sub(bw);
            for j in j_lo..=i {
                let k_lo = j_lo.max(j.saturating_sub(bw));
                let mut sum = band[i * ld + bw - (i - j)];
                for k in k_lo..j {
                    sum -= band[i * ld + bw - (i - k)] * band[j * ld + bw - (j - k)];
                }
                if j < i {
                    band[i * ld + bw - (i - j)] = sum / band[j * ld + bw];
                } else {
                    if sum <= 0.0 {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    band[i * ld + bw] = sum.sqrt();
                }
            }
        }
        Ok(BandCholesky { dim, bw, band })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim);
        let ld = self.bw + 1;
        let mut x = rhs.to_vec();
        // Forward: L y = rhs.
        for i in 0..self.dim {
            let j_lo = i.saturating_sub(self.bw);
            let mut sum = x[i];
            for j in j_lo..i {
                sum -= self.band[i * ld + self.bw - (i - j)] * x[j];
            }
            x[i] = sum / self.band[i * ld + self.bw];
        }
        // Backward: L^T x = y.
        for i in (0..self.dim).rev() {
            let j_hi = (i + self.bw).min(self.dim - 1);
            let mut sum = x[i];
            for j in (i + 1)..=j_hi {
                sum -= self.band[j * ld + self.bw - (j - i)] * x[j];
            }
            x[i] = sum / self.band[i * ld + self.bw];
        }
        x
    }
}

/// Dense LU solve with partial pivoting; fallback for small systems (tests
/// use it as an oracle for the iterative paths).
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n));
    assert_eq!(b.len(), n);
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if piv_val == 0.0 {
            return Err(Error::invalid("singular matrix in dense solve"));
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col][col];
        for r in 0..col {
            x[r] -= m[r][col] * x[col];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn triplets_merge_and_sort() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 0, 2.0), (0, 1, 3.0), (1, 1, 5.0)]);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(0, 1), 4.0);
        assert_eq!(m.get(1, 1), 5.0);
        let (cols, _) = m.row(0);
        assert!(cols.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cg_identity_single_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        let (x, out) = cg_solve(&a, &b, 1e-12, 10).unwrap();
        assert!(out.iterations <= 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_diagonal_two_by_two() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 4.0)]);
        let (x, _) = cg_solve(&a, &[1.0, 4.0], 1e-12, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cg_zero_rhs() {
        let a = CsrMatrix::identity(4);
        let (x, out) = cg_solve(&a, &[0.0; 4], 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_max_iter_error_carries_residual() {
        // 2x2 SPD but max_iter = 0 style failure (1 iteration not enough for
        // a non-diagonal system at tol 0).
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let err = cg_solve(&a, &[1.0, 2.0], 0.0, 1).unwrap_err();
        match err {
            Error::LinearSolve { iterations, residual } => {
                assert_eq!(iterations, 1);
                assert!(residual.is_finite());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn random_spd(dim: usize, rng: &mut CounterRng) -> CsrMatrix {
        // Diagonally dominant tridiagonal-ish SPD matrix.
        let mut triplets = Vec::new();
        for i in 0..dim {
            let off = if i + 1 < dim { 0.5 * rng.next_unit() } else { 0.0 };
            if i + 1 < dim {
                triplets.push((i, i + 1, -off));
                triplets.push((i + 1, i, -off));
            }
            triplets.push((i, i, 2.0 + rng.next_unit()));
        }
        CsrMatrix::from_triplets(dim, dim, &triplets)
    }

    #[test]
    fn band_cholesky_matches_dense_and_cg() {
        let mut rng = CounterRng::new(42);
        let a = random_spd(40, &mut rng);
        let b: Vec<f64> = (0..40).map(|_| rng.next_symmetric()).collect();
        let x_band = BandCholesky::factor(&a).unwrap().solve(&b);
        let x_dense = dense_solve(&a.to_dense(), &b).unwrap();
        let (x_cg, _) = cg_solve(&a, &b, 1e-13, 1000).unwrap();
        for i in 0..40 {
            assert!((x_band[i] - x_dense[i]).abs() < 1e-10);
            assert!((x_cg[i] - x_dense[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(
            BandCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn dense_solve_pivots() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let x = dense_solve(&a, &[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }
}
