//! Sparse Cholesky factorization `P Q Pᵀ = L Lᵀ` with a minimum-degree ordering.
//!
//! The permutation is stored in the factor and every public method takes and
//! returns vectors in the caller's (unpermuted) index space.

use crate::error::{GmrfError, Result};
use crate::ordering::minimum_degree;
use crate::sparse::SparsePrecision;

/// Pivots at or below this value abort the factorization.
pub const PIVOT_FLOOR: f64 = 1e-300;
/// Pivots smaller than this fraction of the largest diagonal entry are reported
/// on the warning channel.
pub const PIVOT_WARN_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `inv[old] = new`.
    inv: Vec<usize>,
    /// Lower-triangular factor in CSC form, diagonal first in every column.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    log_det: f64,
    small_pivots: Vec<usize>,
}

impl CholeskyFactor {
    /// Factorizes with a fresh minimum-degree ordering.
    pub fn factorize(q: &SparsePrecision) -> Result<Self> {
        let perm = if q.dim() <= 2 {
            (0..q.dim()).collect()
        } else {
            minimum_degree(&q.adjacency())
        };
        Self::factorize_with_ordering(q, perm)
    }

    /// Factorizes using a caller-supplied ordering (`perm[new] = old`).
    pub fn factorize_with_ordering(q: &SparsePrecision, perm: Vec<usize>) -> Result<Self> {
        let n = q.dim();
        if perm.len() != n {
            return Err(GmrfError::DimensionMismatch(format!(
                "ordering of length {} for a {n}-dimensional matrix",
                perm.len()
            )));
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(GmrfError::InvalidInput("ordering is not a permutation".into()));
            }
            inv[old] = new;
        }

        // lower-triangle columns of the permuted matrix
        let mut lower: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut max_diag: f64 = 0.0;
        for (r, c, v) in q.upper_entries() {
            let (a, b) = (inv[r], inv[c]);
            let (i, j) = if a >= b { (a, b) } else { (b, a) };
            lower[j].push((i, v));
            if r == c {
                max_diag = max_diag.max(v);
            }
        }
        for col in lower.iter_mut() {
            col.sort_by_key(|e| e.0);
        }

        // symbolic: pattern of column j is its own pattern merged with the
        // patterns of its elimination-tree children
        let mut patterns: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for j in 0..n {
            let mut pat: Vec<usize> = lower[j].iter().map(|e| e.0).filter(|&i| i > j).collect();
            for &c in &children[j] {
                pat.extend(patterns[c].iter().copied().filter(|&i| i > j));
            }
            pat.sort_unstable();
            pat.dedup();
            if let Some(&parent) = pat.first() {
                children[parent].push(j);
            }
            patterns[j] = pat;
        }
        drop(children);

        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + 1 + patterns[j].len();
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        for j in 0..n {
            row_idx[col_ptr[j]] = j;
            row_idx[col_ptr[j] + 1..col_ptr[j + 1]].copy_from_slice(&patterns[j]);
        }
        // row patterns: columns k < j with L[j, k] != 0
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, pat) in patterns.iter().enumerate() {
            for &i in pat {
                row_cols[i].push(k);
            }
        }
        drop(patterns);

        let mut values = vec![0.0; nnz];
        let mut next = col_ptr.clone(); // next unconsumed entry per column
        for (k, nx) in next.iter_mut().enumerate().take(n) {
            *nx = col_ptr[k] + 1;
        }
        let mut work = vec![0.0; n];
        let mut log_det = 0.0;
        let mut small_pivots = Vec::new();
        for j in 0..n {
            for &(i, v) in &lower[j] {
                work[i] = v;
            }
            for &k in &row_cols[j] {
                let p0 = next[k];
                debug_assert_eq!(row_idx[p0], j);
                let ljk = values[p0];
                for p in p0..col_ptr[k + 1] {
                    work[row_idx[p]] -= ljk * values[p];
                }
                next[k] += 1;
            }
            let d = work[j];
            if d.is_nan() || d <= PIVOT_FLOOR {
                return Err(GmrfError::NotPositiveDefinite { column: perm[j], pivot: d });
            }
            if d < PIVOT_WARN_RATIO * max_diag {
                small_pivots.push(perm[j]);
            }
            let ljj = d.sqrt();
            log_det += 2.0 * ljj.ln();
            values[col_ptr[j]] = ljj;
            work[j] = 0.0;
            for p in col_ptr[j] + 1..col_ptr[j + 1] {
                let i = row_idx[p];
                values[p] = work[i] / ljj;
                work[i] = 0.0;
            }
        }
        if !small_pivots.is_empty() {
            log::debug!("cholesky: {} pivot(s) below {PIVOT_WARN_RATIO:e} x max diagonal", small_pivots.len());
        }
        Ok(Self { dim: n, perm, inv, col_ptr, row_idx, values, log_det, small_pivots })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// log-determinant of the factored matrix.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ordering(&self) -> &[usize] {
        &self.perm
    }

    /// Original indices of columns whose pivot tripped the warning threshold.
    pub fn small_pivots(&self) -> &[usize] {
        &self.small_pivots
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Diagonal of `L` in permuted order.
    pub fn diag_l(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.values[self.col_ptr[j]]).collect()
    }

    /// `L` as a dense matrix in permuted order (tests and small diagnostics).
    pub fn l_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[p], j)] = self.values[p];
            }
        }
        m
    }

    fn lsolve_in_place(&self, y: &mut [f64]) {
        for j in 0..self.dim {
            let p0 = self.col_ptr[j];
            y[j] /= self.values[p0];
            let yj = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
    }

    fn ltsolve_in_place(&self, y: &mut [f64]) {
        for j in (0..self.dim).rev() {
            let p0 = self.col_ptr[j];
            let mut acc = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = acc / self.values[p0];
        }
    }

    fn to_permuted(&self, b: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&old| b[old]).collect()
    }

    fn from_permuted(&self, y: &[f64]) -> Vec<f64> {
        self.inv.iter().map(|&new| y[new]).collect()
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "solve dimension");
        let mut y = self.to_permuted(b);
        self.lsolve_in_place(&mut y);
        self.ltsolve_in_place(&mut y);
        self.from_permuted(&y)
    }

    /// `|| L⁻¹ P b ||²` which equals `bᵀ Q⁻¹ b`.
    pub fn inverse_quad(&self, b: &[f64]) -> f64 {
        let mut y = self.to_permuted(b);
        self.lsolve_in_place(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// Maps iid standard normals `u` (in permuted order) to a zero-mean draw with
    /// covariance `Q⁻¹`: solves `Lᵀ y = u`.
    pub fn colour_noise(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dim, "noise dimension");
        let mut y = u.to_vec();
        self.ltsolve_in_place(&mut y);
        self.from_permuted(&y)
    }

    /// Entries of `Q⁻¹` on the pattern of `L` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse<'_> {
        let n = self.dim;
        let mut sigma = vec![0.0; self.values.len()];
        let lookup = |sigma: &Vec<f64>, a: usize, b: usize| -> f64 {
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
            let k = rows.binary_search(&r).expect("selected inverse pattern is closed");
            sigma[self.col_ptr[c] + k]
        };
        for j in (0..n).rev() {
            let p0 = self.col_ptr[j];
            let p1 = self.col_ptr[j + 1];
            let ljj = self.values[p0];
            for pi in (p0 + 1..p1).rev() {
                let i = self.row_idx[pi];
                let mut acc = 0.0;
                for pk in p0 + 1..p1 {
                    let k = self.row_idx[pk];
                    acc += self.values[pk] * lookup(&sigma, k, i);
                }
                sigma[pi] = -acc / ljj;
            }
            let mut acc = 0.0;
            for pk in p0 + 1..p1 {
                acc += self.values[pk] * sigma[pk];
            }
            sigma[p0] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        SelectedInverse { factor: self, sigma }
    }

    /// Diagonal of `Q⁻¹` in caller order.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let s = self.selected_inverse();
        (0..self.dim).map(|i| s.get(i, i).expect("diagonal is in the pattern")).collect()
    }
}

/// `Q⁻¹` restricted to the pattern of the factor.
pub struct SelectedInverse<'a> {
    factor: &'a CholeskyFactor,
    sigma: Vec<f64>,
}

impl SelectedInverse<'_> {
    /// Covariance entry for caller indices, if it lies on the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let f = self.factor;
        let (a, b) = (f.inv[i], f.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let rows = &f.row_idx[f.col_ptr[c]..f.col_ptr[c + 1]];
        rows.binary_search(&r).ok().map(|k| self.sigma[f.col_ptr[c] + k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook dense Cholesky–Banachiewicz, written independently of the sparse path.
    fn dense_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        l
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng, density: f64) -> DMatrix<f64> {
        let mut b = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j || rng.random::<f64>() < density {
                    b[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_factor() {
        let f = CholeskyFactor::factorize(&SparsePrecision::identity(3)).unwrap();
        assert_eq!(f.log_det(), 0.0);
        assert_eq!(f.l_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_factor() {
        let f = CholeskyFactor::factorize(&SparsePrecision::diagonal(&[4.0, 9.0])).unwrap();
        let l = f.l_dense();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(1, 1)], 3.0);
        assert!((f.log_det() - 36f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn random_spd_reconstructs_against_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(6, &mut rng, 1.0);
        let q = SparsePrecision::from_dense(&a).unwrap();
        let f = CholeskyFactor::factorize(&q).unwrap();
        let l = f.l_dense();
        let pa = q.permuted(f.ordering()).to_dense();
        let err = (&l * l.transpose() - &pa).abs().max();
        assert!(err < 1e-10, "reconstruction error {err}");
        let ld = dense_cholesky(&pa);
        assert!((&ld - &l).abs().max() < 1e-10);
        let dense_logdet = a.determinant().ln();
        assert!((f.log_det() - dense_logdet).abs() < 1e-8);
    }

    #[test]
    fn solve_and_inverse_on_sparse_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 9, 12, 20] {
            let a = random_spd(n, &mut rng, 0.15);
            let q = SparsePrecision::from_dense(&a).unwrap();
            let f = CholeskyFactor::factorize(&q).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = f.solve(&b);
            let r = q.mul_vec(&x);
            for i in 0..n {
                assert!((r[i] - b[i]).abs() < 1e-10);
            }
            let inv = a.clone().try_inverse().unwrap();
            let var = f.marginal_variances();
            for i in 0..n {
                assert!((var[i] - inv[(i, i)]).abs() < 1e-10 * inv[(i, i)].abs().max(1.0));
            }
            let s = f.selected_inverse();
            for (r, c, _) in q.upper_entries() {
                let v = s.get(r, c).expect("pattern of Q is inside pattern of L");
                assert!((v - inv[(r, c)]).abs() < 1e-10);
            }
            assert!((f.inverse_quad(&b) - {
                let bv = nalgebra::DVector::from_row_slice(&b);
                (bv.transpose() * &inv * &bv)[(0, 0)]
            })
            .abs()
                < 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let q = SparsePrecision::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(
            CholeskyFactor::factorize(&q),
            Err(GmrfError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn mixed_scale_pivots_are_reported() {
        let q = SparsePrecision::diagonal(&[1e10, 1e-3, 1.0]);
        let f = CholeskyFactor::factorize(&q).unwrap();
        assert_eq!(f.small_pivots(), &[1]);
    }

    #[test]
    fn log_det_matches_dense_up_to_dim_12() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=12 {
            let a = random_spd(n, &mut rng, 0.3);
            let f = CholeskyFactor::factorize(&SparsePrecision::from_dense(&a).unwrap()).unwrap();
            assert!((f.log_det() - a.determinant().ln()).abs() < 1e-8);
        }
    }
}
