//! Symmetric sparse storage.
//!
//! `SparsePrecision` keeps only the upper triangle (row <= col) in compressed
//! sparse column form. Rows inside a column are sorted and unique, and explicit
//! zeros are removed when the matrix is assembled.

use crate::error::{GmrfError, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparsePrecision {
    /// Assembles a symmetric matrix from triplets. Entries may be given in either
    /// triangle; `(i, j)` and `(j, i)` address the same stored entry and duplicates
    /// are summed.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if dim == 0 {
            return Err(GmrfError::InvalidInput("dimension must be positive".into()));
        }
        // counting sort by column keeps duplicates in input order, so their
        // summation order (and hence every bit of the result) is reproducible
        let mut start = vec![0usize; dim + 1];
        for &(i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(GmrfError::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside a {dim}x{dim} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(GmrfError::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
            start[i.max(j) + 1] += 1;
        }
        for c in 0..dim {
            start[c + 1] += start[c];
        }
        let mut next = start.clone();
        let mut bucket: Vec<(usize, f64)> = vec![(0, 0.0); triplets.len()];
        for &(i, j, v) in triplets {
            let c = i.max(j);
            bucket[next[c]] = (i.min(j), v);
            next[c] += 1;
        }
        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(bucket.len());
        let mut values: Vec<f64> = Vec::with_capacity(bucket.len());
        for col in 0..dim {
            let entries = &mut bucket[start[col]..start[col + 1]];
            entries.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < entries.len() {
                let row = entries[k].0;
                let mut v = 0.0;
                while k < entries.len() && entries[k].0 == row {
                    v += entries[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    row_idx.push(row);
                    values.push(v);
                }
            }
            col_ptr[col + 1] = row_idx.len();
        }
        Ok(Self { dim, col_ptr, row_idx, values })
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let trip: Vec<_> = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(diag.len(), &trip).expect("diagonal assembly")
    }

    /// Builds from a dense symmetric matrix, reading the upper triangle.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(GmrfError::DimensionMismatch("matrix is not square".into()));
        }
        let mut trip = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), &trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over stored upper-triangle entries `(row, col, value)`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(k) => self.values[self.col_ptr[c] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.upper_entries() {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// `y = Q x` using the mirrored lower triangle.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "mul_vec dimension");
        let mut y = vec![0.0; self.dim];
        for (r, c, v) in self.upper_entries() {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, c, v) in self.upper_entries() {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        acc
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::from_triplets(self.dim, &[]).expect("empty");
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + other`, re-canonicalized.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(GmrfError::DimensionMismatch(format!(
                "adding {} and {} dimensional matrices",
                self.dim, other.dim
            )));
        }
        let trip: Vec<_> = self.upper_entries().chain(other.upper_entries()).collect();
        Self::from_triplets(self.dim, &trip)
    }

    /// Principal sub-matrix on the given (sorted or unsorted) index list.
    pub fn principal(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(GmrfError::InvalidInput("empty principal sub-matrix".into()));
        }
        let mut map = vec![usize::MAX; self.dim];
        for (k, &i) in idx.iter().enumerate() {
            map[i] = k;
        }
        let trip: Vec<_> = self
            .upper_entries()
            .filter(|&(r, c, _)| map[r] != usize::MAX && map[c] != usize::MAX)
            .map(|(r, c, v)| (map[r], map[c], v))
            .collect();
        Self::from_triplets(idx.len(), &trip)
    }

    /// Rectangular block `Q[rows, cols]` for disjoint index sets.
    pub fn cross_block(&self, rows: &[usize], cols: &[usize]) -> SparseRect {
        let mut rmap = vec![usize::MAX; self.dim];
        let mut cmap = vec![usize::MAX; self.dim];
        for (k, &i) in rows.iter().enumerate() {
            rmap[i] = k;
        }
        for (k, &i) in cols.iter().enumerate() {
            cmap[i] = k;
        }
        let mut entries = Vec::new();
        for (r, c, v) in self.upper_entries() {
            if rmap[r] != usize::MAX && cmap[c] != usize::MAX {
                entries.push((rmap[r], cmap[c], v));
            }
            if r != c && rmap[c] != usize::MAX && cmap[r] != usize::MAX {
                entries.push((rmap[c], cmap[r], v));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        SparseRect { nrows: rows.len(), ncols: cols.len(), entries }
    }

    /// Symmetric permutation `P Q Pᵀ` where `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0usize; self.dim];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let trip: Vec<_> = self.upper_entries().map(|(r, c, v)| (inv[r], inv[c], v)).collect();
        Self::from_triplets(self.dim, &trip).expect("permutation keeps dimension")
    }

    /// Adjacency lists of the off-diagonal pattern (both directions).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.dim];
        for (r, c, _) in self.upper_entries() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        adj
    }
}

/// A general (not necessarily square) sparse block, kept as sorted triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRect {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseRect {
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "SparseRect::mul_vec dimension");
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.2 == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_mirrored_and_summed() {
        let q = SparsePrecision::from_triplets(3, &[(0, 0, 2.0), (1, 0, 0.5), (0, 1, 0.5), (2, 2, 1.0)])
            .unwrap();
        assert_eq!(q.nnz(), 3);
        assert_eq!(q.get(0, 1), 1.0);
        assert_eq!(q.get(1, 0), 1.0);
        let d = q.to_dense();
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn explicit_zeros_are_dropped() {
        let q = SparsePrecision::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 1.0)])
            .unwrap();
        assert_eq!(q.nnz(), 2);
        assert_eq!(q.get(0, 1), 0.0);
    }

    #[test]
    fn quad_form_matches_dense() {
        let q = SparsePrecision::from_triplets(3, &[(0, 0, 2.0), (0, 2, -0.3), (1, 1, 1.5), (2, 2, 3.0)])
            .unwrap();
        let x = [0.3, -1.2, 2.0];
        let d = q.to_dense();
        let xv = nalgebra::DVector::from_row_slice(&x);
        let dense = (xv.transpose() * &d * &xv)[(0, 0)];
        assert!((q.quad_form(&x) - dense).abs() < 1e-14);
        let y = q.mul_vec(&x);
        let yd = &d * &xv;
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(SparsePrecision::from_triplets(2, &[(0, 2, 1.0)]).is_err());
        assert!(SparsePrecision::from_triplets(0, &[]).is_err());
    }

    #[test]
    fn blocks_follow_index_lists() {
        let q = SparsePrecision::from_triplets(
            4,
            &[(0, 0, 4.0), (1, 1, 5.0), (2, 2, 6.0), (3, 3, 7.0), (0, 3, 0.5), (1, 2, -0.25)],
        )
        .unwrap();
        let mm = q.principal(&[0, 3]).unwrap();
        assert_eq!(mm.get(0, 1), 0.5);
        assert_eq!(mm.get(1, 1), 7.0);
        let mo = q.cross_block(&[0, 3], &[1, 2]);
        assert!(mo.is_zero() || mo.entries.is_empty());
        let mo = q.cross_block(&[1], &[0, 2]);
        assert_eq!(mo.entries, vec![(0, 1, -0.25)]);
    }
}
