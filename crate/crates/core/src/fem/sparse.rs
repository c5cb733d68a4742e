//! Compressed sparse row storage with the handful of kernels the solvers need.

use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from raw CSR arrays. Column indices must be sorted within rows.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || col_idx.len() != vals.len() {
            return Err(Error::invalid("inconsistent CSR array lengths"));
        }
        if row_ptr[0] != 0 || row_ptr[nrows] != col_idx.len() {
            return Err(Error::invalid("CSR row pointer does not span the column array"));
        }
        for r in 0..nrows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(Error::invalid("CSR row pointer not monotone"));
            }
            for k in s..e {
                if col_idx[k] >= ncols || (k > s && col_idx[k] <= col_idx[k - 1]) {
                    return Err(Error::invalid("CSR column indices unsorted or out of range"));
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Sums duplicate entries. Explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::invalid(format!(
                    "triplet ({r}, {c}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut out = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *out.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    out.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals: out,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Same sparsity pattern with every stored value set to zero.
    pub fn zeroed_like(&self) -> Self {
        Self {
            vals: vec![0.0; self.vals.len()],
            ..self.clone()
        }
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
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.vals
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.vals[s..e])
    }

    /// Position of entry `(r, c)` in the value array, if stored.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[s..e].binary_search(&c).ok().map(|k| s + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |k| self.vals[k])
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec: input length");
        assert_eq!(y.len(), self.nrows, "matvec: output length");
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `y = Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec_transpose: input length");
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vs) = self.row(r);
            for (&c, &v) in cols.iter().zip(vs) {
                col_idx[next[c]] = r;
                vals[next[c]] = v;
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            vals,
        }
    }

    /// Sparse product `self * other` (Gustavson's row-by-row algorithm).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul: inner dimensions");
        let n = other.ncols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..self.nrows {
            touched.clear();
            let (ac, av) = self.row(r);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&c, &b) in bc.iter().zip(bv) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                vals.push(acc[c]);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// `alpha * self + beta * other` over the union of both patterns.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "add: shape");
        if self.same_pattern(other) {
            let vals = self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| alpha * a + beta * b)
                .collect();
            return Self {
                vals,
                ..self.clone()
            };
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for r in 0..self.nrows {
            let (ac, av) = self.row(r);
            let (bc, bv) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let ca = ac.get(i).copied().unwrap_or(usize::MAX);
                let cb = bc.get(j).copied().unwrap_or(usize::MAX);
                if ca == cb {
                    col_idx.push(ca);
                    vals.push(alpha * av[i] + beta * bv[j]);
                    i += 1;
                    j += 1;
                } else if ca < cb {
                    col_idx.push(ca);
                    vals.push(alpha * av[i]);
                    i += 1;
                } else {
                    col_idx.push(cb);
                    vals.push(beta * bv[j]);
                    j += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }

    /// 2×2 block matrix `[[a, b], [c, d]]` from square blocks of equal size.
    pub fn block2(blocks: [[&CsrMatrix; 2]; 2]) -> Self {
        let n = blocks[0][0].nrows;
        for row in &blocks {
            for b in row {
                assert!(b.nrows == n && b.ncols == n, "block2: blocks must be n×n");
            }
        }
        let nnz: usize = blocks.iter().flatten().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(2 * n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in &blocks {
            for r in 0..n {
                for (bj, b) in row.iter().enumerate() {
                    let (cols, vs) = b.row(r);
                    col_idx.extend(cols.iter().map(|c| c + bj * n));
                    vals.extend_from_slice(vs);
                }
                row_ptr.push(col_idx.len());
            }
        }
        Self {
            nrows: 2 * n,
            ncols: 2 * n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Zeroes the rows and columns flagged in `mask` and puts 1 on their
    /// diagonal. The pattern is preserved; the diagonal must be stored.
    pub fn apply_dirichlet(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.nrows, "dirichlet mask length");
        assert_eq!(self.nrows, self.ncols, "dirichlet elimination needs a square matrix");
        for r in 0..self.nrows {
            let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for k in s..e {
                let c = self.col_idx[k];
                if mask[r] || mask[c] {
                    self.vals[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// Rows and columns selected by index lists, in the given order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            map[c] = k;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for &r in rows {
            scratch.clear();
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if map[c] != usize::MAX {
                    scratch.push((map[c], v));
                }
            }
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: rows.len(),
            ncols: cols.len(),
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A − Aᵀ|` over all entries.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        self.add_scaled(1.0, &t, -1.0).max_abs()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.nrows == self.ncols && self.asymmetry() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// Bilinear form `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.matvec(y)).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                row[c] += v;
            }
        }
        d
    }

    /// Column-major copy suitable for faer. Returns `(col_ptr, row_idx, vals)`.
    pub(crate) fn to_csc_parts(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let t = self.transpose();
        (t.row_ptr, t.col_idx, t.vals)
    }

    pub(crate) fn with_faer_csc<R>(&self, f: impl FnOnce(SparseColMatRef<'_, usize, f64>) -> R) -> R {
        let (cp, ri, v) = self.to_csc_parts();
        let sym = SymbolicSparseColMatRef::new_checked(self.nrows, self.ncols, &cp, None, &ri);
        f(SparseColMatRef::new(sym, &v))
    }
}
