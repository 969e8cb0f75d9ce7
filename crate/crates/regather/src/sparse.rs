//! Compressed sparse row matrices.
//!
//! Two flavours live here: [`CsrMatrix`] carries 64-bit path counts and is
//! what relation composition multiplies, while [`CsrPattern`] is structure
//! only (the binary masks attention operates on). Column indices are always
//! sorted and unique within a row.

use thiserror::Error;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum SparseError {
    #[error("sparse product exceeds nnz cap: {nnz} non-zeros > cap {cap}")]
    NnzCapExceeded { nnz: usize, cap: usize },
    #[error("dimension mismatch: left is {a_rows}x{a_cols}, right is {b_rows}x{b_cols}")]
    DimMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
}

/// Sparse integer matrix in CSR form. Values are path counts and use
/// saturating 64-bit arithmetic throughout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<u64>,
}

impl CsrMatrix {
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from (row, col, value) entries. Duplicates are summed
    /// (saturating); zero values are dropped.
    pub fn from_entries(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize, u64)>,
    ) -> Self {
        let mut ent: Vec<(usize, usize, u64)> = entries.into_iter().collect();
        for &(i, j, _) in &ent {
            assert!(i < nrows && j < ncols, "entry ({i},{j}) out of bounds");
        }
        ent.sort_unstable_by_key(|&(i, j, _)| (i, j));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(ent.len());
        let mut values = Vec::with_capacity(ent.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in ent {
            if v == 0 {
                continue;
            }
            if last == Some((i, j)) {
                let tail: &mut u64 = values.last_mut().expect("duplicate implies prior entry");
                *tail = tail.saturating_add(v);
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Unit-valued matrix from an edge list (must be duplicate-free).
    pub fn from_edges(nrows: usize, ncols: usize, edges: &[(usize, usize)]) -> Self {
        Self::from_entries(nrows, ncols, edges.iter().map(|&(i, j)| (i, j, 1)))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0,
        }
    }

    /// (column, value) pairs of row `i`, in column order.
    pub fn iter_row(&self, i: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// All (row, col, value) triples in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.iter_row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> Self {
        let mut indptr = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            indptr[j + 1] += 1;
        }
        for j in 0..self.ncols {
            indptr[j + 1] += indptr[j];
        }
        let mut cursor = indptr.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0u64; self.nnz()];
        for (i, j, v) in self.iter() {
            let p = cursor[j];
            indices[p] = i;
            values[p] = v;
            cursor[j] += 1;
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// Sparse product `self * rhs` by Gustavson's row-merge with a dense
    /// accumulator. Counts saturate at `u64::MAX`. Errors once the output
    /// would exceed `nnz_cap` non-zeros.
    pub fn matmul(&self, rhs: &CsrMatrix, nnz_cap: usize) -> Result<CsrMatrix, SparseError> {
        if self.ncols != rhs.nrows {
            return Err(SparseError::DimMismatch {
                a_rows: self.nrows,
                a_cols: self.ncols,
                b_rows: rhs.nrows,
                b_cols: rhs.ncols,
            });
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();

        let mut acc = vec![0u64; rhs.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            for (k, a_ik) in self.iter_row(i) {
                for (j, b_kj) in rhs.iter_row(k) {
                    if acc[j] == 0 {
                        touched.push(j);
                    }
                    acc[j] = acc[j].saturating_add(a_ik.saturating_mul(b_kj));
                }
            }
            touched.sort_unstable();
            if indices.len() + touched.len() > nnz_cap {
                return Err(SparseError::NnzCapExceeded {
                    nnz: indices.len() + touched.len(),
                    cap: nnz_cap,
                });
            }
            for &j in &touched {
                indices.push(j);
                values.push(acc[j]);
                acc[j] = 0;
            }
            touched.clear();
            indptr[i + 1] = indices.len();
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: rhs.ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Binary structure of this matrix.
    pub fn pattern(&self) -> CsrPattern {
        CsrPattern {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
        }
    }
}

/// Structure-only CSR: the set of non-zero positions of a binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CsrPattern {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl CsrPattern {
    /// Build from (row, col) coordinates; duplicates collapse.
    pub fn from_coords(
        nrows: usize,
        ncols: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut cs: Vec<(usize, usize)> = coords.into_iter().collect();
        for &(i, j) in &cs {
            assert!(i < nrows && j < ncols, "coord ({i},{j}) out of bounds");
        }
        cs.sort_unstable();
        cs.dedup();
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(cs.len());
        for (i, j) in cs {
            indices.push(j);
            indptr[i + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    /// Range of entry slots belonging to row `i` (for value buffers aligned
    /// to this pattern).
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    /// Same structure with every diagonal position present. Square only.
    pub fn with_unit_diagonal(&self) -> CsrPattern {
        assert_eq!(self.nrows, self.ncols, "diagonal requires a square pattern");
        CsrPattern::from_coords(
            self.nrows,
            self.ncols,
            self.iter().chain((0..self.nrows).map(|i| (i, i))),
        )
    }

    pub fn has_unit_diagonal(&self) -> bool {
        self.nrows == self.ncols && (0..self.nrows).all(|i| self.contains(i, i))
    }

    /// Position-wise union of equally shaped patterns.
    pub fn union(patterns: &[&CsrPattern]) -> CsrPattern {
        assert!(!patterns.is_empty());
        let (nrows, ncols) = (patterns[0].nrows, patterns[0].ncols);
        for p in patterns {
            assert!(p.nrows == nrows && p.ncols == ncols, "shape mismatch in union");
        }
        CsrPattern::from_coords(nrows, ncols, patterns.iter().flat_map(|p| p.iter()))
    }
}
