use crate::autodiff::DenseArray;

/// Compressed sparse row matrix used for Laplacian application.
///
/// Entries within a row keep their insertion order so that row sums are
/// reproducible under node relabeling.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row `(col, value)` lists.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in &rows {
            for &(c, v) in row {
                assert!(c < n_cols, "column {c} out of range {n_cols}");
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            offsets,
            cols,
            vals,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[r], self.offsets[r + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    /// `self * x` for dense `x` with `n_cols` rows.
    pub fn mul_dense(&self, x: &DenseArray) -> DenseArray {
        assert_eq!(x.rows(), self.n_cols);
        let d = x.cols();
        let mut out = DenseArray::zeros(self.n_rows, d);
        for r in 0..self.n_rows {
            let dst = out.row_slice_mut(r);
            for (c, v) in self.row(r) {
                let src = x.row_slice(c);
                for k in 0..d {
                    dst[k] += v * src[k];
                }
            }
        }
        out
    }

    /// `self^T * g` accumulated into `out`.
    pub fn mul_dense_transposed_acc(&self, g: &DenseArray, out: &mut DenseArray) {
        let d = g.cols();
        for r in 0..self.n_rows {
            let src = g.row_slice(r).to_vec();
            for (c, v) in self.row(r) {
                let dst = out.row_slice_mut(c);
                for k in 0..d {
                    dst[k] += v * src[k];
                }
            }
        }
    }

    pub fn to_dense(&self) -> DenseArray {
        let mut out = DenseArray::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let cur = out.get(r, c);
                out.set(r, c, cur + v);
            }
        }
        out
    }
}

/// Grouped index lists: segment `s` gathers `members(s)` on behalf of
/// `center(s)`. Used for neighbor aggregation without dense adjacency.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segments {
    centers: Vec<usize>,
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Segments {
    pub fn new() -> Self {
        Self {
            centers: Vec::new(),
            offsets: vec![0],
            members: Vec::new(),
        }
    }

    pub fn push(&mut self, center: usize, members: impl IntoIterator<Item = usize>) {
        self.centers.push(center);
        self.members.extend(members);
        self.offsets.push(self.members.len());
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, s: usize) -> usize {
        self.centers[s]
    }

    pub fn members(&self, s: usize) -> &[usize] {
        &self.members[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn max_index(&self) -> Option<usize> {
        self.centers.iter().chain(&self.members).copied().max()
    }
}
