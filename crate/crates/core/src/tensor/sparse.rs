use super::{Result, TensorError};

/// Compressed sparse row pattern (structure only, no values).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrPattern {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrPattern {
    pub fn new(rows: usize, cols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        let bad = |msg: String| TensorError::Invalid { op: "csr", msg };
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(bad(format!("row_ptr must have {} entries starting at 0", rows + 1)));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(bad("row_ptr must be nondecreasing and end at nnz".into()));
        }
        if let Some(&c) = col_idx.iter().find(|&&c| c >= cols) {
            return Err(bad(format!("column {c} out of range for {cols} columns")));
        }
        Ok(CsrPattern {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    /// Builds a pattern from per-row column lists (kept in the given order).
    pub fn from_rows(cols: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self::new(rows.len(), cols, row_ptr, col_idx)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Entry range of row `r`.
    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// Row index of every stored entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = vec![0; self.nnz()];
        for r in 0..self.rows {
            for e in self.row(r) {
                out[e] = r;
            }
        }
        out
    }

    /// Position of `(r, c)` in the entry array.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        self.row(r).find(|&e| self.col_idx[e] == c)
    }

    /// Same pattern with rows and columns relabelled: new index of old `i` is `perm[i]`.
    /// Entries of each row are kept sorted by new column index.
    pub fn permuted(&self, perm: &[usize]) -> Result<(Self, Vec<usize>)> {
        if perm.len() != self.rows || self.rows != self.cols {
            return Err(TensorError::Invalid {
                op: "csr",
                msg: "permutation needs a square pattern and matching length".into(),
            });
        }
        let mut inv = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mut rows = Vec::with_capacity(self.rows);
        // entry_map[new_entry] = old_entry
        let mut entry_map = Vec::with_capacity(self.nnz());
        for &old_r in &inv {
            let mut entries: Vec<(usize, usize)> =
                self.row(old_r).map(|e| (perm[self.col_idx[e]], e)).collect();
            entries.sort_unstable();
            rows.push(entries.iter().map(|&(c, _)| c).collect::<Vec<_>>());
            entry_map.extend(entries.iter().map(|&(_, e)| e));
        }
        Ok((Self::from_rows(self.cols, &rows)?, entry_map))
    }
}
