use super::{DenseMatrix, MacTally, NoTally, PruneMask, Scalar};
use crate::{Error, Result};

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Validates raw CSR arrays.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(Error::shape("CsrMatrix::new row_ptr", rows + 1, row_ptr.len()));
        }
        if row_ptr[0] != 0 || row_ptr[rows] != values.len() || col_idx.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "inconsistent CSR lengths: row_ptr ends at {}, {} columns, {} values",
                row_ptr[rows],
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..rows {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if lo > hi {
                return Err(Error::InvalidArgument(format!("row_ptr decreases at row {i}")));
            }
            let row = &col_idx[lo..hi];
            if row.iter().any(|&j| j >= cols) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: column indices must be strictly increasing and < {cols}"
                )));
            }
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Keeps the entries of `w` that are alive in `mask` and nonzero.
    pub fn from_masked(w: &DenseMatrix<T>, mask: &PruneMask) -> Result<Self> {
        if w.shape() != (mask.rows(), mask.cols()) {
            return Err(Error::shape(
                "CsrMatrix::from_masked",
                format!("{}x{}", mask.rows(), mask.cols()),
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
        let (rows, cols) = w.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            for (j, &v) in w.row(i).iter().enumerate() {
                if mask.is_alive(i, j) && v != T::zero() {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Keeps every nonzero entry of `w`.
    pub fn from_dense(w: &DenseMatrix<T>) -> Self {
        Self::from_masked(w, &PruneMask::all_alive(w.rows(), w.cols())).expect("same shape")
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.set(i, self.col_idx[k], self.values[k]);
            }
        }
        d
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::cast_from_f64(v.as_f64())).collect(),
        }
    }
}

pub fn matvec_csr<T: Scalar>(s: &CsrMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    matvec_csr_tallied(s, x, &mut NoTally)
}

/// `y = S x` touching only stored entries (exactly `nnz` MACs).
pub fn matvec_csr_tallied<T: Scalar, K: MacTally>(
    s: &CsrMatrix<T>,
    x: &[T],
    tally: &mut K,
) -> Result<Vec<T>> {
    if x.len() != s.cols {
        return Err(Error::shape("matvec_csr", s.cols, x.len()));
    }
    let mut y = vec![T::zero(); s.rows];
    for (i, yi) in y.iter_mut().enumerate() {
        let (lo, hi) = (s.row_ptr[i], s.row_ptr[i + 1]);
        let mut acc = T::zero();
        for (&j, &v) in s.col_idx[lo..hi].iter().zip(&s.values[lo..hi]) {
            acc = acc + v * x[j];
            tally.mac();
        }
        *yi = acc;
    }
    Ok(y)
}
