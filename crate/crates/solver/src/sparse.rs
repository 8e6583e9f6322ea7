//! Compressed row storage used internally by the splitting iteration.

use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub(crate) struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(ncols: usize) -> Self {
        Self {
            nrows: 0,
            ncols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Appends every row of a dense matrix, dropping exact zeros.
    pub fn push_dense_rows(&mut self, m: &DMatrix<f64>) {
        debug_assert!(m.nrows() == 0 || m.ncols() == self.ncols);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    self.col_idx.push(j);
                    self.vals.push(v);
                }
            }
            self.row_ptr.push(self.col_idx.len());
            self.nrows += 1;
        }
    }

    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(j, v) in entries {
            if v != 0.0 {
                self.col_idx.push(j);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.col_idx.len());
        self.nrows += 1;
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.nrows) {
            *o = self.row_dot(i, x);
        }
    }

    /// `out = self^T * y`
    pub fn tr_mul_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate().take(self.nrows) {
            if yi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[j] += v * yi;
            }
        }
    }

    pub fn scale(&mut self, row_scale: &[f64], col_scale: &[f64]) {
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                self.vals[k] *= row_scale[i] * col_scale[self.col_idx[k]];
            }
        }
    }

    /// Infinity norm of each column.
    pub fn col_inf_norms(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&j, &v) in self.col_idx.iter().zip(&self.vals) {
            out[j] = out[j].max(v.abs());
        }
    }

    pub fn row_inf_norm(&self, i: usize) -> f64 {
        self.row(i).1.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
