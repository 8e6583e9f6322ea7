//! Envelope (skyline) Cholesky factorization.
//!
//! The matrices factored here are `P + sigma I + A^T R A` style normal
//! matrices. Receding-horizon problems order variables stage by stage, so
//! these matrices are banded and the envelope stays narrow without any
//! reordering.

#[derive(Debug, Clone)]
pub(crate) struct Skyline {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NotPositiveDefinite {
    pub pivot: usize,
}

impl Skyline {
    /// `first[i]` is the leftmost column that may be nonzero in row `i` of the
    /// lower triangle.
    pub fn with_envelope(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut off = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(off);
            off += i - f + 1;
        }
        start.push(off);
        Self {
            n,
            first,
            start,
            data: vec![0.0; off],
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.start[i] + (j - self.first[i])
    }

    /// Adds `v` at `(i, j)` of the symmetric matrix (either triangle).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Adds `w * a a^T` for a sparse vector `a`.
    pub fn add_outer(&mut self, cols: &[usize], vals: &[f64], w: f64) {
        for (p, (&i, &vi)) in cols.iter().zip(vals).enumerate() {
            for (&j, &vj) in cols[..=p].iter().zip(&vals[..=p]) {
                self.add(i, j, w * vi * vj);
            }
        }
    }

    /// In-place Cholesky `K = L L^T`.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            let (done, rest) = self.data.split_at_mut(si);
            let row = &mut rest[..=i - fi];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let rj = &done[sj + (k0 - fj)..sj + (j - fj)];
                let dot = dot(&row[k0 - fi..j - fi], rj);
                row[j - fi] = (row[j - fi] - dot) / done[sj + (j - fj)];
            }
            let (l, diag) = row.split_at_mut(i - fi);
            let d = diag[0] - dot(l, l);
            if d <= 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: i });
            }
            diag[0] = d.sqrt();
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..=self.start[i] + (i - fi)];
            let (l, diag) = row.split_at(i - fi);
            b[i] = (b[i] - dot(l, &b[fi..i])) / diag[0];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..=self.start[i] + (i - fi)];
            let (l, diag) = row.split_at(i - fi);
            let xi = b[i] / diag[0];
            b[i] = xi;
            for (bk, &lk) in b[fi..i].iter_mut().zip(l) {
                *bk -= lk * xi;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
