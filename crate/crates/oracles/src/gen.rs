//! Seeded generators of small, feasible test instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::DenseQp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Strictly convex QP with `n` variables, feasible by construction around a
/// hidden point. Linear terms are large enough that constraints bind often.
pub fn strictly_convex_qp(rng: &mut ChaCha8Rng, n: usize, n_eq: usize, n_in: usize) -> DenseQp {
    let m = matrix(rng, n, n);
    let p = m.transpose() * &m + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-4.0..4.0));
    let xs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = matrix(rng, n_eq, n);
    let b = &a * &xs;
    let c = matrix(rng, n_in, n);
    let cx = &c * &xs;
    let side = |rng: &mut ChaCha8Rng, center: f64, sign: f64| {
        if rng.gen_bool(0.2) {
            sign * f64::INFINITY
        } else {
            center + sign * rng.gen_range(0.0..1.0)
        }
    };
    let l = DVector::from_fn(n_in, |i, _| side(rng, cx[i], -1.0));
    let u = DVector::from_fn(n_in, |i, _| side(rng, cx[i], 1.0));
    let lb = DVector::from_fn(n, |j, _| side(rng, xs[j], -1.0));
    let ub = DVector::from_fn(n, |j, _| side(rng, xs[j], 1.0));
    DenseQp { p, q, a, b, c, l, u, lb, ub }
}

/// Mixed-binary QP: `nb` binaries first, then `nc` continuous variables,
/// feasible for a hidden binary assignment. Continuous variables are
/// coupled to binaries through big-M style rows.
pub fn mixed_binary_qp(rng: &mut ChaCha8Rng, nb: usize, nc: usize, n_in: usize) -> (DenseQp, Vec<usize>) {
    let n = nb + nc;
    let m = matrix(rng, n, n);
    let mut p = m.transpose() * &m * 0.5;
    for j in nb..n {
        p[(j, j)] += 0.1;
    }
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let mut xs: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    for j in 0..nb {
        xs[j] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    }
    let mut c = matrix(rng, n_in, n);
    // each continuous variable is limited by one binary: x_c ≤ 2 b
    let couple = nb.min(nc);
    let mut rows = Vec::new();
    for k in 0..couple {
        let mut r = DVector::zeros(n);
        r[nb + k] = 1.0;
        r[k] = -2.0;
        rows.push(r);
        xs[nb + k] = xs[nb + k].min(2.0 * xs[k]);
    }
    if !rows.is_empty() {
        let extra = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        let mut stacked = DMatrix::zeros(n_in + rows.len(), n);
        stacked.view_mut((0, 0), (n_in, n)).copy_from(&c);
        stacked.view_mut((n_in, 0), (rows.len(), n)).copy_from(&extra);
        c = stacked;
    }
    let cx = &c * &xs;
    let rows_total = c.nrows();
    let l = DVector::from_fn(rows_total, |i, _| {
        if i >= n_in {
            f64::NEG_INFINITY
        } else {
            cx[i] - rng.gen_range(0.0..1.0)
        }
    });
    let u = DVector::from_fn(rows_total, |i, _| if i >= n_in { 0.0 } else { cx[i] + rng.gen_range(0.0..1.0) });
    let mut lb = DVector::from_element(n, -3.0);
    let mut ub = DVector::from_element(n, 3.0);
    for j in 0..nb {
        lb[j] = 0.0;
        ub[j] = 1.0;
    }
    let a = DMatrix::zeros(0, n);
    let b = DVector::zeros(0);
    (DenseQp { p, q, a, b, c, l, u, lb, ub }, (0..nb).collect())
}
