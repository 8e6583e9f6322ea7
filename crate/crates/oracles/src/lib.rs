//! Slow, obviously-correct reference solvers for small problems.
//!
//! Nothing here shares code with the production solver: the QP oracle
//! enumerates active sets and solves each KKT system with a dense LU.

use nalgebra::{DMatrix, DVector};

pub mod gen;

/// `min ½xᵀPx + qᵀx` s.t. `A x = b`, `l ≤ C x ≤ u`, `lb ≤ x ≤ ub`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Free,
    Lower,
    Upper,
}

impl DenseQp {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Rows of the two-sided constraints with bounds appended as unit rows.
    fn rows(&self) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let n = self.q.len();
        let m = self.c.nrows();
        let mut g = DMatrix::zeros(m + n, n);
        let mut lo = Vec::with_capacity(m + n);
        let mut hi = Vec::with_capacity(m + n);
        for i in 0..m {
            g.row_mut(i).copy_from(&self.c.row(i));
            lo.push(self.l[i]);
            hi.push(self.u[i]);
        }
        for j in 0..n {
            g[(m + j, j)] = 1.0;
            lo.push(self.lb[j]);
            hi.push(self.ub[j]);
        }
        (g, lo, hi)
    }

    /// Every KKT point is a global minimizer of a convex QP, so the first
    /// active set whose KKT solution is primal and dual feasible is optimal.
    /// Among candidates the lowest objective is returned to stay robust when
    /// `P` is only semidefinite. `None` means no active set produced a KKT
    /// point, i.e. the problem is infeasible (or unbounded).
    pub fn solve(&self, tol: f64) -> Option<OracleSolution> {
        let n = self.q.len();
        let me = self.a.nrows();
        let (g, lo, hi) = self.rows();
        let rows: Vec<usize> = (0..g.nrows()).filter(|&i| lo[i].is_finite() || hi[i].is_finite()).collect();
        let mut sides = vec![Side::Free; rows.len()];
        let mut best: Option<OracleSolution> = None;
        loop {
            let active: Vec<(usize, Side)> = rows
                .iter()
                .zip(&sides)
                .filter(|(_, s)| **s != Side::Free)
                .map(|(&r, &s)| (r, s))
                .collect();
            if active.len() + me <= n {
                if let Some(sol) = self.kkt_candidate(&g, &lo, &hi, &active, tol) {
                    if best.as_ref().map_or(true, |b| sol.objective < b.objective) {
                        best = Some(sol);
                    }
                }
            }
            // odometer over {Free, Lower, Upper} skipping infinite sides
            let mut k = 0;
            loop {
                if k == rows.len() {
                    return best;
                }
                let r = rows[k];
                let next = match sides[k] {
                    Side::Free if lo[r].is_finite() => Some(Side::Lower),
                    Side::Free | Side::Lower if hi[r].is_finite() && lo[r] != hi[r] => Some(Side::Upper),
                    _ => None,
                };
                match next {
                    Some(s) => {
                        sides[k] = s;
                        break;
                    }
                    None => {
                        sides[k] = Side::Free;
                        k += 1;
                    }
                }
            }
        }
    }

    fn kkt_candidate(
        &self,
        g: &DMatrix<f64>,
        lo: &[f64],
        hi: &[f64],
        active: &[(usize, Side)],
        tol: f64,
    ) -> Option<OracleSolution> {
        let n = self.q.len();
        let me = self.a.nrows();
        let k = me + active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for j in 0..n {
            rhs[j] = -self.q[j];
        }
        for i in 0..me {
            for j in 0..n {
                kkt[(n + i, j)] = self.a[(i, j)];
                kkt[(j, n + i)] = self.a[(i, j)];
            }
            rhs[n + i] = self.b[i];
        }
        for (t, &(r, side)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + t, j)] = g[(r, j)];
                kkt[(j, n + me + t)] = g[(r, j)];
            }
            rhs[n + me + t] = if side == Side::Lower { lo[r] } else { hi[r] };
        }
        let lu = kkt.clone().lu();
        let sol = lu.solve(&rhs)?;
        // reject near-singular systems whose solution is not trustworthy
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let scale = 1.0 + x.amax();
        if (&self.a * &x - &self.b).amax() > tol * scale {
            return None;
        }
        let gx = g * &x;
        for i in 0..g.nrows() {
            if gx[i] < lo[i] - tol * scale || gx[i] > hi[i] + tol * scale {
                return None;
            }
        }
        // the system imposes Px + q + Aᵀλ + Gᵀμ = 0, so an upper-active row
        // needs μ ≥ 0 and a lower-active row μ ≤ 0
        for (t, &(_, side)) in active.iter().enumerate() {
            let mu = sol[n + me + t];
            let ok = match side {
                Side::Upper => mu >= -tol,
                Side::Lower => mu <= tol,
                Side::Free => true,
            };
            if !ok {
                return None;
            }
        }
        let objective = self.objective(&x);
        Some(OracleSolution { x, objective })
    }
}

/// Minimizes over every 0/1 assignment of `binaries`. Each fixed assignment
/// is substituted out and the remaining continuous QP solved by
/// [`DenseQp::solve`]. Ties go to the assignment visited first, i.e. the
/// lexicographically smallest. Returns the assignment and the full `x`.
pub fn enumerate_binaries(qp: &DenseQp, binaries: &[usize], tol: f64) -> Option<(Vec<f64>, OracleSolution)> {
    let n = qp.q.len();
    let nb = binaries.len();
    let cont: Vec<usize> = (0..n).filter(|j| !binaries.contains(j)).collect();
    let nc = cont.len();
    let pick = |m: &DMatrix<f64>, cols: &[usize]| DMatrix::from_fn(m.nrows(), cols.len(), |i, k| m[(i, cols[k])]);
    let p_cc = DMatrix::from_fn(nc, nc, |i, k| qp.p[(cont[i], cont[k])]);
    let p_cb = DMatrix::from_fn(nc, nb, |i, k| qp.p[(cont[i], binaries[k])]);
    let p_bb = DMatrix::from_fn(nb, nb, |i, k| qp.p[(binaries[i], binaries[k])]);
    let (a_c, a_b) = (pick(&qp.a, &cont), pick(&qp.a, binaries));
    let (c_c, c_b) = (pick(&qp.c, &cont), pick(&qp.c, binaries));
    let mut best: Option<(Vec<f64>, OracleSolution)> = None;
    for code in 0u64..(1u64 << nb) {
        let assignment: Vec<f64> = (0..nb).map(|k| ((code >> (nb - 1 - k)) & 1) as f64).collect();
        if binaries
            .iter()
            .zip(&assignment)
            .any(|(&j, &v)| v < qp.lb[j] || v > qp.ub[j])
        {
            continue;
        }
        let xb = DVector::from_column_slice(&assignment);
        let qb = DVector::from_fn(nb, |k, _| qp.q[binaries[k]]);
        let shift = &c_b * &xb;
        let sub = DenseQp {
            p: p_cc.clone(),
            q: DVector::from_fn(nc, |i, _| qp.q[cont[i]]) + &p_cb * &xb,
            a: a_c.clone(),
            b: &qp.b - &a_b * &xb,
            c: c_c.clone(),
            l: &qp.l - &shift,
            u: &qp.u - &shift,
            lb: DVector::from_fn(nc, |i, _| qp.lb[cont[i]]),
            ub: DVector::from_fn(nc, |i, _| qp.ub[cont[i]]),
        };
        let constant = 0.5 * xb.dot(&(&p_bb * &xb)) + qb.dot(&xb);
        let sol = if nc == 0 {
            // nothing left to optimize, only feasibility to check
            let feasible = sub.b.iter().all(|v| v.abs() <= tol)
                && (0..sub.l.len()).all(|i| sub.l[i] <= tol && sub.u[i] >= -tol);
            feasible.then(|| OracleSolution { x: DVector::zeros(0), objective: 0.0 })
        } else {
            sub.solve(tol)
        };
        let Some(sol) = sol else { continue };
        let objective = sol.objective + constant;
        let better = best
            .as_ref()
            .map_or(true, |(_, b)| objective < b.objective - 1e-9 * b.objective.abs().max(1.0));
        if better {
            let mut x = DVector::zeros(n);
            for (i, &j) in cont.iter().enumerate() {
                x[j] = sol.x[i];
            }
            for (k, &j) in binaries.iter().enumerate() {
                x[j] = assignment[k];
            }
            best = Some((assignment, OracleSolution { x, objective }));
        }
    }
    best
}
