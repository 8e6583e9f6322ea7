//! Convex quadratic programs with two-sided linear constraints and box bounds.
//!
//! ```text
//! minimize    1/2 x^T P x + q^T x
//! subject to  A_eq x  = b_eq
//!             l_in <= A_in x <= u_in
//!             lb   <=    x    <= ub
//! ```
//!
//! Dual convention: the Lagrangian is `1/2 x^T P x + q^T x + y^T A x + ...`,
//! so at optimum `P x + q + A_eq^T y_eq + A_in^T y_in + y_bounds = 0`, with
//! `y > 0` on rows pressed against their upper limit and `y < 0` on rows
//! pressed against their lower limit.

use nalgebra::{DMatrix, DVector};

use crate::admm::QpSolver;
use crate::error::QpError;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub l_in: DVector<f64>,
    pub u_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem with free variables.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            l_in: DVector::zeros(0),
            u_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Self {
        self.a_in = a;
        self.l_in = l;
        self.u_in = u;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in(&self) -> usize {
        self.l_in.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Checks dimensions, bound ordering and convexity of the symmetric part
    /// of `P` (smallest eigenvalue must be at least `-1e-9`).
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(QpError::DimensionMismatch {
                    what: what.to_string(),
                    expected: format!("{}x{}", want.0, want.1),
                    found: format!("{}x{}", got.0, got.1),
                })
            }
        };
        dim("P", self.p.shape(), (n, n))?;
        dim("A_eq", self.a_eq.shape(), (self.b_eq.len(), n))?;
        dim("A_in", self.a_in.shape(), (self.l_in.len(), n))?;
        dim("u_in", (self.u_in.len(), 1), (self.l_in.len(), 1))?;
        dim("lb", (self.lb.len(), 1), (n, 1))?;
        dim("ub", (self.ub.len(), 1), (n, 1))?;

        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.p.as_slice())
            || !finite(self.q.as_slice())
            || !finite(self.a_eq.as_slice())
            || !finite(self.b_eq.as_slice())
            || !finite(self.a_in.as_slice())
        {
            return Err(QpError::NonFinite);
        }
        if self.l_in.iter().chain(self.lb.iter()).any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.u_in.iter().chain(self.ub.iter()).any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(QpError::NonFinite);
        }
        for i in 0..self.num_in() {
            if self.l_in[i] > self.u_in[i] {
                return Err(QpError::InconsistentLimits { what: "inequality", index: i });
            }
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(QpError::InconsistentLimits { what: "bound", index: i });
            }
        }
        let min_eig = min_eigenvalue_of_symmetric_part(&self.p);
        if min_eig < -1e-9 {
            return Err(QpError::NotConvex { min_eigenvalue: min_eig });
        }
        Ok(())
    }
}

fn min_eigenvalue_of_symmetric_part(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    if n == 0 {
        return 0.0;
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || (p[(i, j)] == 0.0 && p[(j, i)] == 0.0)));
    if diagonal {
        return (0..n).map(|i| p[(i, i)]).fold(f64::INFINITY, f64::min);
    }
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpDuals {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub bounds: DVector<f64>,
}

impl QpDuals {
    pub fn zeros(n_eq: usize, n_in: usize, n: usize) -> Self {
        Self {
            eq: DVector::zeros(n_eq),
            ineq: DVector::zeros(n_in),
            bounds: DVector::zeros(n),
        }
    }

    /// `[y_eq; y_in; y_bounds]`
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.eq.len() + self.ineq.len() + self.bounds.len(),
            self.eq.iter().chain(self.ineq.iter()).chain(self.bounds.iter()).copied(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: QpDuals,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Whether the returned point came from the active-set polishing step.
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: Option<QpDuals>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_prim: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub sigma: f64,
    pub penalty: f64,
    pub adaptive_penalty: bool,
    pub polish: bool,
    pub infeasibility_tol: f64,
    pub check_interval: usize,
    pub scaling_iters: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_prim: 1e-8,
            eps_dual: 1e-8,
            max_iter: 200_000,
            alpha: 1.6,
            sigma: 1e-6,
            penalty: 3.0,
            adaptive_penalty: true,
            polish: true,
            infeasibility_tol: 1e-10,
            check_interval: 10,
            scaling_iters: 10,
            warm_start: None,
        }
    }
}

pub fn solve_qp(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let mut solver = QpSolver::new(qp, settings.clone())?;
    Ok(solver.solve(None, settings.warm_start.as_ref()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// Largest violation of any equality, inequality or bound.
    pub primal: f64,
    /// Infinity norm of `P x + q + A^T y`.
    pub dual: f64,
    /// Largest `|y_i| * slack_i` over all rows, where the slack is measured
    /// to the limit the sign of `y_i` refers to.
    pub complementarity: f64,
}

pub fn kkt_residuals(qp: &QuadraticProgram, sol: &QpSolution) -> Result<KktResiduals, QpError> {
    let n = qp.num_vars();
    let check = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(QpError::DimensionMismatch {
                what: what.to_string(),
                expected: want.to_string(),
                found: got.to_string(),
            })
        }
    };
    check("x", sol.x.len(), n)?;
    check("y_eq", sol.y.eq.len(), qp.num_eq())?;
    check("y_in", sol.y.ineq.len(), qp.num_in())?;
    check("y_bounds", sol.y.bounds.len(), n)?;

    let x = &sol.x;
    let mut primal = 0.0f64;
    let mut compl = 0.0f64;

    let ax_eq = &qp.a_eq * x;
    for i in 0..qp.num_eq() {
        primal = primal.max((ax_eq[i] - qp.b_eq[i]).abs());
    }
    let mut row = |v: f64, l: f64, u: f64, y: f64| {
        primal = primal.max(l - v).max(v - u);
        let slack = if y > 0.0 {
            u - v
        } else if y < 0.0 {
            v - l
        } else {
            0.0
        };
        let c = if slack.is_infinite() { f64::INFINITY } else { y.abs() * slack.abs() };
        compl = compl.max(c);
    };
    let ax_in = &qp.a_in * x;
    for i in 0..qp.num_in() {
        row(ax_in[i], qp.l_in[i], qp.u_in[i], sol.y.ineq[i]);
    }
    for i in 0..n {
        row(x[i], qp.lb[i], qp.ub[i], sol.y.bounds[i]);
    }

    let grad = &qp.p * x + &qp.q + qp.a_eq.tr_mul(&sol.y.eq) + qp.a_in.tr_mul(&sol.y.ineq) + &sol.y.bounds;
    let dual = grad.amax();
    Ok(KktResiduals {
        primal: primal.max(0.0),
        dual,
        complementarity: compl,
    })
}
