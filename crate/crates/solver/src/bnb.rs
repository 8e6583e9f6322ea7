//! Best-first branch-and-bound over binary variables of a convex QP.
//!
//! Nodes are ordered by their parent's relaxation value, ties broken by
//! creation order, so a single-worker run is fully reproducible. With more
//! than one worker, batches of open nodes are evaluated concurrently but
//! their results are committed in creation order, which keeps the result
//! independent of thread timing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::admm::QpSolver;
use crate::error::BnbError;
use crate::qp::{QpSettings, QpSolution, QpStatus, QuadraticProgram, WarmStart};

/// Largest binary count accepted by [`enumerate_oracle`].
pub const MAX_ENUMERATED_BINARIES: usize = 20;
/// Iteration budget for incumbent guesses (hint, root rounding).
const HEURISTIC_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBinaryQp {
    pub base: QuadraticProgram,
    pub binary_indices: Vec<usize>,
}

impl MixedBinaryQp {
    pub fn new(base: QuadraticProgram, mut binary_indices: Vec<usize>) -> Result<Self, BnbError> {
        binary_indices.sort_unstable();
        binary_indices.dedup();
        let p = Self { base, binary_indices };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BnbError> {
        self.base.validate()?;
        let n = self.base.num_vars();
        for &i in &self.binary_indices {
            if i >= n {
                return Err(BnbError::BinaryIndexOutOfRange(i));
            }
            let (lb, ub) = (self.base.lb[i], self.base.ub[i]);
            if lb < 0.0 || ub > 1.0 {
                return Err(BnbError::BinaryBounds { index: i, lb, ub });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchRule {
    /// Fractional value closest to 0.5, lowest index on ties.
    #[default]
    MostFractional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub node_limit: usize,
    pub branch_rule: BranchRule,
    pub integrality_tol: f64,
    pub workers: usize,
    /// Try the rounded root relaxation as a first incumbent.
    pub rounding_heuristic: bool,
    /// Binary assignment (in `binary_indices` order) evaluated before the
    /// search starts, e.g. the shifted plan of a previous solve.
    pub incumbent_hint: Option<Vec<f64>>,
    /// Keep a record of every evaluated node.
    pub record_tree: bool,
    pub qp: QpSettings,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            abs_gap: 1e-6,
            rel_gap: 0.0,
            node_limit: 200_000,
            branch_rule: BranchRule::MostFractional,
            integrality_tol: 1e-6,
            workers: 1,
            rounding_heuristic: true,
            incumbent_hint: None,
            record_tree: false,
            qp: QpSettings::default(),
        }
    }
}

impl BnbConfig {
    fn validate(&self) -> Result<(), BnbError> {
        if !(self.abs_gap >= 0.0) || !(self.rel_gap >= 0.0) {
            return Err(BnbError::Config("gap tolerances must be nonnegative".into()));
        }
        if self.node_limit < 1 {
            return Err(BnbError::Config("node limit must be at least 1".into()));
        }
        if self.workers < 1 {
            return Err(BnbError::Config("at least one worker is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BnbStatus {
    Optimal,
    GapReached,
    NodeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    /// `(position in binary_indices, fixed value)`
    pub fixings: Vec<(usize, f64)>,
    /// Relaxation value, `None` when the relaxation was infeasible or the node
    /// was pruned on its inherited bound without being solved.
    pub relaxation: Option<f64>,
    pub pruned_by_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbSolution {
    pub x: Option<DVector<f64>>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub qp_iterations: usize,
    pub status: BnbStatus,
    pub tree: Vec<NodeRecord>,
}

pub fn branch_select(fractional_values: &[(usize, f64)], tol: f64) -> Result<usize, BnbError> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, v) in fractional_values {
        let frac = v.min(1.0 - v);
        if frac <= tol {
            continue;
        }
        best = match best {
            None => Some((i, frac)),
            Some((bi, bf)) => {
                if frac > bf + 1e-12 || ((frac - bf).abs() <= 1e-12 && i < bi) {
                    Some((i, frac))
                } else {
                    Some((bi, bf))
                }
            }
        };
    }
    best.map(|(i, _)| i).ok_or(BnbError::NothingToBranch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl Ord for Key {
    // reversed: BinaryHeap pops the smallest bound, then the oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct OpenNode {
    parent: Option<usize>,
    bound: f64,
    fixings: Vec<(usize, f64)>,
    warm: Option<WarmStart>,
}

struct Incumbent {
    x: DVector<f64>,
    objective: f64,
    assignment: Vec<f64>,
}

fn is_better(obj: f64, assignment: &[f64], inc: &Option<Incumbent>) -> bool {
    match inc {
        None => true,
        Some(b) => {
            let tie = 1e-9 * b.objective.abs().max(1.0);
            obj < b.objective - tie || ((obj - b.objective).abs() <= tie && lex_less(assignment, &b.assignment))
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

struct Search<'a> {
    p: &'a MixedBinaryQp,
    cfg: &'a BnbConfig,
    base_lb: Vec<f64>,
    base_ub: Vec<f64>,
    incumbent: Option<Incumbent>,
    qp_iterations: usize,
    used_rel_gap: bool,
}

impl<'a> Search<'a> {
    fn bounds_for(&self, fixings: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lb = self.base_lb.clone();
        let mut ub = self.base_ub.clone();
        for &(k, v) in fixings {
            let j = self.p.binary_indices[k];
            lb[j] = v;
            ub[j] = v;
        }
        (lb, ub)
    }

    fn prune_threshold(&mut self, bound: f64) -> bool {
        match &self.incumbent {
            None => false,
            Some(inc) => {
                let abs = self.cfg.abs_gap;
                let rel = self.cfg.rel_gap * inc.objective.abs();
                if bound >= inc.objective - abs {
                    true
                } else if bound >= inc.objective - rel {
                    self.used_rel_gap = true;
                    true
                } else {
                    false
                }
            }
        }
    }

    fn assignment_of(&self, x: &DVector<f64>) -> Vec<f64> {
        self.p.binary_indices.iter().map(|&j| x[j].round().clamp(0.0, 1.0)).collect()
    }

    /// Solves with every binary fixed to `assignment` and offers the result
    /// as an incumbent. Heuristic guesses get a capped iteration budget.
    fn try_assignment(&mut self, solver: &mut QpSolver, assignment: &[f64], warm: Option<&WarmStart>, heuristic: bool) {
        let fix: Vec<(usize, f64)> = assignment.iter().copied().enumerate().collect();
        let (lb, ub) = self.bounds_for(&fix);
        if (0..lb.len()).any(|j| lb[j] < self.base_lb[j] || ub[j] > self.base_ub[j]) {
            return;
        }
        let full = solver.settings().max_iter;
        if heuristic {
            solver.set_max_iter(full.min(HEURISTIC_MAX_ITER));
        }
        let sol = solver.solve(Some((&lb, &ub)), warm);
        solver.set_max_iter(full);
        self.qp_iterations += sol.iterations;
        if sol.status == QpStatus::Optimal {
            self.offer(sol.x, sol.objective, assignment);
        }
    }

    fn offer(&mut self, x: DVector<f64>, objective: f64, assignment: &[f64]) {
        if is_better(objective, assignment, &self.incumbent) {
            self.incumbent = Some(Incumbent {
                x,
                objective,
                assignment: assignment.to_vec(),
            });
        }
    }
}

pub fn solve_miqp(p: &MixedBinaryQp, cfg: &BnbConfig) -> Result<BnbSolution, BnbError> {
    p.validate()?;
    cfg.validate()?;
    let mut solver = QpSolver::new(&p.base, cfg.qp.clone())?;
    let (lb, ub) = solver.bounds();
    let mut search = Search {
        p,
        cfg,
        base_lb: lb.to_vec(),
        base_ub: ub.to_vec(),
        incumbent: None,
        qp_iterations: 0,
        used_rel_gap: false,
    };
    let nb = p.binary_indices.len();

    if let Some(hint) = &cfg.incumbent_hint {
        if hint.len() == nb {
            let a: Vec<f64> = hint.iter().map(|v| v.round().clamp(0.0, 1.0)).collect();
            search.try_assignment(&mut solver, &a, None, true);
        }
    }

    let mut arena: Vec<Option<OpenNode>> = Vec::new();
    let mut heap = BinaryHeap::new();
    arena.push(Some(OpenNode {
        parent: None,
        bound: f64::NEG_INFINITY,
        fixings: Vec::new(),
        warm: None,
    }));
    heap.push(Key(f64::NEG_INFINITY, 0));

    let mut tree = Vec::new();
    let mut nodes = 0usize;
    let mut hit_limit = false;
    let mut workers: Vec<QpSolver> = Vec::new();
    if cfg.workers > 1 {
        workers = (0..cfg.workers).map(|_| solver.clone()).collect();
    }

    while !heap.is_empty() {
        if nodes >= cfg.node_limit {
            hit_limit = true;
            break;
        }
        // collect a batch of nodes that survive the bound test
        let mut batch: Vec<(usize, OpenNode)> = Vec::new();
        let want = cfg.workers.min(cfg.node_limit - nodes).max(1);
        while batch.len() < want {
            let Some(Key(bound, id)) = heap.pop() else { break };
            let node = arena[id].take().expect("open node");
            if search.prune_threshold(bound) {
                if cfg.record_tree {
                    tree.push(NodeRecord {
                        id,
                        parent: node.parent,
                        fixings: node.fixings,
                        relaxation: None,
                        pruned_by_bound: true,
                    });
                }
                continue;
            }
            batch.push((id, node));
        }
        if batch.is_empty() {
            continue;
        }

        let results: Vec<QpSolution> = if batch.len() == 1 {
            let (_, node) = &batch[0];
            let (lb, ub) = search.bounds_for(&node.fixings);
            vec![solver.solve(Some((&lb, &ub)), node.warm.as_ref())]
        } else {
            let jobs: Vec<(Vec<f64>, Vec<f64>, Option<WarmStart>)> = batch
                .iter()
                .map(|(_, node)| {
                    let (lb, ub) = search.bounds_for(&node.fixings);
                    (lb, ub, node.warm.clone())
                })
                .collect();
            std::thread::scope(|sc| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .zip(&jobs)
                    .map(|(w, (lb, ub, warm))| sc.spawn(move || w.solve(Some((lb, ub)), warm.as_ref())))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };

        for ((id, node), sol) in batch.into_iter().zip(results) {
            nodes += 1;
            search.qp_iterations += sol.iterations;
            let relaxation = match sol.status {
                QpStatus::Optimal => Some(sol.objective),
                QpStatus::PrimalInfeasible => None,
                QpStatus::DualInfeasible => {
                    return Err(BnbError::Config("relaxation is unbounded".into()));
                }
                QpStatus::IterLimit => {
                    log::warn!("node {id}: relaxation hit the iteration limit; keeping parent bound");
                    Some(node.bound)
                }
            };
            if cfg.record_tree {
                tree.push(NodeRecord {
                    id,
                    parent: node.parent,
                    fixings: node.fixings.clone(),
                    relaxation,
                    pruned_by_bound: false,
                });
            }
            let Some(value) = relaxation else { continue };
            let value = value.max(node.bound);
            if search.prune_threshold(value) {
                continue;
            }
            let frac: Vec<(usize, f64)> = p
                .binary_indices
                .iter()
                .enumerate()
                .map(|(k, &j)| (k, sol.x[j]))
                .filter(|&(_, v)| v.min(1.0 - v) > cfg.integrality_tol)
                .collect();
            let warm = WarmStart {
                x: sol.x.clone(),
                y: Some(sol.y.clone()),
            };
            if frac.is_empty() {
                let a = search.assignment_of(&sol.x);
                if p.binary_indices.iter().zip(&a).all(|(&j, &v)| sol.x[j] == v) {
                    // already optimal for the fixed assignment
                    search.offer(sol.x, sol.objective, &a);
                } else {
                    search.try_assignment(&mut solver, &a, Some(&warm), false);
                }
                continue;
            }
            if node.parent.is_none() && cfg.rounding_heuristic {
                let a = search.assignment_of(&sol.x);
                search.try_assignment(&mut solver, &a, Some(&warm), true);
                if search.prune_threshold(value) {
                    continue;
                }
            }
            let k = match cfg.branch_rule {
                BranchRule::MostFractional => branch_select(&frac, cfg.integrality_tol)?,
            };
            for v in [0.0, 1.0] {
                let mut fixings = node.fixings.clone();
                fixings.push((k, v));
                let cid = arena.len();
                arena.push(Some(OpenNode {
                    parent: Some(id),
                    bound: value,
                    fixings,
                    warm: Some(warm.clone()),
                }));
                heap.push(Key(value, cid));
            }
        }
    }

    let open_bound = heap.iter().map(|k| k.0).fold(f64::INFINITY, f64::min);
    let (x, objective, status, bound) = match search.incumbent {
        Some(inc) => {
            let bound = open_bound.min(inc.objective);
            let status = if hit_limit {
                BnbStatus::NodeLimit
            } else if search.used_rel_gap {
                BnbStatus::GapReached
            } else {
                BnbStatus::Optimal
            };
            (Some(inc.x), inc.objective, status, bound)
        }
        None => {
            let status = if hit_limit { BnbStatus::NodeLimit } else { BnbStatus::Infeasible };
            (None, f64::INFINITY, status, open_bound)
        }
    };
    Ok(BnbSolution {
        x,
        objective,
        bound,
        gap: (objective - bound).max(0.0),
        nodes,
        qp_iterations: search.qp_iterations,
        status,
        tree,
    })
}

/// Exact optimum by solving one QP per binary assignment, visiting
/// assignments in lexicographic order so that ties resolve to the
/// lexicographically smallest binary vector.
pub fn enumerate_oracle(p: &MixedBinaryQp, settings: &QpSettings) -> Result<BnbSolution, BnbError> {
    p.validate()?;
    let nb = p.binary_indices.len();
    if nb > MAX_ENUMERATED_BINARIES {
        return Err(BnbError::TooManyBinaries {
            max: MAX_ENUMERATED_BINARIES,
            got: nb,
        });
    }
    let mut solver = QpSolver::new(&p.base, settings.clone())?;
    let (lb0, ub0) = solver.bounds();
    let (lb0, ub0) = (lb0.to_vec(), ub0.to_vec());
    let mut best: Option<Incumbent> = None;
    let mut iterations = 0;
    for code in 0u64..(1u64 << nb) {
        // bit for binary 0 is the most significant
        let assignment: Vec<f64> = (0..nb).map(|k| ((code >> (nb - 1 - k)) & 1) as f64).collect();
        let mut lb = lb0.clone();
        let mut ub = ub0.clone();
        let mut admissible = true;
        for (k, &j) in p.binary_indices.iter().enumerate() {
            let v = assignment[k];
            if v < lb0[j] || v > ub0[j] {
                admissible = false;
            }
            lb[j] = v;
            ub[j] = v;
        }
        if !admissible {
            continue;
        }
        let sol = solver.solve(Some((&lb, &ub)), None);
        iterations += sol.iterations;
        if sol.status == QpStatus::Optimal && is_better(sol.objective, &assignment, &best) {
            best = Some(Incumbent {
                x: sol.x,
                objective: sol.objective,
                assignment,
            });
        }
    }
    let nodes = 1usize << nb;
    Ok(match best {
        Some(b) => BnbSolution {
            x: Some(b.x),
            objective: b.objective,
            bound: b.objective,
            gap: 0.0,
            nodes,
            qp_iterations: iterations,
            status: BnbStatus::Optimal,
            tree: Vec::new(),
        },
        None => BnbSolution {
            x: None,
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            gap: 0.0,
            nodes,
            qp_iterations: iterations,
            status: BnbStatus::Infeasible,
            tree: Vec::new(),
        },
    })
}
