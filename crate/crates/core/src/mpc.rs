//! Receding-horizon problem assembly.
//!
//! Two variants share one builder. `Standard` ignores local control (the
//! droop signal ρ is pinned to zero), `Enhanced` keeps one ρ per prediction
//! step as a decision variable so that units without communication can be
//! steered through their droop response.
//!
//! Variables are laid out step-major so the KKT system of the relaxation is
//! banded. Storage uses a nonnegative charge/discharge split to keep the
//! sign-dependent efficiency convex; if an optimum charges and discharges
//! the same unit at once, a direction binary is added for that entry and the
//! problem is solved again.

use mgfall_solver::{solve_miqp, BnbConfig, BnbError, BnbStatus, MixedBinaryQp, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linexpr::LinExpr;
use crate::model::{
    charge_coefficient, com_apply, droop_capacity, effective_switch, stage_cost, storage_step, CommStatus,
    MicrogridModel, ModelError, SetpointCommand, UncertaintySample, UnitPowers,
};

const CONSISTENCY_WARN: f64 = 1e-6;
const CONSISTENCY_FAIL: f64 = 1e-4;
const MAX_DIRECTION_ROUNDS: usize = 8;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] BnbError),
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Dimension(String),
    #[error("no default schedule for unit {0} without communication")]
    MissingDefaults(String),
    #[error("infeasible by construction: {0}")]
    InfeasibleByConstruction(String),
    #[error("optimization problem is infeasible")]
    Infeasible,
    #[error("node limit reached without a feasible point")]
    NodeLimit,
    #[error("solution decoding mismatch: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    Enhanced,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Enhanced => "enhanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub discount: f64,
    pub variant: Variant,
    /// `None` selects [`default_rho_bounds`].
    pub rho_bounds: Option<(f64, f64)>,
    pub simultaneity_tol: f64,
    /// Node budget once charge-direction binaries are in play. Their
    /// relaxation is nearly degenerate and proving the last digits of
    /// optimality can take exponentially many nodes.
    pub direction_node_limit: usize,
    pub bnb: BnbConfig,
}

impl MpcConfig {
    pub fn new(horizon: usize, discount: f64, variant: Variant) -> Self {
        Self {
            horizon,
            discount,
            variant,
            rho_bounds: None,
            simultaneity_tol: 1e-6,
            direction_node_limit: 500,
            bnb: BnbConfig {
                abs_gap: 1e-7,
                ..BnbConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon < 1 {
            return Err(MpcError::Config("horizon must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(MpcError::Config("discount must lie in (0, 1]".into()));
        }
        if let Some((lo, hi)) = self.rho_bounds {
            if !(lo <= 0.0 && 0.0 <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(MpcError::Config("rho bounds must be finite and bracket 0".into()));
            }
        }
        if self.direction_node_limit < 1 {
            return Err(MpcError::Config("direction node limit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rho_bounds(&self, model: &MicrogridModel) -> (f64, f64) {
        self.rho_bounds.unwrap_or_else(|| default_rho_bounds(model))
    }
}

/// Symmetric bounds wide enough for any single unit to sweep its whole
/// power range through droop alone.
pub fn default_rho_bounds(model: &MicrogridModel) -> (f64, f64) {
    let r = model
        .storage
        .iter()
        .map(|u| (u.p_max - u.p_min) / u.droop)
        .chain(model.thermal.iter().map(|u| u.p_max / u.droop))
        .fold(0.0f64, f64::max);
    (-r, r)
}

/// Forecasts per unit (rows) and prediction step (columns, `h + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    pub w_r: Vec<Vec<f64>>,
    pub w_l: Vec<Vec<f64>>,
}

impl ForecastBundle {
    pub fn steps(&self) -> usize {
        self.w_r.first().or(self.w_l.first()).map_or(0, |r| r.len())
    }

    pub fn at(&self, j: usize) -> UncertaintySample {
        UncertaintySample {
            w_r: self.w_r.iter().map(|r| r[j]).collect(),
            w_l: self.w_l.iter().map(|r| r[j]).collect(),
        }
    }
}

/// Set-points units execute on their own while the link is down, per unit
/// (rows) and prediction step (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultSchedule {
    pub d_t: Vec<Vec<f64>>,
    pub d_s: Vec<Vec<f64>>,
    pub d_r: Vec<Vec<f64>>,
    pub delta_d: Vec<Vec<bool>>,
    /// The shift ran past the end of the source plan for every step.
    pub terminal_hold: bool,
}

impl DefaultSchedule {
    pub fn at(&self, j: usize) -> (SetpointCommand, Vec<bool>) {
        let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let dd: Vec<bool> = self.delta_d.iter().map(|r| r[j]).collect();
        (
            SetpointCommand {
                u_t: col(&self.d_t),
                u_s: col(&self.d_s),
                u_r: col(&self.d_r),
                delta: dd.clone(),
            },
            dd,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub nodes: usize,
    pub qp_iterations: usize,
    pub binaries: usize,
    pub direction_binaries: usize,
    pub dropped_rows: usize,
    pub status: Option<BnbStatus>,
    /// `(storage, step)` entries that still charge and discharge at once
    pub simultaneous: Vec<(usize, usize)>,
}

/// Planned trajectories, rows per unit and columns per step. `x` has `h + 2`
/// columns: the initial energy followed by the energy after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u_t: Vec<Vec<f64>>,
    pub u_s: Vec<Vec<f64>>,
    pub u_r: Vec<Vec<f64>>,
    pub delta: Vec<Vec<bool>>,
    pub rho: Vec<f64>,
    pub p_t: Vec<Vec<f64>>,
    pub p_s: Vec<Vec<f64>>,
    pub p_r: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl MpcSolution {
    pub fn steps(&self) -> usize {
        self.rho.len()
    }

    /// Commands for step `j` of the plan.
    pub fn command(&self, j: usize) -> SetpointCommand {
        let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[j]).collect();
        SetpointCommand {
            u_t: col(&self.u_t),
            u_s: col(&self.u_s),
            u_r: col(&self.u_r),
            delta: self.delta.iter().map(|r| r[j]).collect(),
        }
    }
}

/// Defaults `c` steps after `prev` was computed: the plan shifted by `c`,
/// holding its last entry once the shift runs out.
pub fn fallback_schedule(prev: &MpcSolution, c: usize, h: usize) -> DefaultSchedule {
    let last = prev.steps().saturating_sub(1);
    let src = |j: usize| (j + c).min(last);
    let shift = |m: &Vec<Vec<f64>>| m.iter().map(|r| (0..=h).map(|j| r[src(j)]).collect()).collect();
    DefaultSchedule {
        d_t: shift(&prev.u_t),
        d_s: shift(&prev.u_s),
        d_r: shift(&prev.u_r),
        delta_d: prev.delta.iter().map(|r| (0..=h).map(|j| r[src(j)]).collect()).collect(),
        terminal_hold: c > last,
    }
}

fn applied(cmds: &SetpointCommand, defaults: &SetpointCommand, comm: &CommStatus) -> Result<SetpointCommand, MpcError> {
    Ok(SetpointCommand {
        u_t: com_apply(&cmds.u_t, &defaults.u_t, &comm.thermal)?,
        u_s: com_apply(&cmds.u_s, &defaults.u_s, &comm.storage)?,
        u_r: com_apply(&cmds.u_r, &defaults.u_r, &comm.renewable)?,
        delta: effective_switch(&cmds.delta, &defaults.delta, &comm.thermal)?,
    })
}

/// Droop signal the plant settled on in the last step, reconstructed from
/// what the EMS knows: the forecast it planned with, the realized
/// uncertainty, the commands it sent and the defaults in force.
///
/// The deviation part is `(1ᵀΔw_l + 1ᵀΔw_r)/χ`. The first term is the droop
/// already implied by the commands under the forecast; it vanishes when the
/// commands balance the forecast without local control.
pub fn estimate_rho(
    model: &MicrogridModel,
    forecast: &UncertaintySample,
    actual: &UncertaintySample,
    cmds: &SetpointCommand,
    defaults: &SetpointCommand,
    comm: &CommStatus,
) -> Result<f64, MpcError> {
    let a = applied(cmds, defaults, comm)?;
    let chi = droop_capacity(model, &a.delta);
    if !(chi > 0.0) {
        return Err(ModelError::NoDroop(chi).into());
    }
    let planned_r: f64 = a.u_r.iter().zip(&forecast.w_r).map(|(&c, &w)| c.min(w)).sum();
    let actual_r: f64 = a.u_r.iter().zip(&actual.w_r).map(|(&c, &w)| c.min(w)).sum();
    let thermal: f64 = a.u_t.iter().sum();
    let storage: f64 = a.u_s.iter().sum();
    let planned_l: f64 = forecast.w_l.iter().sum();
    let actual_l: f64 = actual.w_l.iter().sum();
    let implied = -(thermal + storage + planned_r + planned_l) / chi;
    let dw_l = planned_l - actual_l;
    let dw_r = planned_r - actual_r;
    Ok(implied + (dw_l + dw_r) / chi)
}

/// Energy after one step of a storage unit that ran `setpoint + χ·ρ`.
pub fn estimate_storage_energy(
    model: &MicrogridModel,
    x_prev: &[f64],
    setpoint: &[f64],
    rho: f64,
) -> Result<Vec<f64>, MpcError> {
    let p: Vec<f64> = model
        .storage
        .iter()
        .zip(setpoint)
        .map(|(u, &d)| d + u.droop * rho)
        .collect();
    let eta: Vec<f64> = model.storage.iter().map(|u| u.efficiency).collect();
    Ok(storage_step(x_prev, &p, &eta, model.ts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Droop,
    ThermalSetpoint,
    Switch,
    SwitchSlack,
    DroopProduct,
    StorageSetpoint,
    Charge,
    Discharge,
    Energy,
    BandLow,
    BandHigh,
    Direction,
    RenewableSetpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarLabel {
    pub kind: VarKind,
    pub unit: Option<usize>,
    pub step: usize,
}

/// Where everything lives in the decision vector, plus every planned
/// quantity as an affine expression of it (constants for units running on
/// defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct VariableMap {
    pub labels: Vec<VarLabel>,
    pub u_t: Vec<Vec<LinExpr>>,
    pub u_s: Vec<Vec<LinExpr>>,
    pub u_r: Vec<Vec<LinExpr>>,
    pub delta: Vec<Vec<LinExpr>>,
    pub rho: Vec<LinExpr>,
    pub p_t: Vec<Vec<LinExpr>>,
    pub p_s: Vec<Vec<LinExpr>>,
    pub p_r: Vec<Vec<LinExpr>>,
    pub charge: Vec<Vec<Option<usize>>>,
    pub discharge: Vec<Vec<Option<usize>>>,
    pub x: Vec<Vec<LinExpr>>,
}

impl VariableMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn find(&self, kind: VarKind, unit: Option<usize>, step: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.kind == kind && l.unit == unit && l.step == step)
    }

    pub fn count(&self, kind: VarKind) -> usize {
        self.labels.iter().filter(|l| l.kind == kind).count()
    }
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: MixedBinaryQp,
    pub vars: VariableMap,
    /// Objective terms that do not depend on the decision vector.
    pub offset: f64,
    pub dropped_rows: usize,
    pub direction: Vec<(usize, usize)>,
    comm: CommStatus,
    defaults: Option<DefaultSchedule>,
    forecast: ForecastBundle,
    x0: Vec<f64>,
    delta_prev: Vec<bool>,
    discount: f64,
}

/// Everything the controller knows at the current step.
#[derive(Debug, Clone, Copy)]
pub struct MpcInputs<'a> {
    pub x0: &'a [f64],
    pub delta_prev: &'a [bool],
    pub forecast: &'a ForecastBundle,
    pub comm: &'a CommStatus,
    pub defaults: Option<&'a DefaultSchedule>,
    /// Switch plan used as a first incumbent, rows per thermal unit.
    pub delta_hint: Option<&'a [Vec<bool>]>,
}

struct Builder {
    lb: Vec<f64>,
    ub: Vec<f64>,
    labels: Vec<VarLabel>,
    binaries: Vec<usize>,
    quad: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    offset: f64,
    eq: Vec<LinExpr>,
    ineq: Vec<(LinExpr, f64, f64)>,
    dropped: usize,
}

impl Builder {
    fn var(&mut self, kind: VarKind, unit: Option<usize>, step: usize, lb: f64, ub: f64) -> usize {
        let i = self.lb.len();
        self.lb.push(lb);
        self.ub.push(ub.max(lb));
        self.q.push(0.0);
        self.labels.push(VarLabel { kind, unit, step });
        if matches!(kind, VarKind::Switch | VarKind::Direction) {
            self.binaries.push(i);
        }
        i
    }

    fn linear(&mut self, e: &LinExpr, w: f64) {
        for (&i, &c) in &e.terms {
            self.q[i] += w * c;
        }
        self.offset += w * e.constant;
    }

    /// Adds `w·e²` in the `½xᵀPx + qᵀx` convention.
    fn square(&mut self, e: &LinExpr, w: f64) {
        if w == 0.0 {
            return;
        }
        for (&i, &ci) in &e.terms {
            for (&j, &cj) in &e.terms {
                self.quad.push((i, j, 2.0 * w * ci * cj));
            }
            self.q[i] += 2.0 * w * e.constant * ci;
        }
        self.offset += w * e.constant * e.constant;
    }

    fn equal(&mut self, e: LinExpr, what: impl FnOnce() -> String) -> Result<(), MpcError> {
        if e.is_constant() {
            if e.constant.abs() > 1e-9 {
                return Err(MpcError::InfeasibleByConstruction(what()));
            }
            return Ok(());
        }
        self.eq.push(e);
        Ok(())
    }

    /// `lo ≤ e ≤ hi`. A constant row that fails is an error unless `droppable`.
    fn range(
        &mut self,
        e: LinExpr,
        lo: f64,
        hi: f64,
        droppable: bool,
        what: impl FnOnce() -> String,
    ) -> Result<(), MpcError> {
        if e.is_constant() {
            let v = e.constant;
            if v < lo - 1e-9 || v > hi + 1e-9 {
                if droppable {
                    self.dropped += 1;
                    log::debug!("dropping uncontrollable limit: {}", what());
                } else {
                    return Err(MpcError::InfeasibleByConstruction(what()));
                }
            }
            return Ok(());
        }
        let c = e.constant;
        let mut e = e;
        e.constant = 0.0;
        self.ineq.push((e, lo - c, hi - c));
        Ok(())
    }
}

fn b2f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn check_inputs(model: &MicrogridModel, cfg: &MpcConfig, inp: &MpcInputs) -> Result<(), MpcError> {
    let h = cfg.horizon;
    let dim = |what: &str, want: usize, got: usize| {
        if want == got {
            Ok(())
        } else {
            Err(MpcError::Dimension(format!("{what}: expected {want}, found {got}")))
        }
    };
    dim("initial energies", model.storage.len(), inp.x0.len())?;
    dim("previous switch states", model.thermal.len(), inp.delta_prev.len())?;
    dim("renewable forecast rows", model.renewable.len(), inp.forecast.w_r.len())?;
    dim("load forecast rows", model.loads.len(), inp.forecast.w_l.len())?;
    for r in inp.forecast.w_r.iter().chain(&inp.forecast.w_l) {
        dim("forecast columns", h + 1, r.len())?;
    }
    dim("thermal comm status", model.thermal.len(), inp.comm.thermal.len())?;
    dim("storage comm status", model.storage.len(), inp.comm.storage.len())?;
    dim("renewable comm status", model.renewable.len(), inp.comm.renewable.len())?;
    for (i, u) in model.storage.iter().enumerate() {
        if inp.x0[i] < u.x_min - 1e-9 || inp.x0[i] > u.x_max + 1e-9 {
            return Err(MpcError::InfeasibleByConstruction(format!(
                "{}: initial energy {} outside [{}, {}]",
                u.name, inp.x0[i], u.x_min, u.x_max
            )));
        }
    }
    if !inp.comm.all() {
        let Some(d) = inp.defaults else {
            let name = model
                .thermal
                .iter()
                .map(|u| &u.name)
                .zip(&inp.comm.thermal)
                .chain(model.storage.iter().map(|u| &u.name).zip(&inp.comm.storage))
                .chain(model.renewable.iter().map(|u| &u.name).zip(&inp.comm.renewable))
                .find(|(_, &z)| !z)
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(MpcError::MissingDefaults(name));
        };
        dim("thermal default rows", model.thermal.len(), d.d_t.len())?;
        dim("switch default rows", model.thermal.len(), d.delta_d.len())?;
        dim("storage default rows", model.storage.len(), d.d_s.len())?;
        dim("renewable default rows", model.renewable.len(), d.d_r.len())?;
        for r in d.d_t.iter().chain(&d.d_s).chain(&d.d_r) {
            dim("default columns", h + 1, r.len())?;
        }
        for r in &d.delta_d {
            dim("default columns", h + 1, r.len())?;
        }
    }
    Ok(())
}

pub fn build_problem(
    model: &MicrogridModel,
    cfg: &MpcConfig,
    inp: &MpcInputs,
    direction: &[(usize, usize)],
) -> Result<MpcProblem, MpcError> {
    model.validate()?;
    cfg.validate()?;
    check_inputs(model, cfg, inp)?;
    let h = cfg.horizon;
    let nt = model.thermal.len();
    let ns = model.storage.len();
    let nr = model.renewable.len();
    let comm = inp.comm;
    let defaults = inp.defaults;
    let (rho_min, rho_max) = match cfg.variant {
        Variant::Standard => (0.0, 0.0),
        Variant::Enhanced => cfg.rho_bounds(model),
    };
    let rho_abs = rho_min.abs().max(rho_max.abs());

    let mut b = Builder {
        lb: Vec::new(),
        ub: Vec::new(),
        labels: Vec::new(),
        binaries: Vec::new(),
        quad: Vec::new(),
        q: Vec::new(),
        offset: 0.0,
        eq: Vec::new(),
        ineq: Vec::new(),
        dropped: 0,
    };
    let rows = |n: usize| vec![Vec::with_capacity(h + 2); n];
    let mut vm = VariableMap {
        labels: Vec::new(),
        u_t: rows(nt),
        u_s: rows(ns),
        u_r: rows(nr),
        delta: rows(nt),
        rho: Vec::new(),
        p_t: rows(nt),
        p_s: rows(ns),
        p_r: rows(nr),
        charge: vec![Vec::new(); ns],
        discharge: vec![Vec::new(); ns],
        x: rows(ns),
    };
    for i in 0..ns {
        vm.x[i].push(LinExpr::constant(inp.x0[i]));
    }

    for j in 0..=h {
        let g = cfg.discount.powi(j as i32);
        let droop_needed = cfg.variant == Variant::Enhanced
            && (comm.storage.iter().any(|&z| !z)
                || (0..nt).any(|i| !comm.thermal[i] && defaults.is_some_and(|d| d.delta_d[i][j])));
        let rho = if droop_needed {
            LinExpr::var(b.var(VarKind::Droop, None, j, rho_min, rho_max))
        } else {
            LinExpr::constant(0.0)
        };
        let rho_abs_j = if droop_needed { rho_abs } else { 0.0 };

        for (i, u) in model.thermal.iter().enumerate() {
            let (delta, p, cmd) = if comm.thermal[i] {
                let d = LinExpr::var(b.var(VarKind::Switch, Some(i), j, 0.0, 1.0));
                let ui = b.var(
                    VarKind::ThermalSetpoint,
                    Some(i),
                    j,
                    -u.droop * rho_abs_j,
                    u.p_max + u.droop * rho_abs_j,
                );
                let mut p = LinExpr::var(ui);
                if droop_needed {
                    // z = δ·ρ through its exact envelope for binary δ
                    let z = b.var(VarKind::DroopProduct, Some(i), j, rho_min.min(0.0), rho_max.max(0.0));
                    let zv = LinExpr::var(z);
                    b.range(zv.clone().plus(&d, -rho_max), f64::NEG_INFINITY, 0.0, false, String::new)?;
                    b.range(zv.clone().plus(&d, -rho_min), 0.0, f64::INFINITY, false, String::new)?;
                    b.range(
                        zv.clone().plus(&rho, -1.0).plus(&d, -rho_min),
                        f64::NEG_INFINITY,
                        -rho_min,
                        false,
                        String::new,
                    )?;
                    b.range(
                        zv.plus(&rho, -1.0).plus(&d, -rho_max),
                        -rho_max,
                        f64::INFINITY,
                        false,
                        String::new,
                    )?;
                    p.add_term(z, u.droop);
                }
                (d, p, LinExpr::var(ui))
            } else {
                let ds = defaults.expect("checked");
                let on = ds.delta_d[i][j];
                let dt = ds.d_t[i][j];
                let mut p = LinExpr::constant(dt);
                if on {
                    p.add(&rho, u.droop);
                }
                (LinExpr::constant(b2f(on)), p, LinExpr::constant(dt))
            };
            let name = || format!("{} power at step {j}", u.name);
            b.range(p.clone().plus(&delta, -u.p_min), 0.0, f64::INFINITY, false, name)?;
            b.range(p.clone().plus(&delta, -u.p_max), f64::NEG_INFINITY, 0.0, false, name)?;
            let prev = if j == 0 {
                LinExpr::constant(b2f(inp.delta_prev[i]))
            } else {
                vm.delta[i][j - 1].clone()
            };
            let change = delta.clone().plus(&prev, -1.0);
            if change.is_constant() {
                b.offset += g * u.switch_cost * change.constant.abs();
            } else if u.switch_cost > 0.0 {
                let s = LinExpr::var(b.var(VarKind::SwitchSlack, Some(i), j, 0.0, 1.0));
                b.range(s.clone().plus(&change, -1.0), 0.0, f64::INFINITY, false, String::new)?;
                b.range(s.clone().plus(&change, 1.0), 0.0, f64::INFINITY, false, String::new)?;
                b.linear(&s, g * u.switch_cost);
            }
            b.linear(&delta, g * u.on_cost);
            b.linear(&p, g * u.linear_cost);
            b.square(&p, g * u.quadratic_cost);
            vm.delta[i].push(delta);
            vm.p_t[i].push(p);
            vm.u_t[i].push(cmd);
        }

        for (i, u) in model.storage.iter().enumerate() {
            let (cmd, mut p) = if comm.storage[i] {
                let ui = b.var(
                    VarKind::StorageSetpoint,
                    Some(i),
                    j,
                    u.p_min - u.droop * rho_abs_j,
                    u.p_max + u.droop * rho_abs_j,
                );
                (LinExpr::var(ui), LinExpr::var(ui))
            } else {
                let d = defaults.expect("checked").d_s[i][j];
                (LinExpr::constant(d), LinExpr::constant(d))
            };
            p.add(&rho, u.droop);
            let x_now = vm.x[i][j].clone();
            // soft band penalty on the energy at the start of this step
            if x_now.is_constant() {
                let v = x_now.constant;
                let dx = (u.x_soft_min - v).max(0.0) + (v - u.x_soft_max).max(0.0);
                b.offset += g * u.band_cost * dx * dx;
            } else if u.band_cost > 0.0 {
                let lo = LinExpr::var(b.var(VarKind::BandLow, Some(i), j, 0.0, (u.x_soft_min - u.x_min).max(0.0)));
                let hi = LinExpr::var(b.var(VarKind::BandHigh, Some(i), j, 0.0, (u.x_max - u.x_soft_max).max(0.0)));
                b.range(lo.clone().plus(&x_now, 1.0), u.x_soft_min, f64::INFINITY, false, String::new)?;
                b.range(x_now.clone().plus(&hi, -1.0), f64::NEG_INFINITY, u.x_soft_max, false, String::new)?;
                b.square(&lo, g * u.band_cost);
                b.square(&hi, g * u.band_cost);
            }
            let name = || format!("{} power at step {j}", u.name);
            let x_next = if p.is_constant() {
                b.range(p.clone(), u.p_min, u.p_max, false, name)?;
                vm.charge[i].push(None);
                vm.discharge[i].push(None);
                b.square(&p, g * u.power_cost);
                let v = x_now.constant - charge_coefficient(p.constant, u.efficiency, model.ts) * p.constant;
                let xe = LinExpr::constant(v);
                // nothing the controller can do about it; the plant logs it
                b.range(xe.clone(), u.x_min, u.x_max, true, || {
                    format!("{} energy after step {j}", u.name)
                })?;
                xe
            } else {
                let pc = b.var(VarKind::Charge, Some(i), j, 0.0, (-u.p_min).max(0.0));
                let pd = b.var(VarKind::Discharge, Some(i), j, 0.0, u.p_max.max(0.0));
                let net = LinExpr::var(pd).plus(&LinExpr::var(pc), -1.0);
                b.equal(net.clone().plus(&p, -1.0), name)?;
                if u.p_min > 0.0 || u.p_max < 0.0 {
                    b.range(net.clone(), u.p_min, u.p_max, false, name)?;
                }
                if direction.contains(&(i, j)) {
                    // β = 1 allows discharging only, β = 0 charging only
                    let beta = LinExpr::var(b.var(VarKind::Direction, Some(i), j, 0.0, 1.0));
                    b.range(LinExpr::var(pd).plus(&beta, -u.p_max.max(0.0)), f64::NEG_INFINITY, 0.0, false, name)?;
                    b.range(
                        LinExpr::var(pc).plus(&beta, (-u.p_min).max(0.0)),
                        f64::NEG_INFINITY,
                        (-u.p_min).max(0.0),
                        false,
                        name,
                    )?;
                }
                vm.charge[i].push(Some(pc));
                vm.discharge[i].push(Some(pd));
                // equals a_s·p_s² whenever only one direction is active and
                // makes the split unique
                b.square(&LinExpr::var(pc), g * u.power_cost);
                b.square(&LinExpr::var(pd), g * u.power_cost);
                let xv = LinExpr::var(b.var(VarKind::Energy, Some(i), j + 1, u.x_min, u.x_max));
                let dynamics = xv
                    .clone()
                    .plus(&x_now, -1.0)
                    .plus(&LinExpr::var(pd), model.ts / u.efficiency)
                    .plus(&LinExpr::var(pc), -model.ts * u.efficiency);
                b.equal(dynamics, name)?;
                p = net;
                xv
            };
            vm.x[i].push(x_next);
            vm.p_s[i].push(p);
            vm.u_s[i].push(cmd);
        }

        let wr = &inp.forecast.w_r;
        for (i, u) in model.renewable.iter().enumerate() {
            let w = wr[i][j];
            let p = if comm.renewable[i] {
                LinExpr::var(b.var(VarKind::RenewableSetpoint, Some(i), j, u.p_min.min(w), u.p_max.min(w)))
            } else {
                let d = defaults.expect("checked").d_r[i][j];
                let p = LinExpr::constant(d.min(w));
                b.range(p.clone(), u.p_min, u.p_max, false, || {
                    format!("{} power at step {j}", u.name)
                })?;
                p
            };
            b.linear(&p, -g * u.usage_reward);
            vm.u_r[i].push(p.clone());
            vm.p_r[i].push(p);
        }

        let loads: Vec<f64> = inp.forecast.w_l.iter().map(|r| r[j]).collect();
        let mut balance = LinExpr::constant(loads.iter().sum());
        let mut full: Vec<LinExpr> = Vec::with_capacity(model.num_units() + loads.len());
        for e in vm.p_t.iter().chain(&vm.p_s).chain(&vm.p_r).map(|r| &r[j]) {
            balance.add(e, 1.0);
            full.push(e.clone());
        }
        full.extend(loads.iter().map(|&w| LinExpr::constant(w)));
        b.equal(balance, || format!("power balance at step {j}"))?;
        let net = &model.network;
        for l in 0..net.num_lines() {
            let mut flow = LinExpr::default();
            for (c, e) in full.iter().enumerate() {
                let s = net.h[(l, c)];
                if s != 0.0 {
                    flow.add(e, s);
                }
            }
            b.range(flow, net.flow_min[l], net.flow_max[l], false, || {
                format!("line {l} at step {j}")
            })?;
        }
        vm.rho.push(rho);
    }

    let n = b.lb.len();
    let mut p = DMatrix::zeros(n, n);
    for &(i, j, v) in &b.quad {
        p[(i, j)] += v;
    }
    let a_eq = DMatrix::from_fn(b.eq.len(), n, |r, c| b.eq[r].terms.get(&c).copied().unwrap_or(0.0));
    let b_eq = DVector::from_iterator(b.eq.len(), b.eq.iter().map(|e| -e.constant));
    let a_in = DMatrix::from_fn(b.ineq.len(), n, |r, c| b.ineq[r].0.terms.get(&c).copied().unwrap_or(0.0));
    let l_in = DVector::from_iterator(b.ineq.len(), b.ineq.iter().map(|r| r.1));
    let u_in = DVector::from_iterator(b.ineq.len(), b.ineq.iter().map(|r| r.2));
    let qp = QuadraticProgram::new(p, DVector::from_vec(b.q))
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, l_in, u_in)
        .with_bounds(DVector::from_vec(b.lb), DVector::from_vec(b.ub));
    vm.labels = b.labels;
    let qp = MixedBinaryQp::new(qp, b.binaries)?;
    Ok(MpcProblem {
        qp,
        vars: vm,
        offset: b.offset,
        dropped_rows: b.dropped,
        direction: direction.to_vec(),
        comm: comm.clone(),
        defaults: defaults.cloned(),
        forecast: inp.forecast.clone(),
        x0: inp.x0.to_vec(),
        delta_prev: inp.delta_prev.to_vec(),
        discount: cfg.discount,
    })
}

/// Decodes a raw decision vector and cross-checks it against the model
/// equations. Entries that charge and discharge simultaneously are reported
/// in `stats.simultaneous`.
pub fn extract_solution(
    raw: &[f64],
    problem: &MpcProblem,
    model: &MicrogridModel,
    tol: f64,
) -> Result<MpcSolution, MpcError> {
    let vm = &problem.vars;
    if raw.len() != vm.len() {
        return Err(MpcError::Dimension(format!(
            "decision vector: expected {}, found {}",
            vm.len(),
            raw.len()
        )));
    }
    let eval = |m: &Vec<Vec<LinExpr>>| -> Vec<Vec<f64>> {
        m.iter().map(|r| r.iter().map(|e| e.eval(raw)).collect()).collect()
    };
    let u_t = eval(&vm.u_t);
    let u_s = eval(&vm.u_s);
    let u_r = eval(&vm.u_r);
    let p_t = eval(&vm.p_t);
    let p_s = eval(&vm.p_s);
    let p_r = eval(&vm.p_r);
    let x = eval(&vm.x);
    let delta: Vec<Vec<bool>> = vm
        .delta
        .iter()
        .map(|r| r.iter().map(|e| e.eval(raw) > 0.5).collect())
        .collect();
    let rho: Vec<f64> = vm.rho.iter().map(|e| e.eval(raw)).collect();
    let steps = rho.len();

    let mut simultaneous = Vec::new();
    for i in 0..model.storage.len() {
        for j in 0..steps {
            if let (Some(c), Some(d)) = (vm.charge[i][j], vm.discharge[i][j]) {
                if raw[c].min(raw[d]) > tol {
                    simultaneous.push((i, j));
                }
            }
        }
    }

    // recompute powers and energies through the unit equations
    let comm = &problem.comm;
    let mut worst = 0.0f64;
    let mut cost = 0.0;
    let mut x_now = problem.x0.clone();
    let mut prev_on = problem.delta_prev.clone();
    for j in 0..steps {
        let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let cmd = SetpointCommand {
            u_t: col(&u_t),
            u_s: col(&u_s),
            u_r: col(&u_r),
            delta: delta.iter().map(|r| r[j]).collect(),
        };
        let dflt = match &problem.defaults {
            Some(d) => d.at(j).0,
            None => cmd.clone(),
        };
        let a = applied(&cmd, &dflt, comm)?;
        let w = problem.forecast.at(j);
        let pt: Vec<f64> = model
            .thermal
            .iter()
            .enumerate()
            .map(|(i, u)| if a.delta[i] { a.u_t[i] + u.droop * rho[j] } else { a.u_t[i] })
            .collect();
        let ps: Vec<f64> = model
            .storage
            .iter()
            .enumerate()
            .map(|(i, u)| a.u_s[i] + u.droop * rho[j])
            .collect();
        let pr: Vec<f64> = a.u_r.iter().zip(&w.w_r).map(|(&c, &w)| c.min(w)).collect();
        for (v, e) in pt.iter().zip(col(&p_t)).chain(ps.iter().zip(col(&p_s))).chain(pr.iter().zip(col(&p_r))) {
            worst = worst.max((v - e).abs());
        }
        let eta: Vec<f64> = model.storage.iter().map(|u| u.efficiency).collect();
        let x_next = storage_step(&x_now, &ps, &eta, model.ts)?;
        for i in 0..model.storage.len() {
            if !simultaneous.contains(&(i, j)) {
                worst = worst.max((x_next[i] - x[i][j + 1]).abs());
            }
        }
        let powers = UnitPowers {
            p_t: pt,
            p_s: ps,
            p_r: pr,
        };
        cost += problem.discount.powi(j as i32) * stage_cost(model, &powers, &a.delta, &prev_on, &x_now)?.total();
        x_now = (0..model.storage.len()).map(|i| x[i][j + 1]).collect();
        prev_on = a.delta;
    }
    if worst > CONSISTENCY_FAIL {
        return Err(MpcError::Inconsistent(format!(
            "recomputed trajectories differ by {worst:e}"
        )));
    }
    if worst > CONSISTENCY_WARN {
        log::warn!("recomputed trajectories differ by {worst:e}");
    }
    let mut qp_obj = problem.offset;
    let xv = DVector::from_column_slice(raw);
    qp_obj += problem.qp.base.objective(&xv);
    if (qp_obj - cost).abs() > 1e-6 * cost.abs().max(1.0) && simultaneous.is_empty() {
        log::warn!("objective {qp_obj} differs from recomputed cost {cost}");
    }
    Ok(MpcSolution {
        u_t,
        u_s,
        u_r,
        delta,
        rho,
        p_t,
        p_s,
        p_r,
        x,
        objective: qp_obj,
        stats: SolveStats {
            binaries: problem.qp.binary_indices.len(),
            direction_binaries: problem.direction.len(),
            dropped_rows: problem.dropped_rows,
            simultaneous,
            ..SolveStats::default()
        },
    })
}

fn hint_for(problem: &MpcProblem, delta_hint: &[Vec<bool>]) -> Vec<f64> {
    problem
        .qp
        .binary_indices
        .iter()
        .map(|&k| {
            let l = problem.vars.labels[k];
            match (l.kind, l.unit) {
                (VarKind::Switch, Some(i)) => delta_hint
                    .get(i)
                    .and_then(|r| r.get(l.step).or(r.last()))
                    .map_or(0.0, |&b| b2f(b)),
                _ => 0.0,
            }
        })
        .collect()
}

pub fn solve_mpc(model: &MicrogridModel, cfg: &MpcConfig, inp: &MpcInputs) -> Result<MpcSolution, MpcError> {
    let mut direction: Vec<(usize, usize)> = Vec::new();
    let mut nodes = 0;
    let mut iterations = 0;
    for _ in 0..MAX_DIRECTION_ROUNDS {
        let problem = build_problem(model, cfg, inp, &direction)?;
        let mut bnb = cfg.bnb.clone();
        if !direction.is_empty() {
            bnb.node_limit = bnb.node_limit.min(cfg.direction_node_limit);
        }
        if let Some(hint) = inp.delta_hint {
            bnb.incumbent_hint = Some(hint_for(&problem, hint));
        }
        let sol = solve_miqp(&problem.qp, &bnb)?;
        nodes += sol.nodes;
        iterations += sol.qp_iterations;
        let raw = match (&sol.x, sol.status) {
            (Some(x), _) => x,
            (None, BnbStatus::NodeLimit) => return Err(MpcError::NodeLimit),
            (None, _) => return Err(MpcError::Infeasible),
        };
        if sol.status == BnbStatus::NodeLimit {
            log::warn!("node limit reached; using best plan found (gap {:e})", sol.gap);
        }
        let mut out = extract_solution(raw.as_slice(), &problem, model, cfg.simultaneity_tol)?;
        out.stats.nodes = nodes;
        out.stats.qp_iterations = iterations;
        out.stats.status = Some(sol.status);
        let fresh: Vec<(usize, usize)> = out
            .stats
            .simultaneous
            .iter()
            .copied()
            .filter(|e| !direction.contains(e))
            .collect();
        if fresh.is_empty() {
            if !out.stats.simultaneous.is_empty() {
                log::warn!("simultaneous charge and discharge persists at {:?}", out.stats.simultaneous);
            }
            return Ok(out);
        }
        direction.extend(fresh);
        direction.sort_unstable();
    }
    Err(MpcError::Inconsistent("charge direction did not settle".into()))
}
