//! Closed-loop simulation: a droop-balanced plant driven by the EMS, with
//! scheduled communication failures.

use std::sync::Arc;

use thiserror::Error;

use crate::controller::{controllers, Controller};
use crate::forecast::{forecasters, ForecastError, Forecaster, Profile};
use crate::model::{
    check_operational_limits, com_apply, droop_capacity, effective_switch, power_balance_residual, renewable_power,
    storage_power, storage_step, thermal_power, CommStatus, MicrogridModel, ModelError, PlantState, SetpointCommand,
    UncertaintySample, UnitKind, UnitPowers, UnitRef, Violation,
};
use crate::mpc::{
    estimate_rho, estimate_storage_energy, fallback_schedule, DefaultSchedule, MpcConfig, MpcError,
    MpcInputs, MpcSolution, SolveStats,
};
use crate::registry::Registry;

/// Tolerance for logging limit violations.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no {kind} named {name:?} (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("forecast failed at step {step}: {source}")]
    Forecast { step: usize, source: ForecastError },
    #[error("controller failed at step {step}: {source}")]
    Solver {
        step: usize,
        source: MpcError,
        dump: Box<String>,
    },
    #[error("estimator failed at step {step}: {source}")]
    Estimator { step: usize, source: MpcError },
    #[error("no droop capacity left at step {step}")]
    NoDroop { step: usize },
}

/// Half-open step interval `[start, end)` during which `unit` cannot be
/// reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfWindow {
    pub unit: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: MicrogridModel,
    pub profile: Profile,
    pub cf_windows: Vec<CfWindow>,
    pub controller: String,
    pub forecaster: String,
    pub mpc: MpcConfig,
    pub initial: PlantState,
    pub steps: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        self.model.validate()?;
        self.mpc.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        let m = &self.model;
        let need = self.steps + self.mpc.horizon;
        if self.steps > 0 && self.profile.len() < need {
            return bad(format!(
                "profile has {} rows, run of {} steps with horizon {} needs {}",
                self.profile.len(),
                self.steps,
                self.mpc.horizon,
                need
            ));
        }
        for (k, s) in self.profile.samples.iter().enumerate() {
            if s.w_r.len() != m.renewable.len() || s.w_l.len() != m.loads.len() {
                return bad(format!("profile row {k} does not match the unit counts"));
            }
            if s.w_r.iter().chain(&s.w_l).any(|v| !v.is_finite()) {
                return bad(format!("profile row {k} has a non-finite value"));
            }
        }
        for (i, w) in self.cf_windows.iter().enumerate() {
            if m.find_unit(&w.unit).is_none() {
                return bad(format!("cf_windows[{i}]: unknown unit {:?}", w.unit));
            }
            if w.start == 0 {
                return bad(format!("cf_windows[{i}]: a window cannot start before the first plan"));
            }
            if !(w.start < w.end && w.end <= self.steps) {
                return bad(format!(
                    "cf_windows[{i}]: [{}, {}) is not a nonempty interval within {} steps",
                    w.start, w.end, self.steps
                ));
            }
        }
        if self.initial.x.len() != m.storage.len() || self.initial.delta_prev.len() != m.thermal.len() {
            return bad("initial state does not match the unit counts".into());
        }
        for (i, (u, &x)) in m.storage.iter().zip(&self.initial.x).enumerate() {
            if !(u.x_min <= x && x <= u.x_max) {
                return bad(format!("initial.x[{i}] = {x} outside [{}, {}]", u.x_min, u.x_max));
            }
        }
        Ok(())
    }
}

pub fn inject_comm(scenario: &Scenario, k: usize) -> Result<CommStatus, SimError> {
    let mut comm = CommStatus::all_up(&scenario.model);
    for w in &scenario.cf_windows {
        let r = scenario
            .model
            .find_unit(&w.unit)
            .ok_or_else(|| SimError::Scenario(format!("unknown unit {:?}", w.unit)))?;
        if w.start <= k && k < w.end {
            comm.set(r, false);
        }
    }
    Ok(comm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub next: PlantState,
    pub powers: UnitPowers,
    pub rho: f64,
    pub delta: Vec<bool>,
    pub residual: f64,
    pub violations: Vec<Violation>,
}

/// Advances the plant one step. The droop signal is the one that closes the
/// power balance; limits are reported, never enforced.
pub fn plant_step(
    model: &MicrogridModel,
    state: &PlantState,
    cmds: &SetpointCommand,
    defaults: &SetpointCommand,
    comm: &CommStatus,
    w: &UncertaintySample,
) -> Result<PlantStep, ModelError> {
    let chi_t: Vec<f64> = model.thermal.iter().map(|u| u.droop).collect();
    let chi_s: Vec<f64> = model.storage.iter().map(|u| u.droop).collect();
    let delta = effective_switch(&cmds.delta, &defaults.delta, &comm.thermal)?;
    let p_r = renewable_power(&cmds.u_r, &defaults.u_r, &comm.renewable, &w.w_r)?;
    let thermal = |rho| thermal_power(&cmds.u_t, &defaults.u_t, &cmds.delta, &defaults.delta, &comm.thermal, &chi_t, rho);
    let storage = |rho| storage_power(&cmds.u_s, &defaults.u_s, &comm.storage, &chi_s, rho);
    let r0 = power_balance_residual(&thermal(0.0)?, &storage(0.0)?, &p_r, &w.w_l);
    let chi = droop_capacity(model, &delta);
    if !(chi > 0.0) {
        return Err(ModelError::NoDroop(chi));
    }
    let rho = -r0 / chi;
    let powers = UnitPowers {
        p_t: thermal(rho)?,
        p_s: storage(rho)?,
        p_r,
    };
    let residual = power_balance_residual(&powers.p_t, &powers.p_s, &powers.p_r, &w.w_l);
    let eta: Vec<f64> = model.storage.iter().map(|u| u.efficiency).collect();
    let x = storage_step(&state.x, &powers.p_s, &eta, model.ts)?;
    let violations = check_operational_limits(model, &powers, &delta, &x, &w.w_l, VIOLATION_TOL);
    Ok(PlantStep {
        next: PlantState {
            x,
            delta_prev: delta.clone(),
        },
        powers,
        rho,
        delta,
        residual,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub comm: CommStatus,
    /// First step of the plan, whether or not it reached the unit.
    pub planned: SetpointCommand,
    /// Set-points the units actually ran.
    pub applied: SetpointCommand,
    pub w: UncertaintySample,
    pub forecast: UncertaintySample,
    pub powers: UnitPowers,
    pub delta: Vec<bool>,
    pub rho_true: f64,
    pub rho_est: f64,
    /// True energy at the start of the step.
    pub x: Vec<f64>,
    /// Energy the EMS planned with at the start of the step.
    pub x_est: Vec<f64>,
    pub x_next: Vec<f64>,
    pub residual: f64,
    pub objective: f64,
    pub stats: SolveStats,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kpis {
    pub wastage_puh: f64,
    pub thermal_puh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub scenario: String,
    pub controller: String,
    pub forecaster: String,
    pub ts: f64,
    pub records: Vec<StepRecord>,
    pub kpis: Kpis,
}

pub fn kpi_summary(records: &[StepRecord], ts: f64) -> Kpis {
    let mut k = Kpis::default();
    for r in records {
        k.wastage_puh += r.w.w_r.iter().zip(&r.powers.p_r).map(|(w, p)| ts * (w - p)).sum::<f64>();
        k.thermal_puh += r.powers.p_t.iter().map(|p| ts * p).sum::<f64>();
    }
    k
}

/// Controller and forecaster registries a run looks names up in.
pub struct Strategies {
    pub controllers: Registry<dyn Controller>,
    pub forecasters: Registry<dyn Forecaster>,
}

impl Default for Strategies {
    fn default() -> Self {
        Self {
            controllers: controllers(),
            forecasters: forecasters(),
        }
    }
}

impl Strategies {
    pub fn controller(&self, name: &str) -> Result<Box<dyn Controller>, SimError> {
        self.controllers.create(name).ok_or_else(|| SimError::UnknownStrategy {
            kind: "controller",
            name: name.into(),
            known: self.controllers.names().join(", "),
        })
    }

    pub fn forecaster(&self, name: &str) -> Result<Box<dyn Forecaster>, SimError> {
        self.forecasters.create(name).ok_or_else(|| SimError::UnknownStrategy {
            kind: "forecaster",
            name: name.into(),
            known: self.forecasters.names().join(", "),
        })
    }
}

pub fn run_closed_loop(scenario: &Scenario) -> Result<SimulationLog, SimError> {
    run_closed_loop_with(scenario, &Strategies::default())
}

fn units(model: &MicrogridModel) -> Vec<UnitRef> {
    let mk = |kind, n| (0..n).map(move |index| UnitRef { kind, index });
    mk(UnitKind::Thermal, model.thermal.len())
        .chain(mk(UnitKind::Storage, model.storage.len()))
        .chain(mk(UnitKind::Renewable, model.renewable.len()))
        .collect()
}

/// Defaults of every unit without communication, each taken from the last
/// plan that reached it.
fn assemble_defaults(
    model: &MicrogridModel,
    comm: &CommStatus,
    contact: &[(UnitRef, Option<(usize, Arc<MpcSolution>)>)],
    k: usize,
    h: usize,
) -> Result<DefaultSchedule, SimError> {
    let zeros = |n: usize| vec![vec![0.0; h + 1]; n];
    let mut d = DefaultSchedule {
        d_t: zeros(model.thermal.len()),
        d_s: zeros(model.storage.len()),
        d_r: zeros(model.renewable.len()),
        delta_d: vec![vec![false; h + 1]; model.thermal.len()],
        terminal_hold: false,
    };
    for (r, last) in contact {
        if comm.get(*r) {
            continue;
        }
        let (k_last, plan) = last
            .as_ref()
            .ok_or_else(|| SimError::Scenario(format!("{} never received a plan", model.unit_name(*r))))?;
        let f = fallback_schedule(plan, k - k_last, h);
        d.terminal_hold |= f.terminal_hold;
        let i = r.index;
        match r.kind {
            UnitKind::Thermal => {
                d.d_t[i] = f.d_t[i].clone();
                d.delta_d[i] = f.delta_d[i].clone();
            }
            UnitKind::Storage => d.d_s[i] = f.d_s[i].clone(),
            UnitKind::Renewable => d.d_r[i] = f.d_r[i].clone(),
        }
    }
    Ok(d)
}

pub fn run_closed_loop_with(scenario: &Scenario, strategies: &Strategies) -> Result<SimulationLog, SimError> {
    scenario.validate()?;
    let model = &scenario.model;
    let h = scenario.mpc.horizon;
    let controller = strategies.controller(&scenario.controller)?;
    let forecaster = strategies.forecaster(&scenario.forecaster)?;

    let mut contact: Vec<(UnitRef, Option<(usize, Arc<MpcSolution>)>)> =
        units(model).into_iter().map(|r| (r, None)).collect();
    let mut state = scenario.initial.clone();
    let mut belief = state.x.clone();
    let mut prev_plan: Option<Arc<MpcSolution>> = None;
    let mut records: Vec<StepRecord> = Vec::with_capacity(scenario.steps);

    for k in 0..scenario.steps {
        let comm = inject_comm(scenario, k)?;
        for (i, up) in comm.storage.iter().enumerate() {
            if *up {
                belief[i] = state.x[i];
            }
        }
        let forecast = forecaster
            .forecast(&scenario.profile, k, h)
            .map_err(|source| SimError::Forecast { step: k, source })?;
        let defaults = if comm.all() {
            None
        } else {
            Some(assemble_defaults(model, &comm, &contact, k, h)?)
        };
        let hint: Option<Vec<Vec<bool>>> = prev_plan.as_ref().map(|p| {
            p.delta
                .iter()
                .map(|row| (0..=h).map(|j| row[(j + 1).min(row.len() - 1)]).collect())
                .collect()
        });
        let inputs = MpcInputs {
            x0: &belief,
            delta_prev: &state.delta_prev,
            forecast: &forecast,
            comm: &comm,
            defaults: defaults.as_ref(),
            delta_hint: hint.as_deref(),
        };
        let plan = controller
            .plan(model, &scenario.mpc, &inputs)
            .map_err(|source| SimError::Solver {
                step: k,
                source,
                dump: Box::new(format!("{inputs:#?}")),
            })?;
        let plan = Arc::new(plan);
        log::debug!(
            "step {k}: objective {:.6} nodes {} iterations {}",
            plan.objective,
            plan.stats.nodes,
            plan.stats.qp_iterations
        );

        let planned = plan.command(0);
        let default_cmd = match &defaults {
            Some(d) => d.at(0).0,
            None => planned.clone(),
        };
        let w = scenario.profile.samples[k].clone();
        let step = plant_step(model, &state, &planned, &default_cmd, &comm, &w).map_err(|e| match e {
            ModelError::NoDroop(_) => SimError::NoDroop { step: k },
            e => SimError::Model(e),
        })?;

        // What the EMS will reconstruct at the next step from measurements.
        let forecast0 = forecast.at(0);
        let rho_est = estimate_rho(model, &forecast0, &w, &planned, &default_cmd, &comm)
            .map_err(|source| SimError::Estimator { step: k, source })?;
        let applied_s = com_apply(&planned.u_s, &default_cmd.u_s, &comm.storage)?;
        let next_belief = estimate_storage_energy(model, &belief, &applied_s, rho_est)
            .map_err(|source| SimError::Estimator { step: k, source })?;

        let applied = SetpointCommand {
            u_t: com_apply(&planned.u_t, &default_cmd.u_t, &comm.thermal)?,
            u_s: applied_s,
            u_r: com_apply(&planned.u_r, &default_cmd.u_r, &comm.renewable)?,
            delta: step.delta.clone(),
        };
        for (r, last) in contact.iter_mut() {
            if comm.get(*r) {
                *last = Some((k, plan.clone()));
            }
        }
        records.push(StepRecord {
            step: k,
            comm,
            planned,
            applied,
            w,
            forecast: forecast0,
            powers: step.powers,
            delta: step.delta,
            rho_true: step.rho,
            rho_est,
            x: state.x.clone(),
            x_est: belief.clone(),
            x_next: step.next.x.clone(),
            residual: step.residual,
            objective: plan.objective,
            stats: plan.stats.clone(),
            violations: step.violations,
        });
        for v in &records[k].violations {
            log::warn!("step {k}: {} limit {} off by {:.3e}", v.kind.label(), v.index, v.margin);
        }
        state = step.next;
        belief = next_belief;
        prev_plan = Some(plan);
    }

    let kpis = kpi_summary(&records, model.ts);
    Ok(SimulationLog {
        scenario: scenario.name.clone(),
        controller: controller.name().to_string(),
        forecaster: forecaster.name().to_string(),
        ts: model.ts,
        records,
        kpis,
    })
}
