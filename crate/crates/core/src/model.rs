//! Static microgrid data and the per-step unit, balance, limit and cost
//! equations. Everything here is a pure function of its arguments.
//!
//! Unit powers follow the generator sign convention: injections are
//! positive, loads and storage charging negative.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{unit}: {reason}")]
    InvalidParameter { unit: String, reason: String },
    #[error("total droop gain is not positive ({0})")]
    NoDroop(f64),
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::LengthMismatch { what, expected, found })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalUnit {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub droop: f64,
    /// cost per switching event
    pub switch_cost: f64,
    /// cost per step while on
    pub on_cost: f64,
    pub linear_cost: f64,
    pub quadratic_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageUnit {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub x_soft_min: f64,
    pub x_soft_max: f64,
    pub droop: f64,
    pub efficiency: f64,
    pub power_cost: f64,
    /// weight on the squared excursion outside the soft band
    pub band_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewableUnit {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub usage_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub name: String,
}

/// Line flows are `H · [p_t; p_s; p_r; w_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub h: DMatrix<f64>,
    pub flow_min: Vec<f64>,
    pub flow_max: Vec<f64>,
}

impl Network {
    pub fn num_lines(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridModel {
    pub thermal: Vec<ThermalUnit>,
    pub storage: Vec<StorageUnit>,
    pub renewable: Vec<RenewableUnit>,
    pub loads: Vec<Load>,
    pub network: Network,
    /// sampling time in hours
    pub ts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitKind {
    Thermal,
    Storage,
    Renewable,
}

impl UnitKind {
    pub fn label(self) -> &'static str {
        match self {
            UnitKind::Thermal => "thermal",
            UnitKind::Storage => "storage",
            UnitKind::Renewable => "renewable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitRef {
    pub kind: UnitKind,
    pub index: usize,
}

impl MicrogridModel {
    pub fn num_units(&self) -> usize {
        self.thermal.len() + self.storage.len() + self.renewable.len()
    }

    /// Looks a unit up by name across all unit kinds.
    pub fn find_unit(&self, name: &str) -> Option<UnitRef> {
        let found = |kind, index: Option<usize>| index.map(|index| UnitRef { kind, index });
        found(UnitKind::Thermal, self.thermal.iter().position(|u| u.name == name))
            .or_else(|| found(UnitKind::Storage, self.storage.iter().position(|u| u.name == name)))
            .or_else(|| found(UnitKind::Renewable, self.renewable.iter().position(|u| u.name == name)))
    }

    pub fn unit_name(&self, r: UnitRef) -> &str {
        match r.kind {
            UnitKind::Thermal => &self.thermal[r.index].name,
            UnitKind::Storage => &self.storage[r.index].name,
            UnitKind::Renewable => &self.renewable[r.index].name,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |unit: &str, reason: &str| {
            Err(ModelError::InvalidParameter {
                unit: unit.to_string(),
                reason: reason.to_string(),
            })
        };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        for u in &self.thermal {
            if !finite(&[u.p_min, u.p_max, u.droop, u.switch_cost, u.on_cost, u.linear_cost, u.quadratic_cost]) {
                return bad(&u.name, "non-finite parameter");
            }
            if !(0.0 < u.p_min && u.p_min <= u.p_max) {
                return bad(&u.name, "requires 0 < p_min <= p_max");
            }
            if u.droop <= 0.0 {
                return bad(&u.name, "droop gain must be positive");
            }
            if u.on_cost <= 0.0 || u.linear_cost <= 0.0 || u.quadratic_cost <= 0.0 || u.switch_cost < 0.0 {
                return bad(&u.name, "cost weights must be positive (switching cost nonnegative)");
            }
        }
        for u in &self.storage {
            if !finite(&[
                u.p_min,
                u.p_max,
                u.x_min,
                u.x_max,
                u.x_soft_min,
                u.x_soft_max,
                u.droop,
                u.efficiency,
                u.power_cost,
                u.band_cost,
            ]) {
                return bad(&u.name, "non-finite parameter");
            }
            if u.p_min > u.p_max {
                return bad(&u.name, "requires p_min <= p_max");
            }
            if !(u.x_min <= u.x_soft_min && u.x_soft_min <= u.x_soft_max && u.x_soft_max <= u.x_max) {
                return bad(&u.name, "requires x_min <= x_soft_min <= x_soft_max <= x_max");
            }
            if u.droop <= 0.0 {
                return bad(&u.name, "droop gain must be positive");
            }
            if !(u.efficiency > 0.0 && u.efficiency <= 1.0) {
                return bad(&u.name, "efficiency must lie in (0, 1]");
            }
            if u.power_cost < 0.0 || u.band_cost < 0.0 {
                return bad(&u.name, "cost weights must be nonnegative");
            }
        }
        for u in &self.renewable {
            if !finite(&[u.p_min, u.p_max, u.usage_reward]) {
                return bad(&u.name, "non-finite parameter");
            }
            if !(0.0 <= u.p_min && u.p_min <= u.p_max) {
                return bad(&u.name, "requires 0 <= p_min <= p_max");
            }
            if u.usage_reward < 0.0 {
                return bad(&u.name, "usage reward must be nonnegative");
            }
        }
        let mut names: Vec<&str> = self
            .thermal
            .iter()
            .map(|u| u.name.as_str())
            .chain(self.storage.iter().map(|u| u.name.as_str()))
            .chain(self.renewable.iter().map(|u| u.name.as_str()))
            .chain(self.loads.iter().map(|u| u.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(w[0], "unit names must be unique");
        }
        let net = &self.network;
        check_len("network columns", self.num_units() + self.loads.len(), net.h.ncols())?;
        check_len("line flow_min", net.h.nrows(), net.flow_min.len())?;
        check_len("line flow_max", net.h.nrows(), net.flow_max.len())?;
        if net.h.iter().any(|v| !v.is_finite()) {
            return bad("network", "non-finite sensitivity entry");
        }
        if (0..net.h.nrows()).any(|i| !(net.flow_min[i] <= net.flow_max[i])) {
            return bad("network", "requires flow_min <= flow_max on every line");
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("model", "sampling time must be positive");
        }
        Ok(())
    }
}

/// Whether each unit currently talks to the EMS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommStatus {
    pub thermal: Vec<bool>,
    pub storage: Vec<bool>,
    pub renewable: Vec<bool>,
}

impl CommStatus {
    pub fn all_up(model: &MicrogridModel) -> Self {
        Self {
            thermal: vec![true; model.thermal.len()],
            storage: vec![true; model.storage.len()],
            renewable: vec![true; model.renewable.len()],
        }
    }

    pub fn get(&self, r: UnitRef) -> bool {
        match r.kind {
            UnitKind::Thermal => self.thermal[r.index],
            UnitKind::Storage => self.storage[r.index],
            UnitKind::Renewable => self.renewable[r.index],
        }
    }

    pub fn set(&mut self, r: UnitRef, up: bool) {
        match r.kind {
            UnitKind::Thermal => self.thermal[r.index] = up,
            UnitKind::Storage => self.storage[r.index] = up,
            UnitKind::Renewable => self.renewable[r.index] = up,
        }
    }

    pub fn all(&self) -> bool {
        self.thermal.iter().chain(&self.storage).chain(&self.renewable).all(|&z| z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetpointCommand {
    pub u_t: Vec<f64>,
    pub u_s: Vec<f64>,
    pub u_r: Vec<f64>,
    pub delta: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySample {
    pub w_r: Vec<f64>,
    pub w_l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub delta_prev: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnitPowers {
    pub p_t: Vec<f64>,
    pub p_s: Vec<f64>,
    pub p_r: Vec<f64>,
}

/// `(1 − ζ)·d + ζ·u`, i.e. the set-point when communicating, else the default.
pub fn com_apply(u: &[f64], d: &[f64], zeta: &[bool]) -> Result<Vec<f64>, ModelError> {
    check_len("default vector", u.len(), d.len())?;
    check_len("comm status", u.len(), zeta.len())?;
    Ok(u.iter().zip(d).zip(zeta).map(|((&u, &d), &z)| if z { u } else { d }).collect())
}

fn com_bool(u: &[bool], d: &[bool], zeta: &[bool]) -> Result<Vec<bool>, ModelError> {
    check_len("default switch vector", u.len(), d.len())?;
    check_len("comm status", u.len(), zeta.len())?;
    Ok(u.iter().zip(d).zip(zeta).map(|((&u, &d), &z)| if z { u } else { d }).collect())
}

pub fn renewable_power(u_r: &[f64], d_r: &[f64], zeta: &[bool], w_r: &[f64]) -> Result<Vec<f64>, ModelError> {
    let c = com_apply(u_r, d_r, zeta)?;
    check_len("available renewable power", c.len(), w_r.len())?;
    Ok(c.iter().zip(w_r).map(|(&c, &w)| c.min(w)).collect())
}

pub fn storage_power(u_s: &[f64], d_s: &[f64], zeta: &[bool], droop: &[f64], rho: f64) -> Result<Vec<f64>, ModelError> {
    let c = com_apply(u_s, d_s, zeta)?;
    check_len("storage droop gains", c.len(), droop.len())?;
    Ok(c.iter().zip(droop).map(|(&c, &chi)| c + chi * rho).collect())
}

/// Effective switch states `com(δ, δ_d, ζ)`.
pub fn effective_switch(delta: &[bool], delta_d: &[bool], zeta: &[bool]) -> Result<Vec<bool>, ModelError> {
    com_bool(delta, delta_d, zeta)
}

#[allow(clippy::too_many_arguments)]
pub fn thermal_power(
    u_t: &[f64],
    d_t: &[f64],
    delta: &[bool],
    delta_d: &[bool],
    zeta: &[bool],
    droop: &[f64],
    rho: f64,
) -> Result<Vec<f64>, ModelError> {
    let c = com_apply(u_t, d_t, zeta)?;
    let on = com_bool(delta, delta_d, zeta)?;
    check_len("thermal droop gains", c.len(), droop.len())?;
    Ok((0..c.len()).map(|i| if on[i] { c[i] + droop[i] * rho } else { c[i] }).collect())
}

pub fn power_balance_residual(p_t: &[f64], p_s: &[f64], p_r: &[f64], w_l: &[f64]) -> f64 {
    p_t.iter().sum::<f64>() + p_s.iter().sum::<f64>() + p_r.iter().sum::<f64>() + w_l.iter().sum::<f64>()
}

/// Energy drawn per unit of power over one step: `T_s·η` while charging
/// (negative power), `T_s/η` otherwise.
pub fn charge_coefficient(p: f64, eta: f64, ts: f64) -> f64 {
    if p < 0.0 {
        ts * eta
    } else {
        ts / eta
    }
}

pub fn storage_step(x: &[f64], p_s: &[f64], eta: &[f64], ts: f64) -> Result<Vec<f64>, ModelError> {
    check_len("storage powers", x.len(), p_s.len())?;
    check_len("storage efficiencies", x.len(), eta.len())?;
    Ok((0..x.len()).map(|i| x[i] - charge_coefficient(p_s[i], eta[i], ts) * p_s[i]).collect())
}

/// Total droop gain of the units taking part in local control.
pub fn droop_capacity(model: &MicrogridModel, effective_on: &[bool]) -> f64 {
    let t: f64 = model
        .thermal
        .iter()
        .zip(effective_on)
        .filter(|(_, &on)| on)
        .map(|(u, _)| u.droop)
        .sum();
    t + model.storage.iter().map(|u| u.droop).sum::<f64>()
}

/// Line flows `H · [p_t; p_s; p_r; w_l]`.
pub fn line_flows(model: &MicrogridModel, p: &UnitPowers, w_l: &[f64]) -> Vec<f64> {
    let full: Vec<f64> = p.p_t.iter().chain(&p.p_s).chain(&p.p_r).chain(w_l).copied().collect();
    let h = &model.network.h;
    (0..h.nrows())
        .map(|i| (0..h.ncols()).map(|j| h[(i, j)] * full[j]).sum())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LimitKind {
    StoragePower,
    RenewablePower,
    ThermalPower,
    Energy,
    LineFlow,
}

impl LimitKind {
    pub fn label(self) -> &'static str {
        match self {
            LimitKind::StoragePower => "storage_power",
            LimitKind::RenewablePower => "renewable_power",
            LimitKind::ThermalPower => "thermal_power",
            LimitKind::Energy => "energy",
            LimitKind::LineFlow => "line_flow",
        }
    }
}

/// A violated limit. `margin` is the value minus the violated bound:
/// negative below a minimum, positive above a maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: LimitKind,
    pub index: usize,
    pub margin: f64,
}

pub fn check_operational_limits(
    model: &MicrogridModel,
    p: &UnitPowers,
    delta: &[bool],
    x: &[f64],
    w_l: &[f64],
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |kind, index, v: f64, lo: f64, hi: f64| {
        if v < lo - tol {
            out.push(Violation { kind, index, margin: v - lo });
        } else if v > hi + tol {
            out.push(Violation { kind, index, margin: v - hi });
        }
    };
    for (i, u) in model.storage.iter().enumerate() {
        check(LimitKind::StoragePower, i, p.p_s[i], u.p_min, u.p_max);
    }
    for (i, u) in model.renewable.iter().enumerate() {
        check(LimitKind::RenewablePower, i, p.p_r[i], u.p_min, u.p_max);
    }
    for (i, u) in model.thermal.iter().enumerate() {
        let (lo, hi) = if delta[i] { (u.p_min, u.p_max) } else { (0.0, 0.0) };
        check(LimitKind::ThermalPower, i, p.p_t[i], lo, hi);
    }
    for (i, u) in model.storage.iter().enumerate() {
        check(LimitKind::Energy, i, x[i], u.x_min, u.x_max);
    }
    let flows = line_flows(model, p, w_l);
    for (i, f) in flows.into_iter().enumerate() {
        check(LimitKind::LineFlow, i, f, model.network.flow_min[i], model.network.flow_max[i]);
    }
    out
}

/// Distance of each storage energy from its soft band.
pub fn band_excursion(model: &MicrogridModel, x: &[f64]) -> Vec<f64> {
    model
        .storage
        .iter()
        .zip(x)
        .map(|(u, &x)| (u.x_soft_min - x).max(0.0) + (x - u.x_soft_max).max(0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageCost {
    pub thermal: f64,
    pub storage: f64,
    pub renewable: f64,
}

impl StageCost {
    pub fn total(&self) -> f64 {
        self.thermal + self.storage + self.renewable
    }
}

pub fn stage_cost(
    model: &MicrogridModel,
    p: &UnitPowers,
    delta: &[bool],
    delta_prev: &[bool],
    x: &[f64],
) -> Result<StageCost, ModelError> {
    check_len("thermal powers", model.thermal.len(), p.p_t.len())?;
    check_len("switch states", model.thermal.len(), delta.len())?;
    check_len("previous switch states", model.thermal.len(), delta_prev.len())?;
    check_len("storage powers", model.storage.len(), p.p_s.len())?;
    check_len("storage energies", model.storage.len(), x.len())?;
    check_len("renewable powers", model.renewable.len(), p.p_r.len())?;
    let b = |v: bool| if v { 1.0f64 } else { 0.0 };
    let mut c = StageCost::default();
    for (i, u) in model.thermal.iter().enumerate() {
        let pt = p.p_t[i];
        c.thermal += u.switch_cost * (b(delta[i]) - b(delta_prev[i])).abs()
            + u.on_cost * b(delta[i])
            + u.linear_cost * pt
            + u.quadratic_cost * pt * pt;
    }
    let dx = band_excursion(model, x);
    for (i, u) in model.storage.iter().enumerate() {
        c.storage += u.power_cost * p.p_s[i] * p.p_s[i] + u.band_cost * dx[i] * dx[i];
    }
    for (i, u) in model.renewable.iter().enumerate() {
        c.renewable -= u.usage_reward * p.p_r[i];
    }
    Ok(c)
}

/// DC power-flow sensitivities. Buses are numbered from 0, `slack` absorbs
/// the injection imbalance, `lines` lists `(from, to, reactance)` and
/// `column_buses` gives the bus of each H column in unit order
/// `[thermal, storage, renewable, loads]`.
pub fn dc_sensitivities(
    n_buses: usize,
    slack: usize,
    lines: &[(usize, usize, f64)],
    column_buses: &[usize],
) -> Result<DMatrix<f64>, ModelError> {
    let bad = |reason: String| ModelError::InvalidParameter {
        unit: "network".into(),
        reason,
    };
    if slack >= n_buses {
        return Err(bad(format!("slack bus {slack} out of range")));
    }
    for &(f, t, x) in lines {
        if f >= n_buses || t >= n_buses || f == t || !(x > 0.0) {
            return Err(bad(format!("invalid line ({f}, {t}, {x})")));
        }
    }
    if let Some(&b) = column_buses.iter().find(|&&b| b >= n_buses) {
        return Err(bad(format!("bus {b} out of range")));
    }
    let mut bbus = DMatrix::<f64>::zeros(n_buses, n_buses);
    for &(f, t, x) in lines {
        let y = 1.0 / x;
        bbus[(f, f)] += y;
        bbus[(t, t)] += y;
        bbus[(f, t)] -= y;
        bbus[(t, f)] -= y;
    }
    let keep: Vec<usize> = (0..n_buses).filter(|&b| b != slack).collect();
    let reduced = DMatrix::from_fn(keep.len(), keep.len(), |i, j| bbus[(keep[i], keep[j])]);
    let inv = reduced
        .try_inverse()
        .ok_or_else(|| bad("network is not connected".into()))?;
    // angle response of every bus to a unit injection at every bus
    let mut theta = DMatrix::<f64>::zeros(n_buses, n_buses);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            theta[(i, j)] = inv[(a, b)];
        }
    }
    let mut h = DMatrix::<f64>::zeros(lines.len(), column_buses.len());
    for (l, &(f, t, x)) in lines.iter().enumerate() {
        for (c, &bus) in column_buses.iter().enumerate() {
            h[(l, c)] = (theta[(f, bus)] - theta[(t, bus)]) / x;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn com_selects_per_entry() {
        assert_eq!(com_apply(&[0.5], &[0.2], &[true]).unwrap(), vec![0.5]);
        assert_eq!(com_apply(&[0.5], &[0.2], &[false]).unwrap(), vec![0.2]);
        assert_eq!(
            com_apply(&[0.5, -0.3], &[0.0, 0.1], &[true, false]).unwrap(),
            vec![0.5, 0.1]
        );
        assert!(com_apply(&[0.5], &[0.2, 0.1], &[true]).is_err());
    }

    #[test]
    fn renewable_clipped_by_availability() {
        assert_eq!(renewable_power(&[2.0], &[0.0], &[true], &[1.4]).unwrap(), vec![1.4]);
        assert_eq!(renewable_power(&[1.0], &[0.0], &[true], &[1.4]).unwrap(), vec![1.0]);
        assert_eq!(renewable_power(&[9.0], &[0.8], &[false], &[0.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn storage_droop_ignores_comm() {
        assert!(close(storage_power(&[0.4], &[0.0], &[true], &[0.5], 0.0).unwrap()[0], 0.4));
        assert!(close(storage_power(&[0.4], &[0.0], &[true], &[0.5], 0.2).unwrap()[0], 0.5));
        assert!(close(storage_power(&[9.0], &[-0.2], &[false], &[1.0], 0.1).unwrap()[0], -0.1));
    }

    #[test]
    fn thermal_droop_only_when_on() {
        let p = thermal_power(&[0.3], &[0.0], &[true], &[false], &[true], &[0.6], 0.1).unwrap();
        assert!(close(p[0], 0.36));
        let p = thermal_power(&[0.0], &[0.0], &[false], &[true], &[true], &[0.6], 0.5).unwrap();
        assert_eq!(p[0], 0.0);
        let p = thermal_power(&[9.0], &[0.2], &[false], &[true], &[false], &[1.0], -0.1).unwrap();
        assert!(close(p[0], 0.1));
    }

    #[test]
    fn balance_sums() {
        assert_eq!(power_balance_residual(&[0.5], &[0.5], &[1.0], &[-2.0]), 0.0);
        assert_eq!(power_balance_residual(&[], &[], &[], &[]), 0.0);
        assert!(close(power_balance_residual(&[0.5], &[0.0], &[1.0], &[-2.0]), -0.5));
    }

    #[test]
    fn charge_coefficients_and_steps() {
        assert!(close(charge_coefficient(-0.4, 0.95, 0.5), 0.475));
        assert!(close(charge_coefficient(0.4, 0.95, 0.5), 0.5 / 0.95));
        assert!(close(charge_coefficient(0.0, 0.95, 0.5), 0.5 / 0.95));
        assert!(close(storage_step(&[1.3], &[0.0], &[0.95], 0.5).unwrap()[0], 1.3));
        assert!(close(storage_step(&[1.3], &[-0.4], &[0.95], 0.5).unwrap()[0], 1.49));
        assert!(close(storage_step(&[0.8], &[0.4], &[0.95], 0.5).unwrap()[0], 0.8 - 0.4 * 0.5 / 0.95));
    }

    #[test]
    fn sensitivities_of_two_bus_line() {
        // one line, slack at bus 0, injection at bus 1 flows fully 1 -> 0
        let h = dc_sensitivities(2, 0, &[(0, 1, 0.1)], &[0, 1]).unwrap();
        assert!(close(h[(0, 0)], 0.0));
        assert!(close(h[(0, 1)], -1.0));
        assert!(dc_sensitivities(3, 0, &[(0, 1, 0.1)], &[0]).is_err());
    }

    #[test]
    fn sensitivities_split_over_parallel_paths() {
        // triangle with equal reactances: injection at 1, withdrawal at slack 0
        let h = dc_sensitivities(3, 0, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], &[1]).unwrap();
        assert!(close(h[(0, 0)], -2.0 / 3.0));
        assert!(close(h[(1, 0)], 1.0 / 3.0));
        assert!(close(h[(2, 0)], 1.0 / 3.0));
    }
}
