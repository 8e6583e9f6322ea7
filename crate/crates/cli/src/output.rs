//! Result files: `trace.csv`, `solver_stats.csv` and `kpis.json`.

use std::fs;
use std::io;
use std::path::Path;

use mgfall_core::model::MicrogridModel;
use mgfall_core::sim::{SimulationLog, StepRecord};
use serde::Serialize;

fn names<'a>(prefix: &str, units: impl Iterator<Item = &'a String>) -> Vec<String> {
    units.map(|n| format!("{prefix}{n}")).collect()
}

/// Trace columns in file order.
pub fn trace_header(m: &MicrogridModel) -> Vec<String> {
    let t = || m.thermal.iter().map(|u| &u.name);
    let s = || m.storage.iter().map(|u| &u.name);
    let r = || m.renewable.iter().map(|u| &u.name);
    let l = || m.loads.iter().map(|u| &u.name);
    let mut h = vec!["step".to_string()];
    h.extend(names("zeta_", t().chain(s()).chain(r())));
    h.extend(names("w_r_", r()));
    h.extend(names("w_l_", l()));
    h.extend(names("fc_w_r_", r()));
    h.extend(names("fc_w_l_", l()));
    h.extend(names("plan_u_t_", t()));
    h.extend(names("plan_delta_", t()));
    h.extend(names("plan_u_s_", s()));
    h.extend(names("plan_u_r_", r()));
    h.extend(names("u_t_", t()));
    h.extend(names("delta_", t()));
    h.extend(names("u_s_", s()));
    h.extend(names("u_r_", r()));
    h.extend(names("p_t_", t()));
    h.extend(names("p_s_", s()));
    h.extend(names("p_r_", r()));
    h.push("rho_true".into());
    h.push("rho_est".into());
    h.extend(names("x_", s()));
    h.extend(names("x_est_", s()));
    h.extend(names("x_next_", s()));
    h.extend(["residual", "objective", "violations"].map(String::from));
    h
}

enum Cell {
    Int(usize),
    Num(f64),
}

fn trace_cells(r: &StepRecord) -> Vec<Cell> {
    let nums = |v: &[f64]| v.iter().map(|&x| Cell::Num(x)).collect::<Vec<_>>();
    let flags = |v: &[bool]| v.iter().map(|&b| Cell::Int(usize::from(b))).collect::<Vec<_>>();
    let mut c = vec![Cell::Int(r.step)];
    c.extend(flags(&r.comm.thermal));
    c.extend(flags(&r.comm.storage));
    c.extend(flags(&r.comm.renewable));
    c.extend(nums(&r.w.w_r));
    c.extend(nums(&r.w.w_l));
    c.extend(nums(&r.forecast.w_r));
    c.extend(nums(&r.forecast.w_l));
    c.extend(nums(&r.planned.u_t));
    c.extend(flags(&r.planned.delta));
    c.extend(nums(&r.planned.u_s));
    c.extend(nums(&r.planned.u_r));
    c.extend(nums(&r.applied.u_t));
    c.extend(flags(&r.applied.delta));
    c.extend(nums(&r.applied.u_s));
    c.extend(nums(&r.applied.u_r));
    c.extend(nums(&r.powers.p_t));
    c.extend(nums(&r.powers.p_s));
    c.extend(nums(&r.powers.p_r));
    c.push(Cell::Num(r.rho_true));
    c.push(Cell::Num(r.rho_est));
    c.extend(nums(&r.x));
    c.extend(nums(&r.x_est));
    c.extend(nums(&r.x_next));
    c.push(Cell::Num(r.residual));
    c.push(Cell::Num(r.objective));
    c.push(Cell::Int(r.violations.len()));
    c
}

/// Numeric trace row, the values `trace.csv` prints.
pub fn trace_row(r: &StepRecord) -> Vec<f64> {
    trace_cells(r)
        .into_iter()
        .map(|c| match c {
            Cell::Int(i) => i as f64,
            Cell::Num(x) => x,
        })
        .collect()
}

/// 12 significant digits, exponent form, independent of locale.
fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

pub fn write_trace(path: &Path, log: &SimulationLog, model: &MicrogridModel) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(trace_header(model)).map_err(csv_err)?;
    for r in &log.records {
        let row: Vec<String> = trace_cells(r)
            .into_iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Num(x) => fmt_num(x),
            })
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_solver_stats(path: &Path, log: &SimulationLog) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "step",
        "status",
        "nodes",
        "qp_iterations",
        "binaries",
        "direction_binaries",
        "dropped_rows",
        "simultaneous",
    ])
    .map_err(csv_err)?;
    for r in &log.records {
        let s = &r.stats;
        let status = s.status.map_or("none".to_string(), |st| format!("{st:?}").to_lowercase());
        w.write_record([
            r.step.to_string(),
            status,
            s.nodes.to_string(),
            s.qp_iterations.to_string(),
            s.binaries.to_string(),
            s.direction_binaries.to_string(),
            s.dropped_rows.to_string(),
            s.simultaneous.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Writes `trace.csv` and `solver_stats.csv` into `dir`, creating it.
pub fn write_log(log: &SimulationLog, model: &MicrogridModel, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_trace(&dir.join("trace.csv"), log, model)?;
    write_solver_stats(&dir.join("solver_stats.csv"), log)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunKpis {
    pub controller: String,
    pub forecaster: String,
    pub cf_windows: usize,
    pub steps: usize,
    pub wastage_puh: f64,
    pub thermal_puh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct KpiFile {
    pub scenario: String,
    pub ts: f64,
    /// keyed by run label (`reference`, `standard`, `enhanced`, ...)
    pub runs: std::collections::BTreeMap<String, RunKpis>,
}

/// `runs` pairs a label with its log and the number of CF windows it ran
/// with.
pub fn kpi_file(scenario: &str, runs: &[(&str, &SimulationLog, usize)]) -> KpiFile {
    KpiFile {
        scenario: scenario.to_string(),
        ts: runs.first().map_or(0.0, |r| r.1.ts),
        runs: runs
            .iter()
            .map(|(label, log, n)| {
                (
                    label.to_string(),
                    RunKpis {
                        controller: log.controller.clone(),
                        forecaster: log.forecaster.clone(),
                        cf_windows: *n,
                        steps: log.records.len(),
                        wastage_puh: log.kpis.wastage_puh,
                        thermal_puh: log.kpis.thermal_puh,
                    },
                )
            })
            .collect(),
    }
}

pub fn write_kpis(path: &Path, kpis: &KpiFile) -> io::Result<()> {
    let text = serde_json::to_string_pretty(kpis).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_trace(path: &Path) -> io::Result<Trace> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("{v:?}"))))
            .collect::<io::Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Trace { header, rows })
}
