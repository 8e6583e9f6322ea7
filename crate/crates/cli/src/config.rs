//! JSON scenario files.

use std::fs;
use std::path::{Path, PathBuf};

use mgfall_core::forecast::Profile;
use mgfall_core::model::{
    dc_sensitivities, Load, MicrogridModel, Network, PlantState, RenewableUnit, StorageUnit, ThermalUnit,
    UncertaintySample,
};
use mgfall_core::mpc::{MpcConfig, Variant};
use mgfall_core::sim::{CfWindow, Scenario};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::profiles::read_profiles;
use crate::LoadError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// sampling time in hours
    pub ts: f64,
    pub units: UnitsSection,
    pub network: NetworkSection,
    pub profiles: ProfilesSection,
    pub mpc: MpcSection,
    #[serde(default = "default_forecaster")]
    pub forecaster: String,
    #[serde(default)]
    pub cf_windows: Vec<WindowSection>,
    pub initial: InitialSection,
    pub steps: usize,
    /// Force a single B&B worker regardless of `MGFALL_THREADS`.
    #[serde(default = "yes")]
    pub deterministic: bool,
}

fn default_forecaster() -> String {
    "persistence".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsSection {
    pub thermal: Vec<ThermalSection>,
    pub storage: Vec<StorageSection>,
    pub renewable: Vec<RenewableSection>,
    pub loads: Vec<LoadSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSection {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub droop: f64,
    pub switch_cost: f64,
    pub on_cost: f64,
    pub linear_cost: f64,
    pub quadratic_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSection {
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
    pub band_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableSection {
    pub name: String,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
    pub usage_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    pub name: String,
}

/// Either `h` (one row per line, columns in unit order thermal, storage,
/// renewable, load) or a `dc` description to derive it from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc: Option<DcSection>,
    pub flow_min: Vec<f64>,
    pub flow_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSection {
    pub buses: usize,
    pub slack: usize,
    /// `[from, to, reactance]`
    pub lines: Vec<(usize, usize, f64)>,
    /// bus of each unit, in H column order
    pub unit_buses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    /// CSV path, relative to the scenario file
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// inline rows `[w_r_1 .. w_r_R, w_l_1 .. w_l_L]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    /// steps per day, used by the seasonal forecaster
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub discount: f64,
    /// controller name: `standard` or `enhanced`
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_bounds: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_node_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_limit: Option<usize>,
}

/// Half-open window, either in steps (`start`, `end`) or in wall-clock
/// time (`from`, `to`, "HH:MM" after midnight at step 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x: Vec<f64>,
    pub delta_prev: Vec<bool>,
}

/// Parses a scenario file; schema errors carry the JSON path of the field.
pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| LoadError::Schema {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let file = read_scenario_file(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    into_scenario(&file, &base)
}

fn invalid(field: &str, message: impl Into<String>) -> LoadError {
    LoadError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// "HH:MM" to a step index, which must fall on a step boundary.
fn clock_to_step(s: &str, ts: f64, field: &str) -> Result<usize, LoadError> {
    let bad = || invalid(field, format!("{s:?} is not a HH:MM time"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if h > 24 || m > 59 {
        return Err(bad());
    }
    let hours = f64::from(h) + f64::from(m) / 60.0;
    let k = hours / ts;
    if (k - k.round()).abs() > 1e-9 {
        return Err(invalid(field, format!("{s} is not a multiple of the {ts} h step")));
    }
    Ok(k.round() as usize)
}

fn window(w: &WindowSection, ts: f64, i: usize) -> Result<CfWindow, LoadError> {
    let field = |f: &str| format!("cf_windows[{i}].{f}");
    let (start, end) = match (w.start, w.end, &w.from, &w.to) {
        (Some(s), Some(e), None, None) => (s, e),
        (None, None, Some(f), Some(t)) => (clock_to_step(f, ts, &field("from"))?, clock_to_step(t, ts, &field("to"))?),
        _ => {
            return Err(invalid(
                &format!("cf_windows[{i}]"),
                "give either start and end or from and to",
            ))
        }
    };
    Ok(CfWindow {
        unit: w.unit.clone(),
        start,
        end,
    })
}

fn network(n: &NetworkSection, columns: usize) -> Result<Network, LoadError> {
    let h = match (&n.h, &n.dc) {
        (Some(rows), None) => {
            if let Some((l, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns) {
                return Err(invalid(
                    &format!("network.h[{l}]"),
                    format!("has {} entries, the units need {columns}", r.len()),
                ));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            DMatrix::from_row_slice(rows.len(), columns, &flat)
        }
        (None, Some(dc)) => {
            if dc.unit_buses.len() != columns {
                return Err(invalid(
                    "network.dc.unit_buses",
                    format!("has {} entries, the units need {columns}", dc.unit_buses.len()),
                ));
            }
            dc_sensitivities(dc.buses, dc.slack, &dc.lines, &dc.unit_buses)
                .map_err(|e| invalid("network.dc", e.to_string()))?
        }
        _ => return Err(invalid("network", "give exactly one of h and dc")),
    };
    for (f, v) in [("network.flow_min", &n.flow_min), ("network.flow_max", &n.flow_max)] {
        if v.len() != h.nrows() {
            return Err(invalid(f, format!("has {} entries for {} lines", v.len(), h.nrows())));
        }
    }
    Ok(Network {
        h,
        flow_min: n.flow_min.clone(),
        flow_max: n.flow_max.clone(),
    })
}

fn variant(name: &str) -> Variant {
    match name {
        "standard" => Variant::Standard,
        _ => Variant::Enhanced,
    }
}

/// B&B worker count from `MGFALL_THREADS`, 1 when unset.
pub fn threads_from_env() -> Result<usize, LoadError> {
    match std::env::var("MGFALL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(invalid("MGFALL_THREADS", format!("{v:?} is not a positive integer"))),
        },
    }
}

/// Builds and validates the scenario; `base` resolves a relative profile
/// path.
pub fn into_scenario(f: &ScenarioFile, base: &Path) -> Result<Scenario, LoadError> {
    let u = &f.units;
    let model = MicrogridModel {
        thermal: u
            .thermal
            .iter()
            .map(|t| ThermalUnit {
                name: t.name.clone(),
                p_min: t.p_min,
                p_max: t.p_max,
                droop: t.droop,
                switch_cost: t.switch_cost,
                on_cost: t.on_cost,
                linear_cost: t.linear_cost,
                quadratic_cost: t.quadratic_cost,
            })
            .collect(),
        storage: u
            .storage
            .iter()
            .map(|s| StorageUnit {
                name: s.name.clone(),
                p_min: s.p_min,
                p_max: s.p_max,
                x_min: s.x_min,
                x_max: s.x_max,
                x_soft_min: s.x_soft_min,
                x_soft_max: s.x_soft_max,
                droop: s.droop,
                efficiency: s.efficiency,
                power_cost: s.power_cost,
                band_cost: s.band_cost,
            })
            .collect(),
        renewable: u
            .renewable
            .iter()
            .map(|r| RenewableUnit {
                name: r.name.clone(),
                p_min: r.p_min,
                p_max: r.p_max,
                usage_reward: r.usage_reward,
            })
            .collect(),
        loads: u.loads.iter().map(|l| Load { name: l.name.clone() }).collect(),
        network: network(&f.network, u.thermal.len() + u.storage.len() + u.renewable.len() + u.loads.len())?,
        ts: f.ts,
    };
    let (n_r, n_l) = (model.renewable.len(), model.loads.len());
    let samples = match (&f.profiles.file, &f.profiles.rows) {
        (Some(p), None) => {
            let path: PathBuf = base.join(p);
            read_profiles(&path, n_r, n_l)?
        }
        (None, Some(rows)) => rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                if r.len() != n_r + n_l {
                    return Err(invalid(
                        &format!("profiles.rows[{k}]"),
                        format!("has {} entries, expected {}", r.len(), n_r + n_l),
                    ));
                }
                Ok(UncertaintySample {
                    w_r: r[..n_r].to_vec(),
                    w_l: r[n_r..].to_vec(),
                })
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(invalid("profiles", "give exactly one of file and rows")),
    };
    if !matches!(f.mpc.variant.as_str(), "standard" | "enhanced") {
        return Err(invalid(
            "mpc.variant",
            format!("{:?} is not one of standard, enhanced", f.mpc.variant),
        ));
    }
    let mut mpc = MpcConfig::new(f.mpc.horizon, f.mpc.discount, variant(&f.mpc.variant));
    mpc.rho_bounds = f.mpc.rho_bounds;
    if let Some(n) = f.mpc.direction_node_limit {
        mpc.direction_node_limit = n;
    }
    if let Some(n) = f.mpc.node_limit {
        mpc.bnb.node_limit = n;
    }
    if !f.deterministic {
        mpc.bnb.workers = threads_from_env()?;
    }
    let cf_windows = f
        .cf_windows
        .iter()
        .enumerate()
        .map(|(i, w)| window(w, f.ts, i))
        .collect::<Result<_, _>>()?;
    let scenario = Scenario {
        name: f.name.clone(),
        model,
        profile: Profile {
            samples,
            period: f.profiles.period,
        },
        cf_windows,
        controller: f.mpc.variant.clone(),
        forecaster: f.forecaster.clone(),
        mpc,
        initial: PlantState {
            x: f.initial.x.clone(),
            delta_prev: f.initial.delta_prev.clone(),
        },
        steps: f.steps,
    };
    scenario.validate().map_err(|e| LoadError::Scenario {
        name: f.name.clone(),
        message: e.to_string(),
    })?;
    Ok(scenario)
}

/// Inverse of [`into_scenario`] with an explicit H and inline profiles.
/// Solver settings that the file format does not carry are dropped.
pub fn to_scenario_file(s: &Scenario) -> ScenarioFile {
    let m = &s.model;
    let defaults = MpcConfig::new(s.mpc.horizon, s.mpc.discount, s.mpc.variant);
    ScenarioFile {
        name: s.name.clone(),
        ts: m.ts,
        units: UnitsSection {
            thermal: m
                .thermal
                .iter()
                .map(|t| ThermalSection {
                    name: t.name.clone(),
                    p_min: t.p_min,
                    p_max: t.p_max,
                    droop: t.droop,
                    switch_cost: t.switch_cost,
                    on_cost: t.on_cost,
                    linear_cost: t.linear_cost,
                    quadratic_cost: t.quadratic_cost,
                })
                .collect(),
            storage: m
                .storage
                .iter()
                .map(|u| StorageSection {
                    name: u.name.clone(),
                    p_min: u.p_min,
                    p_max: u.p_max,
                    x_min: u.x_min,
                    x_max: u.x_max,
                    x_soft_min: u.x_soft_min,
                    x_soft_max: u.x_soft_max,
                    droop: u.droop,
                    efficiency: u.efficiency,
                    power_cost: u.power_cost,
                    band_cost: u.band_cost,
                })
                .collect(),
            renewable: m
                .renewable
                .iter()
                .map(|r| RenewableSection {
                    name: r.name.clone(),
                    p_min: r.p_min,
                    p_max: r.p_max,
                    usage_reward: r.usage_reward,
                })
                .collect(),
            loads: m.loads.iter().map(|l| LoadSection { name: l.name.clone() }).collect(),
        },
        network: NetworkSection {
            h: Some(m.network.h.row_iter().map(|r| r.iter().copied().collect()).collect()),
            dc: None,
            flow_min: m.network.flow_min.clone(),
            flow_max: m.network.flow_max.clone(),
        },
        profiles: ProfilesSection {
            file: None,
            rows: Some(
                s.profile
                    .samples
                    .iter()
                    .map(|w| w.w_r.iter().chain(&w.w_l).copied().collect())
                    .collect(),
            ),
            period: s.profile.period,
        },
        mpc: MpcSection {
            horizon: s.mpc.horizon,
            discount: s.mpc.discount,
            variant: s.controller.clone(),
            rho_bounds: s.mpc.rho_bounds,
            direction_node_limit: (s.mpc.direction_node_limit != defaults.direction_node_limit)
                .then_some(s.mpc.direction_node_limit),
            node_limit: (s.mpc.bnb.node_limit != defaults.bnb.node_limit).then_some(s.mpc.bnb.node_limit),
        },
        forecaster: s.forecaster.clone(),
        cf_windows: s
            .cf_windows
            .iter()
            .map(|w| WindowSection {
                unit: w.unit.clone(),
                start: Some(w.start),
                end: Some(w.end),
                from: None,
                to: None,
            })
            .collect(),
        initial: InitialSection {
            x: s.initial.x.clone(),
            delta_prev: s.initial.delta_prev.clone(),
        },
        steps: s.steps,
        deterministic: s.mpc.bnb.workers == 1,
    }
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), LoadError> {
    let text = serde_json::to_string_pretty(&to_scenario_file(s)).expect("scenario files always serialize");
    fs::write(path, text + "\n").map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}
