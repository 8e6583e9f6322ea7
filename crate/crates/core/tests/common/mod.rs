#![allow(dead_code)]

use mgfall_core::model::*;

pub fn thermal(name: &str, p_min: f64, p_max: f64, droop: f64, a: [f64; 4]) -> ThermalUnit {
    ThermalUnit {
        name: name.into(),
        p_min,
        p_max,
        droop,
        switch_cost: a[0],
        on_cost: a[1],
        linear_cost: a[2],
        quadratic_cost: a[3],
    }
}

#[allow(clippy::too_many_arguments)]
pub fn storage(name: &str, p: (f64, f64), x: (f64, f64), soft: (f64, f64), droop: f64, eta: f64, a_s: f64, a_s1: f64) -> StorageUnit {
    StorageUnit {
        name: name.into(),
        p_min: p.0,
        p_max: p.1,
        x_min: x.0,
        x_max: x.1,
        x_soft_min: soft.0,
        x_soft_max: soft.1,
        droop,
        efficiency: eta,
        power_cost: a_s,
        band_cost: a_s1,
    }
}

pub fn renewable(name: &str, p_max: f64, reward: f64) -> RenewableUnit {
    RenewableUnit {
        name: name.into(),
        p_min: 0.0,
        p_max,
        usage_reward: reward,
    }
}

/// Two thermal units, two storages, two renewables and one load with the
/// reference parameter set; a six-bus meshed network.
pub fn reference_model() -> MicrogridModel {
    let lines = [
        (0, 1, 0.1),
        (1, 5, 0.1),
        (0, 2, 0.15),
        (2, 5, 0.1),
        (2, 3, 0.1),
        (3, 4, 0.1),
        (4, 5, 0.08),
        (3, 5, 0.12),
    ];
    let h = dc_sensitivities(6, 0, &lines, &[0, 2, 3, 1, 4, 2, 5]).unwrap();
    MicrogridModel {
        thermal: vec![
            thermal("gen_1", 0.08, 0.6, 0.6, [0.43, 0.335, 1.116, 1.685]),
            thermal("gen_2", 0.17, 1.0, 1.0, [0.67, 0.475, 1.044, 0.778]),
        ],
        storage: vec![
            storage("bess_bus4", (-1.0, 1.0), (0.0, 2.0), (0.2, 1.8), 0.5, 0.95, 0.03, 50.0),
            storage("bess_bus2", (-0.75, 0.75), (0.0, 3.0), (0.3, 2.7), 1.0, 0.95, 0.04, 50.0),
        ],
        renewable: vec![renewable("pv", 2.0, 0.03), renewable("wind", 2.0, 0.04)],
        loads: vec![Load { name: "load".into() }],
        network: Network {
            flow_min: vec![-1.0; lines.len()],
            flow_max: vec![1.0; lines.len()],
            h,
        },
        ts: 0.5,
    }
}

/// A small random microgrid with forecasts over `horizon + 1` steps.
#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub model: MicrogridModel,
    pub x0: Vec<f64>,
    pub delta_prev: Vec<bool>,
    pub forecast: mgfall_core::mpc::ForecastBundle,
    pub horizon: usize,
}

pub fn desk_instance(seed: u64) -> DeskInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let nt = if u(0.0, 1.0) < 0.5 { 1 } else { 2 };
    let nr = if u(0.0, 1.0) < 0.5 { 1 } else { 2 };
    let thermal_units: Vec<ThermalUnit> = (0..nt)
        .map(|i| {
            thermal(
                &format!("t{i}"),
                u(0.05, 0.2),
                u(0.6, 1.2),
                u(0.3, 1.2),
                [u(0.1, 0.8), u(0.1, 0.5), u(0.5, 1.5), u(0.3, 2.0)],
            )
        })
        .collect();
    let storage_units: Vec<StorageUnit> = (0..2)
        .map(|i| {
            let p = u(0.5, 1.0);
            let x_max = u(1.5, 3.0);
            storage(
                &format!("s{i}"),
                (-p, p),
                (0.0, x_max),
                (0.1 * x_max, 0.9 * x_max),
                u(0.3, 1.2),
                u(0.85, 0.98),
                u(0.01, 0.1),
                u(5.0, 50.0),
            )
        })
        .collect();
    let renewable_units: Vec<RenewableUnit> = (0..nr).map(|i| renewable(&format!("r{i}"), 2.0, u(0.01, 0.05))).collect();
    let horizon = 2 + (u(0.0, 5.0) as usize);
    let lines = [(0, 1, 0.1), (1, 2, 0.12), (2, 3, 0.1), (3, 0, 0.15), (0, 2, 0.2)];
    let columns: Vec<usize> = (0..nt + 2 + nr + 1).map(|_| u(0.0, 4.0) as usize).collect();
    let h = dc_sensitivities(4, 0, &lines, &columns).unwrap();
    let limit = u(1.5, 3.0);
    let model = MicrogridModel {
        thermal: thermal_units,
        storage: storage_units,
        renewable: renewable_units,
        loads: vec![Load { name: "load".into() }],
        network: Network {
            flow_min: vec![-limit; lines.len()],
            flow_max: vec![limit; lines.len()],
            h,
        },
        ts: 0.5,
    };
    let x0 = model.storage.iter().map(|s| u(s.x_soft_min, s.x_soft_max)).collect();
    let delta_prev = (0..nt).map(|_| u(0.0, 1.0) < 0.5).collect();
    let w_r = (0..nr).map(|_| (0..=horizon).map(|_| u(0.0, 1.2)).collect()).collect();
    let w_l = vec![(0..=horizon).map(|_| u(-1.8, -0.6)).collect()];
    DeskInstance {
        model,
        x0,
        delta_prev,
        forecast: mgfall_core::mpc::ForecastBundle { w_r, w_l },
        horizon,
    }
}

/// Defaults for a single storage `q` without communication: a random
/// storage schedule inside its power box, everything else idle.
pub fn storage_defaults(inst: &DeskInstance, q: usize, seed: u64) -> mgfall_core::mpc::DefaultSchedule {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = &inst.model;
    let cols = inst.horizon + 1;
    let zeros = |n: usize| vec![vec![0.0; cols]; n];
    let mut d_s = zeros(m.storage.len());
    let s = &m.storage[q];
    d_s[q] = (0..cols).map(|_| rng.gen_range(s.p_min..s.p_max)).collect();
    mgfall_core::mpc::DefaultSchedule {
        d_t: zeros(m.thermal.len()),
        d_s,
        d_r: zeros(m.renewable.len()),
        delta_d: vec![vec![false; cols]; m.thermal.len()],
        terminal_hold: false,
    }
}
