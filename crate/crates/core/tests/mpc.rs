mod common;

use common::{desk_instance, reference_model, storage_defaults, DeskInstance};
use mgfall_core::model::*;
use mgfall_core::mpc::*;
use mgfall_solver::{solve_qp, QpStatus};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn flat(model: &MicrogridModel, h: usize, w_r: &[f64], w_l: f64) -> ForecastBundle {
    assert_eq!(w_r.len(), model.renewable.len());
    ForecastBundle {
        w_r: w_r.iter().map(|&w| vec![w; h + 1]).collect(),
        w_l: vec![vec![w_l; h + 1]],
    }
}

fn inputs<'a>(x0: &'a [f64], dp: &'a [bool], fc: &'a ForecastBundle, comm: &'a CommStatus, d: Option<&'a DefaultSchedule>) -> MpcInputs<'a> {
    MpcInputs {
        x0,
        delta_prev: dp,
        forecast: fc,
        comm,
        defaults: d,
        delta_hint: None,
    }
}

fn single_thermal_model() -> MicrogridModel {
    MicrogridModel {
        thermal: vec![common::thermal("gen", 0.08, 0.6, 0.6, [0.43, 0.335, 1.116, 1.685])],
        storage: vec![],
        renewable: vec![],
        loads: vec![Load { name: "load".into() }],
        network: Network {
            h: DMatrix::zeros(0, 2),
            flow_min: vec![],
            flow_max: vec![],
        },
        ts: 0.5,
    }
}

#[test]
fn single_thermal_unit_carries_the_load() {
    let m = single_thermal_model();
    let h = 3;
    let fc = ForecastBundle {
        w_r: vec![],
        w_l: vec![vec![-0.5; h + 1]],
    };
    let comm = CommStatus::all_up(&m);
    let cfg = MpcConfig::new(h, 0.95, Variant::Standard);
    let sol = solve_mpc(&m, &cfg, &inputs(&[], &[false], &fc, &comm, None)).unwrap();
    for j in 0..=h {
        assert!((sol.p_t[0][j] - 0.5).abs() < 1e-6, "{:?}", sol.p_t);
        assert!(sol.delta[0][j]);
    }
    assert!(sol.rho.iter().all(|&r| r == 0.0));
}

#[test]
fn storage_without_communication_has_no_set_point_variables() {
    let m = reference_model();
    let h = 4;
    let fc = flat(&m, h, &[0.8, 0.4], -1.2);
    let mut comm = CommStatus::all_up(&m);
    comm.storage[0] = false;
    let prev_plan = {
        let all = CommStatus::all_up(&m);
        solve_mpc(&m, &MpcConfig::new(h, 0.95, Variant::Standard), &inputs(&[1.0, 1.5], &[false, false], &fc, &all, None)).unwrap()
    };
    let d = fallback_schedule(&prev_plan, 1, h);
    for variant in [Variant::Standard, Variant::Enhanced] {
        let cfg = MpcConfig::new(h, 0.95, variant);
        let pb = build_problem(&m, &cfg, &inputs(&[1.0, 1.5], &[false, false], &fc, &comm, Some(&d)), &[]).unwrap();
        let vm = &pb.vars;
        assert_eq!(vm.len(), pb.qp.base.num_vars());
        for j in 0..=h {
            assert!(vm.find(VarKind::StorageSetpoint, Some(0), j).is_none());
            assert!(vm.find(VarKind::StorageSetpoint, Some(1), j).is_some());
            assert!(vm.u_s[0][j].is_constant());
            assert_eq!(vm.u_s[0][j].constant, d.d_s[0][j]);
        }
        assert_eq!(vm.count(VarKind::StorageSetpoint), h + 1);
        assert_eq!(vm.count(VarKind::Switch), 2 * (h + 1));
        let droop = vm.count(VarKind::Droop);
        match variant {
            Variant::Standard => assert_eq!(droop, 0),
            Variant::Enhanced => assert_eq!(droop, h + 1),
        }
        // every variable has exactly one label
        let mut seen = std::collections::HashSet::new();
        for l in &vm.labels {
            assert!(seen.insert(*l), "duplicate label {l:?}");
        }
    }
}

#[test]
fn missing_defaults_are_rejected() {
    let m = reference_model();
    let fc = flat(&m, 2, &[0.8, 0.4], -1.2);
    let mut comm = CommStatus::all_up(&m);
    comm.storage[1] = false;
    let cfg = MpcConfig::new(2, 0.95, Variant::Enhanced);
    let r = solve_mpc(&m, &cfg, &inputs(&[1.0, 1.5], &[false, false], &fc, &comm, None));
    assert!(matches!(r, Err(MpcError::MissingDefaults(ref n)) if n == "bess_bus2"), "{r:?}");
}

#[test]
fn defaults_outside_the_power_box_are_infeasible_by_construction() {
    let m = reference_model();
    let h = 2;
    let fc = flat(&m, h, &[0.8, 0.4], -1.2);
    let mut comm = CommStatus::all_up(&m);
    comm.storage[0] = false;
    let mut d = DefaultSchedule {
        d_t: vec![vec![0.0; h + 1]; 2],
        d_s: vec![vec![0.0; h + 1]; 2],
        d_r: vec![vec![0.0; h + 1]; 2],
        delta_d: vec![vec![false; h + 1]; 2],
        terminal_hold: false,
    };
    d.d_s[0][1] = 1.5;
    let cfg = MpcConfig::new(h, 0.95, Variant::Standard);
    let r = build_problem(&m, &cfg, &inputs(&[1.0, 1.5], &[false, false], &fc, &comm, Some(&d)), &[]);
    assert!(matches!(r, Err(MpcError::InfeasibleByConstruction(_))), "{r:?}");
}

#[test]
fn variants_agree_without_communication_failures() {
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    for (w_r, w_l, x0) in [
        ([0.8, 0.4], -1.2, [1.0, 1.5]),
        ([1.6, 0.5], -0.9, [0.3, 2.6]),
        ([0.0, 0.2], -1.5, [1.7, 0.5]),
    ] {
        let fc = flat(&m, 6, &w_r, w_l);
        let s = solve_mpc(&m, &MpcConfig::new(6, 0.95, Variant::Standard), &inputs(&x0, &[true, false], &fc, &comm, None)).unwrap();
        let e = solve_mpc(&m, &MpcConfig::new(6, 0.95, Variant::Enhanced), &inputs(&x0, &[true, false], &fc, &comm, None)).unwrap();
        assert!((s.objective - e.objective).abs() <= 1e-6, "{} vs {}", s.objective, e.objective);
    }
}

/// Exhaustive route: fix every switch pattern in the built problem, solve
/// the remaining convex QP and keep the best.
fn enumerate_switches(pb: &MpcProblem, cfg: &MpcConfig) -> f64 {
    let bins = &pb.qp.binary_indices;
    let mut best = f64::INFINITY;
    for code in 0u32..(1 << bins.len()) {
        let mut qp = pb.qp.base.clone();
        for (k, &i) in bins.iter().enumerate() {
            let v = ((code >> k) & 1) as f64;
            qp.lb[i] = v;
            qp.ub[i] = v;
        }
        let s = solve_qp(&qp, &cfg.bnb.qp).unwrap();
        if s.status == QpStatus::Optimal {
            best = best.min(s.objective + pb.offset);
        }
    }
    best
}

#[test]
fn short_horizon_matches_switch_enumeration() {
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    for (w_r, w_l, x0, dp) in [
        ([0.3, 0.2], -1.4, [0.5, 0.6], [false, false]),
        ([0.9, 0.4], -1.0, [1.2, 1.0], [true, false]),
        ([0.1, 0.1], -1.9, [0.4, 0.5], [false, true]),
    ] {
        let fc = flat(&m, 2, &w_r, w_l);
        let cfg = MpcConfig::new(2, 0.95, Variant::Standard);
        let inp = inputs(&x0, &dp, &fc, &comm, None);
        let sol = solve_mpc(&m, &cfg, &inp).unwrap();
        assert!(sol.stats.direction_binaries == 0);
        let pb = build_problem(&m, &cfg, &inp, &[]).unwrap();
        let best = enumerate_switches(&pb, &cfg);
        assert!((sol.objective - best).abs() <= 1e-6, "{} vs {best}", sol.objective);
    }
}

fn desk_solve(inst: &DeskInstance, variant: Variant, comm: &CommStatus, d: Option<&DefaultSchedule>) -> Result<MpcSolution, MpcError> {
    let cfg = MpcConfig::new(inst.horizon, 0.95, variant);
    solve_mpc(&inst.model, &cfg, &inputs(&inst.x0, &inst.delta_prev, &inst.forecast, comm, d))
}

#[test]
fn single_storage_failure_is_invisible_to_the_enhanced_plan() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 8 {
        seed += 1;
        let inst = desk_instance(seed);
        let all = CommStatus::all_up(&inst.model);
        let Ok(free) = desk_solve(&inst, Variant::Enhanced, &all, None) else { continue };
        let q = (seed % 2) as usize;
        let d = storage_defaults(&inst, q, seed);
        let mut comm = all.clone();
        comm.storage[q] = false;
        let cf = desk_solve(&inst, Variant::Enhanced, &comm, Some(&d)).unwrap();
        let rel = (cf.objective - free.objective).abs() / free.objective.abs();
        assert!(rel <= 1e-4, "seed {seed}: {} vs {}", cf.objective, free.objective);
        for (a, b) in [(&cf.p_t, &free.p_t), (&cf.p_s, &free.p_s), (&cf.p_r, &free.p_r)] {
            for (ra, rb) in a.iter().zip(b) {
                for (va, vb) in ra.iter().zip(rb) {
                    assert!((va - vb).abs() <= 1e-4, "seed {seed}: {va} vs {vb}");
                }
            }
        }
        checked += 1;
    }
}

#[test]
fn enhanced_never_worse_than_standard() {
    for seed in 100..108 {
        let inst = desk_instance(seed);
        let q = (seed % 2) as usize;
        let d = storage_defaults(&inst, q, seed);
        let mut comm = CommStatus::all_up(&inst.model);
        comm.storage[q] = false;
        let Ok(std) = desk_solve(&inst, Variant::Standard, &comm, Some(&d)) else { continue };
        let enh = desk_solve(&inst, Variant::Enhanced, &comm, Some(&d)).unwrap();
        assert!(enh.objective <= std.objective + 1e-6, "seed {seed}: {} > {}", enh.objective, std.objective);
        assert!(std.rho.iter().all(|&r| r == 0.0));
    }
}

fn scaled(m: &MicrogridModel, lambda: f64) -> MicrogridModel {
    let mut m = m.clone();
    for u in &mut m.thermal {
        u.switch_cost *= lambda;
        u.on_cost *= lambda;
        u.linear_cost *= lambda;
        u.quadratic_cost *= lambda;
    }
    for u in &mut m.storage {
        u.power_cost *= lambda;
        u.band_cost *= lambda;
    }
    for u in &mut m.renewable {
        u.usage_reward *= lambda;
    }
    m
}

#[test]
fn scaling_every_weight_scales_the_objective() {
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    let fc = flat(&m, 6, &[0.9, 0.4], -1.3);
    let cfg = MpcConfig::new(6, 0.95, Variant::Standard);
    let base = solve_mpc(&m, &cfg, &inputs(&[1.0, 1.5], &[true, false], &fc, &comm, None)).unwrap();
    for lambda in [0.5, 3.0] {
        let s = solve_mpc(&scaled(&m, lambda), &cfg, &inputs(&[1.0, 1.5], &[true, false], &fc, &comm, None)).unwrap();
        assert!((s.objective - lambda * base.objective).abs() <= 1e-6 * lambda.max(1.0));
        assert_eq!(s.delta, base.delta);
        for (a, b) in s.p_t.iter().chain(&s.p_s).chain(&s.p_r).zip(base.p_t.iter().chain(&base.p_s).chain(&base.p_r)) {
            for (va, vb) in a.iter().zip(b) {
                assert!((va - vb).abs() <= 1e-5, "{va} vs {vb}");
            }
        }
    }
}

#[test]
fn extract_returns_the_injected_point() {
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    let fc = flat(&m, 3, &[0.9, 0.4], -1.3);
    let cfg = MpcConfig::new(3, 0.95, Variant::Enhanced);
    let inp = inputs(&[1.0, 1.5], &[true, false], &fc, &comm, None);
    let pb = build_problem(&m, &cfg, &inp, &[]).unwrap();
    let sol = solve_mpc(&m, &cfg, &inp).unwrap();
    // rebuild the raw vector from the plan
    let vm = &pb.vars;
    let mut raw = vec![0.0; vm.len()];
    for (k, l) in vm.labels.iter().enumerate() {
        let (i, j) = (l.unit.unwrap_or(0), l.step);
        raw[k] = match l.kind {
            VarKind::ThermalSetpoint => sol.u_t[i][j],
            VarKind::Switch => f64::from(u8::from(sol.delta[i][j])),
            VarKind::StorageSetpoint => sol.u_s[i][j],
            VarKind::RenewableSetpoint => sol.u_r[i][j],
            VarKind::Charge => (-sol.p_s[i][j]).max(0.0),
            VarKind::Discharge => sol.p_s[i][j].max(0.0),
            VarKind::Energy => sol.x[i][j],
            VarKind::SwitchSlack => {
                let prev = if j == 0 { [true, false][i] } else { sol.delta[i][j - 1] };
                f64::from(u8::from(prev != sol.delta[i][j]))
            }
            VarKind::BandLow => (m.storage[i].x_soft_min - sol.x[i][j]).max(0.0),
            VarKind::BandHigh => (sol.x[i][j] - m.storage[i].x_soft_max).max(0.0),
            other => panic!("unexpected {other:?} without failures"),
        };
    }
    let back = extract_solution(&raw, &pb, &m, 1e-6).unwrap();
    assert_eq!(back.delta, sol.delta);
    for (a, b) in back.p_s.iter().chain(&back.u_t).chain(&back.x).zip(sol.p_s.iter().chain(&sol.u_t).chain(&sol.x)) {
        for (va, vb) in a.iter().zip(b) {
            assert!((va - vb).abs() <= 1e-12);
        }
    }
    assert!((back.objective - sol.objective).abs() <= 1e-6, "{} vs {}", back.objective, sol.objective);
    // the split recombines to the net power
    for i in 0..2 {
        for j in 0..=3 {
            let c = raw[vm.charge[i][j].unwrap()];
            let d = raw[vm.discharge[i][j].unwrap()];
            assert!((d - c - back.p_s[i][j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn burning_energy_through_losses_is_detected_and_removed() {
    // both storages above their soft band with a renewable surplus: the
    // relaxation prefers charging and discharging at once
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    let h = 4;
    let fc = flat(&m, h, &[1.5, 0.5], -1.0);
    let cfg = MpcConfig::new(h, 0.95, Variant::Standard);
    let inp = inputs(&[1.99, 2.99], &[false, false], &fc, &comm, None);
    let pb = build_problem(&m, &cfg, &inp, &[]).unwrap();
    let relaxed = mgfall_solver::solve_miqp(&pb.qp, &cfg.bnb).unwrap();
    let first = extract_solution(relaxed.x.unwrap().as_slice(), &pb, &m, cfg.simultaneity_tol).unwrap();
    assert!(!first.stats.simultaneous.is_empty());
    let sol = solve_mpc(&m, &cfg, &inp).unwrap();
    assert!(sol.stats.direction_binaries > 0);
    assert!(sol.stats.simultaneous.is_empty());
}

#[test]
fn everything_on_defaults_leaves_only_evaluation() {
    let m = reference_model();
    let h = 2;
    let fc = flat(&m, h, &[0.5, 0.3], -1.2);
    let comm = CommStatus {
        thermal: vec![false; 2],
        storage: vec![false; 2],
        renewable: vec![false; 2],
    };
    // gen_1 at 0.2, storages 0.1 each, renewables fully used: balanced
    let row = |v: f64| vec![v; h + 1];
    let d = DefaultSchedule {
        d_t: vec![row(0.2), row(0.0)],
        d_s: vec![row(0.1), row(0.1)],
        d_r: vec![row(2.0), row(2.0)],
        delta_d: vec![vec![true; h + 1], vec![false; h + 1]],
        terminal_hold: false,
    };
    let x0 = [1.0, 1.5];
    let cfg = MpcConfig::new(h, 0.95, Variant::Standard);
    let pb = build_problem(&m, &cfg, &inputs(&x0, &[true, false], &fc, &comm, Some(&d)), &[]).unwrap();
    assert!(pb.qp.binary_indices.is_empty());
    assert!(pb.vars.labels.iter().all(|l| !matches!(
        l.kind,
        VarKind::ThermalSetpoint | VarKind::StorageSetpoint | VarKind::RenewableSetpoint | VarKind::Switch
    )));
    let sol = solve_mpc(&m, &cfg, &inputs(&x0, &[true, false], &fc, &comm, Some(&d))).unwrap();
    // independent evaluation of the discounted stage costs
    let mut x = x0.to_vec();
    let mut expected = 0.0;
    let mut prev = vec![true, false];
    for j in 0..=h {
        let p = UnitPowers {
            p_t: vec![0.2, 0.0],
            p_s: vec![0.1, 0.1],
            p_r: vec![0.5, 0.3],
        };
        let on = vec![true, false];
        expected += 0.95f64.powi(j as i32) * stage_cost(&m, &p, &on, &prev, &x).unwrap().total();
        x = storage_step(&x, &p.p_s, &[0.95, 0.95], 0.5).unwrap();
        prev = on;
    }
    assert!((sol.objective - expected).abs() <= 1e-9, "{} vs {expected}", sol.objective);
}

#[test]
fn estimator_hand_examples() {
    let m = reference_model();
    let comm = CommStatus::all_up(&m);
    let cmd = SetpointCommand {
        u_t: vec![0.0, 0.0],
        u_s: vec![0.2, 0.1],
        u_r: vec![0.6, 0.3],
        delta: vec![false, false],
    };
    let planned = UncertaintySample { w_r: vec![0.6, 0.3], w_l: vec![-1.2] };
    // perfect forecast with balanced commands
    assert_eq!(estimate_rho(&m, &planned, &planned, &cmd, &cmd, &comm).unwrap(), 0.0);
    // load 0.3 heavier than planned: Δw_l = 0.3 over χ_s = 1.5
    let heavier = UncertaintySample { w_r: vec![0.6, 0.3], w_l: vec![-1.5] };
    assert!((estimate_rho(&m, &planned, &heavier, &cmd, &cmd, &comm).unwrap() - 0.2).abs() < 1e-12);
    // renewable set-point 1.0, forecast 2.0, realized 0.8: Δw_r = 0.2
    let cmd_r = SetpointCommand { u_r: vec![1.0, 0.3], u_s: vec![0.0, -0.1], ..cmd.clone() };
    let f = UncertaintySample { w_r: vec![2.0, 0.3], w_l: vec![-1.2] };
    let a = UncertaintySample { w_r: vec![0.8, 0.3], w_l: vec![-1.2] };
    assert!((estimate_rho(&m, &f, &a, &cmd_r, &cmd_r, &comm).unwrap() - 0.2 / 1.5).abs() < 1e-12);

    assert_eq!(estimate_storage_energy(&m, &[0.8, 1.0], &[0.0, 0.0], 0.0).unwrap(), vec![0.8, 1.0]);
    let x = estimate_storage_energy(&m, &[1.0, 0.8], &[0.0, 0.2], 0.2).unwrap();
    assert!((x[1] - (0.8 - 0.4 * 0.5 / 0.95)).abs() < 1e-12);
    assert!((x[1] - 0.589_473_684_210_526_3).abs() < 1e-12);
}

fn plan_rows(rows: Vec<Vec<f64>>) -> MpcSolution {
    let n = rows[0].len();
    MpcSolution {
        u_t: vec![rows[0].clone()],
        u_s: vec![rows[1].clone()],
        u_r: vec![rows[2].clone()],
        delta: vec![rows[0].iter().map(|&v| v > 0.0).collect()],
        rho: vec![0.0; n],
        p_t: vec![rows[0].clone()],
        p_s: vec![rows[1].clone()],
        p_r: vec![rows[2].clone()],
        x: vec![vec![0.0; n + 1]],
        objective: 0.0,
        stats: SolveStats::default(),
    }
}

#[test]
fn fallback_hand_example() {
    let prev = plan_rows(vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 0.5], vec![1.0, 2.0, 3.0]]);
    let d = fallback_schedule(&prev, 1, 2);
    assert_eq!(d.d_r[0], vec![2.0, 3.0, 3.0]);
    assert_eq!(d.d_s[0], vec![0.0, 0.5, 0.5]);
    assert!(!d.terminal_hold);
}

proptest! {
    #[test]
    fn fallback_is_the_shifted_plan(
        h in 1usize..8,
        c in 0usize..10,
        vals in proptest::collection::vec(-1.0..1.0f64, 27),
    ) {
        let rows: Vec<Vec<f64>> = (0..3).map(|r| (0..=h).map(|j| vals[(r * 9 + j) % vals.len()]).collect()).collect();
        let prev = plan_rows(rows.clone());
        let d = fallback_schedule(&prev, c, h);
        for (got, src) in [(&d.d_t[0], &rows[0]), (&d.d_s[0], &rows[1]), (&d.d_r[0], &rows[2])] {
            prop_assert_eq!(got.len(), h + 1);
            for j in 0..=h {
                let want = if j + c <= h { src[j + c] } else { src[h] };
                prop_assert_eq!(got[j], want);
            }
        }
        for j in 0..=h {
            prop_assert_eq!(d.delta_d[0][j], prev.delta[0][(j + c).min(h)]);
        }
        prop_assert_eq!(d.terminal_hold, c > h);
    }
}
