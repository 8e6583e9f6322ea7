use mgfall_oracles::{enumerate_binaries, gen, DenseQp};
use mgfall_solver::{
    enumerate_oracle, kkt_residuals, solve_miqp, solve_qp, BnbConfig, BnbStatus, MixedBinaryQp, QpSettings,
    QpStatus, QuadraticProgram, WarmStart,
};
use proptest::prelude::*;
use rand::Rng;

fn to_qp(d: &DenseQp) -> QuadraticProgram {
    QuadraticProgram::new(d.p.clone(), d.q.clone())
        .with_equalities(d.a.clone(), d.b.clone())
        .with_inequalities(d.c.clone(), d.l.clone(), d.u.clone())
        .with_bounds(d.lb.clone(), d.ub.clone())
}

fn random_dense(seed: u64) -> DenseQp {
    let mut rng = gen::rng(seed);
    let n = rng.gen_range(1..=5);
    let n_eq = rng.gen_range(0..n.min(2) + 1).min(n - 1);
    let n_in = rng.gen_range(0..=3);
    gen::strictly_convex_qp(&mut rng, n, n_eq, n_in)
}

#[test]
fn random_qps_match_active_set_enumeration() {
    for seed in 0..300 {
        let d = random_dense(seed);
        let want = d.solve(1e-9).expect("generator builds feasible problems");
        let got = solve_qp(&to_qp(&d), &QpSettings::default()).unwrap();
        assert_eq!(got.status, QpStatus::Optimal, "seed {seed}");
        let err = (&got.x - &want.x).amax();
        assert!(err <= 1e-6, "seed {seed}: |x - x*| = {err:e}");
        let r = kkt_residuals(&to_qp(&d), &got).unwrap();
        assert!(r.primal <= 1e-7 && r.dual <= 1e-7 && r.complementarity <= 1e-7, "seed {seed}: {r:?}");
    }
}

#[test]
fn warm_start_from_optimum_is_cheap_and_identical() {
    for seed in 0..50 {
        let qp = to_qp(&random_dense(seed));
        let s = QpSettings::default();
        let cold = solve_qp(&qp, &s).unwrap();
        let warm = solve_qp(
            &qp,
            &QpSettings {
                warm_start: Some(WarmStart {
                    x: cold.x.clone(),
                    y: Some(cold.y.clone()),
                }),
                ..s
            },
        )
        .unwrap();
        assert!((&warm.x - &cold.x).amax() <= 1e-8, "seed {seed}");
        assert!(warm.iterations <= cold.iterations, "seed {seed}");
    }
}

#[test]
fn infeasible_random_problem_is_reported() {
    let mut d = random_dense(7);
    // two contradicting copies of the same row
    let n = d.q.len();
    d.c = nalgebra::DMatrix::from_fn(2, n, |_, j| if j == 0 { 1.0 } else { 0.5 });
    d.l = nalgebra::DVector::from_vec(vec![1.0, f64::NEG_INFINITY]);
    d.u = nalgebra::DVector::from_vec(vec![f64::INFINITY, 0.0]);
    let got = solve_qp(&to_qp(&d), &QpSettings::default()).unwrap();
    assert_eq!(got.status, QpStatus::PrimalInfeasible);
    assert!(d.solve(1e-9).is_none());
}

fn random_miqp(seed: u64, max_bin: usize) -> (DenseQp, Vec<usize>) {
    let mut rng = gen::rng(10_000 + seed);
    let nb = rng.gen_range(1..=max_bin);
    let nc = rng.gen_range(1..=3);
    let n_in = rng.gen_range(0..=2);
    gen::mixed_binary_qp(&mut rng, nb, nc, n_in)
}

#[test]
fn branch_and_bound_matches_both_enumerations() {
    for seed in 0..60 {
        let (d, bins) = random_miqp(seed, 6);
        let p = MixedBinaryQp::new(to_qp(&d), bins.clone()).unwrap();
        let (_, dense) = enumerate_binaries(&d, &bins, 1e-9).expect("feasible by construction");
        let exhaustive = enumerate_oracle(&p, &QpSettings::default()).unwrap();
        let bnb = solve_miqp(&p, &BnbConfig::default()).unwrap();
        assert_eq!(bnb.status, BnbStatus::Optimal, "seed {seed}");
        assert!((exhaustive.objective - dense.objective).abs() <= 1e-6, "seed {seed}");
        assert!((bnb.objective - dense.objective).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn node_bounds_never_decrease_along_the_tree() {
    for seed in 0..30 {
        let (d, bins) = random_miqp(seed, 8);
        let p = MixedBinaryQp::new(to_qp(&d), bins).unwrap();
        let cfg = BnbConfig {
            record_tree: true,
            rounding_heuristic: false,
            ..BnbConfig::default()
        };
        let sol = solve_miqp(&p, &cfg).unwrap();
        let value = |id: usize| sol.tree.iter().find(|r| r.id == id).and_then(|r| r.relaxation);
        for r in &sol.tree {
            if let (Some(parent), Some(v)) = (r.parent, r.relaxation) {
                if let Some(pv) = value(parent) {
                    assert!(v >= pv - 1e-9 * pv.abs().max(1.0), "seed {seed}: node {} {v} < {pv}", r.id);
                }
            }
        }
    }
}

#[test]
fn pruned_subtrees_hold_nothing_better() {
    for seed in 0..20 {
        let (d, bins) = random_miqp(seed, 6);
        let p = MixedBinaryQp::new(to_qp(&d), bins.clone()).unwrap();
        let cfg = BnbConfig {
            record_tree: true,
            ..BnbConfig::default()
        };
        let sol = solve_miqp(&p, &cfg).unwrap();
        for r in sol.tree.iter().filter(|r| r.pruned_by_bound) {
            let mut sub = d.clone();
            for &(k, v) in &r.fixings {
                sub.lb[bins[k]] = v;
                sub.ub[bins[k]] = v;
            }
            if let Some((_, best)) = enumerate_binaries(&sub, &bins, 1e-9) {
                assert!(best.objective >= sol.objective - 1e-6, "seed {seed}");
            }
        }
    }
}

#[test]
fn parallel_batches_give_the_same_answer() {
    for seed in 0..15 {
        let (d, bins) = random_miqp(seed, 8);
        let p = MixedBinaryQp::new(to_qp(&d), bins).unwrap();
        let one = solve_miqp(&p, &BnbConfig::default()).unwrap();
        let three = solve_miqp(
            &p,
            &BnbConfig {
                workers: 3,
                ..BnbConfig::default()
            },
        )
        .unwrap();
        assert!((one.objective - three.objective).abs() <= 1e-6, "seed {seed}");
        let again = solve_miqp(
            &p,
            &BnbConfig {
                workers: 3,
                ..BnbConfig::default()
            },
        )
        .unwrap();
        assert_eq!(three, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_are_deterministic(seed in 0u64..1_000_000) {
        let qp = to_qp(&random_dense(seed));
        let a = solve_qp(&qp, &QpSettings::default()).unwrap();
        let b = solve_qp(&qp, &QpSettings::default()).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn adding_a_slack_constraint_keeps_the_optimum(seed in 0u64..1_000_000) {
        let d = random_dense(seed);
        let base = solve_qp(&to_qp(&d), &QpSettings::default()).unwrap();
        prop_assume!(base.status == QpStatus::Optimal);
        let n = d.q.len();
        let mut wider = d.clone();
        let row = nalgebra::DMatrix::from_element(1, n, 1.0);
        let v = (row.clone() * &base.x)[0];
        let mut c = nalgebra::DMatrix::zeros(d.c.nrows() + 1, n);
        c.view_mut((0, 0), (d.c.nrows(), n)).copy_from(&d.c);
        c.view_mut((d.c.nrows(), 0), (1, n)).copy_from(&row);
        wider.c = c;
        wider.l = d.l.clone().insert_row(d.l.len(), v - 1.0);
        wider.u = d.u.clone().insert_row(d.u.len(), v + 1.0);
        let again = solve_qp(&to_qp(&wider), &QpSettings::default()).unwrap();
        prop_assert!((again.x - base.x).amax() <= 1e-6);
    }
}
