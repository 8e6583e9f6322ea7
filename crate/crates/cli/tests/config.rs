use std::fs;
use std::path::{Path, PathBuf};

use mgfall_cli::config::{into_scenario, read_scenario_file, to_scenario_file, DcSection, ScenarioFile};
use mgfall_cli::profiles::{read_profiles, write_profiles};
use mgfall_cli::{load_scenario, save_scenario, LoadError};
use mgfall_core::model::UncertaintySample;
use proptest::prelude::*;

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn shipped_file() -> ScenarioFile {
    read_scenario_file(&shipped("casestudy.json")).unwrap()
}

/// Writes `f` next to a copy of the shipped profiles.
fn write_file(dir: &Path, f: &ScenarioFile) -> PathBuf {
    fs::copy(shipped("profiles.csv"), dir.join("profiles.csv")).unwrap();
    let path = dir.join("s.json");
    fs::write(&path, serde_json::to_string_pretty(f).unwrap()).unwrap();
    path
}

#[test]
fn shipped_case_study_loads() {
    let s = load_scenario(&shipped("casestudy.json")).unwrap();
    let m = &s.model;
    assert_eq!((m.thermal.len(), m.storage.len(), m.renewable.len(), m.loads.len()), (2, 2, 2, 1));
    assert_eq!(s.initial.x, vec![1.3, 0.8]);
    assert_eq!(s.initial.delta_prev, vec![false, false]);
    assert!(m.storage.iter().all(|u| u.efficiency == 0.95));
    assert!(m.network.flow_min.iter().all(|&v| v == -1.0) && m.network.flow_max.iter().all(|&v| v == 1.0));
    assert_eq!((s.mpc.horizon, s.mpc.discount, m.ts, s.steps), (12, 0.95, 0.5, 48));
    // 10:00 to 16:00 at half-hour steps
    assert_eq!(s.cf_windows.len(), 1);
    assert_eq!((s.cf_windows[0].unit.as_str(), s.cf_windows[0].start, s.cf_windows[0].end), ("bess_bus4", 20, 32));
    assert!(s.profile.len() >= 60);

    let two = load_scenario(&shipped("casestudy_scenario2.json")).unwrap();
    let units: Vec<&str> = two.cf_windows.iter().map(|w| w.unit.as_str()).collect();
    assert_eq!(units, ["bess_bus4", "bess_bus2"]);
    assert_eq!(two.model, s.model);
}

#[test]
fn initial_energy_outside_limits_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = shipped_file();
    f.initial.x[1] = 3.5;
    let e = load_scenario(&write_file(dir.path(), &f)).unwrap_err();
    assert!(matches!(e, LoadError::Scenario { .. }));
    assert!(e.to_string().contains("initial.x[1]"), "{e}");
}

#[test]
fn missing_profiles_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    fs::write(&path, serde_json::to_string(&shipped_file()).unwrap()).unwrap();
    let e = load_scenario(&path).unwrap_err();
    assert!(matches!(e, LoadError::Io { .. }));
    assert!(e.to_string().contains("profiles.csv"), "{e}");
}

#[test]
fn schema_errors_carry_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped("casestudy.json")).unwrap();
    for (from, to, field) in [
        ("\"p_max\": 0.6", "\"p_max\": \"high\"", "units.thermal[0].p_max"),
        ("\"efficiency\": 0.95,", "\"efficiency\": 0.95, \"colour\": 1,", "units.storage[0]"),
        ("\"horizon\": 12", "\"horizon\": -1", "mpc.horizon"),
    ] {
        let path = dir.path().join("bad.json");
        fs::write(&path, text.replacen(from, to, 1)).unwrap();
        match load_scenario(&path) {
            Err(LoadError::Schema { field: f, .. }) => assert!(f.starts_with(field), "{f} vs {field}"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn semantic_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Box<dyn Fn(&mut ScenarioFile)>, &str)> = vec![
        (Box::new(|f| f.cf_windows[0].unit = "bess_bus9".into()), "bess_bus9"),
        (Box::new(|f| f.cf_windows[0].from = Some("10:15".into())), "cf_windows[0].from"),
        (Box::new(|f| f.cf_windows[0].start = Some(3)), "cf_windows[0]"),
        (Box::new(|f| f.mpc.variant = "greedy".into()), "mpc.variant"),
        (Box::new(|f| f.network.h.as_mut().unwrap()[2].pop().map(drop).unwrap()), "network.h[2]"),
        (Box::new(|f| f.network.flow_max.pop().map(drop).unwrap()), "network.flow_max"),
        (Box::new(|f| f.steps = 60), "profile has 60 rows"),
    ];
    for (edit, needle) in cases {
        let mut f = shipped_file();
        edit(&mut f);
        let e = load_scenario(&write_file(dir.path(), &f)).unwrap_err();
        assert!(e.to_string().contains(needle), "{e} lacks {needle}");
    }
}

#[test]
fn dc_description_reproduces_the_explicit_matrix() {
    let explicit = load_scenario(&shipped("casestudy.json")).unwrap();
    let mut f = shipped_file();
    f.network.h = None;
    f.network.dc = Some(DcSection {
        buses: 6,
        slack: 0,
        lines: vec![
            (0, 1, 0.1),
            (1, 5, 0.1),
            (0, 2, 0.15),
            (2, 5, 0.1),
            (2, 3, 0.1),
            (3, 4, 0.1),
            (4, 5, 0.08),
            (3, 5, 0.12),
        ],
        unit_buses: vec![0, 2, 3, 1, 4, 2, 5],
    });
    let derived = into_scenario(&f, &shipped("")).unwrap();
    assert!((&derived.model.network.h - &explicit.model.network.h).amax() < 1e-15);
    f.network.h = explicit
        .model
        .network
        .h
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect::<Vec<_>>()
        .into();
    assert!(into_scenario(&f, &shipped("")).is_err());
}

#[test]
fn saved_scenarios_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["casestudy.json", "casestudy_scenario2.json"] {
        let s = load_scenario(&shipped(name)).unwrap();
        let path = dir.path().join(name);
        save_scenario(&s, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
        // and the file itself is a fixed point
        let again = dir.path().join("again.json");
        save_scenario(&load_scenario(&path).unwrap(), &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn profile_table_checks() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    for (text, needle) in [
        ("step,w_r_1,w_l_1\n0,0.5,-1\n2,0.5,-1\n", "step 2, expected 1"),
        ("step,w_r_1,w_l_2\n0,0.5,-1\n", "header"),
        ("step,w_r_1,w_l_1\n0,abc,-1\n", "\"abc\""),
        ("step,w_r_1,w_l_1\n0,NaN,-1\n", "non-finite"),
    ] {
        fs::write(&p, text).unwrap();
        let e = read_profiles(&p, 1, 1).unwrap_err();
        assert!(e.to_string().contains(needle), "{e} lacks {needle}");
    }
    fs::write(&p, "step,w_r_1,w_l_1\n0, 0.5 ,-1\n1,0.25,-1.5\n").unwrap();
    let rows = read_profiles(&p, 1, 1).unwrap();
    assert_eq!(rows[1], UncertaintySample { w_r: vec![0.25], w_l: vec![-1.5] });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn profile_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 3), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let samples: Vec<UncertaintySample> = rows
            .iter()
            .map(|r| UncertaintySample { w_r: r[..2].to_vec(), w_l: r[2..].to_vec() })
            .collect();
        write_profiles(&p, &samples).unwrap();
        prop_assert_eq!(read_profiles(&p, 2, 1).unwrap(), samples);
    }

    #[test]
    fn scenario_file_round_trip(
        scale in 0.5..2.0f64,
        x0 in 0.2..1.8f64,
        h in 1usize..=12,
        start in 1usize..40,
        len in 1usize..8,
    ) {
        let mut s = load_scenario(&shipped("casestudy.json")).unwrap();
        for u in &mut s.model.thermal {
            u.quadratic_cost *= scale;
        }
        s.model.storage[0].band_cost *= scale;
        s.initial.x[0] = x0;
        s.mpc.horizon = h;
        s.cf_windows[0].start = start;
        s.cf_windows[0].end = start + len;
        let file = to_scenario_file(&s);
        let text = serde_json::to_string(&file).unwrap();
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(into_scenario(&back, Path::new(".")).unwrap(), s);
    }
}
