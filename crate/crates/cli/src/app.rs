//! `mgfall` subcommands. Exit codes: 0 success, 1 usage, 2 invalid input
//! or unwritable output, 3 solver failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use mgfall_core::controller::Controller;
use mgfall_core::model::MicrogridModel;
use mgfall_core::mpc::{build_problem, MpcConfig, MpcError, MpcInputs, MpcSolution};
use mgfall_core::sim::{run_closed_loop_with, Scenario, SimError, SimulationLog, Strategies};

use crate::config::load_scenario;
use crate::output::{kpi_file, write_kpis, write_log, KpiFile};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mgfall", version, about = "Islanded microgrid EMS with communication-failure fallback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop simulation.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        forecaster: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the CF-free reference and both controllers, print the KPI table.
    Compare {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay up to step K and dump the MPC problem and solution there.
    SolveOnce {
        scenario: PathBuf,
        #[arg(long)]
        step: usize,
        #[arg(long)]
        controller: Option<String>,
    },
    /// Check the scenario file and its initial point.
    Validate { scenario: PathBuf },
}

/// Outcome of a subcommand that did not succeed.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn invalid(message: impl ToString) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Solver { step, source, dump } => Failure {
            code: EXIT_SOLVER,
            message: format!("solver failed at step {step}: {source}\nproblem inputs:\n{dump}"),
        },
        e @ (SimError::Forecast { .. } | SimError::Estimator { .. } | SimError::NoDroop { .. }) => Failure {
            code: EXIT_SOLVER,
            message: e.to_string(),
        },
        e => Failure::invalid(e),
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(Failure::invalid)
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            scenario,
            controller,
            forecaster,
            out: dir,
        } => simulate(&scenario, controller, forecaster, &dir, out),
        Command::Compare { scenario, out: dir } => compare_cmd(&scenario, &dir, out),
        Command::SolveOnce {
            scenario,
            step,
            controller,
        } => solve_once(&scenario, step, controller, out),
        Command::Validate { scenario } => validate(&scenario, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn save(log: &SimulationLog, model: &MicrogridModel, dir: &Path) -> Result<(), Failure> {
    write_log(log, model, dir).map_err(|e| Failure::invalid(format!("{}: {e}", dir.display())))
}

fn save_kpis(dir: &Path, k: &KpiFile) -> Result<(), Failure> {
    let path = dir.join("kpis.json");
    write_kpis(&path, k).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn simulate(
    path: &Path,
    controller: Option<String>,
    forecaster: Option<String>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut s = load(path)?;
    if let Some(c) = controller {
        s.controller = c;
    }
    if let Some(f) = forecaster {
        s.forecaster = f;
    }
    let log = run_closed_loop_with(&s, &Strategies::default()).map_err(sim_failure)?;
    save(&log, &s.model, dir)?;
    save_kpis(dir, &kpi_file(&s.name, &[(&s.controller, &log, s.cf_windows.len())]))?;
    let _ = writeln!(
        out,
        "{}: {} steps, wastage {:.4} puh, thermal {:.4} puh -> {}",
        s.name,
        log.records.len(),
        log.kpis.wastage_puh,
        log.kpis.thermal_puh,
        dir.display()
    );
    Ok(())
}

/// The three runs of a comparison: the scenario without CF windows, then
/// with them under each controller.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reference: SimulationLog,
    pub standard: SimulationLog,
    pub enhanced: SimulationLog,
}

impl Comparison {
    pub fn runs(&self) -> [(&'static str, &SimulationLog); 3] {
        [
            ("reference", &self.reference),
            ("standard", &self.standard),
            ("enhanced", &self.enhanced),
        ]
    }
}

/// The reference keeps the scenario's own controller; without failures
/// both controllers solve the same problem.
pub fn compare(s: &Scenario, strategies: &Strategies) -> Result<Comparison, SimError> {
    let reference = Scenario {
        cf_windows: vec![],
        ..s.clone()
    };
    let with = |c: &str| Scenario {
        controller: c.into(),
        ..s.clone()
    };
    Ok(Comparison {
        reference: run_closed_loop_with(&reference, strategies)?,
        standard: run_closed_loop_with(&with("standard"), strategies)?,
        enhanced: run_closed_loop_with(&with("enhanced"), strategies)?,
    })
}

pub fn comparison_table(name: &str, c: &Comparison) -> String {
    let mut t = format!("{name}\n{:<16}{:>12}{:>12}{:>12}\n", "", "reference", "standard", "enhanced");
    let row = |label: &str, f: fn(&SimulationLog) -> f64| {
        format!(
            "{label:<16}{:>12.4}{:>12.4}{:>12.4}\n",
            f(&c.reference),
            f(&c.standard),
            f(&c.enhanced)
        )
    };
    t += &row("wastage [puh]", |l| l.kpis.wastage_puh);
    t += &row("thermal [puh]", |l| l.kpis.thermal_puh);
    t
}

fn compare_cmd(path: &Path, dir: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let s = load(path)?;
    let c = compare(&s, &Strategies::default()).map_err(sim_failure)?;
    for (label, log) in c.runs() {
        save(log, &s.model, &dir.join(label))?;
    }
    let n = s.cf_windows.len();
    let runs: Vec<(&str, &SimulationLog, usize)> = c
        .runs()
        .into_iter()
        .map(|(l, log)| (l, log, if l == "reference" { 0 } else { n }))
        .collect();
    save_kpis(dir, &kpi_file(&s.name, &runs))?;
    let _ = write!(out, "{}", comparison_table(&s.name, &c));
    Ok(())
}

/// Wraps a controller and records the inputs and plan of call number
/// `target`.
struct Capture {
    inner: Box<dyn Controller>,
    target: usize,
    calls: Mutex<usize>,
    dump: Arc<Mutex<Option<String>>>,
}

impl Controller for Capture {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn plan(&self, model: &MicrogridModel, cfg: &MpcConfig, inputs: &MpcInputs) -> Result<MpcSolution, MpcError> {
        let mut calls = self.calls.lock().expect("capture lock");
        let k = *calls;
        *calls += 1;
        let plan = self.inner.plan(model, cfg, inputs);
        if k == self.target {
            let mut text = format!("step {k}, controller {}\n\ninputs:\n{inputs:#?}\n", self.inner.name());
            let variant_cfg = MpcConfig {
                variant: match self.inner.name() {
                    "standard" => mgfall_core::mpc::Variant::Standard,
                    _ => mgfall_core::mpc::Variant::Enhanced,
                },
                ..cfg.clone()
            };
            match build_problem(model, &variant_cfg, inputs, &[]) {
                Ok(p) => {
                    text += &format!(
                        "\nproblem: {} variables, {} binaries, {} dropped rows, constant {:.12e}\n",
                        p.vars.len(),
                        p.qp.binary_indices.len(),
                        p.dropped_rows,
                        p.offset
                    );
                    for (i, l) in p.vars.labels.iter().enumerate() {
                        text += &format!("  x[{i}] {l:?}\n");
                    }
                }
                Err(e) => text += &format!("\nproblem: {e}\n"),
            }
            match &plan {
                Ok(s) => text += &format!("\nsolution:\n{s:#?}\n"),
                Err(e) => text += &format!("\nsolution: {e}\n"),
            }
            *self.dump.lock().expect("dump lock") = Some(text);
        }
        plan
    }
}

fn solve_once(path: &Path, step: usize, controller: Option<String>, out: &mut dyn Write) -> Result<(), Failure> {
    let mut s = load(path)?;
    if step >= s.steps {
        return Err(Failure::invalid(format!("--step {step} is outside the {} step run", s.steps)));
    }
    if let Some(c) = controller {
        s.controller = c;
    }
    let mut strategies = Strategies::default();
    let inner_name = s.controller.clone();
    strategies
        .controller(&inner_name)
        .map_err(Failure::invalid)?;
    let dump = Arc::new(Mutex::new(None));
    let d = dump.clone();
    let base = Strategies::default();
    let factory_name = inner_name.clone();
    strategies.controllers.register("capture", move || {
        Box::new(Capture {
            inner: base.controller(&factory_name).expect("checked above"),
            target: step,
            calls: Mutex::new(0),
            dump: d.clone(),
        })
    });
    s.controller = "capture".into();
    // the windows must still fit the shortened run
    s.steps = step + 1;
    s.cf_windows.retain(|w| w.start <= step);
    for w in &mut s.cf_windows {
        w.end = w.end.min(s.steps);
    }
    if let Err(e) = run_closed_loop_with(&s, &strategies) {
        if let Some(text) = dump.lock().expect("dump lock").take() {
            let _ = write!(out, "{text}");
        }
        return Err(sim_failure(e));
    }
    let text = dump.lock().expect("dump lock").take().unwrap_or_default();
    let _ = write!(out, "{text}");
    Ok(())
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let s = load(path)?;
    let strategies = Strategies::default();
    strategies.controller(&s.controller).map_err(Failure::invalid)?;
    strategies.forecaster(&s.forecaster).map_err(Failure::invalid)?;
    let m = &s.model;
    let _ = writeln!(
        out,
        "{}: ok ({} thermal, {} storage, {} renewable, {} load; {} lines; {} steps, horizon {}; {} CF windows)",
        s.name,
        m.thermal.len(),
        m.storage.len(),
        m.renewable.len(),
        m.loads.len(),
        m.network.num_lines(),
        s.steps,
        s.mpc.horizon,
        s.cf_windows.len()
    );
    Ok(())
}
