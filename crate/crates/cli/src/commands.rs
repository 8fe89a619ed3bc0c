use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use imflow::optimizer::{self, OracleOptions};
use imflow::regulator;
use imflow::sim::Trajectory;
use imflow::{table, CostFunction, Scenario};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

/// Process exit codes. Higher is more severe; batch runs report the worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    Failed = 1,
    BadInput = 2,
    Diverged = 3,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Scenario, Status> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Err(Status::BadInput);
        }
    };
    Scenario::from_json(&text).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        Status::BadInput
    })
}

fn print_checks(checks: &[imflow::scenario::Check]) {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        let mark = if c.passed { "pass" } else { "FAIL" };
        println!("{mark}  {:width$}  {}", c.name, c.detail);
    }
}

pub fn validate(path: &Path) -> Status {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let checks = scenario.validate();
    print_checks(&checks);
    if checks.iter().all(|c| c.passed) {
        Status::Ok
    } else {
        Status::Failed
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned())
}

/// CSV and report destinations: `--out`/env directory first, then the
/// scenario's outputs section, then the working directory.
fn destinations(path: &Path, scenario: &Scenario, overrides: &Overrides) -> (PathBuf, PathBuf) {
    let name = stem(path);
    match &overrides.out {
        Some(dir) => (dir.join(format!("{name}.csv")), dir.join(format!("{name}.report.json"))),
        None => (
            scenario
                .outputs
                .csv
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{name}.csv"))),
            scenario
                .outputs
                .report
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{name}.report.json"))),
        ),
    }
}

fn last(series: &[f64]) -> f64 {
    series.last().copied().unwrap_or(f64::NAN)
}

/// JSON has no NaN; unavailable metrics become null.
fn num(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn report(traj: &Trajectory) -> serde_json::Value {
    json!({
        "samples": traj.len(),
        "final_time": num(last(&traj.times)),
        "agreement_error": num(last(&traj.agreement_error)),
        "routing_error": num(last(&traj.routing_error)),
        "gamma_dist": num(last(&traj.gamma_dist)),
        "lyapunov": num(last(&traj.lyapunov)),
        "max_state_norm": num(traj.max_state_norm),
        "dissipation_max_violation": traj.dissipation.map(|d| num(d.max_rate_violation)),
        "diverged": traj.diverged(),
        "divergence": traj.divergence.as_ref().map(|(t, why)| json!({"time": t, "reason": why})),
    })
}

fn write_outputs(traj: &Trajectory, csv_path: &Path, report_path: &Path) -> anyhow::Result<()> {
    for p in [csv_path, report_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let file = fs::File::create(csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    table::write_trajectory(traj, std::io::BufWriter::new(file))?;
    let text = serde_json::to_string_pretty(&report(traj))?;
    fs::write(report_path, text + "\n").with_context(|| format!("writing {}", report_path.display()))?;
    Ok(())
}

pub fn run(path: &Path, overrides: &Overrides) -> Status {
    let mut scenario = match load(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    if let Some(dt) = overrides.dt {
        scenario.sim.dt = dt;
    }
    if let Some(h) = overrides.horizon {
        scenario.sim.horizon = h;
    }
    let checks = scenario.validate();
    if !checks.iter().all(|c| c.passed) {
        eprintln!("{}: validation failed", path.display());
        print_checks(&checks);
        return Status::Failed;
    }
    let built = match scenario.build() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::Failed;
        }
    };
    let traj = match built.closed_loop.run(&built.initial, built.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::BadInput;
        }
    };
    let (csv_path, report_path) = destinations(path, &scenario, overrides);
    if let Err(e) = write_outputs(&traj, &csv_path, &report_path) {
        eprintln!("{}: {e:#}", path.display());
        return Status::Failed;
    }
    println!(
        "{}: {} samples, agreement_error(T) = {:.3e}, routing_error(T) = {:.3e} -> {}",
        path.display(),
        traj.len(),
        last(&traj.agreement_error),
        last(&traj.routing_error),
        csv_path.display()
    );
    match &traj.divergence {
        Some((t, why)) => {
            eprintln!("{}: diverged at t = {t}: {why}", path.display());
            Status::Diverged
        }
        None => Status::Ok,
    }
}

pub fn run_batch(dir: &Path, overrides: &Overrides) -> Status {
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            eprintln!("{}: {e}", dir.display());
            return Status::BadInput;
        }
    };
    files.sort();
    if files.is_empty() {
        eprintln!("{}: no scenario files", dir.display());
        return Status::BadInput;
    }
    // each scenario writes its own files, so runs are independent
    let batch_overrides = Overrides {
        out: Some(overrides.out.clone().unwrap_or_else(|| dir.to_path_buf())),
        ..overrides.clone()
    };
    files
        .par_iter()
        .map(|f| run(f, &batch_overrides))
        .max()
        .unwrap_or(Status::Ok)
}

pub fn oracle(path: &Path) -> Status {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let parts = (|| {
        let graph = scenario.graph()?;
        let exo = scenario.exosystem()?;
        let plant = scenario.plant()?;
        let cost = match scenario.cost()? {
            Some(c) => c,
            None => CostFunction::quadratic(&scenario.weights())?,
        };
        let (w0, _) = scenario.initial_conditions(&exo, &plant)?;
        Ok::<_, imflow::Error>((graph, plant, cost, w0))
    })();
    let (graph, plant, cost, w0) = match parts {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::BadInput;
        }
    };
    if !plant.is_inventory() {
        eprintln!("{}: oracle comparison needs an inventory plant", path.display());
        return Status::BadInput;
    }
    let supply = plant.supply_matrix() * w0;
    let result = optimizer::solve_static(&graph, &cost, &supply).and_then(|point| {
        optimizer::oracle_projected_gradient(&graph, &cost, &supply, OracleOptions::default())
            .map(|o| (point, o))
    });
    let (point, oracle_flow) = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::Failed;
        }
    };
    let gap = (&point.flow - &oracle_flow).amax();
    let (stat, feas) = optimizer::kkt_residual(&point, &graph, &cost);
    println!("supply         {:?}", supply.as_slice());
    println!("solve_static   {:?}", point.flow.as_slice());
    println!("oracle         {:?}", oracle_flow.as_slice());
    println!("gap (inf-norm) {gap:.3e}");
    println!("kkt residuals  stationarity {stat:.3e}, feasibility {feas:.3e}");
    if gap <= 1e-5 {
        Status::Ok
    } else {
        Status::Failed
    }
}

fn show(name: &str, m: &DMatrix<f64>) {
    print!("{name} ={m:.6}");
}

pub fn regulator(path: &Path) -> Status {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let parts = (|| Ok::<_, imflow::Error>((scenario.graph()?, scenario.exosystem()?, scenario.plant()?)))();
    let (graph, exo, plant) = match parts {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::BadInput;
        }
    };
    let Some(data) = plant.linear_data() else {
        eprintln!("{}: regulator equations need a linear plant", path.display());
        return Status::BadInput;
    };
    let s = exo.generator();
    let p = plant.output_dim();
    let rank = match regulator::rank_feasibility(&data, &s, &graph, p) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Status::BadInput;
        }
    };
    if plant.is_inventory() {
        match regulator::compute_h(&graph, &scenario.weights(), &plant.supply_matrix()) {
            Ok(h) => {
                show("H_dual", &h.dual);
                show("H_flow", &h.flow);
            }
            Err(e) => println!("compute_h: {e}"),
        }
    }
    let status = match regulator::solve_sylvester(&data, &s, &graph, p) {
        Ok(sol) => {
            show("Pi", &sol.pi);
            show("Gamma", &sol.gamma);
            show("H", &sol.h);
            println!("sylvester residual {:.3e}", sol.sylvester_residual);
            println!("output residual    {:.3e}", sol.output_residual);
            Status::Ok
        }
        Err(e) => {
            println!("{e}");
            Status::Failed
        }
    };
    if rank.feasible {
        println!("rank feasibility: pass");
        status
    } else {
        let at: Vec<String> = rank.failing.iter().map(|mu| mu.to_string()).collect();
        println!("rank feasibility: FAIL at {}", at.join(", "));
        Status::Failed
    }
}
