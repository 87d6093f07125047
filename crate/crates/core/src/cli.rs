//! Command dispatch behind the `dampwave` binary.
//!
//! Every command writes its outputs into the output directory. JSON reports
//! share an envelope carrying the schema version, the crate version, the
//! command name and the SHA-256 of the canonical configuration text.
//!
//! | command          | outputs                                         |
//! |------------------|-------------------------------------------------|
//! | `validate`       | `validate.json`                                 |
//! | `rays`           | `rays.json`                                     |
//! | `simulate`       | `trace.csv` (`t,energy,dissipation`), `trace.svg`, `simulate.json` |
//! | `decay-fit`      | `trace.csv`, `fit.svg`, `decay-fit.json`        |
//! | `packets-verify` | `packets-verify.json`                           |
//! | `lemma-check`    | `lemma-check.json`                              |
//! | `observability`  | `observability.csv` (`seed,ratio`), `observability.json` |

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{serialize_config, BasisChoice, ExperimentConfig, InitialData, SolverKind};
use crate::decay::{
    classify_halving, fit_power_law, lemma_b_verify, observability_ratio_with, EnergyTrace, LemmaParams,
};
use crate::error::{Error, Result};
use crate::fdtd::{cfl_limit, init_grid, run};
use crate::geometry::DomainSpec;
use crate::packets::verify_identities;
use crate::plot::{emit_svg, PlotStyle};
use crate::rays::gcc_check;
use crate::spectral::{build_basis, damped_trace, damping_matrix, mass_matrix, EigenBasis, ModalState};

/// Version of the JSON envelope and report layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Quadrature order for damping matrices built from a config.
const DAMPING_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Rays,
    Simulate,
    DecayFit,
    PacketsVerify,
    LemmaCheck,
    Observability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Rays => "rays",
            Command::Simulate => "simulate",
            Command::DecayFit => "decay-fit",
            Command::PacketsVerify => "packets-verify",
            Command::LemmaCheck => "lemma-check",
            Command::Observability => "observability",
        }
    }
}

/// Result of a successful dispatch. `passed == false` means the command ran
/// but one of its checks failed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub passed: bool,
}

/// Process exit status: 0 success, 2 config error, 3 numerical failure,
/// 4 failed check.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 4,
        Err(Error::Config(_) | Error::Validation { .. } | Error::Parse(_)) => 2,
        Err(_) => 3,
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(serialize_config(config).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn envelope(command: &str, hash: Option<&str>, body: (&str, Value)) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_hash": hash,
        body.0: body.1,
    })
}

/// JSON record describing a failed command.
pub fn error_record(command: Command, config: Option<&ExperimentConfig>, err: &Error) -> Value {
    let messages = match err {
        Error::Config(list) => list.clone(),
        other => vec![other.to_string()],
    };
    let hash = config.map(config_hash);
    envelope(command.name(), hash.as_deref(), ("error", json!({ "messages": messages })))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(out.join(name), contents)?;
    Ok(())
}

fn write_report(out: &Path, command: Command, config: &ExperimentConfig, result: Value) -> Result<Value> {
    let report = envelope(command.name(), Some(&config_hash(config)), ("result", result));
    write(out, &format!("{}.json", command.name()), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(report)
}

/// Runs `command` and writes its outputs into `out` (created if missing).
pub fn run_command(command: Command, config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let spec = config.spec()?;
    let (result, passed) = match command {
        Command::Validate => (validate(config, &spec)?, true),
        Command::Rays => rays(config, &spec)?,
        Command::Simulate => simulate(config, &spec, out)?,
        Command::DecayFit => decay_fit(config, &spec, out)?,
        Command::PacketsVerify => {
            let report = verify_identities(config.seed);
            let passed = report.passed;
            (serde_json::to_value(report)?, passed)
        }
        Command::LemmaCheck => lemma_check(config)?,
        Command::Observability => observability(config, &spec, out)?,
    };
    let report = write_report(out, command, config, result)?;
    Ok(Outcome { report, passed })
}

fn validate(config: &ExperimentConfig, spec: &DomainSpec) -> Result<Value> {
    Ok(json!({
        "config": config,
        "h_o": spec.h_o(),
        "diameter": spec.diameter(),
        "horizon": config.horizon()?,
    }))
}

fn rays(config: &ExperimentConfig, spec: &DomainSpec) -> Result<(Value, bool)> {
    let a = &config.analysis;
    let report = gcc_check(spec, a.region, config.horizon()?, a.positions, a.directions, config.seed);
    let passed = report.controlled_fraction == 1.0 && report.corner_terminated == 0;
    Ok((serde_json::to_value(report)?, passed))
}

fn basis_for(config: &ExperimentConfig, spec: &DomainSpec) -> Result<Arc<EigenBasis>> {
    Ok(Arc::new(match &config.solver.basis {
        BasisChoice::Lowest(n) => build_basis(spec, *n)?,
        BasisChoice::IndexBox(b) => EigenBasis::from_index_box(spec, b)?,
    }))
}

fn initial_state(config: &ExperimentConfig, basis: Arc<EigenBasis>) -> Result<ModalState> {
    match config.initial {
        InitialData::SingleMode { mode, velocity } => ModalState::single_mode(basis, mode, velocity),
        InitialData::TrappedStack { count } => ModalState::trapped_stack(basis, count),
        InitialData::RandomSmooth => Ok(ModalState::random_smooth(basis, config.seed)),
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    solver: SolverKind,
    modes: usize,
    records: usize,
    initial_energy: f64,
    final_energy: f64,
    dissipated: f64,
    /// `|E(T) + dissipated - E(0)| / E(0)`.
    balance_residual: f64,
}

fn simulation(config: &ExperimentConfig, spec: &DomainSpec) -> Result<(EnergyTrace, SimulationSummary)> {
    let basis = basis_for(config, spec)?;
    let state = initial_state(config, basis.clone())?;
    let s = &config.solver;
    let trace = match s.kind {
        SolverKind::Galerkin => {
            let d = damping_matrix(&basis, &config.damping, DAMPING_ORDER);
            if !d.converged {
                log::warn!("damping quadrature refinement delta {:e}", d.refinement_delta);
            }
            damped_trace(&state, &d, s.t_final, s.record_every)?.trace
        }
        SolverKind::Fdtd => {
            let spacing: Vec<f64> = spec.side_lengths().iter().map(|l| l / s.resolution as f64).collect();
            let dt = match s.dt {
                Some(dt) => dt,
                None => s.record_every / (s.record_every / (0.5 * cfl_limit(&spacing))).ceil(),
            };
            let w0 = |x: &[f64]| state.synthesize_u(x, 0.0).map(|v| v.0).unwrap_or(0.0);
            let w1 = |x: &[f64]| state.synthesize_u(x, 0.0).map(|v| v.1).unwrap_or(0.0);
            let mut grid = init_grid(spec, &config.damping, s.resolution, dt, w0, w1)?;
            run(&mut grid, s.t_final, s.record_every)?
        }
    };
    let e0 = trace.energies[0];
    let last = trace.len() - 1;
    let lost = trace.dissipation.as_ref().map_or(0.0, |d| d[last]);
    let summary = SimulationSummary {
        solver: s.kind,
        modes: basis.len(),
        records: trace.len(),
        initial_energy: e0,
        final_energy: trace.energies[last],
        dissipated: lost,
        balance_residual: if e0 > 0.0 { (trace.energies[last] + lost - e0).abs() / e0 } else { 0.0 },
    };
    Ok((trace, summary))
}

fn simulate(config: &ExperimentConfig, spec: &DomainSpec, out: &Path) -> Result<(Value, bool)> {
    let (trace, summary) = simulation(config, spec)?;
    write(out, "trace.csv", &trace.to_csv())?;
    write(out, "trace.svg", &emit_svg(&trace, None, &PlotStyle::default())?)?;
    Ok((serde_json::to_value(summary)?, true))
}

fn decay_fit(config: &ExperimentConfig, spec: &DomainSpec, out: &Path) -> Result<(Value, bool)> {
    let (trace, summary) = simulation(config, spec)?;
    write(out, "trace.csv", &trace.to_csv())?;
    let t = config.solver.t_final;
    let window = config.analysis.fit_window.unwrap_or((t / 30.0, t / 3.0));
    let fit = fit_power_law(&trace, window)?;
    let halving = classify_halving(&trace, config.analysis.skip)?;
    let style = PlotStyle { log_log: true, ..PlotStyle::default() };
    write(out, "fit.svg", &emit_svg(&trace, Some(&fit), &style)?)?;
    Ok((json!({ "simulation": summary, "fit": fit, "halving": halving }), true))
}

fn lemma_check(config: &ExperimentConfig) -> Result<(Value, bool)> {
    let l = &config.lemma;
    let params = LemmaParams::new(l.c1, l.c2, l.beta, l.gamma)?;
    // F(0) = 1, then geometric samples from 1e-3 up to s_max.
    let count = 600;
    let ratio = (l.s_max / 1e-3).powf(1.0 / (count - 1) as f64);
    let grid: Vec<f64> = std::iter::once(0.0).chain((0..count).map(|k| 1e-3 * ratio.powi(k))).collect();
    let values: Vec<f64> = grid.iter().map(|s| (1.0 + l.rate * s).powf(-l.power)).collect();
    let t_grid: Vec<f64> = (0..=98).map(|k| 2.0 + (l.t_max - 2.0) * k as f64 / 98.0).collect();
    let report = lemma_b_verify(&grid, &values, &params, &t_grid)?;
    let passed = report.conclusion_violations == 0;
    Ok((serde_json::to_value(report)?, passed))
}

fn observability(config: &ExperimentConfig, spec: &DomainSpec, out: &Path) -> Result<(Value, bool)> {
    let basis = basis_for(config, spec)?;
    let mass = mass_matrix(&basis, config.analysis.region);
    let horizon = config.horizon()?;
    let mut ratios = Vec::with_capacity(config.analysis.states);
    let mut csv = String::from("seed,ratio\n");
    for k in 0..config.analysis.states as u64 {
        let seed = config.seed.wrapping_add(k);
        let state = ModalState::random_smooth(basis.clone(), seed);
        let r = observability_ratio_with(&state, &mass, horizon)?;
        csv.push_str(&format!("{seed},{r:?}\n"));
        ratios.push(r);
    }
    write(out, "observability.csv", &csv)?;
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let max = sorted[n - 1];
    let passed = ratios.iter().all(|r| r.is_finite()) && max <= 10.0 * median;
    Ok((
        json!({ "region": config.analysis.region, "horizon": horizon, "states": n, "median": median, "max": max, "min": sorted[0] }),
        passed,
    ))
}
