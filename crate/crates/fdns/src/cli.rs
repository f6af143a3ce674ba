//! Command-line driver. Exit codes: 0 success, 1 failed check or runtime
//! error, 2 Picard hit the iteration cap, 3 Picard diverged, 64 usage or
//! configuration error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fdns_core::fixedpoint::Verdict;
use fdns_core::navier_stokes::ValidationReport;
use fdns_core::sde::{GridDrift, ZeroDrift};
use fdns_core::Executor;

use crate::checks::{
    flow_cases, flow_table, forward_check, forward_header, forward_table, gradient_scaling, gradient_triad,
    heat_sine_gradient, scaling_table, triad_header, triad_table,
};
use crate::config::{parse_override, read_config, scenario_config, PresetKind, RunConfig};
use crate::oracle::{cole_hopf_oracle, mild_oracle};
use crate::output::{report_csv, RunDir};
use crate::scenarios::{self, mild_options, picard_trace, ScenarioRun};
use crate::{exit, RayonExecutor, RunError};

#[derive(Debug, Parser)]
#[command(name = "fdns", version, about = "Monte Carlo fixed-point solver for Navier-Stokes representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Root of the output directories.
    #[arg(long, env = "FDNS_OUT", default_value = "fdns-out")]
    pub out: PathBuf,
    /// Use a non-converged fixed point and replace differing earlier runs.
    #[arg(long)]
    pub force: bool,
    /// Extra `key=value` configuration overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print progress to stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the fixed point and represent the velocity.
    Solve(Common),
    /// Run a validation scenario against its reference.
    Validate {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the deterministic reference solutions.
    Oracle(Common),
    /// Gradient scaling table and estimator comparisons.
    Gradcheck(Common),
    /// Divergence and pressure-criterion diagnostics.
    Divcheck(Common),
    /// Bitwise flow-property check.
    Flowcheck(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Oracle(c)
            | Command::Gradcheck(c)
            | Command::Divcheck(c)
            | Command::Flowcheck(c)
            | Command::Validate { common: c, .. } => c,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Validate { .. } => "validate",
            Command::Oracle(_) => "oracle",
            Command::Gradcheck(_) => "gradcheck",
            Command::Divcheck(_) => "divcheck",
            Command::Flowcheck(_) => "flowcheck",
        }
    }
}

fn load_config(common: &Common, base: Option<&str>) -> Result<RunConfig, RunError> {
    let mut overrides = common
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let file = common.config.as_deref().map(read_config).transpose()?;
    let layers: Vec<&str> = base.into_iter().chain(file.as_deref()).collect();
    Ok(RunConfig::parse_layers(&layers, &overrides)?)
}

/// Runs a parsed command and returns its exit code; errors are reported on
/// stderr.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok((code, dir)) => {
            println!("{}", dir.display());
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a command, returning its exit code and output directory.
pub fn execute(command: &Command) -> Result<(i32, PathBuf), RunError> {
    let common = command.common();
    let scenario = match command {
        Command::Validate { scenario, .. } => Some(scenario.as_str()),
        _ => None,
    };
    let base = match scenario {
        Some(name) => Some(scenario_config(name).ok_or_else(|| {
            RunError::Usage(format!(
                "unknown scenario `{name}` (expected one of {})",
                scenarios::SCENARIOS.join(", ")
            ))
        })?),
        None => None,
    };
    let cfg = load_config(common, base)?;
    let exec = RayonExecutor::new(common.threads).map_err(|e| RunError::Usage(e.to_string()))?;
    let label = match scenario {
        Some(s) => format!("{}-{s}", command.name()),
        None => command.name().to_string(),
    };
    let mut dir = RunDir::create(&common.out, &label, &cfg, common.force)?;
    dir.phase("setup");
    let code = match command {
        Command::Solve(_) => cmd_solve(&cfg, &exec, common, &mut dir)?,
        Command::Validate { scenario, .. } => {
            let run = scenarios::validate(scenario, &cfg, &exec, common.force, common.verbose)?;
            dir.phase("validate");
            write_run(&mut dir, &run)?
        }
        Command::Oracle(_) => cmd_oracle(&cfg, &mut dir)?,
        Command::Gradcheck(_) => cmd_gradcheck(&cfg, &exec, common, &mut dir)?,
        Command::Divcheck(_) => {
            let run = scenarios::divcheck(&cfg, &exec, common.force, common.verbose)?;
            dir.phase("divcheck");
            write_run(&mut dir, &run)?
        }
        Command::Flowcheck(_) => cmd_flowcheck(&cfg, &exec, &mut dir)?,
    };
    dir.phase("output");
    let path = dir.finish(&cfg, code, exec.threads())?;
    Ok((code, path))
}

fn write_run(dir: &mut RunDir, run: &ScenarioRun) -> Result<i32, RunError> {
    for (name, field) in &run.fields {
        dir.write_field(name, field)?;
    }
    for (name, csv) in &run.tables {
        dir.write_csv(name, csv)?;
    }
    dir.write_csv("validation_report.csv", &report_csv(&run.report))?;
    print_report(&run.report);
    Ok(run.exit_code())
}

fn print_report(report: &ValidationReport) {
    for c in &report.criteria {
        eprintln!(
            "{:<4} {:<34} {:>12.4e} (tolerance {:.4e})",
            if c.pass { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
}

fn cmd_solve<E: Executor>(cfg: &RunConfig, exec: &E, common: &Common, dir: &mut RunDir) -> Result<i32, RunError> {
    let set = cfg.coefficients()?;
    let out = scenarios::solve(cfg, &set, exec, common.force, common.verbose)?;
    dir.phase("solve");
    dir.write_csv("picard_trace.csv", &picard_trace(&out.state))?;
    dir.write_field("drift.fdns", &out.state.drift)?;
    if let Some(sol) = &out.solution {
        dir.write_field("velocity.fdns", &sol.u)?;
        dir.write_field("velocity_se.fdns", &sol.u_se)?;
        if !sol.consistent() {
            eprintln!(
                "warning: representation consistency {:.3e} exceeds {:.3e}",
                sol.consistency, sol.consistency_tolerance
            );
        }
    }
    eprintln!("{} after {} iterations", out.state.verdict.name(), out.state.iteration);
    Ok(out.exit_code())
}

fn cmd_oracle(cfg: &RunConfig, dir: &mut RunDir) -> Result<i32, RunError> {
    let set = cfg.coefficients()?;
    let mut report = ValidationReport::new("oracle");
    let (mild, iterations) = mild_oracle(&set, &cfg.grid, &mild_options(cfg))?;
    dir.phase("mild");
    eprintln!("mild oracle converged in {iterations} iterations");
    dir.write_field("mild.fdns", &mild)?;
    if cfg.preset == PresetKind::Burgers {
        let a = cfg.amplitude;
        let ch = cole_hopf_oracle(
            |x| a * (2.0 * std::f64::consts::PI * x).sin(),
            cfg.kappa,
            cfg.horizon,
            cfg.grid.time_steps,
            cfg.grid.n,
            cfg.usize("oracle.resolution"),
        )?;
        dir.phase("cole_hopf");
        report.check("oracle_agreement", mild.max_abs_diff(&ch)?, cfg.f64("validate.oracle_tol"));
        dir.write_field("cole_hopf.fdns", &ch)?;
    }
    dir.write_csv("oracle_report.csv", &report_csv(&report))?;
    print_report(&report);
    Ok(if report.passed() { exit::OK } else { exit::FAILED })
}

fn cmd_gradcheck<E: Executor>(cfg: &RunConfig, exec: &E, common: &Common, dir: &mut RunDir) -> Result<i32, RunError> {
    let mut report = ValidationReport::new("gradcheck");
    let scaling = gradient_scaling(cfg, exec)?;
    dir.phase("scaling");
    dir.write_csv("gradcheck.csv", &scaling_table(&scaling))?;
    let slope = scaling.slope.unwrap_or(f64::NAN);
    report.check("slope_above_min", cfg.f64("gradcheck.slope_min") - slope, 0.0);
    report.check("slope_below_max", slope - cfg.f64("gradcheck.slope_max"), 0.0);

    let set = cfg.coefficients()?;
    let cases = cfg.usize("gradcheck.cases");
    let particles = cfg.usize("gradcheck.triad_particles");
    let se_units = cfg.f64("validate.se_units");
    let (fwd_n, half) = (cfg.usize("forward.particles"), cfg.usize("forward.half_steps"));
    let mut triad = triad_header();
    let mut forward = forward_header();
    let zero = ZeroDrift(set.dim());
    let exact = heat_sine_gradient(cfg.kappa);
    let rows = gradient_triad(&set, &zero, &cfg.mc, cfg.seed, cases, particles, exec, Some(&exact))?;
    triad_table("zero", &rows, &mut triad);
    report.check("triad_zero_drift", rows.iter().map(|r| r.agreement).fold(0.0, f64::max), se_units);
    if set.domain.is_torus() {
        let worst = rows.iter().filter_map(|r| r.exact.map(|e| e.1)).fold(0.0, f64::max);
        report.check("triad_zero_drift_exact", worst, se_units);
    }
    let fwd = forward_check(&set, &zero, &cfg.mc, cfg.seed, half, fwd_n, exec)?;
    forward_table("zero", &fwd, &mut forward);
    report.check("forward_zero_drift", fwd.iter().map(|r| r.1.report.se_units).fold(0.0, f64::max), se_units);
    dir.phase("zero_drift");

    if set.has_drift() || !matches!(cfg.preset, PresetKind::Zero | PresetKind::Constant) {
        let out = scenarios::solve(cfg, &set, exec, common.force, common.verbose)?;
        if out.state.verdict != Verdict::Converged && !common.force {
            report.check("picard_gap", out.state.gaps.last().copied().unwrap_or(f64::NAN), cfg.picard.tol);
        } else {
            let drift = GridDrift { field: out.state.drift };
            let rows = gradient_triad(&set, &drift, &cfg.mc, cfg.seed, cases, particles, exec, None)?;
            triad_table("fixed_point", &rows, &mut triad);
            report.check("triad_fixed_point", rows.iter().map(|r| r.agreement).fold(0.0, f64::max), se_units);
            let fwd = forward_check(&set, &drift, &cfg.mc, cfg.seed, half, fwd_n, exec)?;
            forward_table("fixed_point", &fwd, &mut forward);
            report.check(
                "forward_fixed_point",
                fwd.iter().map(|r| r.1.report.se_units).fold(0.0, f64::max),
                se_units,
            );
        }
        dir.phase("fixed_point_drift");
    }
    dir.write_csv("triad.csv", &triad)?;
    dir.write_csv("forward.csv", &forward)?;
    dir.write_csv("validation_report.csv", &report_csv(&report))?;
    print_report(&report);
    Ok(if report.passed() { exit::OK } else { exit::FAILED })
}

fn cmd_flowcheck<E: Executor>(cfg: &RunConfig, exec: &E, dir: &mut RunDir) -> Result<i32, RunError> {
    let rows = flow_cases(cfg, exec)?;
    dir.phase("flow");
    dir.write_csv("flowcheck.csv", &flow_table(&rows))?;
    let mut report = ValidationReport::new("flowcheck");
    report.check("max_discrepancy", rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max), 0.0);
    // a different second-leg seed must be visible
    let weakest = rows.iter().map(|r| r.control).fold(f64::INFINITY, f64::min);
    report.check("control_detects_foreign_noise", if weakest > 0.0 { 0.0 } else { 1.0 }, 0.0);
    dir.write_csv("validation_report.csv", &report_csv(&report))?;
    print_report(&report);
    Ok(if report.passed() { exit::OK } else { exit::FAILED })
}
