//! Solve and validation pipelines shared by the command-line tool and the
//! integration tests.

use std::f64::consts::PI;

use fdns_core::coefficients::CoefficientSet;
use fdns_core::fields::{Grid, SpaceTimeField};
use fdns_core::fixedpoint::{picard_with_kernel, FlowKernel, PicardState, StandardFunctional, Verdict};
use fdns_core::navier_stokes::{
    divergence_evolution_residual, divergence_residual, error_profile, regularity_check, representation_u,
    taylor_green_exact, DivergenceReport, RegularityTable, SolutionBundle, ValidationReport,
};
use fdns_core::rng::RngContract;
use fdns_core::Executor;

use crate::config::{PresetKind, RunConfig};
use crate::oracle::{cole_hopf_oracle, mild_oracle, MildOptions};
use crate::output::{num, Csv};
use crate::{exit, RunError};

/// Validation scenarios known to `validate --scenario`.
pub const SCENARIOS: &[&str] = &["trivial-constant", "burgers1d", "taylor-green", "heat-limit"];

pub struct SolveOutcome {
    pub state: PicardState,
    /// Present when the iteration converged or the caller forced it.
    pub solution: Option<SolutionBundle>,
}

impl SolveOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.state.verdict {
            Verdict::Converged => exit::OK,
            Verdict::MaxIterations => exit::MAX_ITERATIONS,
            Verdict::Diverged => exit::DIVERGED,
        }
    }
}

/// Picard iteration followed by the representation of the velocity.
pub fn solve<E: Executor>(
    cfg: &RunConfig,
    set: &CoefficientSet,
    exec: &E,
    force: bool,
    verbose: bool,
) -> Result<SolveOutcome, RunError> {
    let kernel = FlowKernel::new(set, &cfg.grid, &cfg.mc)?;
    let rng = RngContract::new(cfg.seed);
    let state = picard_with_kernel(&kernel, &cfg.picard, &StandardFunctional, &rng, exec, |s| {
        if verbose {
            eprintln!(
                "picard k={} gap={:.3e} max_se={:.3e}",
                s.iteration,
                s.gaps.last().copied().unwrap_or(0.0),
                s.max_node_se.last().copied().unwrap_or(0.0)
            );
        }
    })?;
    let solution = if state.verdict == Verdict::Converged || force {
        let mut sol = representation_u(&kernel, &state, &rng, exec, force)?;
        sol.provenance.config_hash = cfg.hash_u64();
        Some(sol)
    } else {
        None
    };
    Ok(SolveOutcome { state, solution })
}

/// `k,gap,weighted_gap_lambda<λ>...,max_node_se` for `k >= 1`.
pub fn picard_trace(state: &PicardState) -> Csv {
    let mut header = vec!["k".to_string(), "gap".to_string()];
    header.extend(state.lambdas.iter().map(|l| format!("weighted_gap_lambda{l}")));
    header.push("max_node_se".into());
    let mut csv = Csv {
        header,
        rows: Vec::new(),
    };
    for (i, gap) in state.gaps.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), num(*gap)];
        row.extend(state.weighted_gaps[i].iter().map(|w| num(*w)));
        row.push(num(state.max_node_se[i + 1]));
        csv.push(row);
    }
    csv
}

/// Everything a validation run produced.
pub struct ScenarioRun {
    pub report: ValidationReport,
    pub state: Option<PicardState>,
    pub solution: Option<SolutionBundle>,
    pub divergence: Option<DivergenceReport>,
    pub regularity: Option<RegularityTable>,
    /// Field dumps to write, by file name.
    pub fields: Vec<(String, SpaceTimeField)>,
    /// Extra tables to write, by file name.
    pub tables: Vec<(String, Csv)>,
}

impl ScenarioRun {
    fn new(name: &str) -> Self {
        Self {
            report: ValidationReport::new(name),
            state: None,
            solution: None,
            divergence: None,
            regularity: None,
            fields: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            exit::OK
        } else {
            exit::FAILED
        }
    }
}

fn sup_abs(f: &SpaceTimeField) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn divergence_table(div: &DivergenceReport) -> Csv {
    let mut csv = Csv::new(&["t", "divergence", "budget", "pw", "pw_budget"]);
    for m in 0..div.times.len() {
        csv.push(vec![
            num(div.times[m]),
            num(div.divergence[m]),
            num(div.divergence_budget[m]),
            num(div.pw_residual[m]),
            num(div.pw_budget[m]),
        ]);
    }
    csv
}

fn regularity_table(table: &RegularityTable) -> Csv {
    let mut csv = Csv::new(&["t", "ratio"]);
    for (t, r) in table.times.iter().zip(&table.ratios) {
        csv.push(vec![num(*t), num(*r)]);
    }
    csv
}

/// Solves and records the generic rows. Returns `None` when no solution is
/// available (the report then already fails).
fn solve_into<E: Executor>(
    run: &mut ScenarioRun,
    cfg: &RunConfig,
    set: &CoefficientSet,
    exec: &E,
    force: bool,
    verbose: bool,
) -> Result<Option<SolutionBundle>, RunError> {
    let out = solve(cfg, set, exec, force, verbose)?;
    let last_gap = out.state.gaps.last().copied().unwrap_or(f64::INFINITY);
    run.report.check("picard_gap", last_gap, cfg.picard.tol);
    run.tables.push(("picard_trace.csv".into(), picard_trace(&out.state)));
    let sol = out.solution.clone();
    if let Some(s) = &sol {
        run.report
            .check("representation_consistency", s.consistency, s.consistency_tolerance);
        run.fields.push(("velocity.fdns".into(), s.u.clone()));
        run.fields.push(("velocity_se.fdns".into(), s.u_se.clone()));
    }
    run.state = Some(out.state);
    run.solution = sol.clone();
    Ok(sol)
}

fn record_errors(run: &mut ScenarioRun, u: &SpaceTimeField, reference: &SpaceTimeField) -> Result<Vec<f64>, RunError> {
    let profile = error_profile(u, reference)?;
    run.report.times = u.times.clone();
    run.report.error_profile = profile.clone();
    run.fields.push(("reference.fdns".into(), reference.clone()));
    Ok(profile)
}

fn error_table(times: &[f64], columns: &[(&str, &[f64])]) -> Csv {
    let mut header = vec!["t"];
    header.extend(columns.iter().map(|(n, _)| *n));
    let mut csv = Csv::new(&header);
    for (m, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(columns.iter().map(|(_, c)| num(c[m])));
        csv.push(row);
    }
    csv
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(*x))
}

/// Runs one of [`SCENARIOS`] under `cfg`.
pub fn validate<E: Executor>(
    scenario: &str,
    cfg: &RunConfig,
    exec: &E,
    force: bool,
    verbose: bool,
) -> Result<ScenarioRun, RunError> {
    let set = cfg.coefficients()?;
    let mut run = ScenarioRun::new(scenario);
    let frac = cfg.f64("validate.error_fraction");
    let grid = Grid::new(set.domain, cfg.grid.n)?;
    match scenario {
        "trivial-constant" => {
            if cfg.preset != PresetKind::Constant {
                return Err(RunError::Usage("trivial-constant needs preset = constant".into()));
            }
            let Some(sol) = solve_into(&mut run, cfg, &set, exec, force, verbose)? else {
                return Ok(run);
            };
            let state = run.state.as_ref().unwrap();
            let (iterations, first_gap) = (state.iteration as f64, state.gaps.first().copied().unwrap_or(f64::NAN));
            run.report.check("picard_iterations", iterations, 1.0);
            run.report.check("first_gap", first_gap, 0.0);
            let c = cfg.constant.clone();
            let reference = SpaceTimeField::from_fn(grid, cfg.horizon, cfg.grid.time_steps, c.len(), |_, _, o| {
                o.copy_from_slice(&c)
            })?;
            let profile = record_errors(&mut run, &sol.u, &reference)?;
            run.report.check("sup_error", sup(&profile), 0.0);
            run.report.check("max_standard_error", sol.max_se(), 0.0);
            run.tables
                .push(("error_profile.csv".into(), error_table(&sol.u.times, &[("error", &profile)])));
        }
        "burgers1d" | "heat-limit" => {
            if cfg.preset != PresetKind::Burgers {
                return Err(RunError::Usage(format!("{scenario} needs preset = burgers1d")));
            }
            let amplitude = cfg.amplitude;
            let (kappa, horizon, steps, n) = (cfg.kappa, cfg.horizon, cfg.grid.time_steps, cfg.grid.n);
            let Some(sol) = solve_into(&mut run, cfg, &set, exec, force, verbose)? else {
                return Ok(run);
            };
            let se_units = cfg.f64("validate.se_units");
            if scenario == "burgers1d" {
                let ch = cole_hopf_oracle(
                    |x| amplitude * (2.0 * PI * x).sin(),
                    kappa,
                    horizon,
                    steps,
                    n,
                    cfg.usize("oracle.resolution"),
                )?;
                let (mild, _) = mild_oracle(&set, &cfg.grid, &mild_options(cfg))?;
                run.report
                    .check("oracle_agreement", mild.max_abs_diff(&ch)?, cfg.f64("validate.oracle_tol"));
                let scale = sup_abs(&ch);
                let tol = frac * scale;
                let profile = record_errors(&mut run, &sol.u, &ch)?;
                let mild_profile = error_profile(&sol.u, &mild)?;
                run.report.check("sup_error_cole_hopf", sup(&profile), tol);
                run.report.check("sup_error_mild", sup(&mild_profile), tol);
                run.report.check("noise_budget", se_units * sol.max_se(), tol);
                let state = run.state.as_ref().unwrap();
                let worst_ratio = state.gap_ratios().iter().map(|r| r.unwrap_or(0.0)).fold(0.0, f64::max);
                run.report
                    .check("max_gap_ratio", worst_ratio, cfg.f64("validate.contraction_ratio"));
                let table = regularity_check(&sol.u, &set, cfg.f64("validate.regularity_flatness"))?;
                let flatness = if table.max == 0.0 { 0.0 } else { table.max / table.median };
                run.report.check("regularity_flatness", flatness, table.flatness);
                run.tables.push(("regularity.csv".into(), regularity_table(&table)));
                run.regularity = Some(table);
                run.tables.push((
                    "error_profile.csv".into(),
                    error_table(&sol.u.times, &[("error_cole_hopf", &profile), ("error_mild", &mild_profile)]),
                ));
                run.fields.push(("mild.fdns".into(), mild));
            } else {
                let heat = SpaceTimeField::from_fn(grid, horizon, steps, 1, |t, x, o| {
                    o[0] = amplitude * (-4.0 * PI * PI * kappa * t).exp() * (2.0 * PI * x[0]).sin()
                })?;
                let profile = record_errors(&mut run, &sol.u, &heat)?;
                run.report.check("sup_error_heat", sup(&profile), frac * amplitude);
                let table = regularity_check(&sol.u, &set, cfg.f64("validate.regularity_flatness"))?;
                let deviation = table
                    .times
                    .iter()
                    .zip(&table.ratios)
                    .map(|(&t, &r)| {
                        let exact = 2.0 * PI * (-4.0 * PI * PI * kappa * t).exp() * t.sqrt();
                        (r / exact - 1.0).abs()
                    })
                    .fold(0.0, f64::max);
                run.report
                    .check("regularity_vs_heat", deviation, cfg.f64("validate.heat_tolerance"));
                run.tables.push(("regularity.csv".into(), regularity_table(&table)));
                run.regularity = Some(table);
                run.tables
                    .push(("error_profile.csv".into(), error_table(&sol.u.times, &[("error", &profile)])));
            }
        }
        "taylor-green" => {
            if cfg.preset != (PresetKind::TaylorGreen { pressure: true }) {
                return Err(RunError::Usage("taylor-green needs preset = taylor-green".into()));
            }
            let minimum = cfg.usize("validate.min_particles");
            if cfg.mc.particles < minimum {
                // the Monte Carlo part of the budgets would exceed what the
                // tolerances were sized for
                run.report
                    .check("budget_exceeded", minimum as f64 / cfg.mc.particles as f64, 1.0);
                return Ok(run);
            }
            let Some(sol) = solve_into(&mut run, cfg, &set, exec, force, verbose)? else {
                return Ok(run);
            };
            let (a, kappa) = (cfg.amplitude, cfg.kappa);
            let mut bad = None;
            let exact = SpaceTimeField::from_fn(grid, cfg.horizon, cfg.grid.time_steps, 2, |t, x, o| {
                match taylor_green_exact(a, kappa, t, x) {
                    Ok((v, _)) => o.copy_from_slice(&v),
                    Err(e) => bad = Some(e),
                }
            })?;
            if let Some(e) = bad {
                return Err(e.into());
            }
            let profile = record_errors(&mut run, &sol.u, &exact)?;
            run.report.check("sup_error_exact", sup(&profile), frac * a);
            let div = divergence_residual(&set, &sol, cfg.f64("validate.truncation_factor"))?;
            run.report.check("divergence_budget_ratio", div.divergence_ratio(), 1.0);
            run.report.check(
                "max_divergence",
                div.max_divergence(),
                cfg.f64("validate.divergence_fraction") * 2.0 * PI * a,
            );
            run.report.check("pressure_criterion_budget_ratio", div.pw_ratio(), 1.0);
            run.report.divergence_profile = div.divergence.clone();
            run.report.pw_profile = div.pw_residual.clone();
            run.tables
                .push(("error_profile.csv".into(), error_table(&sol.u.times, &[("error", &profile)])));
            run.tables.push(("divergence_profile.csv".into(), divergence_table(&div)));
            run.divergence = Some(div);
        }
        other => {
            return Err(RunError::Usage(format!(
                "unknown scenario `{other}` (expected one of {})",
                SCENARIOS.join(", ")
            )))
        }
    }
    Ok(run)
}

pub fn mild_options(cfg: &RunConfig) -> MildOptions {
    MildOptions {
        resolution: cfg.usize("oracle.resolution"),
        refine: cfg.usize("oracle.refine"),
        tol: cfg.f64("oracle.mild_tol"),
        max_iter: cfg.usize("oracle.mild_max_iter"),
    }
}

/// `budget(T) / divergence(T)` of a run without pressure against the budget
/// of a reference run; passing means the divergence is at least
/// `validate.negative_control_factor` budgets.
pub fn negative_control_value(reference: &DivergenceReport, control: &DivergenceReport) -> f64 {
    let budget = *reference.divergence_budget.last().unwrap_or(&f64::NAN);
    let div = *control.divergence.last().unwrap_or(&f64::NAN);
    budget / div
}

/// Divergence diagnostics of the configured problem; for Taylor-Green with
/// pressure also the negative control without pressure.
pub fn divcheck<E: Executor>(cfg: &RunConfig, exec: &E, force: bool, verbose: bool) -> Result<ScenarioRun, RunError> {
    let set = cfg.coefficients()?;
    let mut run = ScenarioRun::new("divcheck");
    let Some(sol) = solve_into(&mut run, cfg, &set, exec, force, verbose)? else {
        return Ok(run);
    };
    let tf = cfg.f64("validate.truncation_factor");
    let div = divergence_residual(&set, &sol, tf)?;
    run.report.check("divergence_budget_ratio", div.divergence_ratio(), 1.0);
    run.report.check("pressure_criterion_budget_ratio", div.pw_ratio(), 1.0);
    run.report.times = div.times.clone();
    run.report.divergence_profile = div.divergence.clone();
    run.report.pw_profile = div.pw_residual.clone();
    run.tables.push(("divcheck.csv".into(), divergence_table(&div)));
    if set.dim() <= 2 && cfg.grid.time_steps >= 4 {
        let rows = divergence_evolution_residual(&sol.u, &set)?;
        let mut csv = Csv::new(&["t", "residual"]);
        for (t, r) in rows {
            csv.push(vec![num(t), num(r)]);
        }
        run.tables.push(("evolution.csv".into(), csv));
    }
    if cfg.preset == (PresetKind::TaylorGreen { pressure: true }) {
        let control_cfg = cfg.with("preset", "taylor-green-nopressure")?;
        let control_set = control_cfg.coefficients()?;
        let control = solve(&control_cfg, &control_set, exec, true, verbose)?;
        let control_sol = control.solution.expect("forced solve has a solution");
        let control_div = divergence_residual(&control_set, &control_sol, tf)?;
        run.report.check(
            "negative_control",
            negative_control_value(&div, &control_div),
            1.0 / cfg.f64("validate.negative_control_factor"),
        );
        run.tables.push(("negative_control.csv".into(), divergence_table(&control_div)));
    }
    run.divergence = Some(div);
    Ok(run)
}
