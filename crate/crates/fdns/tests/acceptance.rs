//! End-to-end acceptance suite. Runs every criterion in sequence (timings are
//! part of several criteria) and prints one line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fdns::checks::{flow_cases, forward_check, gradient_scaling, gradient_triad, heat_sine_gradient};
use fdns::config::{scenario_config, RunConfig};
use fdns::scenarios::{self, negative_control_value};
use fdns::RayonExecutor;
use fdns_core::fixedpoint::Verdict;
use fdns_core::navier_stokes::{divergence_residual, ValidationReport};
use fdns_core::sde::{GridDrift, ZeroDrift};

struct Outcome {
    lines: Vec<(bool, String)>,
}

impl Outcome {
    fn record(&mut self, id: usize, label: &str, pass: bool, detail: String) {
        let line = format!("criterion {id:>2} {:<4} {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn scenario(name: &str) -> RunConfig {
    RunConfig::parse(scenario_config(name).unwrap(), &[]).unwrap()
}

fn failing(report: &ValidationReport) -> String {
    let bad: Vec<String> = report
        .criteria
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}={:.3e}>{:.3e}", c.name, c.value, c.tolerance))
        .collect();
    if bad.is_empty() {
        "all rows within tolerance".into()
    } else {
        bad.join(", ")
    }
}

fn row(report: &ValidationReport, name: &str) -> f64 {
    report.criteria.iter().find(|c| c.name == name).map(|c| c.value).unwrap_or(f64::NAN)
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for run in std::fs::read_dir(dir).unwrap() {
        let run = run.unwrap().path();
        for f in std::fs::read_dir(&run).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "csv") {
                let key = format!(
                    "{}/{}",
                    run.file_name().unwrap().to_string_lossy(),
                    f.file_name().unwrap().to_string_lossy()
                );
                out.insert(key, std::fs::read(&f).unwrap());
            }
        }
    }
    out
}

fn cli_runs(root: &Path, threads: &str) {
    let runs: [&[&str]; 4] = [
        &["validate", "--scenario", "trivial-constant"],
        &["flowcheck", "--set", "preset=burgers1d"],
        &["solve", "--set", "grid.n=16", "--set", "grid.M=10", "--set", "mc.particles=2000"],
        &[
            "gradcheck",
            "--set",
            "preset=zero",
            "--set",
            "dimension=1",
            "--set",
            "gradcheck.particles=2000",
            "--set",
            "gradcheck.triad_particles=2000",
            "--set",
            "forward.particles=2000",
        ],
    ];
    for args in runs {
        let status = Command::new(env!("CARGO_BIN_EXE_fdns"))
            .args(args)
            .args(["--threads", threads, "--out"])
            .arg(root)
            .output()
            .unwrap();
        assert!(
            status.status.code().is_some(),
            "fdns {args:?} was killed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
}

#[test]
fn acceptance() {
    let exec = RayonExecutor::new(0).unwrap();
    let mut out = Outcome { lines: Vec::new() };

    // 1
    let cfg = scenario("trivial-constant");
    let start = Instant::now();
    let run = scenarios::validate("trivial-constant", &cfg, &exec, false, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    out.record(
        1,
        "trivial fixed point",
        run.report.passed() && secs < 10.0,
        format!("{}, {secs:.2} s", failing(&run.report)),
    );

    // 2, 8, 10 share the Burgers solve
    let burgers = scenario("burgers1d");
    let start = Instant::now();
    let run = scenarios::validate("burgers1d", &burgers, &exec, false, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = &run.report;
    let c2 = ["oracle_agreement", "sup_error_cole_hopf", "sup_error_mild", "picard_gap"];
    let c2_pass = c2
        .iter()
        .all(|n| r.criteria.iter().any(|c| c.name == *n && c.pass))
        && secs <= 600.0;
    out.record(
        2,
        "Burgers cross-validation",
        c2_pass,
        format!(
            "oracles {:.2e}, MC vs Cole-Hopf {:.3e}, {secs:.0} s",
            row(r, "oracle_agreement"),
            row(r, "sup_error_cole_hopf")
        ),
    );
    let state = run.state.clone().unwrap();
    let ratios: Vec<f64> = state.gap_ratios().iter().map(|x| x.unwrap_or(0.0)).collect();
    let worst_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let other = scenarios::solve(&burgers.with("seed", "7").unwrap(), &burgers.coefficients().unwrap(), &exec, false, false)
        .unwrap();
    let spread = state.drift.max_abs_diff(&other.state.drift).unwrap();
    let se = state
        .node_se
        .values
        .iter()
        .chain(&other.state.node_se.values)
        .fold(0.0f64, |m, v| m.max(*v));
    out.record(
        8,
        "Picard contraction and seed robustness",
        state.verdict == Verdict::Converged
            && other.state.verdict == Verdict::Converged
            && worst_ratio <= 0.8
            && spread <= 8.0 * se,
        format!("gap ratios {ratios:.3?}, seed spread {spread:.3e} vs 8 SE {:.3e}", 8.0 * se),
    );
    out.record(
        10,
        "regularity flatness",
        r.criteria.iter().any(|c| c.name == "regularity_flatness" && c.pass),
        format!("max/median {:.3}", row(r, "regularity_flatness")),
    );

    // 3, 4
    let tg = scenario("taylor-green");
    let start = Instant::now();
    let run = scenarios::validate("taylor-green", &tg, &exec, false, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    out.record(
        3,
        "Taylor-Green with pressure",
        run.report.passed() && secs <= 1800.0,
        format!(
            "sup error {:.3e}, divergence/budget {:.3}, PW/budget {:.3}, {secs:.0} s",
            row(&run.report, "sup_error_exact"),
            row(&run.report, "divergence_budget_ratio"),
            row(&run.report, "pressure_criterion_budget_ratio")
        ),
    );
    let control_cfg = tg.with("preset", "taylor-green-nopressure").unwrap();
    let control_set = control_cfg.coefficients().unwrap();
    let control = scenarios::solve(&control_cfg, &control_set, &exec, true, false).unwrap();
    let control_div = divergence_residual(
        &control_set,
        control.solution.as_ref().unwrap(),
        tg.f64("validate.truncation_factor"),
    )
    .unwrap();
    let value = negative_control_value(run.divergence.as_ref().unwrap(), &control_div);
    out.record(
        4,
        "negative control without pressure",
        value <= 1.0 / 5.0,
        format!("divergence at T is {:.2} budgets", 1.0 / value),
    );

    // 5
    let flow_cfg = RunConfig::parse("preset = burgers1d\n", &[]).unwrap();
    let rows = flow_cases(&flow_cfg, &exec).unwrap();
    let worst = rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max);
    out.record(
        5,
        "flow property",
        rows.len() == 20 && worst == 0.0 && rows.iter().all(|r| r.control > 0.0),
        format!("{} configurations, max discrepancy {worst:e}", rows.len()),
    );

    // 6, 9
    let set = burgers.coefficients().unwrap();
    let zero = ZeroDrift(1);
    let fixed = GridDrift { field: state.drift.clone() };
    let exact = heat_sine_gradient(burgers.kappa);
    let zero_rows = gradient_triad(&set, &zero, &burgers.mc, 11, 10, 20000, &exec, Some(&exact)).unwrap();
    let fixed_rows = gradient_triad(&set, &fixed, &burgers.mc, 11, 10, 20000, &exec, None).unwrap();
    let agree = zero_rows
        .iter()
        .chain(&fixed_rows)
        .map(|r| r.agreement)
        .fold(0.0, f64::max);
    let vs_exact = zero_rows.iter().map(|r| r.exact.unwrap().1).fold(0.0, f64::max);
    out.record(
        6,
        "gradient triad",
        zero_rows.len() == 10 && fixed_rows.len() == 10 && agree <= 4.0 && vs_exact <= 4.0,
        format!("worst agreement {agree:.2} SE, worst vs analytic {vs_exact:.2} SE"),
    );
    let mut forward = forward_check(&set, &zero, &burgers.mc, 13, 4, 20000, &exec).unwrap();
    forward.extend(forward_check(&set, &fixed, &burgers.mc, 13, 4, 20000, &exec).unwrap());
    let worst = forward.iter().map(|r| r.1.report.se_units).fold(0.0, f64::max);
    out.record(
        9,
        "forward equation residual",
        worst <= 4.0,
        format!("{} rows, worst {worst:.2} SE", forward.len()),
    );

    // 7
    let scaling = gradient_scaling(&RunConfig::parse("", &[]).unwrap(), &exec).unwrap();
    let slope = scaling.slope.unwrap_or(f64::NAN);
    out.record(
        7,
        "gradient scaling",
        (-0.6..=-0.4).contains(&slope),
        format!("slope {slope:.4}"),
    );

    // 11
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    cli_runs(one.path(), "1");
    cli_runs(four.path(), "4");
    let (a, b) = (csv_files(one.path()), csv_files(four.path()));
    out.record(
        11,
        "thread-count reproducibility",
        !a.is_empty() && a == b,
        format!("{} CSV files compared", a.len()),
    );

    let failed: Vec<&String> = out.lines.iter().filter(|l| !l.0).map(|l| &l.1).collect();
    assert!(failed.is_empty(), "failed criteria:\n{failed:#?}");
}
