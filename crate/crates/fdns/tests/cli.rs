use std::path::Path;
use std::process::{Command, Output};

use fdns::config::RunConfig;
use fdns::dump::{read_field, write_field};
use fdns_core::fields::{DomainDescriptor, Grid, SpaceTimeField};
use proptest::prelude::*;

fn fdns(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdns"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn run_dir(out: &Path, prefix: &str) -> std::path::PathBuf {
    std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .unwrap()
}

#[test]
fn trivial_constant_succeeds_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fdns(tmp.path(), &["validate", "--scenario", "trivial-constant"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = run_dir(tmp.path(), "validate-trivial-constant-");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["files"]["validation_report.csv"]["sha256"].is_string());
    let report = std::fs::read_to_string(dir.join("validation_report.csv")).unwrap();
    assert!(report.lines().count() > 4);
}

#[test]
fn usage_errors_exit_64() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--set", "kapa=0.1"][..],
        &["validate", "--scenario", "nope"],
        &["frobnicate"],
        &["solve", "--threads", "many"],
        &["solve", "--set", "kappa=-1"],
    ] {
        let o = fdns(tmp.path(), args);
        assert_eq!(o.status.code(), Some(64), "{args:?}");
    }
    let o = fdns(tmp.path(), &["solve", "--set", "kapa=0.1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapa"));
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_fdns")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn iteration_cap_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fdns(
        tmp.path(),
        &["solve", "--set", "grid.n=8", "--set", "grid.M=4", "--set", "mc.particles=200", "--set", "picard.max_iter=1"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn identical_rerun_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["flowcheck", "--set", "flowcheck.configs=2"];
    assert_eq!(fdns(tmp.path(), &args).status.code(), Some(0));
    assert_eq!(fdns(tmp.path(), &args).status.code(), Some(0));
}

#[test]
fn config_file_and_overrides_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.conf");
    std::fs::write(&file, "preset = zero\nkappa = 0.2\n").unwrap();
    let cfg = RunConfig::load(&file, &[("kappa".into(), "0.3".into())]).unwrap();
    assert_eq!(cfg.kappa, 0.3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dumps_round_trip_bitwise(n in 2usize..6, steps in 1usize..4, comps in 1usize..3, scale in -1e3f64..1e3) {
        let grid = Grid::new(DomainDescriptor::torus(2), n).unwrap();
        let f = SpaceTimeField::from_fn(grid, 0.7, steps, comps, |t, x, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = scale * (x[0] + 3.0 * x[1] - t).sin() / (c + 1) as f64;
            }
        }).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let back = read_field(&buf[..]).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn config_hash_ignores_key_order(kappa in 0.01f64..1.0, seed in any::<u32>()) {
        let a = RunConfig::parse(&format!("kappa = {kappa}\nseed = {seed}\n"), &[]).unwrap();
        let b = RunConfig::parse(&format!("seed = {seed}\nkappa = {kappa}\n"), &[]).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }
}
