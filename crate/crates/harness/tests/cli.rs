use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gevrey_evolve::config::{RunConfig, Setting};
use proptest::prelude::*;

const SMALL: &str = "problem.id = \"complex-damped\"\ngrid.L = 3.141592653589793\ngrid.N = 64\ndata.rho = 0.1\ntime.T = 0.05\ntime.logs = 2\n";

fn cli(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gevrey-evolve"));
    cmd.args(args).current_dir(dir).env_remove("GEVREY_EVOLVE_THREADS");
    if let Some(t) = threads {
        cmd.env("GEVREY_EVOLVE_THREADS", t);
    }
    cmd.output().unwrap()
}

fn setup(text: &str) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), format!("{text}output.dir = \"out\"\n")).unwrap();
    tmp
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn theta_outside_range_is_a_config_error() {
    let tmp = setup(&format!("{SMALL}data.theta = 2.0\n"));
    let o = cli(tmp.path(), &["run", "c.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("admissible"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = setup(&format!("{SMALL}grid.M = 3\n"));
    assert_eq!(cli(tmp.path(), &["verify", "c.toml"], None).status.code(), Some(2));
}

#[test]
fn zero_weights_fail_positivity_with_witness() {
    let tmp = setup(&format!("{SMALL}weights.M2 = 0.0\nweights.h = 8.0\n"));
    let o = cli(tmp.path(), &["verify", "c.toml"], None);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/positivity.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("re_a2,") && l.split(',').nth(2).unwrap().starts_with('-')), "{csv}");
}

#[test]
fn run_writes_outputs_and_report_replays() {
    let tmp = setup(SMALL);
    let o = cli(tmp.path(), &["run", "c.toml"], Some("1"));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["report.txt", "positivity.csv", "trajectory.csv", "snapshots.field1"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(lines.next(), Some("t,l2,hm_rho_theta,radius_fit,energy_residual"));
    assert_eq!(lines.count(), 3);

    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let replayed = RunConfig::parse(&report).unwrap();
    assert_ne!(replayed.weights.m2, Setting::Auto);
    assert_ne!(replayed.time.dt, Setting::Auto);
    fs::copy(out.join("report.txt"), tmp.path().join("replay.toml")).unwrap();
    let o = cli(tmp.path(), &["verify", "replay.toml"], None);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_keeps_going_past_bad_rows() {
    let tmp = setup(SMALL);
    let o = cli(tmp.path(), &["sweep", "c.toml", "--axis", "theta", "--values", "1.6,1.9,2.0"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("1.6,ok,"));
    assert!(rows[1].starts_with("1.9,ok,"));
    assert!(rows[2].starts_with("2.0,config,"), "{}", rows[2]);
    assert!(tmp.path().join("out/sweep_timing.txt").exists());
}

#[test]
fn sweep_rejects_unknown_axis() {
    let tmp = setup(SMALL);
    let o = cli(tmp.path(), &["sweep", "c.toml", "--axis", "gamma", "--values", "1"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_passes_and_writes_csv() {
    let tmp = setup(SMALL);
    let o = cli(tmp.path(), &["oracle", "c.toml"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/oracle.csv")).unwrap();
    assert!(csv.contains("pipeline_oracle,"));
    assert!(!csv.contains(",false"));
}

#[test]
fn bad_thread_cap_is_rejected() {
    let tmp = setup(SMALL);
    assert_eq!(cli(tmp.path(), &["verify", "c.toml"], Some("0")).status.code(), Some(2));
    assert_eq!(cli(tmp.path(), &["verify", "c.toml"], Some("many")).status.code(), Some(2));
}

fn setting() -> impl Strategy<Value = Setting> {
    prop_oneof![Just(Setting::Auto), (0.0..1e3f64).prop_map(Setting::Value)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toml_round_trip(m2 in setting(), m1 in setting(), h in setting(), dt in setting(),
                       theta in 1.05..1.95f64, rho in 1e-3..5.0f64, n in 4usize..200, seed in 0..=i64::MAX as u64) {
        let mut c = RunConfig::parse("").unwrap();
        c.weights.m2 = m2;
        c.weights.m1 = m1;
        c.weights.h = h;
        c.time.dt = dt;
        c.data.theta = theta;
        c.data.rho = rho;
        c.grid.n = 2 * n;
        c.seed = seed;
        prop_assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
