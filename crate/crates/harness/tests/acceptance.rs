//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the target
//! exits non-zero if any criterion fails. Runs without the libtest harness so
//! the lines are never captured.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gevrey_core::conjugate::{build_conjugator, ConjugatorOptions, InverseMode};
use gevrey_core::error::Error;
use gevrey_core::positivity::{BOUND_A1, BOUND_A2, BOUND_THETA};
use gevrey_evolve::config::{RunConfig, Setting};
use gevrey_evolve::oracle::{composition_errors, is_monotone, library_pairs, oracle_suite, terminating_case};
use gevrey_evolve::pipeline::{self, Outcome};
use gevrey_evolve::sweep;

type Verdict = Result<(bool, String), String>;

const PI_STR: &str = "3.141592653589793";

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("acceptance config parses")
}

fn damped(n: usize) -> RunConfig {
    config(&format!(
        "problem.id = \"complex-damped\"\ngrid.L = {PI_STR}\ngrid.N = {n}\ndata.rho = 0.1\ndata.theta = 1.8\ntime.T = 1.0\n"
    ))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ok_run(out: &Outcome) -> Result<(), String> {
    match &out.error {
        None => Ok(()),
        Some(e) => Err(format!("run failed ({}): {e}", e.category().name())),
    }
}

fn c1_unitary() -> Verdict {
    let cfg = config("problem.id = \"kdv-baseline\"\ngrid.L = 40.0\ngrid.N = 256\ndata.rho = 0.5\ntime.T = 1.0\n");
    let start = Instant::now();
    let out = pipeline::run(&cfg);
    let secs = start.elapsed().as_secs_f64();
    ok_run(&out)?;
    let drift = out.summary.as_ref().unwrap().l2_drift;
    Ok((drift <= 1e-10 && secs <= 10.0, format!("sup |‖u‖/‖g‖ - 1| = {drift:.2e}, runtime {secs:.1} s")))
}

fn c2_composition() -> Verdict {
    let g = gevrey_core::grid::Grid::new(std::f64::consts::PI, 64).map_err(err)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p, q) in library_pairs(&g, 0.75, 1.8).map_err(err)? {
        let e = composition_errors(&p, &q, 4).map_err(err)?;
        pass &= is_monotone(&e);
        parts.push(format!("{name} {:.1e}->{:.1e}", e[0], e[3]));
    }
    let exact = terminating_case(&g).map_err(err)?;
    pass &= exact <= 1e-10;
    Ok((pass, format!("{}; xi∘e^(ix) error {exact:.1e}", parts.join(", "))))
}

fn c3_inverse() -> Verdict {
    let cfg = damped(128);
    let out = pipeline::verify(&cfg);
    ok_run(&out)?;
    let params = &out.selection.as_ref().unwrap().params;
    let p = pipeline::problem(&cfg).map_err(err)?;
    let g = pipeline::grid(&cfg).map_err(err)?;
    let neumann = build_conjugator(&p, params, &g, &ConjugatorOptions::default()).map_err(err)?;
    let dense_opts = ConjugatorOptions { mode: InverseMode::Dense, ..ConjugatorOptions::default() };
    let dense = build_conjugator(&p, params, &g, &dense_opts).map_err(err)?;
    let agree = neumann.e_inv.sub(&dense.e_inv).norm2();

    let mut bad = damped(64);
    bad.weights.m2 = Setting::Value(1.0);
    bad.weights.h = Setting::Value(8.0);
    let caught = matches!(pipeline::verify(&bad).error, Some(Error::Convergence(_)));
    let pass = neumann.residual <= 1e-8 && agree <= 1e-6 && caught;
    Ok((
        pass,
        format!(
            "h = {}, ‖E·E^inv - I‖ = {:.2e}, Neumann vs dense {agree:.2e}, infeasible h -> convergence error: {caught}",
            params.h, neumann.residual
        ),
    ))
}

fn c4_symbol_oracle() -> Verdict {
    let rep = oracle_suite(&damped(64)).map_err(err)?;
    let get = |n: &str| rep.get(n).cloned().ok_or(format!("missing check {n}"));
    let pipe = get("pipeline_oracle")?;
    let d1 = get("d1_imaginary_part")?;
    let inv = get("d1_invariant_under_M1")?;
    Ok((
        pipe.pass && d1.pass && inv.pass,
        format!("discrepancy {:.2e}, |Im d1| {:.1e}, d1 change under M1 {:.1e}", pipe.value, d1.value, inv.value),
    ))
}

fn c5_positivity(main: &Outcome) -> Verdict {
    let sel = main.selection.as_ref().ok_or("no selection")?;
    let names = [BOUND_A2, BOUND_A1, BOUND_THETA];
    let rows = sel.report.rows.iter().filter(|r| names.contains(&r.name.as_str()));
    let worst = rows.clone().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let all = rows.count() == 15 && worst >= -1e-8;

    let mut zero = damped(256);
    zero.weights.m2 = Setting::Value(0.0);
    zero.weights.h = Setting::Value(sel.params.h);
    let out = pipeline::verify(&zero);
    let row = out.selection.as_ref().and_then(|s| s.report.worst(BOUND_A2)).ok_or("no re_a2 row with M2 = 0")?;
    let witness = row.margin < 0.0 && row.witness_x.is_finite() && row.witness_xi.abs() > sel.params.r_a3 * sel.params.h;
    Ok((
        all && witness,
        format!(
            "min margin {worst:.3e}; M2 = 0: re_a2 margin {:.3e} at (x = {:.3}, xi = {})",
            row.margin, row.witness_x, row.witness_xi
        ),
    ))
}

fn c6_energy(main: &Outcome, secs: f64) -> Verdict {
    ok_run(main)?;
    let tr = main.trajectory.as_ref().unwrap();
    let mut half = damped(256);
    half.time.dt = Setting::Value(0.5 * tr.dt);
    let out = pipeline::run(&half);
    ok_run(&out)?;
    let tr2 = out.trajectory.as_ref().unwrap();
    let change = (tr2.c_prime_emp - tr.c_prime_emp).abs() / tr.c_prime_emp.abs();
    let worst = tr.max_residual.max(tr2.max_residual);
    Ok((
        worst <= 1e-6 && change < 0.05 && secs <= 60.0,
        format!(
            "max residual {worst:.2e}, C'_emp {:.4} vs {:.4} ({:.2}%), runtime {secs:.1} s",
            tr.c_prime_emp,
            tr2.c_prime_emp,
            100.0 * change
        ),
    ))
}

fn c7_radius(main: &Outcome) -> Verdict {
    ok_run(main)?;
    let sel = main.selection.as_ref().unwrap();
    let sm = main.summary.as_ref().unwrap();
    let tr = main.trajectory.as_ref().unwrap();
    let rho_is_2k0 = (main.requested.data.rho - 2.0 * sel.params.k0).abs() < 1e-12;
    let fit = sm.radius_t >= sm.k_t - 0.05;
    Ok((
        rho_is_2k0 && fit && sm.gronwall_ok,
        format!(
            "rho = {} = 2k0: {rho_is_2k0}, rho_hat(T) = {:.4} vs k(T) - 0.05 = {:.4}, C = {:.3e} <= {:.3e} at rho' = {:.4}",
            main.requested.data.rho,
            sm.radius_t,
            sm.k_t - 0.05,
            tr.gronwall_c,
            tr.gronwall_bound.unwrap_or(f64::NAN),
            sm.rho_prime
        ),
    ))
}

fn c8_equivalence(main: &Outcome) -> Verdict {
    ok_run(main)?;
    let sm = main.summary.as_ref().unwrap();
    let tol = 10.0 * main.requested.tolerances.inverse_tol;
    let n = main.trajectory.as_ref().unwrap().roundtrip.len();
    Ok((sm.roundtrip_max <= tol, format!("max round trip {:.2e} over {n} logged times (tol {tol:.0e})", sm.roundtrip_max)))
}

fn c9_order() -> Verdict {
    let cfg = config(
        "problem.id = \"kdv-baseline\"\ngrid.L = 40.0\ngrid.N = 256\ndata.rho = 0.5\nforcing.kind = \"gaussian-cos\"\ntime.logs = 1\n",
    );
    let rows = sweep::sweep(&cfg, "dt", &[0.02, 0.01, 0.005]).map_err(err)?;
    if let Some(r) = rows.iter().find(|r| r.status != "ok") {
        return Err(format!("row dt = {} failed: {}", r.value, r.message));
    }
    let ratio = rows[2].richardson;
    Ok(((12.0..=20.0).contains(&ratio), format!("Richardson ratio {ratio:.2}")))
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_gevrey-evolve"))
        .args(args)
        .env("GEVREY_EVOLVE_THREADS", "2")
        .current_dir(dir)
        .output()
        .map_err(err)?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn c10_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path();
    let text = format!(
        "problem.id = \"complex-damped\"\ngrid.L = {PI_STR}\ngrid.N = 64\ndata.kind = \"noise\"\ndata.rho = 0.3\n\
         time.T = 0.1\ntime.logs = 10\nseed = 42\n"
    );
    let mut same = true;
    let mut files = 0;
    for run in ["a", "b"] {
        std::fs::write(dir.join(format!("{run}.toml")), format!("{text}output.dir = \"{run}\"\n")).map_err(err)?;
        cli(dir, &["run", &format!("{run}.toml")])?;
        cli(dir, &["sweep", &format!("{run}.toml"), "--axis", "N", "--values", "48,64"])?;
    }
    for name in ["trajectory.csv", "positivity.csv", "sweep.csv", "snapshots.field1"] {
        let a = std::fs::read(dir.join("a").join(name)).map_err(err)?;
        let b = std::fs::read(dir.join("b").join(name)).map_err(err)?;
        same &= a == b;
        files += 1;
    }
    Ok((same, format!("{files} artifacts byte-identical across two runs: {same}")))
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut record = |id: usize, name: &str, v: Verdict| {
        let (pass, detail) = match v {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        let line = format!("criterion {id:>2} [PRIMARY] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        verdicts.push(pass);
    };

    record(1, "unitary baseline", c1_unitary());
    record(2, "composition oracle", c2_composition());
    record(3, "conjugator inverse", c3_inverse());
    record(4, "conjugated-symbol oracle", c4_symbol_oracle());

    let start = Instant::now();
    let run = pipeline::run(&damped(256));
    let secs = start.elapsed().as_secs_f64();
    record(5, "positivity", c5_positivity(&run));
    record(6, "energy estimate", c6_energy(&run, secs));
    record(7, "radius loss", c7_radius(&run));
    record(8, "equivalence of problems", c8_equivalence(&run));
    record(9, "order-4 convergence", c9_order());
    record(10, "determinism", c10_determinism());

    let passed = verdicts.iter().filter(|&&p| p).count();
    println!("acceptance: {passed} of {} criteria pass", verdicts.len());
    if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
