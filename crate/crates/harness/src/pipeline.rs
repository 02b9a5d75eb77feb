use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use gevrey_core::conjugate::{ConjugationContext, ConjugatorOptions};
use gevrey_core::error::{Error, Result};
use gevrey_core::evolve::{
    conjugator, gevrey_profile, solve_original, GevreyNormSpec, SolverOptions, Trajectory, RHO_PRIME_DELTA,
};
use gevrey_core::grid::{bracket, Field, Grid};
use gevrey_core::positivity::{evaluate_parameters, select_parameters, Selection, SelectionOptions};
use gevrey_core::symbols::{model_problem, ProblemSpec};
use gevrey_core::weights::k_of_t;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DataKind, ForcingKind, RunConfig, Setting};

/// Tolerance of the radius-loss check ρ − ρ̂(T) ≤ k₀ + tol.
pub const FIT_TOL: f64 = 0.02;

/// Default requested k₀ when weights.k0 is "auto" (capped by the grid).
pub const DEFAULT_K0: f64 = 0.05;

pub fn problem(cfg: &RunConfig) -> Result<ProblemSpec> {
    let p = &cfg.problem;
    model_problem(&p.id, p.sigma, &[p.c2, p.c1, p.c0], cfg.time.horizon)
}

pub fn grid(cfg: &RunConfig) -> Result<Grid> {
    Grid::new(cfg.grid.l, cfg.grid.n)
}

pub fn selection_options(cfg: &RunConfig) -> SelectionOptions {
    let w = &cfg.weights;
    SelectionOptions {
        k0: w.k0.value().unwrap_or(DEFAULT_K0),
        tol: cfg.tolerances.garding_tol,
        m2: w.m2.value(),
        m1: w.m1.value(),
        h: w.h.value(),
        inverse: conjugator_options(cfg),
        ..SelectionOptions::default()
    }
}

pub fn conjugator_options(cfg: &RunConfig) -> ConjugatorOptions {
    ConjugatorOptions {
        inverse_tol: cfg.tolerances.inverse_tol,
        series_tol: cfg.tolerances.series_tol,
        ..ConjugatorOptions::default()
    }
}

/// Initial data g on the grid.
pub fn initial_data(cfg: &RunConfig, grid: &Grid) -> Result<Field> {
    let d = &cfg.data;
    match d.kind {
        DataKind::Gevrey => Ok(gevrey_profile(grid, d.rho, d.theta, d.amplitude, d.shift)),
        DataKind::Gaussian => Field::from_fn(grid, |x| Complex64::new(d.amplitude * (-(x - d.shift).powi(2)).exp(), 0.0)),
        DataKind::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let scale = d.amplitude * (grid.len() as f64).sqrt();
            let coeffs: Vec<Complex64> = grid
                .freqs()
                .iter()
                .enumerate()
                .map(|(k, &xi)| {
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    if k == 0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::from_polar(scale * (-d.rho * bracket(xi, 1.0).powf(1.0 / d.theta)).exp(), phase)
                    }
                })
                .collect();
            Field::new(grid, grid.inverse_values(&coeffs))
        }
    }
}

/// Forcing f(t, x) of the original problem, if any.
pub fn forcing(cfg: &RunConfig) -> Option<impl Fn(f64, f64) -> Complex64 + Sync> {
    let f = cfg.forcing.clone();
    match f.kind {
        ForcingKind::None => None,
        ForcingKind::GaussianCos => {
            Some(move |t: f64, x: f64| Complex64::new(f.amplitude * (-(x / f.width).powi(2)).exp() * (f.omega * t).cos(), 0.0))
        }
    }
}

/// Chooses or checks the weights. With a fixed h the single attempt is
/// returned even when an inequality fails, so its report can be written.
pub fn choose(cfg: &RunConfig, p: &ProblemSpec, grid: &Grid) -> Result<(Selection, Option<String>)> {
    let opts = selection_options(cfg);
    if opts.h.is_some() {
        let a = evaluate_parameters(p, cfg.data.theta, grid, &opts)?;
        Ok((a.selection, a.failure))
    } else {
        Ok((select_parameters(p, cfg.data.theta, grid, &opts)?, None))
    }
}

/// Checks on a finished trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub k_t: f64,
    pub rho_prime: f64,
    pub radius_t: f64,
    /// ρ − ρ̂(T); NaN when the fit is unavailable.
    pub radius_loss: f64,
    pub radius_ok: bool,
    pub roundtrip_max: f64,
    pub l2_drift: f64,
    pub gronwall_ok: bool,
    pub energy_ok: bool,
}

pub fn summarize(cfg: &RunConfig, sel: &Selection, tr: &Trajectory) -> Result<Summary> {
    let params = &sel.params;
    let k_t = if params.k0 > 0.0 { k_of_t(params.horizon, params)? } else { 0.0 };
    let radius_t = *tr.radius.last().unwrap_or(&f64::NAN);
    let radius_loss = cfg.data.rho - radius_t;
    let l2_0 = tr.l2[0];
    let l2_drift = tr.l2.iter().map(|v| (v / l2_0 - 1.0).abs()).fold(0.0, f64::max);
    Ok(Summary {
        k_t,
        rho_prime: tr.rho_prime.unwrap_or(k_t - RHO_PRIME_DELTA),
        radius_t,
        radius_loss,
        // NaN: band-limited data, nothing to lose
        radius_ok: !(radius_loss > params.k0 + FIT_TOL),
        roundtrip_max: tr.roundtrip.iter().copied().fold(0.0, f64::max),
        l2_drift,
        gronwall_ok: tr.gronwall_bound.is_none_or(|b| tr.gronwall_c <= b),
        energy_ok: tr.max_residual <= cfg.tolerances.energy_tol,
    })
}

/// Everything a run produced, including the resolved config and the failure
/// (if any). Artifacts are written from this.
#[derive(Debug)]
pub struct Outcome {
    pub requested: RunConfig,
    pub resolved: RunConfig,
    pub selection: Option<Selection>,
    pub trajectory: Option<Trajectory>,
    pub summary: Option<Summary>,
    pub error: Option<Error>,
}

impl Outcome {
    fn new(cfg: &RunConfig) -> Outcome {
        Outcome {
            requested: cfg.clone(),
            resolved: cfg.clone(),
            selection: None,
            trajectory: None,
            summary: None,
            error: None,
        }
    }

    pub fn failed(cfg: &RunConfig, e: Error) -> Outcome {
        Outcome { error: Some(e), ..Outcome::new(cfg) }
    }

    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, |e| e.category().exit_code())
    }

    fn resolve_weights(&mut self, sel: &Selection) {
        let w = &mut self.resolved.weights;
        w.m2 = Setting::Value(sel.params.m2);
        w.m1 = Setting::Value(sel.params.m1);
        w.h = Setting::Value(sel.params.h);
        w.k0 = Setting::Value(sel.params.k0);
    }
}

/// Assumptions and positivity only.
pub fn verify(cfg: &RunConfig) -> Outcome {
    let mut out = Outcome::new(cfg);
    if let Err(e) = verify_into(cfg, &mut out) {
        out.error = Some(e);
    }
    out
}

fn verify_into(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    cfg.validate()?;
    let p = problem(cfg)?;
    let g = grid(cfg)?;
    let (sel, failure) = choose(cfg, &p, &g)?;
    out.resolve_weights(&sel);
    out.selection = Some(sel);
    match failure {
        Some(why) => Err(Error::Infeasible(format!("positivity fails: {why}"))),
        None => Ok(()),
    }
}

/// The full pipeline: selection, conjugated solve, back-transform, checks.
pub fn run(cfg: &RunConfig) -> Outcome {
    let mut out = Outcome::new(cfg);
    if let Err(e) = verify_into(cfg, &mut out).and_then(|_| solve_into(cfg, &mut out)) {
        out.error = Some(e);
    }
    out
}

fn solve_into(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let sel = out.selection.as_ref().expect("verified before solving");
    let p = problem(cfg)?;
    let g = grid(cfg)?;
    let ctx = ConjugationContext::new(&p, &sel.params, &g)?;
    let data = initial_data(cfg, &g)?;
    let spec = GevreyNormSpec { m: cfg.data.m, rho: cfg.data.rho, theta: cfg.data.theta };
    let opts = SolverOptions {
        dt: cfg.time.dt.value(),
        logs: cfg.time.logs,
        energy_tol: cfg.tolerances.energy_tol,
        m: cfg.data.m,
        ..SolverOptions::default()
    };
    let f = forcing(cfg);
    let f_ref = f.as_ref().map(|f| f as &(dyn Fn(f64, f64) -> Complex64 + Sync));
    let tr = solve_original(&ctx, f_ref, &data, &spec, &conjugator_options(cfg), &opts)?;
    out.resolved.time.dt = Setting::Value(tr.dt);
    let summary = summarize(cfg, sel, &tr)?;
    let failure = if !summary.energy_ok {
        Some(format!(
            "energy residual {:.3e} exceeds energy_tol = {:.1e} (C' = {:.4})",
            tr.max_residual, cfg.tolerances.energy_tol, tr.c_prime
        ))
    } else if !summary.gronwall_ok {
        Some(format!(
            "Gronwall constant {:.4e} exceeds its bound {:.4e}",
            tr.gronwall_c,
            tr.gronwall_bound.unwrap_or(f64::NAN)
        ))
    } else {
        None
    };
    out.summary = Some(summary);
    out.trajectory = Some(tr);
    match failure {
        Some(m) => Err(Error::Instability(m)),
        None => Ok(()),
    }
}

fn commented(text: &str) -> String {
    text.lines().map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") }).collect()
}

/// Report text. Narrative lines are TOML comments, so the file replays as
/// a fully explicit config.
pub fn report(out: &Outcome, command: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gevrey-evolve {command}");
    match &out.error {
        None => {
            let _ = writeln!(s, "# status: ok");
        }
        Some(e) => {
            let _ = writeln!(s, "# status: failed ({}): {e}", e.category().name());
        }
    }
    let _ = writeln!(s, "#\n# resolved configuration");
    let r = &out.requested;
    let mut autos = Vec::new();
    for (name, set) in [("weights.M2", r.weights.m2), ("weights.M1", r.weights.m1), ("weights.h", r.weights.h), ("weights.k0", r.weights.k0), ("time.dt", r.time.dt)] {
        if set == Setting::Auto {
            autos.push(name);
        }
    }
    if !autos.is_empty() {
        let _ = writeln!(s, "# resolved from \"auto\": {}", autos.join(", "));
    }
    s.push_str(&out.resolved.to_toml());
    if let Some(sel) = &out.selection {
        s.push_str("#\n");
        s.push_str(&commented(&sel.assumptions.to_string()));
        for (h, why) in &sel.rejected {
            let _ = writeln!(s, "# rejected h = {h}: {why}");
        }
        s.push_str(&commented(&sel.report.to_string()));
    }
    if let (Some(tr), Some(sm)) = (&out.trajectory, &out.summary) {
        let _ = writeln!(s, "#\n# solve");
        let _ = writeln!(s, "#   dt = {:.6e}  steps = {}  logged times = {}", tr.dt, tr.steps, tr.times.len());
        let _ = writeln!(s, "#   C' = {:.6e}  empirical C' = {:.6e}  max energy residual = {:.6e}", tr.c_prime, tr.c_prime_emp, tr.max_residual);
        let _ = writeln!(
            s,
            "#   Gronwall C = {:.6e}  bound = {:.6e}  {}",
            tr.gronwall_c,
            tr.gronwall_bound.unwrap_or(f64::NAN),
            if sm.gronwall_ok { "ok" } else { "FAIL" }
        );
        let _ = writeln!(s, "#   k(T) = {:.6e}  rho' = k(T) - {RHO_PRIME_DELTA} = {:.6e}", sm.k_t, sm.rho_prime);
        let _ = writeln!(
            s,
            "#   fitted radius at T = {:.6e}  loss rho - rho_hat = {:.6e} (allowed k0 + {FIT_TOL})  {}",
            sm.radius_t,
            sm.radius_loss,
            if sm.radius_ok { "ok" } else { "FAIL" }
        );
        let _ = writeln!(s, "#   round trip max = {:.6e}  l2 drift max = {:.6e}", sm.roundtrip_max, sm.l2_drift);
        let _ = writeln!(
            s,
            "#   u(T): l2 = {:.9e}  H^m_(rho';theta) = {:.9e}",
            tr.l2.last().unwrap_or(&f64::NAN),
            tr.hm.last().unwrap_or(&f64::NAN)
        );
    }
    s
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes report.txt, positivity.csv, trajectory.csv and the requested dumps.
pub fn write_outputs(out: &Outcome, command: &str) -> Result<()> {
    let dir = &out.requested.output.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report(out, command))?;
    if let Some(sel) = &out.selection {
        let mut w = create(&dir.join("positivity.csv"))?;
        sel.report.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(tr) = &out.trajectory {
        let mut w = create(&dir.join("trajectory.csv"))?;
        tr.write_csv(&mut w)?;
        w.flush()?;
        if out.requested.output.snapshots {
            let mut w = create(&dir.join("snapshots.field1"))?;
            tr.write_field1(&mut w)?;
            w.flush()?;
        }
    }
    if out.requested.output.operator {
        if let Some(sel) = &out.selection {
            let ctx = ConjugationContext::new(&problem(&out.resolved)?, &sel.params, &grid(&out.resolved)?)?;
            let b = conjugator(&ctx, &conjugator_options(&out.resolved))?;
            let mut w = create(&dir.join("conjugator.psido1"))?;
            b.e.write_psido1(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: &str) -> RunConfig {
        RunConfig::parse(&format!(
            "problem.id = \"{id}\"\ngrid.L = 3.141592653589793\ngrid.N = 64\ntime.T = 0.05\ntime.logs = 5\n"
        ))
        .unwrap()
    }

    #[test]
    fn noise_data_depends_on_seed_only() {
        let mut c = small("kdv-baseline");
        c.data.kind = DataKind::Noise;
        let g = grid(&c).unwrap();
        let a = initial_data(&c, &g).unwrap();
        let b = initial_data(&c, &g).unwrap();
        assert_eq!(a.values(), b.values());
        c.seed = 1;
        let d = initial_data(&c, &g).unwrap();
        assert_ne!(a.values(), d.values());
    }

    #[test]
    fn forcing_shape() {
        let mut c = small("kdv-baseline");
        assert!(forcing(&c).is_none());
        c.forcing.kind = ForcingKind::GaussianCos;
        let f = forcing(&c).unwrap();
        assert_eq!(f(0.0, 0.0), Complex64::new(1.0, 0.0));
        assert!((f(0.0, 2.0).re - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn verify_resolves_auto_weights() {
        let out = verify(&small("complex-damped"));
        assert!(out.error.is_none(), "{:?}", out.error);
        let sel = out.selection.as_ref().unwrap();
        assert_eq!(out.resolved.weights.m2, Setting::Value(sel.params.m2));
        assert_eq!(out.resolved.weights.h, Setting::Value(8.0));
        let text = report(&out, "verify");
        assert!(text.contains("resolved from \"auto\": weights.M2, weights.M1, weights.h, weights.k0, time.dt"));
        let replay = RunConfig::parse(&text).unwrap();
        assert_eq!(replay, out.resolved);
    }

    #[test]
    fn zero_m2_at_fixed_h_keeps_failing_report() {
        let mut c = small("complex-damped");
        c.weights.m2 = Setting::Value(0.0);
        c.weights.h = Setting::Value(8.0);
        let out = verify(&c);
        assert_eq!(out.exit_code(), 3);
        let sel = out.selection.unwrap();
        assert!(!sel.report.passed());
    }

    #[test]
    fn small_run_passes_checks() {
        let out = run(&small("complex-damped"));
        assert!(out.error.is_none(), "{:?}", out.error);
        let sm = out.summary.unwrap();
        assert!(sm.energy_ok && sm.gronwall_ok && sm.radius_ok);
        assert!(sm.roundtrip_max < 1e-7);
    }
}
