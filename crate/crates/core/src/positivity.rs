//! Choice of M₂, M₁, h, k₀ and the checks that the three groups ã₂, ã₁ + c + e
//! and ã_θ of the conjugated operator have nonnegative real parts.

use std::fmt;
use std::io::Write;

use crate::conjugate::{build_from_weights, ConjugatedSymbols, ConjugationContext, ConjugationStage, ConjugatorOptions};
use crate::error::{Error, Result};
use crate::grid::{bracket, Grid};
use crate::quantize::{to_dense, SymbolTable};
use crate::symbols::{check_assumptions, AssumptionReport, ProblemSpec};
use crate::weights::{k_of_t, k_prime, k_unchecked, WeightParams};

pub const BOUND_A2: &str = "re_a2";
pub const BOUND_A1: &str = "re_a1_c_e";
pub const BOUND_THETA: &str = "re_a_theta";

/// Sample times 0, T/4, T/2, 3T/4, T.
pub fn sample_times(horizon: f64) -> Vec<f64> {
    (0..5).map(|i| horizon * i as f64 / 4.0).collect()
}

/// Columns with R h < |ξ| ≤ ξ_max/2.
pub fn region_columns(grid: &Grid, params: &WeightParams) -> Vec<usize> {
    let edge = params.r_a3 * params.h;
    (0..grid.len()).filter(|&k| grid.in_band(k) && grid.freqs()[k].abs() > edge).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub name: String,
    pub t: f64,
    pub margin: f64,
    pub witness_x: f64,
    pub witness_xi: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GardingRow {
    pub name: String,
    pub t: f64,
    pub floor: f64,
}

/// Constants measured while choosing the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasuredConstants {
    pub c_a3: f64,
    pub c_a2: f64,
    pub c_a1: f64,
    pub c_a2_lambda2: f64,
    pub c_c: f64,
    pub c_e: f64,
    pub c1: f64,
    pub c2: f64,
    pub k0_cap: f64,
    pub rounds: usize,
}

#[derive(Clone, Debug)]
pub struct PositivityReport {
    pub params: WeightParams,
    pub tolerance: f64,
    pub rows: Vec<BoundRow>,
    pub garding: Vec<GardingRow>,
    /// The region R h < |ξ| ≤ ξ_max/2 holds no grid column.
    pub vacuous: bool,
    pub constants: Option<MeasuredConstants>,
}

impl PositivityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// Smallest margin of one bound over all sample times.
    pub fn worst(&self, name: &str) -> Option<&BoundRow> {
        self.rows.iter().filter(|r| r.name == name).min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    pub fn first_failure(&self) -> Option<&BoundRow> {
        self.rows.iter().find(|r| !r.pass)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# schema=1")?;
        writeln!(w, "bound-name,t,margin,witness_x,witness_xi")?;
        for r in &self.rows {
            writeln!(w, "{},{:.6},{:.9e},{:.9e},{:.9e}", r.name, r.t, r.margin, r.witness_x, r.witness_xi)?;
        }
        Ok(())
    }
}

impl fmt::Display for PositivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.params;
        writeln!(f, "positivity {}", if self.passed() { "PASS" } else { "FAIL" })?;
        writeln!(
            f,
            "  M2 = {:.6e}  M1 = {:.6e}  h = {}  k0 = {:.6e}  C1 = {:.6e}  C2 = {:.6e}",
            p.m2, p.m1, p.h, p.k0, p.c1, p.c2
        )?;
        if self.vacuous {
            writeln!(f, "  region R h < |xi| <= xi_max/2 is empty; bounds hold vacuously")?;
        }
        for r in &self.rows {
            writeln!(
                f,
                "  {:<11} t = {:<8.4} margin = {:>13.6e}  witness (x = {:.4}, xi = {:.4})  {}",
                r.name,
                r.t,
                r.margin,
                r.witness_x,
                r.witness_xi,
                if r.pass { "ok" } else { "FAIL" }
            )?;
        }
        for g in &self.garding {
            writeln!(f, "  garding {:<11} t = {:<8.4} lambda_min = {:.6e}", g.name, g.t, g.floor)?;
        }
        if let Some(c) = &self.constants {
            writeln!(
                f,
                "  measured C_a3 = {:.4e}  C_a2 = {:.4e}  C_a1 = {:.4e}  C_a2,l2 = {:.4e}  C_c = {:.4e}  C_e = {:.4e}",
                c.c_a3, c.c_a2, c.c_a1, c.c_a2_lambda2, c.c_c, c.c_e
            )?;
            writeln!(f, "  k0 cap = {:.4e}  fixed-point rounds = {}", c.k0_cap, c.rounds)?;
        }
        Ok(())
    }
}

/// λ_min of the Hermitian part of op(sym).
pub fn discrete_garding(sym: &SymbolTable) -> f64 {
    to_dense(sym).hermitian_min_eigenvalue()
}

/// (min of Re t / norm, x, ξ) over the region columns.
fn min_normalized(t: &SymbolTable, cols: &[usize], norm: impl Fn(f64, f64) -> f64) -> (f64, f64, f64) {
    let grid = t.grid();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (j, &x) in grid.nodes().iter().enumerate() {
        for &k in cols {
            let xi = grid.freqs()[k];
            let v = t.get(j, k).re / norm(x, xi);
            if v < best.0 || v.is_nan() {
                best = (v, x, xi);
            }
        }
    }
    best
}

fn sup_normalized(t: &SymbolTable, cols: &[usize], norm: impl Fn(f64, f64) -> f64) -> f64 {
    let grid = t.grid();
    let mut best: f64 = 0.0;
    for (j, &x) in grid.nodes().iter().enumerate() {
        for &k in cols {
            best = best.max(t.get(j, k).norm() / norm(x, grid.freqs()[k]));
        }
    }
    best
}

/// Margins of the three groups for each assembled time.
pub fn verify_lower_bounds(
    symbols: &[ConjugatedSymbols],
    params: &WeightParams,
    grid: &Grid,
    tol: f64,
) -> PositivityReport {
    let cols = region_columns(grid, params);
    let mut report = PositivityReport {
        params: params.clone(),
        tolerance: tol,
        rows: Vec::new(),
        garding: Vec::new(),
        vacuous: cols.is_empty(),
        constants: None,
    };
    if cols.is_empty() {
        return report;
    }
    let (h, sigma) = (params.h, params.sigma);
    let xb = |x: f64| grid.x_bracket(x);
    for cs in symbols {
        let a1 = cs.a1_tilde().add(&cs.c).add(&cs.e);
        let groups = [
            (BOUND_A2, cs.a2_tilde(), 0),
            (BOUND_A1, a1, 1),
            (BOUND_THETA, cs.a_theta(), 2),
        ];
        for (name, table, which) in groups {
            let (margin, x, xi) = min_normalized(&table, &cols, |x, xi| match which {
                0 => bracket(xi, h).powi(2) * xb(x).powf(-sigma),
                1 => bracket(xi, h) * xb(x).powf(-0.5 * sigma),
                _ => params.time_weight(xi),
            });
            report.rows.push(BoundRow {
                name: name.into(),
                t: cs.t,
                margin,
                witness_x: x,
                witness_xi: xi,
                pass: margin >= -tol,
            });
        }
    }
    report
}

/// Adds λ_min of the Hermitian parts of the three groups at the first and last time.
pub fn add_garding_floors(report: &mut PositivityReport, symbols: &[ConjugatedSymbols]) {
    let picks: Vec<&ConjugatedSymbols> = match symbols {
        [] => vec![],
        [one] => vec![one],
        [first, .., last] => vec![first, last],
    };
    for cs in picks {
        let a1 = cs.a1_tilde().add(&cs.c).add(&cs.e);
        for (name, table) in [(BOUND_A2, cs.a2_tilde()), (BOUND_A1, a1), (BOUND_THETA, cs.a_theta())] {
            report.garding.push(GardingRow { name: name.into(), t: cs.t, floor: discrete_garding(&table) });
        }
    }
}

/// Stages at the sample times; one shared stage when the coefficients do not depend on t.
pub fn stages(ctx: &ConjugationContext, times: &[f64]) -> Result<Vec<ConjugationStage>> {
    if ctx.problem().autonomous {
        let s = ctx.stage(0.0)?;
        Ok(times
            .iter()
            .map(|&t| {
                let mut s = s.clone();
                s.t = t;
                s
            })
            .collect())
    } else {
        times.iter().map(|&t| ctx.stage(t)).collect()
    }
}

/// Evaluates stages at k(t), k′(t) from `params` (C₁, C₂, k₀ do not enter the stages).
pub fn assemble_at(
    ctx: &ConjugationContext,
    stages: &[ConjugationStage],
    params: &WeightParams,
) -> Result<Vec<ConjugatedSymbols>> {
    stages
        .iter()
        .map(|s| {
            let k = k_of_t(s.t, params)?;
            Ok(s.at(k, k_prime(s.t, params), ctx))
        })
        .collect()
}

/// verify_lower_bounds for explicit parameters at the default sample times.
pub fn verify_params(p: &ProblemSpec, params: &WeightParams, grid: &Grid, tol: f64) -> Result<PositivityReport> {
    let ctx = ConjugationContext::new(p, params, grid)?;
    let st = stages(&ctx, &sample_times(params.horizon))?;
    let cs = assemble_at(&ctx, &st, params)?;
    let mut report = verify_lower_bounds(&cs, params, grid, tol);
    add_garding_floors(&mut report, &cs);
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SelectionOptions {
    /// Added to the competing constants before solving for M₂ and M₁.
    pub margin: f64,
    pub k0: f64,
    pub h_start: f64,
    pub h_max: f64,
    pub tol: f64,
    pub mu: f64,
    /// Outer radius of the w transition; defaults to max(R_{a₃}, 1.5).
    pub r_a3: Option<f64>,
    pub m2: Option<f64>,
    pub m1: Option<f64>,
    pub h: Option<f64>,
    pub rounds: usize,
    /// Options of the invertibility check on {e^Λ̃}.
    pub inverse: ConjugatorOptions,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            margin: 0.01,
            k0: 0.05,
            h_start: 8.0,
            h_max: 16384.0,
            tol: 1e-8,
            mu: 2.0,
            r_a3: None,
            m2: None,
            m1: None,
            h: None,
            rounds: 5,
            inverse: ConjugatorOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub params: WeightParams,
    pub report: PositivityReport,
    pub constants: MeasuredConstants,
    pub assumptions: AssumptionReport,
    /// Rejected h values with the failing inequality.
    pub rejected: Vec<(f64, String)>,
}

/// k₀ bound keeping e^{k⟨ξ⟩_h^{1/θ}} within eight decades on the grid.
pub fn k0_cap(grid: &Grid, h: f64, theta: f64) -> f64 {
    0.5 * 1e8f64.ln() / bracket(grid.xi_max(), h).powf(1.0 / theta)
}

fn measure_k_constants(
    ctx: &ConjugationContext,
    stages: &[ConjugationStage],
    cols: &[usize],
    k0: f64,
) -> (f64, f64) {
    let pr = ctx.params();
    let m = |_: f64, xi: f64| pr.time_weight(xi);
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let ks: Vec<f64> = (0..4).map(|j| k0 / f64::powi(2.0, j)).collect();
    for s in stages {
        let tails = s.a3.tail2.add(&s.a3.tail1);
        for &k in &ks {
            if k > 0.0 {
                let (v, _, _) = min_normalized(&s.tw.b1k.eval(k), cols, m);
                c1 = c1.max(-v / k);
            }
            let (v, _, _) = min_normalized(&s.tw.ia1_k_lambda.eval(k).add(&tails), cols, m);
            c2 = c2.max(-v);
        }
    }
    (1.25 * c1.max(0.0), 1.25 * c2.max(0.0))
}

fn lower_order_constants(
    ctx: &ConjugationContext,
    stages: &[ConjugationStage],
    cols: &[usize],
    k0: f64,
) -> (f64, f64, f64) {
    let pr = ctx.params();
    let grid = ctx.grid();
    let norm = |x: f64, xi: f64| bracket(xi, pr.h) * grid.x_bracket(x).powf(-0.5 * pr.sigma);
    let mut ca2l: f64 = 0.0;
    let mut cc: f64 = 0.0;
    let mut ce: f64 = 0.0;
    for s in stages {
        ca2l = ca2l.max(sup_normalized(&s.a2.a2_dxi_dx_l2, cols, norm));
        cc = cc.max(sup_normalized(&s.c, cols, norm));
        for j in 0..4 {
            ce = ce.max(sup_normalized(&s.e.eval(k0 / f64::powi(2.0, j)), cols, norm));
        }
    }
    (ca2l, cc, ce)
}

fn has_lower_order(p: &ProblemSpec) -> bool {
    !(p.a2.is_zero() && p.a1.is_zero() && p.a0.is_zero())
}

/// Outcome of one fixed-h selection attempt. `failure` names the violated
/// inequality; the report is kept either way.
#[derive(Clone, Debug)]
pub struct Attempt {
    pub selection: Selection,
    pub failure: Option<String>,
}

fn attempt_at(
    p: &ProblemSpec,
    theta: f64,
    grid: &Grid,
    opts: &SelectionOptions,
    h: f64,
    assumptions: &AssumptionReport,
) -> Result<Attempt> {
    let (c_a3, c_a2, c_a1) = (assumptions.c_a3, assumptions.c_a2, assumptions.c_a1);
    let times = sample_times(p.horizon);
    let cap = k0_cap(grid, h, theta);
    let mut params = WeightParams {
        m2: opts.m2.unwrap_or(2.0 * (c_a2 + opts.margin) / c_a3),
        m1: opts.m1.unwrap_or(2.0 * (c_a1 + opts.margin) / c_a3),
        h,
        k0: opts.k0.min(cap),
        c1: 0.0,
        c2: 0.0,
        sigma: p.sigma,
        theta,
        mu: opts.mu,
        r_a3: opts.r_a3.unwrap_or(p.r_a3.max(1.5)),
        horizon: p.horizon,
    };
    params.validate()?;
    let mut constants = MeasuredConstants { c_a3, c_a2, c_a1, k0_cap: cap, ..Default::default() };
    let cols = region_columns(grid, &params);
    if cols.is_empty() {
        if has_lower_order(p) {
            return Err(Error::Infeasible(format!(
                "region R h < |xi| <= xi_max/2 is empty at h = {h} (R = {}, xi_max/2 = {}); \
                 the lower-order terms cannot be dominated on this grid, increase N or decrease L",
                params.r_a3,
                grid.band_edge()
            )));
        }
        // nothing to dominate on the resolved band: the Λ̃ part is switched off
        params.m2 = opts.m2.unwrap_or(0.0);
        params.m1 = opts.m1.unwrap_or(0.0);
        let report = PositivityReport {
            params: params.clone(),
            tolerance: opts.tol,
            rows: Vec::new(),
            garding: Vec::new(),
            vacuous: true,
            constants: None,
        };
        let selection = Selection { params, report, constants, assumptions: assumptions.clone(), rejected: Vec::new() };
        return Ok(Attempt { selection, failure: None });
    }

    let mut ctx = ConjugationContext::new(p, &params, grid)?;
    let mut st = stages(&ctx, &times)?;
    for round in 0..opts.rounds.max(1) {
        let (ca2l, cc, ce) = lower_order_constants(&ctx, &st, &cols, params.k0);
        let (c1, c2) = measure_k_constants(&ctx, &st, &cols, params.k0);
        let m1 = opts.m1.unwrap_or(2.0 * (c_a1 + ca2l + cc + ce + opts.margin) / c_a3);
        constants = MeasuredConstants { c_a2_lambda2: ca2l, c_c: cc, c_e: ce, c1, c2, rounds: round + 1, ..constants };
        params.c1 = c1;
        params.c2 = c2;
        if (m1 - params.m1).abs() <= 1e-3 * params.m1 {
            break;
        }
        params.m1 = m1;
        ctx = ConjugationContext::new(p, &params, grid)?;
        st = stages(&ctx, &times)?;
    }
    // {e^Λ̃}^{-1} must exist at this h; a convergence error goes to the caller
    build_from_weights(ctx.weights(), &opts.inverse)?;
    let kt = k_unchecked(p.horizon, &params);
    if !(kt > 0.0) {
        let failure = Some(format!("k(T) = {kt:.3e} <= 0 with C1 = {:.3e}, C2 = {:.3e}", params.c1, params.c2));
        let report = PositivityReport {
            params: params.clone(),
            tolerance: opts.tol,
            rows: Vec::new(),
            garding: Vec::new(),
            vacuous: false,
            constants: Some(constants.clone()),
        };
        let selection = Selection { params, report, constants, assumptions: assumptions.clone(), rejected: Vec::new() };
        return Ok(Attempt { selection, failure });
    }
    let cs = assemble_at(&ctx, &st, &params)?;
    let mut report = verify_lower_bounds(&cs, &params, grid, opts.tol);
    report.constants = Some(constants.clone());
    let failure = report.first_failure().map(|row| {
        format!(
            "{} margin {:.3e} at t = {}, x = {:.4}, xi = {:.4}",
            row.name, row.margin, row.t, row.witness_x, row.witness_xi
        )
    });
    if failure.is_none() {
        add_garding_floors(&mut report, &cs);
    }
    let selection = Selection { params, report, constants, assumptions: assumptions.clone(), rejected: Vec::new() };
    Ok(Attempt { selection, failure })
}

fn checked_assumptions(p: &ProblemSpec, grid: &Grid, theta: f64) -> Result<AssumptionReport> {
    let assumptions = check_assumptions(p, grid, theta);
    if let Some(fail) = assumptions.first_failure() {
        return Err(Error::Config(format!(
            "hypothesis {} fails (measured {:.4e}, documented {:.4e}) {}",
            fail.name, fail.measured, fail.documented, fail.note
        )));
    }
    if !(assumptions.c_a3 > 0.0) {
        return Err(Error::Config("C_a3 must be positive".into()));
    }
    Ok(assumptions)
}

/// Single attempt at `opts.h` (or `opts.h_start`), returning the report even
/// when an inequality fails.
pub fn evaluate_parameters(p: &ProblemSpec, theta: f64, grid: &Grid, opts: &SelectionOptions) -> Result<Attempt> {
    let assumptions = checked_assumptions(p, grid, theta)?;
    attempt_at(p, theta, grid, opts, opts.h.unwrap_or(opts.h_start), &assumptions)
}

/// Chooses M₂, M₁, h, k₀ (and the k-ODE constants C₁, C₂) so that the three
/// groups are nonnegative on the region at every sample time. h doubles from
/// `h_start` unless fixed by `opts.h`.
pub fn select_parameters(p: &ProblemSpec, theta: f64, grid: &Grid, opts: &SelectionOptions) -> Result<Selection> {
    let assumptions = checked_assumptions(p, grid, theta)?;
    let mut rejected = Vec::new();
    let mut h = opts.h.unwrap_or(opts.h_start);
    while h <= opts.h_max {
        match attempt_at(p, theta, grid, opts, h, &assumptions) {
            Ok(Attempt { selection, failure: None }) => return Ok(Selection { rejected, ..selection }),
            Ok(Attempt { failure: Some(why), .. }) => rejected.push((h, why)),
            Err(Error::Convergence(why)) if opts.h.is_none() => rejected.push((h, why)),
            Err(e) => return Err(e),
        }
        if opts.h.is_some() {
            let (h, why) = rejected.pop().unwrap_or_default();
            return Err(Error::Infeasible(format!("parameters rejected at h = {h}: {why}")));
        }
        h *= 2.0;
    }
    let last = rejected.last().map(|r| r.1.clone()).unwrap_or_default();
    Err(Error::Infeasible(format!("h search exceeded h_max = {}; last failing inequality: {last}", opts.h_max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::model_problem;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(PI, 64).unwrap()
    }

    #[test]
    fn garding_of_simple_multipliers() {
        let g = grid();
        let one = SymbolTable::from_fn(&g, 0.0, |_, _| Complex64::new(1.0, 0.0));
        // the zeroed Nyquist column contributes one zero eigenvalue
        let v = discrete_garding(&one);
        assert!(v.abs() < 1e-12, "{v}");
        let full = SymbolTable::from_fn_full(&g, 0.0, |_, _| Complex64::new(1.0, 0.0));
        assert!((discrete_garding(&full) - 1.0).abs() < 1e-12);
        let xi2 = SymbolTable::from_fn(&g, 2.0, |_, xi| Complex64::new(xi * xi, 0.0));
        assert!(discrete_garding(&xi2) >= -1e-10);
    }

    #[test]
    fn m2_formula() {
        let p = model_problem("complex-damped", 0.75, &[], 1.0).unwrap();
        let sel = select_parameters(&p, 1.8, &grid(), &SelectionOptions::default()).unwrap();
        let expect = 2.0 * (sel.constants.c_a2 + 0.01) / sel.constants.c_a3;
        assert!((sel.params.m2 - expect).abs() < 1e-12);
        assert!(sel.report.passed(), "{}", sel.report);
        assert!(sel.params.c2 >= 0.0 && sel.params.c1 >= 0.0);
    }

    #[test]
    fn baseline_has_nonnegative_margins() {
        let p = model_problem("kdv-baseline", 0.75, &[], 1.0).unwrap();
        let sel = select_parameters(&p, 1.8, &grid(), &SelectionOptions::default()).unwrap();
        assert!(sel.report.passed());
        assert!((sel.params.m2 - 2.0 * 0.01 / 3.0).abs() < 1e-9);
        assert_eq!(sel.params.h, 8.0);
    }

    #[test]
    fn zero_m2_is_caught_with_witness() {
        let p = model_problem("complex-damped", 0.75, &[], 1.0).unwrap();
        let sel = select_parameters(&p, 1.8, &grid(), &SelectionOptions::default()).unwrap();
        let params = WeightParams { m2: 0.0, ..sel.params };
        let r = verify_params(&p, &params, &grid(), 1e-8).unwrap();
        let row = r.worst(BOUND_A2).unwrap();
        assert!(row.margin < 0.0);
        assert!(!row.pass && row.witness_xi.abs() > params.r_a3 * params.h);
    }

    #[test]
    fn empty_region_is_infeasible_with_lower_order_terms() {
        let p = model_problem("complex-damped", 0.75, &[], 1.0).unwrap();
        let g = Grid::new(PI, 32).unwrap();
        let err = select_parameters(&p, 1.8, &g, &SelectionOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn theta_out_of_range_is_config_error() {
        let p = model_problem("complex-damped", 0.75, &[], 1.0).unwrap();
        let err = select_parameters(&p, 2.0, &grid(), &SelectionOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn csv_has_schema_line() {
        let p = model_problem("complex-damped", 0.75, &[], 1.0).unwrap();
        let sel = select_parameters(&p, 1.8, &grid(), &SelectionOptions::default()).unwrap();
        let mut buf = Vec::new();
        sel.report.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# schema=1"));
        assert_eq!(lines.next(), Some("bound-name,t,margin,witness_x,witness_xi"));
        assert_eq!(lines.count(), 15);
    }
}
