use std::fmt;
use std::io::Write;

use gevrey_core::conjugate::{
    a3_oracle_discrepancy, build_conjugator, pipeline_discrepancy, ConjugationContext, ConjugatorOptions, InverseMode,
};
use gevrey_core::error::{Error, Result};
use gevrey_core::grid::{bracket, Grid};
use gevrey_core::quantize::{compose_expansion, resolved_discrepancy, to_dense, SymbolTable};
use gevrey_core::symbols::{eval_table, model_problem};
use gevrey_core::weights::WeightParams;
use num_complex::Complex64;

use crate::config::RunConfig;
use crate::pipeline;

/// Largest grid the oracle suite runs on.
pub const ORACLE_MAX_N: usize = 128;

/// Below this every truncation counts as exact.
pub const COMPOSITION_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when value ≤ threshold.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, threshold, pass: value <= threshold, detail: String::new() }
    }

    fn detail(mut self, d: impl Into<String>) -> Check {
        self.detail = d.into();
        self
    }
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub n: usize,
    pub half_width: f64,
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# schema=1")?;
        writeln!(w, "check,value,threshold,pass")?;
        for c in &self.checks {
            writeln!(w, "{},{:.9e},{:.3e},{}", c.name, c.value, c.threshold, c.pass)?;
        }
        Ok(())
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "oracle suite N = {} L = {}: {}", self.n, self.half_width, if self.passed() { "PASS" } else { "FAIL" })?;
        for c in &self.checks {
            write!(f, "  {:<34} {:>13.6e}  <= {:<9.2e} {}", c.name, c.value, c.threshold, if c.pass { "ok" } else { "FAIL" })?;
            if !c.detail.is_empty() {
                write!(f, "  {}", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Band-resolved error of the truncated expansion against the dense product
/// op(p)op(q), for N_trunc = 1..=max.
pub fn composition_errors(p: &SymbolTable, q: &SymbolTable, max: usize) -> Result<Vec<f64>> {
    let grid = p.grid();
    let dense = to_dense(p).mul(&to_dense(q));
    (1..=max)
        .map(|n| {
            let s = compose_expansion(p, q, n)?.table;
            Ok(resolved_discrepancy(grid, &to_dense(&s), &dense, 1.0))
        })
        .collect()
}

/// Each error is no larger than the previous one, or already at the floor.
pub fn is_monotone(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| w[1] <= w[0] || w[1] <= COMPOSITION_FLOOR)
}

/// Symbol pairs from the model library: the complex-damped coefficients and
/// the time weight ⟨ξ⟩_h^{1/θ}.
pub fn library_pairs(grid: &Grid, sigma: f64, theta: f64) -> Result<Vec<(String, SymbolTable, SymbolTable)>> {
    let p = model_problem("complex-damped", sigma, &[], 1.0)?;
    let a3 = eval_table(&p.a3, grid, 0.0)?;
    let a2 = eval_table(&p.a2, grid, 0.0)?;
    let a1 = eval_table(&p.a1, grid, 0.0)?;
    let a0 = eval_table(&p.a0, grid, 0.0)?;
    let m = SymbolTable::from_xi_fn(grid, 1.0 / theta, |xi| Complex64::new(bracket(xi, 8.0).powf(1.0 / theta), 0.0));
    Ok(vec![
        ("a3*a2".into(), a3, a2.clone()),
        ("a2*a1".into(), a2.clone(), a1),
        ("a1*a0".into(), eval_table(&p.a1, grid, 0.0)?, a0.clone()),
        ("m*a2".into(), m.clone(), a2),
        ("m*a0".into(), m, a0),
    ])
}

/// Max error of the terminating case ξ ∘ e^{ix} = e^{ix}(ξ + 1) at N_trunc = 2.
pub fn terminating_case(grid: &Grid) -> Result<f64> {
    let p = SymbolTable::from_fn(grid, 1.0, |_, xi| Complex64::new(xi, 0.0));
    let q = SymbolTable::from_fn(grid, 0.0, |x, _| Complex64::new(0.0, x).exp());
    let s = compose_expansion(&p, &q, 2)?.table;
    let mut err = 0.0f64;
    for (j, &x) in grid.nodes().iter().enumerate() {
        for (k, &xi) in grid.freqs().iter().enumerate().skip(1) {
            err = err.max((s.get(j, k) - Complex64::new(0.0, x).exp() * (xi + 1.0)).norm());
        }
    }
    Ok(err)
}

/// Dense-oracle consistency checks on a copy of `cfg` with N capped at
/// [`ORACLE_MAX_N`]. Weights are selected on that grid as in `run`.
pub fn oracle_suite(cfg: &RunConfig) -> Result<OracleReport> {
    let mut small = cfg.clone();
    small.grid.n = cfg.grid.n.min(ORACLE_MAX_N);
    small.validate()?;
    let grid = pipeline::grid(&small)?;
    let mut checks = Vec::new();

    for (name, p, q) in library_pairs(&grid, small.problem.sigma, small.data.theta)? {
        let errs = composition_errors(&p, &q, 4)?;
        let detail = errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ");
        let mono = is_monotone(&errs);
        checks.push(Check { name: format!("composition_monotone[{name}]"), value: errs[3], threshold: errs[0], pass: mono, detail });
    }
    checks.push(Check::at_most("composition_terminating", terminating_case(&grid)?, 1e-10));

    let p = pipeline::problem(&small)?;
    let (sel, failure) = pipeline::choose(&small, &p, &grid)?;
    if let Some(why) = failure {
        return Err(Error::Infeasible(format!("positivity fails on the oracle grid: {why}")));
    }
    let params = sel.params;
    let opts = pipeline::conjugator_options(&small);
    let neumann = build_conjugator(&p, &params, &grid, &opts)?;
    let dense = build_conjugator(&p, &params, &grid, &ConjugatorOptions { mode: InverseMode::Dense, ..opts.clone() })?;
    checks.push(
        Check::at_most("inverse_residual", neumann.residual, small.tolerances.inverse_tol)
            .detail(format!("rho(R) = {:.3e}, {} terms", neumann.spectral_radius, neumann.terms)),
    );
    checks.push(Check::at_most("neumann_vs_dense", neumann.e_inv.sub(&dense.e_inv).norm2(), 1e-6));
    let blown = WeightParams { m2: 50.0 * params.m2.max(0.1), ..params.clone() };
    let caught = matches!(build_conjugator(&p, &blown, &grid, &opts), Err(Error::Convergence(_)));
    checks.push(Check {
        name: "convergence_error_when_infeasible".into(),
        value: if caught { 0.0 } else { 1.0 },
        threshold: 0.0,
        pass: caught,
        detail: format!("M2 = {}", blown.m2),
    });

    let ctx = ConjugationContext::new(&p, &params, &grid)?;
    let a3 = ctx.conj_a3(0.0)?;
    checks.push(Check::at_most("a3_conjugation_oracle", a3_oracle_discrepancy(&neumann, &a3), 1e-3));
    let cs = ctx.assemble(0.0)?;
    checks.push(Check::at_most("pipeline_oracle", pipeline_discrepancy(&neumann, &p, &cs)?, 1e-2));
    checks.push(Check::at_most("d1_imaginary_part", a3.d1.max_abs_im(), 1e-10));
    let moved = WeightParams { m1: 2.0 * params.m1 + 0.1, ..params.clone() };
    let a3_moved = ConjugationContext::new(&p, &moved, &grid)?.conj_a3(0.0)?;
    checks.push(Check::at_most("d1_invariant_under_M1", a3.d1.sub(&a3_moved.d1).max_abs(), 1e-12));

    Ok(OracleReport { n: grid.len(), half_width: grid.half_width(), checks })
}
