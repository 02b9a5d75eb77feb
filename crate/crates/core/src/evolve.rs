//! Gevrey norms, radius fits and the integrating-factor RK4 solver for the
//! conjugated problem ∂_t v = −ia₃(t,D)v + k′(t)⟨D⟩_h^{1/θ}v − B(t,x,D)v + F(t),
//! where B collects ã₂ + ã₁ + r₀ and the rest of ã_θ.
//!
//! The original problem is D_t u + a₃u + a₂u + a₁u + a₀u = f, i.e.
//! ∂_t u = −i(a₃ + a₂ + a₁ + a₀)u + i f.

use std::io::Write;

use num_complex::Complex64;

use crate::conjugate::{build_from_weights, ConjugationContext, ConjugatorBundle, ConjugatorOptions, KPoly};
use crate::error::{Error, Result};
use crate::grid::{bracket, Field, Grid};
use crate::positivity::discrete_garding;
use crate::quantize::{apply_values, SymbolTable};
use crate::symbols::{Point, ProblemSpec};
use crate::weights::{k_of_t, k_unchecked, WeightParams};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Sobolev order m, radius ρ and Gevrey index θ of H^m_{ρ;θ}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GevreyNormSpec {
    pub m: f64,
    pub rho: f64,
    pub theta: f64,
}

fn gevrey_norm_values(grid: &Grid, values: &[Complex64], spec: &GevreyNormSpec) -> Result<f64> {
    let uh = grid.forward_values(values);
    let logs: Vec<f64> = uh
        .iter()
        .zip(grid.freqs())
        .filter(|(c, _)| c.norm() > 0.0)
        .map(|(c, &xi)| {
            let b = bracket(xi, 1.0);
            spec.m * b.ln() + spec.rho * b.powf(1.0 / spec.theta) + c.norm().ln()
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let sum: f64 = logs.iter().map(|l| (2.0 * (l - top)).exp()).sum();
    let log_norm = top + 0.5 * (grid.dx() * sum).ln();
    if log_norm > f64::MAX.ln() || log_norm.is_nan() {
        return Err(Error::Numeric(format!("H^m_(rho;theta) norm overflows (log = {log_norm:.3e})")));
    }
    Ok(log_norm.exp())
}

/// ‖⟨ξ⟩^m e^{ρ⟨ξ⟩^{1/θ}} û‖ with the grid weight, accumulated in log space.
pub fn gevrey_norm(u: &Field, spec: &GevreyNormSpec) -> Result<f64> {
    gevrey_norm_values(u.grid(), u.values(), spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusFit {
    pub rho: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the line.
    pub rms: f64,
    pub r_squared: f64,
    pub modes: usize,
    /// 1 − R² above 1e−3: −log|û| is not affine in ⟨ξ⟩^{1/θ}.
    pub nonlinear: bool,
}

/// Relative floor below which modes are ignored by [`radius_fit`].
pub const NOISE_FLOOR: f64 = 1e-14;

fn radius_fit_values(grid: &Grid, values: &[Complex64], theta: f64) -> Result<RadiusFit> {
    let uh = grid.forward_values(values);
    let top = uh.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = (1..grid.len())
        .filter(|&k| grid.in_band(k) && uh[k].norm() > NOISE_FLOOR * top)
        .map(|k| (bracket(grid.freqs()[k], 1.0).powf(1.0 / theta), -uh[k].norm().ln()))
        .collect();
    if pts.len() < 16 {
        return Err(Error::InsufficientData(format!(
            "only {} resolved modes above the noise floor (need 16)",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all fitted modes share one frequency weight".into()));
    }
    let rho = sxy / sxx;
    let intercept = my - rho * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - rho * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RadiusFit {
        rho,
        intercept,
        rms: (ss_res / n).sqrt(),
        r_squared,
        modes: pts.len(),
        nonlinear: 1.0 - r_squared > 1e-3,
    })
}

/// Least-squares slope of −log|û(ξ)| against ⟨ξ⟩^{1/θ} over the resolved band.
pub fn radius_fit(u: &Field, theta: f64) -> Result<RadiusFit> {
    radius_fit_values(u.grid(), u.values(), theta)
}

/// Node values of the Fourier series Σ_ξ c·e^{−ρ⟨ξ⟩^{1/θ}}e^{iξ(x−x₀)} over
/// all modes but Nyquist; the function does not depend on N beyond truncation.
pub fn gevrey_profile(grid: &Grid, rho: f64, theta: f64, amplitude: f64, shift: f64) -> Field {
    let amplitude = amplitude * (grid.len() as f64).sqrt();
    let coeffs: Vec<Complex64> = grid
        .freqs()
        .iter()
        .enumerate()
        .map(|(k, &xi)| {
            if k == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(amplitude * (-rho * bracket(xi, 1.0).powf(1.0 / theta)).exp(), -xi * shift)
            }
        })
        .collect();
    Field::from_raw(grid, grid.inverse_values(&coeffs))
}

/// The generator of the conjugated problem: bulk symbols as polynomials in k,
/// tabulated at sample times when the coefficients depend on t.
#[derive(Clone, Debug)]
pub struct ConjugatedOperator {
    grid: Grid,
    params: WeightParams,
    problem: ProblemSpec,
    times: Vec<f64>,
    bulk: Vec<KPoly>,
    time_weight: Vec<f64>,
    /// 1.1·(1 + 2 max(0, −λ_min Herm op(B(t)))) over the sample times.
    pub c_prime: f64,
    /// sup |B|/⟨ξ⟩² at t = 0.
    pub order2_scale: f64,
}

/// Stage times used for non-autonomous problems.
pub const OPERATOR_SAMPLES: usize = 9;

impl ConjugatedOperator {
    pub fn new(ctx: &ConjugationContext) -> Result<ConjugatedOperator> {
        let p = ctx.problem();
        let params = ctx.params().clone();
        let grid = ctx.grid().clone();
        let horizon = params.horizon;
        let (times, bulk) = if p.autonomous {
            (vec![0.0], vec![ctx.stage(0.0)?.bulk()])
        } else {
            let times: Vec<f64> =
                (0..OPERATOR_SAMPLES).map(|i| horizon * i as f64 / (OPERATOR_SAMPLES - 1) as f64).collect();
            let bulk = times.iter().map(|&t| ctx.stage(t).map(|s| s.bulk())).collect::<Result<Vec<_>>>()?;
            (times, bulk)
        };
        let time_weight = grid.freqs().iter().map(|&xi| params.time_weight(xi)).collect();
        let mut op = ConjugatedOperator {
            grid,
            params,
            problem: p.clone(),
            times,
            bulk,
            time_weight,
            c_prime: 0.0,
            order2_scale: 0.0,
        };
        let mut floor: f64 = 0.0;
        for i in 0..OPERATOR_SAMPLES {
            let t = horizon * i as f64 / (OPERATOR_SAMPLES - 1) as f64;
            floor = floor.min(discrete_garding(&op.bulk_table(t)?));
        }
        op.c_prime = 1.1 * (1.0 + 2.0 * (-floor).max(0.0));
        let b0 = op.bulk_table(0.0)?;
        let g = &op.grid;
        let mut scale: f64 = 0.0;
        for j in 0..g.len() {
            for (k, &xi) in g.freqs().iter().enumerate().skip(1) {
                scale = scale.max(b0.get(j, k).norm() / bracket(xi, 1.0).powi(2));
            }
        }
        op.order2_scale = scale;
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    /// B(t) at k = k(t).
    pub fn bulk_table(&self, t: f64) -> Result<SymbolTable> {
        let k = if self.params.k0 > 0.0 { k_of_t(t, &self.params)? } else { 0.0 };
        if self.times.len() == 1 {
            return Ok(self.bulk[0].eval(k));
        }
        // cubic Lagrange on the four nearest sample times
        let n = self.times.len();
        let h = self.times[1] - self.times[0];
        let pos = (t / h).floor() as isize;
        let start = (pos - 1).clamp(0, n as isize - 4) as usize;
        let idx: Vec<usize> = (start..start + 4).collect();
        let mut out = SymbolTable::zeros(&self.grid);
        for &i in &idx {
            let w: f64 = idx
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (t - self.times[j]) / (self.times[i] - self.times[j]))
                .product();
            out.add_scaled(&self.bulk[i].eval(k), Complex64::new(w, 0.0));
        }
        Ok(out)
    }

    fn a3_column(&self, t: f64) -> Vec<f64> {
        self.grid
            .freqs()
            .iter()
            .map(|&xi| self.problem.a3.eval(&Point { t, x: 0.0, xi, xb: 1.0 }).re)
            .collect()
    }

    /// Fourier multiplier of the flow of −ia₃ + k′⟨ξ⟩_h^{1/θ} from a to b.
    fn propagator(&self, a: f64, b: f64) -> Vec<Complex64> {
        let s = b - a;
        let phase: Vec<f64> = if self.problem.autonomous {
            self.a3_column(a).into_iter().map(|v| v * s).collect()
        } else {
            let g = 0.5 / 3f64.sqrt();
            let c1 = self.a3_column(a + (0.5 - g) * s);
            let c2 = self.a3_column(a + (0.5 + g) * s);
            c1.iter().zip(&c2).map(|(x, y)| 0.5 * s * (x + y)).collect()
        };
        let dk = k_unchecked(b, &self.params) - k_unchecked(a, &self.params);
        phase
            .iter()
            .zip(&self.time_weight)
            .map(|(&ph, &m)| Complex64::from_polar((dk * m).exp(), -ph))
            .collect()
    }

    /// Default step: 0.5/(ξ_max²·sup|B|/⟨ξ⟩²), at most T/100, rounded so that T/dt is an integer.
    pub fn default_dt(&self) -> f64 {
        let horizon = self.params.horizon;
        let xm = self.grid.xi_max();
        let raw = if self.order2_scale > 0.0 { 0.5 / (xm * xm * self.order2_scale) } else { f64::INFINITY };
        let dt = raw.min(horizon / 100.0);
        horizon / (horizon / dt).ceil()
    }
}

fn mul_spectral(grid: &Grid, v: &[Complex64], mult: &[Complex64]) -> Vec<Complex64> {
    let mut c = grid.forward_values(v);
    c.iter_mut().zip(mult).for_each(|(a, b)| *a *= b);
    grid.inverse_values(&c)
}

fn axpy(a: &[Complex64], s: f64, b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x + y * s).collect()
}

/// Source term F(t) of the conjugated problem as node values.
pub type Source<'a> = &'a (dyn Fn(f64) -> Result<Vec<Complex64>> + Sync);

struct Rhs<'a> {
    op: &'a ConjugatedOperator,
    source: Option<Source<'a>>,
    cache: Vec<(f64, SymbolTable)>,
}

impl<'a> Rhs<'a> {
    fn table(&mut self, t: f64) -> Result<&SymbolTable> {
        if let Some(i) = self.cache.iter().position(|(s, _)| *s == t) {
            return Ok(&self.cache[i].1);
        }
        if self.cache.len() >= 3 {
            self.cache.remove(0);
        }
        let table = self.op.bulk_table(t)?;
        self.cache.push((t, table));
        Ok(&self.cache.last().expect("just pushed").1)
    }

    fn source(&self, t: f64) -> Result<Option<Vec<Complex64>>> {
        self.source.map(|f| f(t)).transpose()
    }

    /// −B(t)v + F(t), and F(t).
    fn eval(&mut self, t: f64, v: &[Complex64]) -> Result<(Vec<Complex64>, Option<Vec<Complex64>>)> {
        let bv = apply_values(self.table(t)?, v);
        let f = self.source(t)?;
        let mut out: Vec<Complex64> = bv.iter().map(|x| -x).collect();
        if let Some(f) = &f {
            out.iter_mut().zip(f).for_each(|(o, s)| *o += s);
        }
        Ok((out, f))
    }

    /// One Lawson RK4 step; returns the new state and F(t + h).
    fn step(&mut self, v: &[Complex64], t: f64, h: f64) -> Result<(Vec<Complex64>, Option<Vec<Complex64>>)> {
        let grid = self.op.grid.clone();
        let p1 = self.op.propagator(t, t + 0.5 * h);
        let p2 = self.op.propagator(t + 0.5 * h, t + h);
        let p: Vec<Complex64> = p1.iter().zip(&p2).map(|(a, b)| a * b).collect();
        let (k1, _) = self.eval(t, v)?;
        let v_half = mul_spectral(&grid, v, &p1);
        let (k2, _) = self.eval(t + 0.5 * h, &mul_spectral(&grid, &axpy(v, 0.5 * h, &k1), &p1))?;
        let (k3, _) = self.eval(t + 0.5 * h, &axpy(&v_half, 0.5 * h, &k2))?;
        let v_full = mul_spectral(&grid, v, &p);
        let (k4, f_end) = self.eval(t + h, &axpy(&v_full, h, &mul_spectral(&grid, &k3, &p2)))?;
        let mid: Vec<Complex64> = k2.iter().zip(&k3).map(|(a, b)| a + b).collect();
        let k1p = mul_spectral(&grid, &k1, &p);
        let midp = mul_spectral(&grid, &mid, &p2);
        let out = (0..v.len()).map(|j| v_full[j] + (k1p[j] + 2.0 * midp[j] + k4[j]) * (h / 6.0)).collect();
        Ok((out, f_end))
    }
}

/// One integrating-factor RK4 step of the conjugated problem.
pub fn step(v: &Field, t: f64, dt: f64, op: &ConjugatedOperator, source: Option<Source>) -> Result<Field> {
    v.grid().check_same(op.grid())?;
    let mut rhs = Rhs { op, source, cache: Vec::new() };
    let (out, _) = rhs.step(v.values(), t, dt)?;
    check_finite(&out, t + dt, 1e12)?;
    Ok(Field::from_raw(v.grid(), out))
}

fn check_finite(v: &[Complex64], t: f64, cap: f64) -> Result<()> {
    let sup = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !sup.is_finite() || sup > cap {
        return Err(Error::Instability(format!("blow-up at t = {t:.6}: sup |v| = {sup:.3e}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// None: [`ConjugatedOperator::default_dt`].
    pub dt: Option<f64>,
    /// Number of logged intervals (the step count is rounded to a multiple).
    pub logs: usize,
    pub energy_tol: f64,
    pub blowup_cap: f64,
    /// Sobolev order m used by the norm logs.
    pub m: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { dt: None, logs: 50, energy_tol: 1e-6, blowup_cap: 1e12, m: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// Conjugated state v(t_i).
    pub v: Vec<Vec<Complex64>>,
    /// Original state u(t_i); empty for a conjugated-only solve.
    pub u: Vec<Vec<Complex64>>,
    pub l2: Vec<f64>,
    pub hm: Vec<f64>,
    pub radius: Vec<f64>,
    /// Largest normalized energy residual over the steps ending at each log time.
    pub energy_residual: Vec<f64>,
    /// Norm used for the hm column.
    pub norm: GevreyNormSpec,
    pub dt: f64,
    pub steps: usize,
    pub c_prime: f64,
    /// Largest observed (E_{i+1} − E_i)/(dt·(E + F)).
    pub c_prime_emp: f64,
    pub max_residual: f64,
    /// Smallest C with ‖·(t_i)‖² ≤ C(‖data‖² + ∫‖source‖²) at the logged times.
    pub gronwall_c: f64,
    /// e^{C′T}·max(1, C′)·K₁K₂ from the energy estimate and measured norm equivalences.
    pub gronwall_bound: Option<f64>,
    pub rho_prime: Option<f64>,
    /// ‖op(e^{Λ(t_i)})u(t_i) − v(t_i)‖ / ‖v(t_i)‖.
    pub roundtrip: Vec<f64>,
}

impl Trajectory {
    /// The field the norm columns refer to: u when present, v otherwise.
    pub fn primary(&self) -> &[Vec<Complex64>] {
        if self.u.is_empty() {
            &self.v
        } else {
            &self.u
        }
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# schema=1")?;
        writeln!(w, "t,l2,hm_rho_theta,radius_fit,energy_residual")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.9},{:.15e},{:.15e},{:.9e},{:.9e}",
                self.times[i], self.l2[i], self.hm[i], self.radius[i], self.energy_residual[i]
            )?;
        }
        Ok(())
    }

    /// "FIELD1" dump: magic, N and count as u64, count times, then count rows of N re/im pairs, little-endian.
    pub fn write_field1(&self, w: &mut impl Write) -> Result<()> {
        write_field1(w, &self.times, self.primary())
    }
}

pub fn write_field1(w: &mut impl Write, times: &[f64], rows: &[Vec<Complex64>]) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.len());
    w.write_all(b"FIELD1")?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for t in times {
        w.write_all(&t.to_le_bytes())?;
    }
    for row in rows {
        for v in row {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_field1(r: &mut impl std::io::Read) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != b"FIELD1" {
        return Err(Error::Data("not a FIELD1 dump".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut dyn std::io::Read| -> Result<[u8; 8]> {
        r.read_exact(&mut b8)?;
        Ok(b8)
    };
    let n = u64::from_le_bytes(next(r)?) as usize;
    let count = u64::from_le_bytes(next(r)?) as usize;
    let times = (0..count).map(|_| next(r).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = Vec::with_capacity(n);
        for _ in 0..n {
            let re = f64::from_le_bytes(next(r)?);
            let im = f64::from_le_bytes(next(r)?);
            row.push(Complex64::new(re, im));
        }
        rows.push(row);
    }
    Ok((times, rows))
}

struct RawRun {
    times: Vec<f64>,
    states: Vec<Vec<Complex64>>,
    sources: Vec<Option<Vec<Complex64>>>,
    residual: Vec<f64>,
    dt: f64,
    steps: usize,
    c_prime_emp: f64,
    max_residual: f64,
}

fn run_steps(op: &ConjugatedOperator, v0: &[Complex64], source: Option<Source>, opts: &SolverOptions) -> Result<RawRun> {
    let grid = op.grid.clone();
    let horizon = op.params.horizon;
    let dt0 = opts.dt.unwrap_or_else(|| op.default_dt());
    if !(dt0 > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt0}")));
    }
    let logs = opts.logs.max(1);
    // the tolerance keeps an echoed dt = T/steps from gaining an extra block
    let per_log = ((horizon / dt0) / logs as f64 - 1e-9).ceil().max(1.0) as usize;
    let steps = per_log * logs;
    let dt = horizon / steps as f64;
    let mut rhs = Rhs { op, source, cache: Vec::new() };
    let mut v = v0.to_vec();
    let mut f_now = rhs.source(0.0)?;
    let energy = |x: &[Complex64]| grid.l2(x).powi(2);
    let mut e_now = energy(&v);
    let mut run = RawRun {
        times: vec![0.0],
        states: vec![v.clone()],
        sources: vec![f_now.clone()],
        residual: vec![0.0],
        dt,
        steps,
        c_prime_emp: f64::NEG_INFINITY,
        max_residual: f64::NEG_INFINITY,
    };
    let mut window: f64 = f64::NEG_INFINITY;
    for i in 0..steps {
        let t = i as f64 * dt;
        let t_next = (i + 1) as f64 * dt;
        let (next, f_next) = rhs.step(&v, t, dt)?;
        check_finite(&next, t_next, opts.blowup_cap)?;
        let e_next = energy(&next);
        let ff = |f: &Option<Vec<Complex64>>| f.as_ref().map_or(0.0, |f| energy(f));
        let (fa, fb) = (ff(&f_now), ff(&f_next));
        let scale = e_now.max(e_next) + fa.max(fb);
        let rate = (e_next - e_now) / dt;
        let (resid, emp) = if scale > 0.0 {
            ((rate - op.c_prime * scale) / (e_now + fa).max(f64::MIN_POSITIVE), rate / scale)
        } else {
            (0.0, 0.0)
        };
        if resid > opts.energy_tol {
            return Err(Error::Instability(format!(
                "energy residual {resid:.3e} exceeds {:.1e} at step {} (t = {t_next:.6}); C' = {:.4e}",
                opts.energy_tol,
                i + 1,
                op.c_prime
            )));
        }
        window = window.max(resid);
        run.max_residual = run.max_residual.max(resid);
        run.c_prime_emp = run.c_prime_emp.max(emp);
        v = next;
        e_now = e_next;
        f_now = f_next;
        if (i + 1) % per_log == 0 {
            run.times.push(t_next);
            run.states.push(v.clone());
            run.sources.push(f_now.clone());
            run.residual.push(window);
            window = f64::NEG_INFINITY;
        }
    }
    Ok(run)
}

fn integrated(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; times.len()];
    for i in 1..times.len() {
        acc[i] = acc[i - 1] + 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
    }
    acc
}

fn fit_or_nan(grid: &Grid, v: &[Complex64], theta: f64) -> f64 {
    radius_fit_values(grid, v, theta).map_or(f64::NAN, |f| f.rho)
}

/// Integrates the conjugated problem from v₀ with source F.
pub fn solve_conjugated(
    op: &ConjugatedOperator,
    v0: &Field,
    source: Option<Source>,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    v0.grid().check_same(op.grid())?;
    let grid = op.grid.clone();
    let theta = op.params.theta;
    let run = run_steps(op, v0.values(), source, opts)?;
    let norm = GevreyNormSpec { m: opts.m, rho: 0.0, theta };
    let hm = run.states.iter().map(|v| gevrey_norm_values(&grid, v, &norm)).collect::<Result<Vec<_>>>()?;
    let f_hm = run
        .sources
        .iter()
        .map(|f| f.as_ref().map_or(Ok(0.0), |f| gevrey_norm_values(&grid, f, &norm).map(|x| x * x)))
        .collect::<Result<Vec<_>>>()?;
    let gronwall_c = gronwall_ratio(&run.times, &hm, &f_hm);
    Ok(Trajectory {
        l2: run.states.iter().map(|v| grid.l2(v)).collect(),
        radius: run.states.iter().map(|v| fit_or_nan(&grid, v, theta)).collect(),
        hm,
        energy_residual: run.residual,
        norm,
        dt: run.dt,
        steps: run.steps,
        c_prime: op.c_prime,
        c_prime_emp: run.c_prime_emp,
        max_residual: run.max_residual,
        gronwall_c,
        gronwall_bound: None,
        rho_prime: None,
        roundtrip: Vec::new(),
        times: run.times,
        v: run.states,
        u: Vec::new(),
        grid,
    })
}

/// max_i ‖x(t_i)‖² / (‖x(0)‖² + ∫₀^{t_i} F).
fn gronwall_ratio(times: &[f64], norms: &[f64], source_sq: &[f64]) -> f64 {
    let data = norms[0] * norms[0];
    let int = integrated(times, source_sq);
    norms
        .iter()
        .zip(&int)
        .map(|(n, i)| if data + i > 0.0 { n * n / (data + i) } else { 0.0 })
        .fold(0.0, f64::max)
}

/// Forcing f(t, x) of the original problem.
pub type Forcing<'a> = &'a (dyn Fn(f64, f64) -> Complex64 + Sync);

/// Shift of the reported radius below k(T).
pub const RHO_PRIME_DELTA: f64 = 0.01;

/// Solves the original problem through v = e^Λ u, then u = {e^Λ}^{−1}v at the logged times.
pub fn solve_original(
    ctx: &ConjugationContext,
    f: Option<Forcing>,
    g: &Field,
    spec: &GevreyNormSpec,
    conj_opts: &ConjugatorOptions,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let grid = ctx.grid().clone();
    g.grid().check_same(&grid)?;
    let params = ctx.params().clone();
    let horizon = params.horizon;
    if spec.rho > 0.0 {
        if !(params.k0 < spec.rho) {
            return Err(Error::Data(format!("k0 = {} must be smaller than the data radius rho = {}", params.k0, spec.rho)));
        }
        check_radius(&grid, g.values(), spec, "initial data")?;
        if let Some(f) = f {
            for t in [0.0, 0.5 * horizon, horizon] {
                let ft: Vec<Complex64> = grid.nodes().iter().map(|&x| f(t, x)).collect();
                check_radius(&grid, &ft, spec, &format!("forcing at t = {t}"))?;
            }
        }
    }
    let bundle = build_from_weights(ctx.weights(), conj_opts)?;
    let op = ConjugatedOperator::new(ctx)?;
    let v0 = bundle.forward(0.0, g.values())?;
    let forcing = |t: f64| -> Result<Vec<Complex64>> {
        let f = f.expect("source only built with a forcing");
        let ft: Vec<Complex64> = grid.nodes().iter().map(|&x| I * f(t, x)).collect();
        bundle.forward(t, &ft)
    };
    let source: Option<Source> = if f.is_some() { Some(&forcing) } else { None };
    let run = run_steps(&op, &v0, source, opts)?;

    let kt = if params.k0 > 0.0 { k_of_t(horizon, &params)? } else { 0.0 };
    let rho_prime = kt - RHO_PRIME_DELTA;
    let norm_u = GevreyNormSpec { m: opts.m, rho: rho_prime, ..*spec };
    let norm_v = GevreyNormSpec { m: opts.m, rho: 0.0, theta: spec.theta };
    let mut u = Vec::with_capacity(run.times.len());
    let mut roundtrip = Vec::with_capacity(run.times.len());
    for (t, v) in run.times.iter().zip(&run.states) {
        let ui = bundle.inverse(*t, v)?;
        let back = bundle.forward(*t, &ui)?;
        let diff: Vec<Complex64> = back.iter().zip(v).map(|(a, b)| a - b).collect();
        let nv = grid.l2(v);
        roundtrip.push(if nv > 0.0 { grid.l2(&diff) / nv } else { grid.l2(&diff) });
        u.push(ui);
    }
    let hm = u.iter().map(|x| gevrey_norm_values(&grid, x, &norm_u)).collect::<Result<Vec<_>>>()?;
    let f_data: Vec<f64> = match f {
        Some(f) => run
            .times
            .iter()
            .map(|&t| {
                let ft: Vec<Complex64> = grid.nodes().iter().map(|&x| f(t, x)).collect();
                gevrey_norm_values(&grid, &ft, spec).map(|x| x * x)
            })
            .collect::<Result<Vec<_>>>()?,
        None => vec![0.0; run.times.len()],
    };
    let g_norm = gevrey_norm_values(&grid, g.values(), spec)?;
    let int_f = integrated(&run.times, &f_data);
    let gronwall_c = hm
        .iter()
        .zip(&int_f)
        .map(|(n, i)| if g_norm * g_norm + i > 0.0 { n * n / (g_norm * g_norm + i) } else { 0.0 })
        .fold(0.0, f64::max);

    // chain ‖u‖ → ‖v‖ → energy estimate → data
    let v_hm = run.states.iter().map(|x| gevrey_norm_values(&grid, x, &norm_v)).collect::<Result<Vec<_>>>()?;
    let ratio = |a: f64, b: f64| if b > 0.0 { (a / b).powi(2) } else { 0.0 };
    let k1 = hm.iter().zip(&v_hm).map(|(a, b)| ratio(*a, *b)).fold(0.0, f64::max);
    let mut k2 = ratio(v_hm[0], g_norm);
    for (s, fd) in run.sources.iter().zip(&f_data) {
        if let Some(s) = s {
            k2 = k2.max(ratio(gevrey_norm_values(&grid, s, &norm_v)?, fd.sqrt()));
        }
    }
    let cp = op.c_prime;
    let bound = k1 * k2 * (cp * horizon).exp() * cp.max(1.0);

    Ok(Trajectory {
        l2: u.iter().map(|x| grid.l2(x)).collect(),
        radius: u.iter().map(|x| fit_or_nan(&grid, x, spec.theta)).collect(),
        hm,
        energy_residual: run.residual,
        norm: norm_u,
        dt: run.dt,
        steps: run.steps,
        c_prime: cp,
        c_prime_emp: run.c_prime_emp,
        max_residual: run.max_residual,
        gronwall_c,
        gronwall_bound: Some(bound),
        rho_prime: Some(rho_prime),
        roundtrip,
        times: run.times,
        v: run.states,
        u,
        grid,
    })
}

fn check_radius(grid: &Grid, values: &[Complex64], spec: &GevreyNormSpec, what: &str) -> Result<()> {
    match radius_fit_values(grid, values, spec.theta) {
        // band-limited data: no decay to fit, radius unbounded
        Err(Error::InsufficientData(_)) => Ok(()),
        Err(e) => Err(e),
        Ok(fit) if fit.rho >= spec.rho - 0.02 => Ok(()),
        Ok(fit) => Err(Error::Data(format!(
            "{what} has fitted radius {:.4} below the required rho = {}",
            fit.rho, spec.rho
        ))),
    }
}

/// The conjugator used by [`solve_original`], for callers that need it separately.
pub fn conjugator(ctx: &ConjugationContext, opts: &ConjugatorOptions) -> Result<ConjugatorBundle> {
    build_from_weights(ctx.weights(), opts)
}
