//! Cutoffs ψ and w, the weights λ₂ and λ₁, the time weight k(t) and the total
//! phase Λ = k(t)⟨ξ⟩_h^{1/θ} + λ₂ + λ₁.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{bracket, Grid};
use crate::numerics::integrate;
use crate::quantize::SymbolTable;
use crate::symbols::{a3_dxi, ProblemSpec};

const QUAD_TOL: f64 = 1e-10;

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| integrate(&bump, -1.0, 1.0, 1e-15).expect("bump integral converges"))
}

/// Smooth monotone step: 0 for s ≤ 0, 1 for s ≥ 1, normalized bump integral between.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let u = 2.0 * s - 1.0;
    let z = bump_mass();
    // integrate over the shorter side for accuracy near the ends
    if u <= 0.0 {
        integrate(&bump, -1.0, u, 1e-16).unwrap_or(f64::NAN) / z
    } else {
        1.0 - integrate(&bump, u, 1.0, 1e-16).unwrap_or(f64::NAN) / z
    }
}

/// ψ(y): 1 on |y| ≤ 1/2, 0 on |y| ≥ 1, smooth and monotone between.
pub fn cutoff_psi(y: f64) -> f64 {
    1.0 - smooth_step(2.0 * y.abs() - 1.0)
}

/// All tunable constants of the conjugator.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightParams {
    pub m2: f64,
    pub m1: f64,
    pub h: f64,
    pub k0: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
    pub theta: f64,
    pub mu: f64,
    /// Outer radius (in units of h) of the transition of w.
    pub r_a3: f64,
    pub horizon: f64,
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.m2 >= 0.0 && self.m1 >= 0.0) {
            return bad(format!("weight strengths must be nonnegative (M2 = {}, M1 = {})", self.m2, self.m1));
        }
        if !(self.h >= 1.0) {
            return bad(format!("frequency shift h must be at least 1, got {}", self.h));
        }
        if !(self.k0 >= 0.0) || !(self.c1 >= 0.0) || !(self.c2 >= 0.0) {
            return bad(format!("k0, C1, C2 must be nonnegative ({}, {}, {})", self.k0, self.c1, self.c2));
        }
        if !(self.sigma > 0.5 && self.sigma < 1.0) {
            return Err(Error::Config(format!("sigma must lie in (1/2, 1), got {}", self.sigma)));
        }
        if !(2.0 * (1.0 - self.sigma) < 1.0 / self.theta) || !(self.theta > 1.0) {
            return Err(Error::Config(format!(
                "theta = {} violates 2(1 - sigma) < 1/theta (sigma = {}); admissible theta < {}",
                self.theta,
                self.sigma,
                1.0 / (2.0 * (1.0 - self.sigma))
            )));
        }
        if !(self.mu > 1.0) {
            return bad(format!("cutoff Gevrey order mu must exceed 1, got {}", self.mu));
        }
        if !(self.r_a3 > 1.0) {
            return Err(Error::Config(format!(
                "R_a3 = {} leaves no transition zone for w (need R_a3 > 1)",
                self.r_a3
            )));
        }
        Ok(())
    }

    /// ⟨ξ⟩_h^{1/θ}.
    pub fn time_weight(&self, xi: f64) -> f64 {
        bracket(xi, self.h).powf(1.0 / self.theta)
    }
}

/// k(t) = e^{−C₁t}k₀ − (1 − e^{−C₁t})C₂/C₁, with the C₁ → 0 limit k₀ − C₂t.
pub fn k_of_t(t: f64, params: &WeightParams) -> Result<f64> {
    let k = k_unchecked(t, params);
    if !(k > 0.0) {
        return Err(Error::Parameter(format!(
            "time weight k({t}) = {k:.3e} is not positive; increase h (which shrinks C2) or k0"
        )));
    }
    Ok(k)
}

pub(crate) fn k_unchecked(t: f64, params: &WeightParams) -> f64 {
    let (c1, c2, k0) = (params.c1, params.c2, params.k0);
    if c1 == 0.0 {
        k0 - c2 * t
    } else {
        (-c1 * t).exp() * k0 + (-c1 * t).exp_m1() * c2 / c1
    }
}

/// k′(t) = −C₁k(t) − C₂.
pub fn k_prime(t: f64, params: &WeightParams) -> f64 {
    -params.c1 * k_unchecked(t, params) - params.c2
}

fn sign_of_dxi_a3(p: &ProblemSpec, t: f64, xi: f64) -> Result<f64> {
    let d = a3_dxi(p, t, xi);
    let scale = a3_dxi(p, t, xi.abs().max(1.0)).abs().max(1.0);
    if d.abs() <= 1e-12 * scale || !d.is_finite() {
        return Err(Error::Config(format!(
            "sign of d/dxi a3 is ambiguous at xi = {xi} (t = {t}); R_a3 too small"
        )));
    }
    Ok(d.signum())
}

/// w(ξ/h): 0 for |ξ/h| ≤ 1, −sgn ∂_ξa₃ for |ξ/h| > R_{a₃}, smooth step between.
pub fn sign_weight(xi: f64, t: f64, p: &ProblemSpec, params: &WeightParams) -> Result<f64> {
    if !(params.r_a3 > 1.0) {
        return Err(Error::Config(format!(
            "R_a3 = {} leaves no transition zone for w; R_a3 too small",
            params.r_a3
        )));
    }
    let s = xi.abs() / params.h;
    if s <= 1.0 {
        return Ok(0.0);
    }
    let edge = params.r_a3 * params.h;
    let probe = if s > params.r_a3 { xi } else { xi.signum() * edge };
    let sign = sign_of_dxi_a3(p, t, probe)?;
    Ok(-sign * smooth_step((s - 1.0) / (params.r_a3 - 1.0)))
}

/// λ₂, λ₁ and their x-derivatives on a fixed grid; the w signs and the
/// antiderivatives of ⟨y⟩^{−σ}, ⟨y⟩^{−σ/2} at the nodes are computed once.
#[derive(Clone, Debug)]
pub struct Weights {
    grid: Grid,
    params: WeightParams,
    sign_pos: f64,
    sign_neg: f64,
    anti_sigma: Vec<f64>,
    anti_half: Vec<f64>,
}

impl Weights {
    pub fn new(p: &ProblemSpec, params: &WeightParams, grid: &Grid) -> Result<Weights> {
        params.validate()?;
        let edge = params.r_a3 * params.h;
        let sign_pos = sign_of_dxi_a3(p, 0.0, edge)?;
        let sign_neg = sign_of_dxi_a3(p, 0.0, -edge)?;
        // the sign must stay fixed beyond the edge and over the horizon
        for &xi in grid.freqs().iter().skip(1) {
            if xi.abs() <= edge {
                continue;
            }
            for t in [0.0, p.horizon] {
                let s = sign_of_dxi_a3(p, t, xi)?;
                let expect = if xi > 0.0 { sign_pos } else { sign_neg };
                if s != expect {
                    return Err(Error::Config(format!(
                        "d/dxi a3 changes sign at xi = {xi}, t = {t}; w is not well defined"
                    )));
                }
            }
        }
        let anti = |s: f64| -> Result<Vec<f64>> {
            let n = grid.len();
            let mid = n / 2;
            let x = grid.nodes();
            let f = |y: f64| grid.x_bracket(y).powf(-s);
            let mut out = vec![0.0; n];
            for j in mid + 1..n {
                out[j] = out[j - 1] + integrate(&f, x[j - 1], x[j], 1e-13)?;
            }
            for j in (0..mid).rev() {
                out[j] = out[j + 1] - integrate(&f, x[j], x[j + 1], 1e-13)?;
            }
            Ok(out)
        };
        Ok(Weights {
            grid: grid.clone(),
            params: params.clone(),
            sign_pos,
            sign_neg,
            anti_sigma: anti(params.sigma)?,
            anti_half: anti(0.5 * params.sigma)?,
        })
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn w(&self, xi: f64) -> f64 {
        let pr = &self.params;
        let s = xi.abs() / pr.h;
        if s <= 1.0 {
            return 0.0;
        }
        let sign = if xi > 0.0 { self.sign_pos } else { self.sign_neg };
        -sign * smooth_step((s - 1.0) / (pr.r_a3 - 1.0))
    }

    /// ψ(⟨x⟩/⟨ξ⟩²_h).
    pub fn psi(&self, x: f64, xi: f64) -> f64 {
        let b = bracket(xi, self.params.h);
        cutoff_psi(self.grid.x_bracket(x) / (b * b))
    }

    /// ∫₀^x ⟨y⟩^{−s} dy using the node cache.
    fn antiderivative(&self, x: f64, half: bool) -> Result<f64> {
        let (cache, s) = if half {
            (&self.anti_half, 0.5 * self.params.sigma)
        } else {
            (&self.anti_sigma, self.params.sigma)
        };
        let g = &self.grid;
        let j = (((x + g.half_width()) / g.dx()).round() as isize).clamp(0, g.len() as isize - 1) as usize;
        let xj = g.nodes()[j];
        if xj == x {
            return Ok(cache[j]);
        }
        let f = |y: f64| g.x_bracket(y).powf(-s);
        Ok(cache[j] + integrate(&f, xj, x, 1e-13)?)
    }

    /// ∫₀^x ⟨y⟩^{−s} ψ(⟨y⟩/⟨ξ⟩²_h) dy.
    fn cut_integral(&self, x: f64, xi: f64, half: bool) -> Result<f64> {
        let b2 = bracket(xi, self.params.h).powi(2);
        let l = self.grid.half_width();
        let top = self.grid.x_bracket(l);
        if top <= 0.5 * b2 {
            return self.antiderivative(x, half);
        }
        // ψ starts to cut at ⟨y⟩ = b²/2: integrate the cached part up to there
        let y_half = self.inverse_bracket(0.5 * b2).unwrap_or(l);
        let a = x.abs();
        let sign = x.signum();
        if a <= y_half {
            return self.antiderivative(x, half);
        }
        let s = if half { 0.5 * self.params.sigma } else { self.params.sigma };
        let base = self.antiderivative(y_half, half)?;
        let g = &self.grid;
        let f = |y: f64| {
            let by = g.x_bracket(y);
            by.powf(-s) * cutoff_psi(by / b2)
        };
        let y_zero = self.inverse_bracket(b2).unwrap_or(l).min(a);
        let tail = integrate(&f, y_half, y_zero, QUAD_TOL).map_err(|e| {
            Error::Numeric(format!("lambda quadrature at x = {x}, xi = {xi}: {e}"))
        })?;
        Ok(sign * (base + tail))
    }

    /// Smallest y ≥ 0 with ⟨y⟩ = c, if it exists on [0, L].
    fn inverse_bracket(&self, c: f64) -> Option<f64> {
        let l = self.grid.half_width();
        let r = (c * c - 1.0).max(0.0).sqrt() / (2.0 * l / PI);
        (r <= 1.0).then(|| (2.0 * l / PI) * r.asin())
    }

    pub fn lambda2(&self, x: f64, xi: f64) -> Result<f64> {
        let w = self.w(xi);
        if w == 0.0 || self.params.m2 == 0.0 {
            return Ok(0.0);
        }
        Ok(self.params.m2 * w * self.cut_integral(x, xi, false)?)
    }

    pub fn lambda1(&self, x: f64, xi: f64) -> Result<f64> {
        let w = self.w(xi);
        if w == 0.0 || self.params.m1 == 0.0 {
            return Ok(0.0);
        }
        Ok(self.params.m1 * w / bracket(xi, self.params.h) * self.cut_integral(x, xi, true)?)
    }

    pub fn dx_lambda2(&self, x: f64, xi: f64) -> f64 {
        self.params.m2 * self.w(xi) * self.grid.x_bracket(x).powf(-self.params.sigma) * self.psi(x, xi)
    }

    pub fn dx_lambda1(&self, x: f64, xi: f64) -> f64 {
        self.params.m1 * self.w(xi) / bracket(xi, self.params.h)
            * self.grid.x_bracket(x).powf(-0.5 * self.params.sigma)
            * self.psi(x, xi)
    }

    /// Λ̃ = λ₂ + λ₁.
    pub fn lambda_tilde(&self, x: f64, xi: f64) -> Result<f64> {
        Ok(self.lambda2(x, xi)? + self.lambda1(x, xi)?)
    }

    pub fn k(&self, t: f64) -> Result<f64> {
        k_of_t(t, &self.params)
    }

    pub fn total_phase(&self, t: f64, x: f64, xi: f64) -> Result<f64> {
        Ok(self.k(t)? * self.params.time_weight(xi) + self.lambda_tilde(x, xi)?)
    }

    /// Λ̃ on the full grid, Nyquist column included.
    pub fn lambda_tilde_table(&self) -> Result<SymbolTable> {
        self.real_table(|x, xi| self.lambda_tilde(x, xi), true)
    }

    pub fn lambda2_table(&self) -> Result<SymbolTable> {
        self.real_table(|x, xi| self.lambda2(x, xi), true)
    }

    pub fn lambda1_table(&self) -> Result<SymbolTable> {
        self.real_table(|x, xi| self.lambda1(x, xi), true)
    }

    pub fn dx_lambda2_table(&self) -> SymbolTable {
        SymbolTable::from_fn_full(&self.grid, 0.0, |x, xi| Complex64::new(self.dx_lambda2(x, xi), 0.0))
    }

    pub fn dx_lambda1_table(&self) -> SymbolTable {
        SymbolTable::from_fn_full(&self.grid, -1.0, |x, xi| Complex64::new(self.dx_lambda1(x, xi), 0.0))
    }

    pub fn psi_table(&self) -> SymbolTable {
        SymbolTable::from_fn_full(&self.grid, 0.0, |x, xi| Complex64::new(self.psi(x, xi), 0.0))
    }

    fn real_table(&self, f: impl Fn(f64, f64) -> Result<f64> + Sync, full: bool) -> Result<SymbolTable> {
        let failure = std::sync::Mutex::new(None);
        let t = SymbolTable::from_fn_full(&self.grid, 0.0, |x, xi| match f(x, xi) {
            Ok(v) => Complex64::new(v, 0.0),
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                Complex64::new(f64::NAN, 0.0)
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let mut t = t.with_periodic(false);
        if !full {
            t.zero_nyquist();
        }
        Ok(t)
    }
}
