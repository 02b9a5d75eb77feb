//! The conjugator e^Λ̃ with its Neumann-series inverse, and the conjugated
//! symbols of iP grouped as ia₃ + ã₂ + ã₁ + ã_θ + r₀.
//!
//! The Λ̃ part is expanded with the recursions
//! P_β = e^{−Λ̃}∂_ξ^β e^{Λ̃} and Q_α = e^{Λ̃}D_x^α e^{−Λ̃}, so that
//! e^{Λ̃} p {e^{−Λ̃}}* ~ Σ (α!β!)^{−1} ∂_ξ^α{P_β D_x^β p Q_α}; the result is then
//! composed with 1 − r. The k(t) part is exact in its Taylor coefficients and
//! stored as a polynomial in k.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{bracket, Grid};
use crate::numerics::{factorial, series_pow};
use crate::quantize::{compose_expansion, exp_table, resolved_discrepancy, to_dense, DenseOperator, SymbolTable};
use crate::symbols::{a3_dxi, eval_table, ProblemSpec};
use crate::weights::{k_of_t, k_prime, WeightParams, Weights};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Largest expansion length used anywhere.
pub const MAX_TRUNCATION: usize = 8;

/// Fraction of L inside which dense-oracle comparisons are made.
pub const ORACLE_WINDOW: f64 = 0.5;

/// First N with order − (1 − 1/θ)N ≤ 0, capped at [`MAX_TRUNCATION`].
pub fn truncation(order: f64, theta: f64) -> usize {
    let gain = 1.0 - 1.0 / theta;
    (1..=MAX_TRUNCATION).find(|&n| order - gain * n as f64 <= 0.0).unwrap_or(MAX_TRUNCATION)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseMode {
    Neumann,
    Dense,
}

#[derive(Clone, Debug)]
pub struct ConjugatorOptions {
    pub inverse_tol: f64,
    pub series_tol: f64,
    pub max_terms: usize,
    pub mode: InverseMode,
}

impl Default for ConjugatorOptions {
    fn default() -> Self {
        ConjugatorOptions { inverse_tol: 1e-8, series_tol: 1e-10, max_terms: 30, mode: InverseMode::Neumann }
    }
}

/// e^Λ̃, {e^{−Λ̃}}*, the remainder R = e^Λ̃{e^{−Λ̃}}* − I and the inverse
/// {e^{−Λ̃}}*·Σ(−R)^j, all as dense operators on one grid.
#[derive(Clone, Debug)]
pub struct ConjugatorBundle {
    pub grid: Grid,
    pub params: WeightParams,
    pub mode: InverseMode,
    pub lambda_tilde: SymbolTable,
    pub exp_plus: SymbolTable,
    pub exp_minus: SymbolTable,
    pub e: DenseOperator,
    pub adj_minus: DenseOperator,
    pub remainder: DenseOperator,
    pub neumann: DenseOperator,
    pub e_inv: DenseOperator,
    /// Number of Neumann terms kept (0 in dense mode).
    pub terms: usize,
    /// Gelfand estimate ‖R^32‖_F^{1/32}.
    pub spectral_radius: f64,
    /// ‖E·E^{inv} − I‖₂.
    pub residual: f64,
    /// r ~ Σ_{1≤γ≤3} (γ!)^{−1}∂_ξ^γ(e^Λ̃ D_x^γ e^{−Λ̃}).
    pub r_expansion: SymbolTable,
    /// ‖G(op(r) − R)G‖₂ and ‖GRG‖₂ on the resolved band and interior window.
    pub r_expansion_error: f64,
    pub r_norm: f64,
}

fn gelfand_radius(r: &DMatrix<Complex64>) -> f64 {
    let mut m = r.clone();
    for _ in 0..5 {
        m = &m * &m;
    }
    m.norm().powf(1.0 / 32.0)
}

pub fn build_conjugator(
    p: &ProblemSpec,
    params: &WeightParams,
    grid: &Grid,
    opts: &ConjugatorOptions,
) -> Result<ConjugatorBundle> {
    let weights = Weights::new(p, params, grid)?;
    build_from_weights(&weights, opts)
}

pub fn build_from_weights(weights: &Weights, opts: &ConjugatorOptions) -> Result<ConjugatorBundle> {
    let grid = weights.grid().clone();
    let params = weights.params().clone();
    let n = grid.len();
    let lambda = weights.lambda_tilde_table()?;
    let exp_plus = exp_table(&lambda)?;
    let exp_minus = exp_table(&lambda.scale_re(-1.0))?;
    let e = to_dense(&exp_plus);
    let adj_minus = to_dense(&exp_minus).adjoint();
    let ident = DMatrix::<Complex64>::identity(n, n);
    let rmat = e.matrix() * adj_minus.matrix() - &ident;
    let radius = gelfand_radius(&rmat);
    if !(radius < 1.0) {
        return Err(Error::Convergence(format!(
            "spectral radius of the Neumann remainder is {radius:.3} >= 1 (h = {}, M2 = {}, M1 = {}); increase h",
            params.h, params.m2, params.m1
        )));
    }
    let (neumann, terms) = match opts.mode {
        InverseMode::Neumann => {
            let mut sum = ident.clone();
            let mut term = ident.clone();
            let mut used = 1;
            while used < opts.max_terms {
                term = -(&term * &rmat);
                sum += &term;
                used += 1;
                if term.norm() < opts.series_tol {
                    break;
                }
            }
            (sum, used)
        }
        InverseMode::Dense => {
            let inv = (&ident + &rmat).try_inverse().ok_or_else(|| {
                Error::Convergence("e^L {e^-L}* is numerically singular; increase h".into())
            })?;
            (inv, 0)
        }
    };
    let e_inv = adj_minus.matrix() * &neumann;
    let residual = DenseOperator::from_matrix(e.matrix() * &e_inv - &ident).norm2();
    if !(residual <= opts.inverse_tol) {
        return Err(Error::Convergence(format!(
            "conjugator inverse residual {residual:.3e} exceeds inverse_tol {:.1e} after {terms} terms \
             (spectral radius {radius:.3}); increase h",
            opts.inverse_tol
        )));
    }

    let r_expansion = lemma_remainder(weights, 4);
    let remainder = DenseOperator::from_matrix(rmat);
    let g = oracle_sandwich(&grid);
    let r_norm = g.mul(&remainder).mul(&g).norm2();
    let r_expansion_error = g.mul(&to_dense(&r_expansion).sub(&remainder)).mul(&g).norm2();

    Ok(ConjugatorBundle {
        grid,
        params,
        mode: opts.mode,
        lambda_tilde: lambda,
        exp_plus,
        exp_minus,
        e,
        adj_minus,
        remainder,
        neumann: DenseOperator::from_matrix(neumann),
        e_inv: DenseOperator::from_matrix(e_inv),
        terms,
        spectral_radius: radius,
        residual,
        r_expansion,
        r_expansion_error,
        r_norm,
    })
}

/// P·W·P with the band projector P and the interior window W.
fn oracle_sandwich(grid: &Grid) -> DenseOperator {
    let p = DenseOperator::band_projector(grid);
    p.mul(&DenseOperator::interior_window(grid, ORACLE_WINDOW)).mul(&p)
}

/// Σ_{1≤γ<n} (γ!)^{−1}∂_ξ^γ Q_γ.
fn lemma_remainder(weights: &Weights, n: usize) -> SymbolTable {
    let q = q_factors(&dx_lambda_tilde(weights), n);
    let mut r = SymbolTable::zeros(weights.grid()).with_order(-1.0);
    for (g, qg) in q.iter().enumerate().skip(1) {
        r.add_scaled(&qg.d_xi(g), Complex64::new(1.0 / factorial(g), 0.0));
    }
    r.zero_nyquist();
    r
}

fn dx_lambda_tilde(weights: &Weights) -> SymbolTable {
    weights.dx_lambda2_table().add(&weights.dx_lambda1_table())
}

/// Q_0 = 1, Q_{α+1} = D_x Q_α + i(∂_xΛ̃)Q_α.
fn q_factors(dx_lambda: &SymbolTable, n: usize) -> Vec<SymbolTable> {
    let grid = dx_lambda.grid();
    let mut q = vec![SymbolTable::from_fn_full(grid, 0.0, |_, _| ONE)];
    let idl = dx_lambda.scale(I);
    for a in 1..n {
        let prev = &q[a - 1];
        let next = prev.big_d_x(1).add(&prev.mul(&idl));
        q.push(next);
    }
    q
}

/// P_0 = 1, P_{β+1} = ∂_ξ P_β + (∂_ξΛ̃)P_β.
fn p_factors(lambda: &SymbolTable, n: usize) -> Vec<SymbolTable> {
    let grid = lambda.grid();
    let dl = lambda.d_xi(1);
    let mut p = vec![SymbolTable::from_fn_full(grid, 0.0, |_, _| ONE).with_periodic(false)];
    for b in 1..n {
        let prev = &p[b - 1];
        let next = prev.d_xi(1).add(&prev.mul(&dl));
        p.push(next);
    }
    p
}

impl ConjugatorBundle {
    /// ⟨ξ_k⟩_h^{1/θ} in centered order (Nyquist included).
    pub fn time_weight(&self) -> Vec<f64> {
        self.grid.freqs().iter().map(|&xi| self.params.time_weight(xi)).collect()
    }

    /// e^{sign·k(t)⟨ξ⟩_h^{1/θ}} in centered order.
    pub fn time_multiplier(&self, t: f64, sign: f64) -> Result<Vec<f64>> {
        let k = k_of_t(t, &self.params)?;
        let m = self.time_weight();
        let top = sign * k * m.iter().fold(0.0, |a: f64, &b| a.max(b));
        if top > 700.0 {
            return Err(Error::Parameter(format!("time weight exponent {top:.1} overflows; reduce k0")));
        }
        Ok(m.iter().map(|&v| (sign * k * v).exp()).collect())
    }

    pub fn time_dense(&self, t: f64, sign: f64) -> Result<DenseOperator> {
        let mult: Vec<Complex64> = self.time_multiplier(t, sign)?.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Ok(DenseOperator::fourier_multiplier(&self.grid, &mult))
    }

    fn apply_multiplier(&self, u: &[Complex64], mult: &[f64]) -> Vec<Complex64> {
        let mut uh = self.grid.forward_values(u);
        uh.iter_mut().zip(mult).for_each(|(c, m)| *c *= m);
        self.grid.inverse_values(&uh)
    }

    /// v = e^{k(t)⟨D⟩_h^{1/θ}} e^Λ̃(x,D) u.
    pub fn forward(&self, t: f64, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let mult = self.time_multiplier(t, 1.0)?;
        Ok(self.apply_multiplier(&self.e.apply_values(u), &mult))
    }

    /// u = {e^Λ̃}^{−1} e^{−k(t)⟨D⟩_h^{1/θ}} v.
    pub fn inverse(&self, t: f64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mult = self.time_multiplier(t, -1.0)?;
        Ok(self.e_inv.apply_values(&self.apply_multiplier(v, &mult)))
    }
}

/// Polynomial Σ_d k^d coeffs[d] of symbol tables.
#[derive(Clone, Debug)]
pub struct KPoly {
    coeffs: Vec<SymbolTable>,
}

impl KPoly {
    pub fn constant(t: SymbolTable) -> KPoly {
        KPoly { coeffs: vec![t] }
    }

    pub fn coeffs(&self) -> &[SymbolTable] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, k: f64) -> SymbolTable {
        let mut out = self.coeffs[self.coeffs.len() - 1].clone();
        for c in self.coeffs.iter().rev().skip(1) {
            out = out.scale_re(k);
            out.add_assign(c);
        }
        out
    }

    pub fn add(&self, other: &KPoly) -> KPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let grid = self.coeffs[0].grid();
        let coeffs = (0..n)
            .map(|d| match (self.coeffs.get(d), other.coeffs.get(d)) {
                (Some(a), Some(b)) => a.add(b),
                (Some(a), None) | (None, Some(a)) => a.clone(),
                (None, None) => SymbolTable::zeros(grid),
            })
            .collect();
        KPoly { coeffs }
    }

    pub fn map(&self, f: impl Fn(&SymbolTable) -> SymbolTable) -> KPoly {
        KPoly { coeffs: self.coeffs.iter().map(f).collect() }
    }
}

/// Taylor data of m = ⟨ξ⟩_h^{1/θ}: e^{−km}∂_ξ^β e^{km} = β! Σ_d k^d E_β[d].
#[derive(Clone, Debug)]
struct KSeries {
    /// e[β][d][column]
    e: Vec<Vec<Vec<f64>>>,
}

impl KSeries {
    fn new(grid: &Grid, params: &WeightParams) -> KSeries {
        let nb = MAX_TRUNCATION;
        let cols = grid.len();
        let mut e = vec![vec![vec![0.0; cols]; nb]; nb];
        e[0][0] = vec![1.0; cols];
        for (c, &xi) in grid.freqs().iter().enumerate() {
            let h = params.h;
            let m = series_pow(&[h * h + xi * xi, 2.0 * xi, 1.0], 0.5 / params.theta, nb);
            for n in 1..nb {
                for d in 1..=n {
                    let mut s = 0.0;
                    for j in 1..=n {
                        s += j as f64 * m[j] * e[n - j][d - 1][c];
                    }
                    e[n][d][c] = s / n as f64;
                }
            }
        }
        KSeries { e }
    }

    /// Σ_{1≤β<n} (β!)^{−1} e^{−km}∂_ξ^β e^{km} D_x^β b as a polynomial in k with
    /// zero constant term; n from the order of b.
    fn conjugate(&self, b: &SymbolTable, order: f64, theta: f64) -> KPoly {
        let n = truncation(order, theta);
        let grid = b.grid().clone();
        let cols = grid.len();
        let mut coeffs = vec![SymbolTable::zeros(&grid); n.max(1)];
        let derivs: Vec<SymbolTable> = (1..n).map(|beta| b.big_d_x(beta)).collect();
        for (d, coeff) in coeffs.iter_mut().enumerate().skip(1) {
            for beta in d..n {
                let dx = &derivs[beta - 1];
                let ev = &self.e[beta][d];
                let mut term = dx.clone();
                for row in term.data_mut().chunks_mut(cols) {
                    row.iter_mut().zip(ev).for_each(|(v, w)| *v *= w);
                }
                coeff.add_assign(&term);
            }
        }
        KPoly { coeffs }
    }
}

/// Grid supremum of |symbol| / normalization over the resolved band, with its argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundMeasure {
    pub name: String,
    pub value: f64,
    pub x: f64,
    pub xi: f64,
}

impl fmt::Display for BoundMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<22} {:>12.4e}  at x = {:.4}, xi = {:.4}", self.name, self.value, self.x, self.xi)
    }
}

fn sup_ratio(name: &str, t: &SymbolTable, norm: impl Fn(f64, f64) -> f64) -> BoundMeasure {
    let grid = t.grid();
    let mut best = BoundMeasure { name: name.into(), value: 0.0, x: 0.0, xi: 0.0 };
    for (j, &x) in grid.nodes().iter().enumerate() {
        for (k, &xi) in grid.freqs().iter().enumerate() {
            if !grid.in_band(k) {
                continue;
            }
            let v = t.get(j, k).norm() / norm(x, xi);
            if v > best.value || v.is_nan() {
                best.value = v;
                best.x = x;
                best.xi = xi;
            }
        }
    }
    best
}

/// Terms of e^Λ̃(ia₃){e^Λ̃}^{−1}.
#[derive(Clone, Debug)]
pub struct A3Terms {
    pub ia3: SymbolTable,
    /// −∂_ξa₃∂_xλ₂ = main2 + tail2.
    pub minus_dxi_a3_dx_l2: SymbolTable,
    pub minus_dxi_a3_dx_l1: SymbolTable,
    pub main2: SymbolTable,
    pub tail2: SymbolTable,
    pub main1: SymbolTable,
    pub tail1: SymbolTable,
    /// Real symbol d₁ (the term enters as i·d₁).
    pub d1: SymbolTable,
    pub r0: SymbolTable,
}

impl A3Terms {
    pub fn sum(&self) -> SymbolTable {
        let mut s = self.ia3.add(&self.minus_dxi_a3_dx_l2);
        s.add_assign(&self.minus_dxi_a3_dx_l1);
        s.add_scaled(&self.d1, I);
        s.add_assign(&self.r0);
        s
    }
}

/// Terms of e^Λ̃(ia₂){e^Λ̃}^{−1}.
#[derive(Clone, Debug)]
pub struct A2Terms {
    pub ia2: SymbolTable,
    /// (ia₂)_Λ̃ = (ia₂)_N − i(ia₂)_N ∂_ξ∂_xλ₂.
    pub ia2_lambda: SymbolTable,
    /// a₂∂_ξ∂_xλ₂.
    pub a2_dxi_dx_l2: SymbolTable,
    pub r0: SymbolTable,
    /// sup |(ia₂)_Λ̃| / (⟨ξ⟩_h^{3−2σ}⟨x⟩^{−σ}).
    pub bound: BoundMeasure,
}

impl A2Terms {
    pub fn sum(&self) -> SymbolTable {
        let mut s = self.ia2.add(&self.ia2_lambda);
        s.add_assign(&self.a2_dxi_dx_l2);
        s.add_assign(&self.r0);
        s
    }
}

/// Terms of e^Λ̃(ia₁){e^Λ̃}^{−1} and e^Λ̃(ia₀){e^Λ̃}^{−1}.
#[derive(Clone, Debug)]
pub struct A1Terms {
    pub ia1: SymbolTable,
    pub ia1_lambda: SymbolTable,
    pub r0: SymbolTable,
}

/// Terms added by the conjugation with e^{k(t)⟨D⟩_h^{1/θ}}, as polynomials in k.
#[derive(Clone, Debug)]
pub struct TimeWeightTerms {
    /// ⟨ξ⟩_h^{1/θ}; the term itself is −k′(t) times this.
    pub time_weight: Vec<f64>,
    pub b2k: KPoly,
    pub ia2_k_lambda: KPoly,
    pub b1k: KPoly,
    pub ia1_k_lambda: KPoly,
    pub r0: KPoly,
}

/// Everything of the conjugated operator at one time, with the k-dependence
/// still symbolic.
#[derive(Clone, Debug)]
pub struct ConjugationStage {
    pub t: f64,
    pub a3: A3Terms,
    pub a2: A2Terms,
    pub a1: A1Terms,
    pub tw: TimeWeightTerms,
    pub c: SymbolTable,
    pub e: KPoly,
}

/// Grouped conjugated symbols at one time.
#[derive(Clone, Debug)]
pub struct ConjugatedSymbols {
    pub t: f64,
    pub k: f64,
    pub k_prime: f64,
    pub ia3: SymbolTable,
    pub ia2: SymbolTable,
    pub main2: SymbolTable,
    pub b2k: SymbolTable,
    pub ia2_k_lambda: SymbolTable,
    pub ia1: SymbolTable,
    pub main1: SymbolTable,
    pub d1: SymbolTable,
    pub a2_dxi_dx_l2: SymbolTable,
    pub c: SymbolTable,
    pub e: SymbolTable,
    pub time_term: SymbolTable,
    pub b1k: SymbolTable,
    pub ia1_k_lambda: SymbolTable,
    pub tail2: SymbolTable,
    pub tail1: SymbolTable,
    pub r0: SymbolTable,
    pub bounds: Vec<BoundMeasure>,
}

impl ConjugatedSymbols {
    pub fn a2_tilde(&self) -> SymbolTable {
        let mut s = self.ia2.add(&self.main2);
        s.add_assign(&self.b2k);
        s.add_assign(&self.ia2_k_lambda);
        s
    }

    pub fn a1_tilde(&self) -> SymbolTable {
        let mut s = self.ia1.add(&self.main1);
        s.add_scaled(&self.d1, I);
        s.add_assign(&self.a2_dxi_dx_l2);
        s
    }

    pub fn a_theta(&self) -> SymbolTable {
        let mut s = self.time_term.add(&self.b1k);
        s.add_assign(&self.ia1_k_lambda);
        s.add_assign(&self.tail2);
        s.add_assign(&self.tail1);
        s
    }

    /// ã₂ + ã₁ + ã_θ + r₀ + ia₃ without the −k′⟨ξ⟩_h^{1/θ} term, i.e. the
    /// symbol of e^Λ (iP − ∂_t) {e^Λ}^{−1}.
    pub fn spatial(&self) -> SymbolTable {
        let mut s = self.ia3.add(&self.a2_tilde());
        s.add_assign(&self.a1_tilde());
        s.add_assign(&self.a_theta());
        s.add_assign(&self.r0);
        s = s.sub(&self.time_term);
        s.zero_nyquist();
        s
    }

    pub fn bound(&self, name: &str) -> Option<&BoundMeasure> {
        self.bounds.iter().find(|b| b.name == name)
    }
}

/// Precomputed Λ̃ factors for one problem, parameter set and grid.
#[derive(Clone, Debug)]
pub struct ConjugationContext {
    problem: ProblemSpec,
    weights: Weights,
    grid: Grid,
    dx_l2: SymbolTable,
    dxi_dx_l2: SymbolTable,
    p: Vec<SymbolTable>,
    q: Vec<SymbolTable>,
    series: KSeries,
}

impl ConjugationContext {
    pub fn new(p: &ProblemSpec, params: &WeightParams, grid: &Grid) -> Result<ConjugationContext> {
        ConjugationContext::from_weights(p, Weights::new(p, params, grid)?)
    }

    pub fn from_weights(p: &ProblemSpec, weights: Weights) -> Result<ConjugationContext> {
        let grid = weights.grid().clone();
        let theta = weights.params().theta;
        let n = truncation(3.0, theta);
        let lambda = weights.lambda_tilde_table()?;
        let dx_l2 = weights.dx_lambda2_table();
        let dxi_dx_l2 = dx_l2.d_xi(1);
        let q = q_factors(&dx_l2.add(&weights.dx_lambda1_table()), n);
        let p_f = p_factors(&lambda, n);
        let series = KSeries::new(&grid, weights.params());
        Ok(ConjugationContext {
            problem: p.clone(),
            weights,
            grid,
            dx_l2,
            dxi_dx_l2,
            p: p_f,
            q,
            series,
        })
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn params(&self) -> &WeightParams {
        self.weights.params()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn theta(&self) -> f64 {
        self.params().theta
    }

    /// r truncated at n: Σ_{1≤α<n} (α!)^{−1}∂_ξ^α Q_α.
    fn inverse_factor(&self, n: usize) -> SymbolTable {
        let mut r = SymbolTable::zeros(&self.grid).with_order(-1.0);
        for (a, qa) in self.q.iter().enumerate().take(n).skip(1) {
            r.add_scaled(&qa.d_xi(a), Complex64::new(1.0 / factorial(a), 0.0));
        }
        r
    }

    /// Σ_{α+β<n} (α!β!)^{−1}∂_ξ^α{P_β D_x^β s Q_α}, α = β = 0 included.
    fn expand(&self, s: &SymbolTable, n: usize) -> SymbolTable {
        let mut out = SymbolTable::zeros(&self.grid).with_periodic(false);
        for beta in 0..n {
            let dxs = s.big_d_x(beta);
            if beta > 0 && dxs.max_abs() == 0.0 {
                continue;
            }
            let x = self.p[beta].mul(&dxs);
            for alpha in 0..n - beta {
                let term = x.mul(&self.q[alpha]).d_xi(alpha);
                out.add_scaled(&term, Complex64::new(1.0 / (factorial(alpha) * factorial(beta)), 0.0));
            }
        }
        out.with_order(s.order())
    }

    /// The Λ̃ conjugation of s: (expansion of e^Λ̃ s {e^{−Λ̃}}*, composed with 1 − r).
    fn conjugate_lambda(&self, s: &SymbolTable, order: f64) -> Result<(SymbolTable, SymbolTable)> {
        let n = truncation(order, self.theta());
        let expanded = self.expand(s, n);
        let nc = truncation(order - 1.0, self.theta());
        let one_minus_r = self.inverse_factor(n).scale_re(-1.0).map(|v| v + ONE);
        let full = compose_expansion(&expanded, &one_minus_r, nc)?.table;
        Ok((expanded, full))
    }

    fn da3_column(&self, t: f64) -> Vec<f64> {
        self.grid
            .freqs()
            .iter()
            .enumerate()
            .map(|(k, &xi)| if k == 0 { 0.0 } else { a3_dxi(&self.problem, t, xi) })
            .collect()
    }

    pub fn conj_a3(&self, t: f64) -> Result<A3Terms> {
        let grid = &self.grid;
        let w = &self.weights;
        let pr = self.params();
        let a3 = eval_table(&self.problem.a3, grid, t)?.with_order(3.0);
        let ia3 = a3.scale(I);
        let da3 = self.da3_column(t);
        let col = |k: usize| da3[k];
        let n = grid.len();
        let cols = |f: &dyn Fn(usize, f64, f64) -> f64, order: f64| {
            let mut data = Vec::with_capacity(n * n);
            for &x in grid.nodes() {
                for (k, &xi) in grid.freqs().iter().enumerate() {
                    data.push(Complex64::new(if k == 0 { 0.0 } else { f(k, x, xi) }, 0.0));
                }
            }
            SymbolTable::from_data(grid, data, order)
        };
        let main2 = cols(&|k, x, xi| -col(k) * pr.m2 * w.w(xi) * grid.x_bracket(x).powf(-pr.sigma), 2.0);
        let main1 = cols(
            &|k, x, xi| -col(k) * pr.m1 * w.w(xi) / bracket(xi, pr.h) * grid.x_bracket(x).powf(-0.5 * pr.sigma),
            1.0,
        );
        let psi = w.psi_table();
        let one_minus_psi = psi.map(|v| ONE - v);
        let tail2 = main2.mul(&one_minus_psi).scale_re(-1.0).with_order(2.0);
        let tail1 = main1.mul(&one_minus_psi).scale_re(-1.0).with_order(1.0);
        let t2 = main2.mul(&psi).with_order(2.0);
        let t1 = main1.mul(&psi).with_order(1.0);

        let d1 = self.d1_table(&a3, &da3);
        let (_, full) = self.conjugate_lambda(&ia3, 3.0)?;
        let mut r0 = full.sub(&ia3).sub(&t2).sub(&t1);
        r0.add_scaled(&d1, -I);
        r0.zero_nyquist();
        Ok(A3Terms {
            ia3,
            minus_dxi_a3_dx_l2: t2,
            minus_dxi_a3_dx_l1: t1,
            main2,
            tail2,
            main1,
            tail1,
            d1,
            r0: r0.with_order(0.0),
        })
    }

    /// d₁ = ½∂²_ξ{a₃(∂²_xλ₂ − (∂_xλ₂)²)} − ∂_ξa₃∂_ξ∂²_xλ₂ + ∂_ξ(a₃∂_xλ₂)∂_ξ∂_xλ₂
    ///      − ½a₃{∂²_ξ(∂²_xλ₂ + (∂_xλ₂)²) + 2(∂_ξ∂_xλ₂)²}.
    fn d1_table(&self, a3: &SymbolTable, da3: &[f64]) -> SymbolTable {
        let l1 = &self.dx_l2;
        let l2 = self.dx_l2.d_x(1).re();
        let sq = l1.mul(l1);
        let dxi_l1 = &self.dxi_dx_l2;
        let dxi_l2 = l2.d_xi(1);
        let half = Complex64::new(0.5, 0.0);
        let n = self.grid.len();
        let da3_t = SymbolTable::from_data(
            &self.grid,
            (0..n).flat_map(|_| da3.iter().map(|&v| Complex64::new(v, 0.0))).collect(),
            2.0,
        );
        let mut d1 = a3.mul(&l2.sub(&sq)).d_xi(2).scale(half);
        d1.add_scaled(&da3_t.mul(&dxi_l2), -ONE);
        d1.add_assign(&a3.mul(l1).d_xi(1).mul(dxi_l1));
        let inner = l2.add(&sq).d_xi(2).add(&dxi_l1.mul(dxi_l1).scale_re(2.0));
        d1.add_scaled(&a3.mul(&inner), -half);
        let mut d1 = d1.re().with_order(1.0);
        d1.zero_nyquist();
        d1
    }

    pub fn conj_a2(&self, t: f64) -> Result<A2Terms> {
        let grid = &self.grid;
        let pr = self.params();
        let a2 = eval_table(&self.problem.a2, grid, t)?.with_order(2.0);
        let ia2 = a2.scale(I);
        let (expanded, full) = self.conjugate_lambda(&ia2, 2.0)?;
        let n_part = expanded.sub(&ia2);
        let mut ia2_lambda = n_part.sub(&n_part.mul(&self.dxi_dx_l2).scale(I));
        ia2_lambda.zero_nyquist();
        let ia2_lambda = ia2_lambda.with_order(3.0 - 2.0 * pr.sigma);
        let mut a2_l2 = a2.mul(&self.dxi_dx_l2);
        a2_l2.zero_nyquist();
        let mut r0 = full.sub(&ia2).sub(&ia2_lambda).sub(&a2_l2);
        r0.zero_nyquist();
        let sigma = pr.sigma;
        let h = pr.h;
        let bound = sup_ratio("(ia2)_L", &ia2_lambda, |x, xi| {
            bracket(xi, h).powf(3.0 - 2.0 * sigma) * grid.x_bracket(x).powf(-sigma)
        });
        if !bound.value.is_finite() {
            return Err(Error::Evaluation(format!(
                "(ia2)_L is not finite at x = {}, xi = {}; check resolution and weights",
                bound.x, bound.xi
            )));
        }
        Ok(A2Terms { ia2, ia2_lambda, a2_dxi_dx_l2: a2_l2, r0: r0.with_order(0.0), bound })
    }

    pub fn conj_a1(&self, t: f64) -> Result<A1Terms> {
        let grid = &self.grid;
        let ia1 = eval_table(&self.problem.a1, grid, t)?.with_order(1.0).scale(I);
        let (expanded, full) = self.conjugate_lambda(&ia1, 1.0)?;
        let mut ia1_lambda = expanded.sub(&ia1);
        ia1_lambda.zero_nyquist();
        let mut r0 = full.sub(&expanded);
        let ia0 = eval_table(&self.problem.a0, grid, t)?.with_order(0.0).scale(I);
        let (_, full0) = self.conjugate_lambda(&ia0, 0.0)?;
        r0.add_assign(&full0);
        r0.zero_nyquist();
        Ok(A1Terms {
            ia1,
            ia1_lambda: ia1_lambda.with_order(2.0 * (1.0 - self.params().sigma)),
            r0: r0.with_order(0.0),
        })
    }

    pub fn conj_time_weight(&self, a3: &A3Terms, a2: &A2Terms, a1: &A1Terms) -> TimeWeightTerms {
        let theta = self.theta();
        let sigma = self.params().sigma;
        let s = &self.series;
        let zero_nyq = |p: KPoly| {
            p.map(|t| {
                let mut t = t.clone();
                t.zero_nyquist();
                t
            })
        };
        let b2k = zero_nyq(s.conjugate(&a2.ia2.add(&a3.minus_dxi_a3_dx_l2), 2.0, theta));
        let ia2_k = KPoly::constant(a2.ia2_lambda.clone())
            .add(&zero_nyq(s.conjugate(&a2.ia2_lambda, 3.0 - 2.0 * sigma, theta)));
        let mut lvl1 = a1.ia1.add(&a3.minus_dxi_a3_dx_l1);
        lvl1.add_scaled(&a3.d1, I);
        lvl1.add_assign(&a2.a2_dxi_dx_l2);
        let b1k = zero_nyq(s.conjugate(&lvl1, 1.0, theta));
        let ia1_k = KPoly::constant(a1.ia1_lambda.clone())
            .add(&zero_nyq(s.conjugate(&a1.ia1_lambda, 2.0 * (1.0 - sigma), theta)));
        let r0_sum = a3.r0.add(&a2.r0).add(&a1.r0);
        let r0 = KPoly::constant(r0_sum.clone()).add(&zero_nyq(s.conjugate(&r0_sum, 0.0, theta)));
        let time_weight = self.grid.freqs().iter().map(|&xi| self.params().time_weight(xi)).collect();
        TimeWeightTerms { time_weight, b2k, ia2_k_lambda: ia2_k, b1k, ia1_k_lambda: ia1_k, r0 }
    }

    pub fn stage(&self, t: f64) -> Result<ConjugationStage> {
        let a3 = self.conj_a3(t)?;
        let a2 = self.conj_a2(t)?;
        let a1 = self.conj_a1(t)?;
        let tw = self.conj_time_weight(&a3, &a2, &a1);
        let n2 = truncation(2.0, self.theta());
        let a2_re = a2.ia2.scale(-I).re();
        let c = hermitian_correction(&a2_re, n2);
        let e = tw.b2k.add(&tw.ia2_k_lambda).map(|t| hermitian_correction(&t.im(), n2));
        Ok(ConjugationStage { t, a3, a2, a1, tw, c, e })
    }

    /// All groups at time t with k = k(t) and k′ = k′(t).
    pub fn assemble(&self, t: f64) -> Result<ConjugatedSymbols> {
        let stage = self.stage(t)?;
        let k = k_of_t(t, self.params())?;
        Ok(stage.at(k, k_prime(t, self.params()), self))
    }
}

/// −(i/2)Σ_{1≤α<n}(α!)^{−1}∂_ξ^α D_x^α s: the symbol of the Hermitian part of op(i·s) minus op(0).
pub fn hermitian_correction(s: &SymbolTable, n: usize) -> SymbolTable {
    let mut out = SymbolTable::zeros(s.grid()).with_periodic(s.periodic());
    for a in 1..n {
        out.add_scaled(&s.big_d_x(a).d_xi(a), Complex64::new(0.0, -0.5 / factorial(a)));
    }
    out.zero_nyquist();
    out
}

impl ConjugationStage {
    /// Everything except ia₃ and −k′⟨ξ⟩_h^{1/θ}, as a polynomial in k.
    pub fn bulk(&self) -> KPoly {
        let mut base = self.a3.main2.add(&self.a3.tail2);
        base.add_assign(&self.a3.main1);
        base.add_assign(&self.a3.tail1);
        base.add_scaled(&self.a3.d1, I);
        base.add_assign(&self.a2.ia2);
        base.add_assign(&self.a2.a2_dxi_dx_l2);
        base.add_assign(&self.a1.ia1);
        let tw = &self.tw;
        KPoly::constant(base)
            .add(&tw.b2k)
            .add(&tw.ia2_k_lambda)
            .add(&tw.b1k)
            .add(&tw.ia1_k_lambda)
            .add(&tw.r0)
    }

    pub fn at(&self, k: f64, k_prime: f64, ctx: &ConjugationContext) -> ConjugatedSymbols {
        let grid = ctx.grid();
        let pr = ctx.params();
        let tw = &self.tw;
        let time_term = SymbolTable::from_xi_fn(grid, 1.0 / pr.theta, |xi| {
            Complex64::new(-k_prime * pr.time_weight(xi), 0.0)
        });
        let b2k = tw.b2k.eval(k);
        let ia2_k = tw.ia2_k_lambda.eval(k);
        let b1k = tw.b1k.eval(k);
        let ia1_k = tw.ia1_k_lambda.eval(k);
        let e = self.e.eval(k);
        let sigma = pr.sigma;
        let h = pr.h;
        let theta = pr.theta;
        let xb = |x: f64| grid.x_bracket(x);
        let kk = k.max(1.0);
        let mut bounds = vec![
            self.a2.bound.clone(),
            sup_ratio("b_2k", &b2k, |x, xi| kk * bracket(xi, h).powf(1.0 + 1.0 / theta) * xb(x).powf(-sigma)),
            sup_ratio("(ia2)_kL", &ia2_k, |x, xi| kk * bracket(xi, h).powf(3.0 - 2.0 * sigma) * xb(x).powf(-sigma)),
            sup_ratio("(ia1)_kL", &ia1_k, |_, xi| bracket(xi, h).powf(2.0 * (1.0 - sigma))),
            sup_ratio("c", &self.c, |x, xi| bracket(xi, 1.0) * xb(x).powf(-sigma)),
            sup_ratio("e", &e, |x, xi| bracket(xi, 1.0).powf(1.0 / theta) * xb(x).powf(-sigma)),
            sup_ratio("d1", &self.a3.d1, |_, xi| bracket(xi, h)),
            sup_ratio("r0", &tw.r0.eval(k), |_, _| 1.0),
        ];
        if k > 0.0 {
            bounds.push(sup_ratio("b_1k", &b1k, |_, xi| k * bracket(xi, h).powf(1.0 / theta)));
        }
        ConjugatedSymbols {
            t: self.t,
            k,
            k_prime,
            ia3: self.a3.ia3.clone(),
            ia2: self.a2.ia2.clone(),
            main2: self.a3.main2.clone(),
            b2k,
            ia2_k_lambda: ia2_k,
            ia1: self.a1.ia1.clone(),
            main1: self.a3.main1.clone(),
            d1: self.a3.d1.clone(),
            a2_dxi_dx_l2: self.a2.a2_dxi_dx_l2.clone(),
            c: self.c.clone(),
            e,
            time_term,
            b1k,
            ia1_k_lambda: ia1_k,
            tail2: self.a3.tail2.clone(),
            tail1: self.a3.tail1.clone(),
            r0: tw.r0.eval(k),
            bounds,
        }
    }
}

/// assemble with a fresh context.
pub fn assemble(p: &ProblemSpec, params: &WeightParams, grid: &Grid, t: f64) -> Result<ConjugatedSymbols> {
    ConjugationContext::new(p, params, grid)?.assemble(t)
}

/// Relative discrepancy of op(Σ conj_a3 terms) against E·op(ia₃)·E^{inv}.
pub fn a3_oracle_discrepancy(bundle: &ConjugatorBundle, terms: &A3Terms) -> f64 {
    let exact = bundle.e.mul(&to_dense(&terms.ia3)).mul(&bundle.e_inv);
    resolved_discrepancy(&bundle.grid, &to_dense(&terms.sum()), &exact, ORACLE_WINDOW)
}

/// Relative discrepancy of op(assembled spatial symbol) against
/// E_k·E_Λ̃·op(iP_spatial)·E_Λ̃^{inv}·E_k^{inv}.
pub fn pipeline_discrepancy(bundle: &ConjugatorBundle, p: &ProblemSpec, cs: &ConjugatedSymbols) -> Result<f64> {
    let grid = &bundle.grid;
    let t = cs.t;
    let mut ip = eval_table(&p.a3, grid, t)?;
    ip.add_assign(&eval_table(&p.a2, grid, t)?);
    ip.add_assign(&eval_table(&p.a1, grid, t)?);
    ip.add_assign(&eval_table(&p.a0, grid, t)?);
    let ip = ip.scale(I);
    let ek = bundle.time_dense(t, 1.0)?;
    let ek_inv = bundle.time_dense(t, -1.0)?;
    let exact = ek.mul(&bundle.e).mul(&to_dense(&ip)).mul(&bundle.e_inv).mul(&ek_inv);
    Ok(resolved_discrepancy(grid, &to_dense(&cs.spatial()), &exact, ORACLE_WINDOW))
}
