//! Small numerical kernels shared by the modules: finite-difference stencils,
//! adaptive Gauss–Kronrod quadrature and power-series helpers.

use crate::error::{Error, Result};

/// Fornberg's recursion: weights `w[d][i]` such that f^{(d)}(z) ≈ Σ_i w[d][i] f(x_i).
pub fn fornberg(z: f64, x: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Stencil for the `order`-th derivative on a unit-spaced lattice of `len`
/// points at position `at`, with at least the given accuracy in the interior.
/// Returns (first index, weights).
pub fn lattice_stencil(order: usize, at: usize, len: usize, accuracy: usize) -> (usize, Vec<f64>) {
    let mut width = order + accuracy - 1;
    if width.is_multiple_of(2) {
        width += 1;
    }
    let width = width.min(len);
    let half = width / 2;
    let start = at.saturating_sub(half).min(len - width);
    let pts: Vec<f64> = (start..start + width).map(|i| i as f64).collect();
    let w = fornberg(at as f64, &pts, order);
    (start, w[order].clone())
}

/// Cached lattice stencils for one derivative order.
pub struct StencilSet {
    stencils: Vec<(usize, Vec<f64>)>,
}

impl StencilSet {
    pub fn new(order: usize, len: usize, accuracy: usize) -> StencilSet {
        StencilSet { stencils: (0..len).map(|i| lattice_stencil(order, i, len, accuracy)).collect() }
    }

    pub fn get(&self, i: usize) -> (usize, &[f64]) {
        let (s, w) = &self.stencils[i];
        (*s, w)
    }
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * hl, ((kron - gauss) * hl).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on [a, b] with absolute tolerance.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let mut pieces = vec![(lo, hi, gk15(f, lo, hi))];
    for _ in 0..400 {
        let total_err: f64 = pieces.iter().map(|p| p.2 .1).sum();
        if total_err <= abs_tol {
            let total: f64 = pieces.iter().map(|p| p.2 .0).sum();
            return Ok(sign * total);
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (l, r, _) = pieces.swap_remove(worst);
        let m = 0.5 * (l + r);
        pieces.push((l, m, gk15(f, l, m)));
        pieces.push((m, r, gk15(f, m, r)));
    }
    Err(Error::Numeric(format!("quadrature on [{a}, {b}] did not reach tolerance {abs_tol}")))
}

/// Taylor coefficients of g(ξ₀+ε)^a given those of g (g₀ ≠ 0).
pub fn series_pow(g: &[f64], a: f64, terms: usize) -> Vec<f64> {
    let mut p = vec![0.0; terms];
    p[0] = g[0].powf(a);
    for n in 1..terms {
        let mut s = 0.0;
        for k in 1..=n.min(g.len() - 1) {
            s += ((a + 1.0) * k as f64 - n as f64) * g[k] * p[n - k];
        }
        p[n] = s / (n as f64 * g[0]);
    }
    p
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
