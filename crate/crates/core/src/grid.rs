//! Periodic collocation grid on [−L, L) and its unitary Fourier transform.
//!
//! Frequencies are stored in centered order: index `i` holds ξ = (π/L)(i − N/2),
//! so index 0 is the Nyquist mode.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct Inner {
    half_width: f64,
    n: usize,
    nodes: Vec<f64>,
    freqs: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    phases: OnceLock<Vec<Complex64>>,
}

/// Cheap to clone; clones share the FFT plans.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<Inner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_width", &self.inner.half_width)
            .field("n", &self.inner.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n == other.inner.n && self.inner.half_width == other.inner.half_width
    }
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Grid> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("grid half-width must be positive, got {half_width}")));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!("grid size must be even and at least 8, got {n}")));
        }
        let dx = 2.0 * half_width / n as f64;
        let nodes = (0..n).map(|j| -half_width + dx * j as f64).collect();
        let half = (n / 2) as isize;
        let freqs = (0..n as isize).map(|i| PI * (i - half) as f64 / half_width).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Grid { inner: Arc::new(Inner { half_width, n, nodes, freqs, fwd, inv, phases: OnceLock::new() }) })
    }

    pub fn len(&self) -> usize {
        self.inner.n
    }

    /// Always false; a grid has at least 8 points.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.inner.half_width
    }

    pub fn nodes(&self) -> &[f64] {
        &self.inner.nodes
    }

    /// Centered frequency lattice; entry 0 is the Nyquist mode.
    pub fn freqs(&self) -> &[f64] {
        &self.inner.freqs
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.inner.half_width / self.inner.n as f64
    }

    pub fn dxi(&self) -> f64 {
        PI / self.inner.half_width
    }

    pub fn xi_max(&self) -> f64 {
        PI * (self.inner.n / 2) as f64 / self.inner.half_width
    }

    /// Upper edge of the frequency band treated as resolved (|ξ| ≤ ξ_max/2).
    pub fn band_edge(&self) -> f64 {
        0.5 * self.xi_max()
    }

    pub fn in_band(&self, k: usize) -> bool {
        k != 0 && self.inner.freqs[k].abs() <= self.band_edge() + 1e-12
    }

    /// Periodized spatial bracket: equals ⟨x⟩ near the origin, smooth across x = ±L.
    pub fn x_bracket(&self, x: f64) -> f64 {
        let l = self.inner.half_width;
        let s = (2.0 * l / PI) * (PI * x / (2.0 * l)).sin();
        (1.0 + s * s).sqrt()
    }

    /// Derivative of [`Grid::x_bracket`].
    pub fn x_bracket_dx(&self, x: f64) -> f64 {
        let l = self.inner.half_width;
        let a = PI * x / (2.0 * l);
        let c = 2.0 * l / PI;
        c * a.sin() * a.cos() / self.x_bracket(x)
    }

    /// Row-major table of e^{iξ_k x_j}, built on first use.
    pub fn phases(&self) -> &[Complex64] {
        self.inner.phases.get_or_init(|| {
            let mut out = Vec::with_capacity(self.inner.n * self.inner.n);
            for &x in &self.inner.nodes {
                for &xi in &self.inner.freqs {
                    out.push(Complex64::new(0.0, xi * x).exp());
                }
            }
            out
        })
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grid mismatch: (L={}, N={}) vs (L={}, N={})",
                self.half_width(),
                self.len(),
                other.half_width(),
                other.len()
            )))
        }
    }

    /// Unitary forward transform of raw node values into centered order.
    pub fn forward_values(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.inner.n;
        let mut buf = values.to_vec();
        self.inner.fwd.process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        let half = n / 2;
        (0..n)
            .map(|i| {
                // e^{-iξ_k x_j} = (−1)^k e^{-2πi kj/N}
                let sign = if (i + half).is_multiple_of(2) { 1.0 } else { -1.0 };
                buf[(i + half) % n] * (sign * scale)
            })
            .collect()
    }

    /// Inverse of [`Grid::forward_values`].
    pub fn inverse_values(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let n = self.inner.n;
        let half = n / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, c) in coeffs.iter().enumerate() {
            let sign = if (i + half).is_multiple_of(2) { 1.0 } else { -1.0 };
            buf[(i + half) % n] = c * sign;
        }
        self.inner.inv.process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    /// Spectral x-derivative of order `order` (Nyquist mode zeroed).
    pub fn spectral_dx(&self, values: &[Complex64], order: u32) -> Vec<Complex64> {
        if order == 0 {
            return values.to_vec();
        }
        let mut c = self.forward_values(values);
        c[0] = Complex64::new(0.0, 0.0);
        let iu = Complex64::new(0.0, 1.0);
        for (ck, &xi) in c.iter_mut().zip(self.freqs()).skip(1) {
            *ck *= (iu * xi).powu(order);
        }
        self.inverse_values(&c)
    }

    /// Weighted L² norm of node values (weight 2L/N).
    pub fn l2(&self, values: &[Complex64]) -> f64 {
        (self.dx() * values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Weighted inner product ⟨u, v⟩ = (2L/N) Σ u_j conj(v_j).
    pub fn inner(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        u.iter().zip(v).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.dx()
    }
}

/// ⟨ξ⟩_h = √(h² + ξ²).
pub fn bracket_h(xi: f64, h: f64) -> Result<f64> {
    if !(h >= 1.0) {
        return Err(Error::Parameter(format!("frequency shift h must be at least 1, got {h}")));
    }
    Ok(bracket(xi, h))
}

/// Unchecked ⟨ξ⟩_h for internal use where h has already been validated.
#[inline]
pub fn bracket(xi: f64, h: f64) -> f64 {
    h.hypot(xi)
}

/// Complex node values tied to a grid.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<Complex64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite field value at node {j}")));
        }
        Ok(Field { grid: grid.clone(), values })
    }

    pub fn zeros(grid: &Grid) -> Field {
        Field { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> Complex64) -> Result<Field> {
        Field::new(grid, grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<Complex64>) -> Field {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Fourier coefficients in centered order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: &Grid, coeffs: Vec<Complex64>) -> Result<Spectrum> {
        if coeffs.len() != grid.len() {
            return Err(Error::Shape(format!(
                "spectrum has {} modes, grid has {}",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Spectrum { grid: grid.clone(), coeffs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2(&self.coeffs)
    }
}

pub fn forward(u: &Field) -> Spectrum {
    Spectrum { grid: u.grid.clone(), coeffs: u.grid.forward_values(&u.values) }
}

pub fn inverse(s: &Spectrum) -> Field {
    Field { grid: s.grid.clone(), values: s.grid.inverse_values(&s.coeffs) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        Field::new(grid, vals.collect()).unwrap()
    }

    #[test]
    fn lattice_definition() {
        let g = Grid::new(PI, 8).unwrap();
        assert!((g.dx() - 2.0 * PI / 8.0).abs() < 1e-15);
        let ks: Vec<f64> = g.freqs().to_vec();
        assert_eq!(ks, vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        let g = Grid::new(20.0, 256).unwrap();
        assert!((g.dxi() - PI / 20.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(PI, 7).is_err());
        assert!(Grid::new(PI, 6).is_err());
        assert!(Grid::new(0.0, 64).is_err());
    }

    #[test]
    fn pure_mode_is_single_coefficient() {
        let g = Grid::new(PI, 64).unwrap();
        let u = Field::from_fn(&g, |x| Complex64::new(0.0, x).exp()).unwrap();
        let s = forward(&u);
        for (k, c) in s.coeffs().iter().enumerate() {
            if g.freqs()[k] == 1.0 {
                assert!((c.norm() - 8.0).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12, "mode {k} = {c}");
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let g = Grid::new(3.0, 128).unwrap();
        let u = random_field(&g, 7);
        let s = forward(&u);
        let back = inverse(&s);
        let err = back.values().iter().zip(u.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert!((s.l2_norm() - u.l2_norm()).abs() < 1e-12 * u.l2_norm());
    }

    #[test]
    fn spectral_derivative_of_modes() {
        let g = Grid::new(PI, 64).unwrap();
        for m in -15..16 {
            let mf = m as f64;
            let u: Vec<Complex64> = g.nodes().iter().map(|&x| Complex64::new(0.0, mf * x).exp()).collect();
            let du = g.spectral_dx(&u, 1);
            for (d, v) in du.iter().zip(&u) {
                assert!((d - Complex64::new(0.0, mf) * v).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn bracket_values() {
        assert_eq!(bracket_h(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(bracket_h(3.0, 4.0).unwrap(), 5.0);
        assert!((bracket_h(1.0, 1.0).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(bracket_h(1.0, 0.5).is_err());
    }

    #[test]
    fn x_bracket_matches_near_origin() {
        let g = Grid::new(40.0, 256).unwrap();
        assert!((g.x_bracket(0.0) - 1.0).abs() < 1e-15);
        assert!((g.x_bracket(1.0) - 2f64.sqrt()).abs() < 2e-3);
        let h = 1e-6;
        let fd = (g.x_bracket(3.0 + h) - g.x_bracket(3.0 - h)) / (2.0 * h);
        assert!((fd - g.x_bracket_dx(3.0)).abs() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn bracket_dominates(xi in -1e4f64..1e4, h in 1.0f64..1e3) {
            let b = bracket_h(xi, h).unwrap();
            proptest::prop_assert!(b >= h.max(xi.abs()));
            proptest::prop_assert!(bracket_h(xi, h + 1.0).unwrap() >= b);
        }

        #[test]
        fn parseval_random(seed in 0u64..1000) {
            let g = Grid::new(2.0, 32).unwrap();
            let u = random_field(&g, seed);
            let s = forward(&u);
            proptest::prop_assert!((s.l2_norm() - u.l2_norm()).abs() <= 1e-12 * u.l2_norm());
        }
    }
}
