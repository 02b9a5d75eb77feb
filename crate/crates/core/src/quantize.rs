//! Sampled symbol tables, Kohn–Nirenberg quantization and the dense oracle.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::numerics::{factorial, StencilSet};
use crate::weights::smooth_step;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// N×N samples p(x_j, ξ_k), row-major in j. `periodic` records whether the
/// x-profile of every column is smooth across the seam x = ±L; x-derivatives
/// are spectral when it is and finite-difference otherwise.
#[derive(Clone, Debug)]
pub struct SymbolTable {
    grid: Grid,
    data: Vec<Complex64>,
    order: f64,
    periodic: bool,
}

impl SymbolTable {
    pub fn from_data(grid: &Grid, data: Vec<Complex64>, order: f64) -> SymbolTable {
        assert_eq!(data.len(), grid.len() * grid.len(), "table size must be N²");
        SymbolTable { grid: grid.clone(), data, order, periodic: true }
    }

    pub fn zeros(grid: &Grid) -> SymbolTable {
        SymbolTable::from_data(grid, vec![ZERO; grid.len() * grid.len()], f64::NEG_INFINITY)
    }

    /// Table from a function of (x, ξ); the Nyquist column is left at zero.
    pub fn from_fn(grid: &Grid, order: f64, f: impl Fn(f64, f64) -> Complex64 + Sync) -> SymbolTable {
        let mut t = SymbolTable::from_fn_full(grid, order, f);
        t.zero_nyquist();
        t
    }

    /// Table from a function of (x, ξ) including the Nyquist column.
    pub fn from_fn_full(grid: &Grid, order: f64, f: impl Fn(f64, f64) -> Complex64 + Sync) -> SymbolTable {
        let n = grid.len();
        let mut data = vec![ZERO; n * n];
        data.par_chunks_mut(n).zip(grid.nodes().par_iter()).for_each(|(row, &x)| {
            for (v, &xi) in row.iter_mut().zip(grid.freqs()) {
                *v = f(x, xi);
            }
        });
        SymbolTable::from_data(grid, data, order)
    }

    /// x-independent table from a function of ξ (Nyquist column zero).
    pub fn from_xi_fn(grid: &Grid, order: f64, f: impl Fn(f64) -> Complex64) -> SymbolTable {
        let n = grid.len();
        let col: Vec<Complex64> = grid.freqs().iter().map(|&xi| f(xi)).collect();
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            data.extend_from_slice(&col);
        }
        let mut t = SymbolTable::from_data(grid, data, order);
        t.zero_nyquist();
        t
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn with_order(mut self, order: f64) -> SymbolTable {
        self.order = order;
        self
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn with_periodic(mut self, periodic: bool) -> SymbolTable {
        self.periodic = periodic;
        self
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.data[j * self.grid.len() + k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, v: Complex64) {
        let n = self.grid.len();
        self.data[j * n + k] = v;
    }

    pub fn zero_nyquist(&mut self) {
        let n = self.grid.len();
        for row in self.data.chunks_mut(n) {
            row[0] = ZERO;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64 + Sync) -> SymbolTable {
        SymbolTable {
            grid: self.grid.clone(),
            data: self.data.par_iter().map(|&v| f(v)).collect(),
            order: self.order,
            periodic: self.periodic,
        }
    }

    pub fn zip_with(&self, other: &SymbolTable, f: impl Fn(Complex64, Complex64) -> Complex64 + Sync) -> SymbolTable {
        assert!(self.grid == other.grid, "tables live on different grids");
        SymbolTable {
            grid: self.grid.clone(),
            data: self.data.par_iter().zip(other.data.par_iter()).map(|(&a, &b)| f(a, b)).collect(),
            order: self.order.max(other.order),
            periodic: self.periodic && other.periodic,
        }
    }

    pub fn add(&self, other: &SymbolTable) -> SymbolTable {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymbolTable) -> SymbolTable {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &SymbolTable) -> SymbolTable {
        let mut t = self.zip_with(other, |a, b| a * b);
        t.order = self.order + other.order;
        t
    }

    pub fn scale(&self, c: Complex64) -> SymbolTable {
        self.map(|v| v * c)
    }

    pub fn scale_re(&self, c: f64) -> SymbolTable {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &SymbolTable) {
        assert!(self.grid == other.grid, "tables live on different grids");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        self.periodic &= other.periodic;
        self.order = self.order.max(other.order);
    }

    pub fn add_scaled(&mut self, other: &SymbolTable, c: Complex64) {
        assert!(self.grid == other.grid, "tables live on different grids");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b * c);
        self.periodic &= other.periodic;
        self.order = self.order.max(other.order);
    }

    pub fn re(&self) -> SymbolTable {
        self.map(|v| Complex64::new(v.re, 0.0))
    }

    pub fn im(&self) -> SymbolTable {
        self.map(|v| Complex64::new(v.im, 0.0))
    }

    pub fn conj(&self) -> SymbolTable {
        self.map(|v| v.conj())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_im(&self) -> f64 {
        self.data.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// ∂_ξ^order by finite differences on the frequency lattice (4th order,
    /// one-sided near the ends). The Nyquist column is excluded and returned as zero.
    pub fn d_xi(&self, order: usize) -> SymbolTable {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.len();
        let m = n - 1;
        let stencils = StencilSet::new(order, m, 4);
        let scale = self.grid.dxi().powi(-(order as i32));
        let mut data = vec![ZERO; n * n];
        data.par_chunks_mut(n).zip(self.data.par_chunks(n)).for_each(|(out, row)| {
            let body = &row[1..];
            for i in 0..m {
                let (s, w) = stencils.get(i);
                let mut acc = ZERO;
                for (c, v) in w.iter().zip(&body[s..s + w.len()]) {
                    acc += v * c;
                }
                out[i + 1] = acc * scale;
            }
        });
        SymbolTable { grid: self.grid.clone(), data, order: self.order - order as f64, periodic: self.periodic }
    }

    /// ∂_x^order: spectral for periodic tables, 6th-order finite differences otherwise.
    pub fn d_x(&self, order: usize) -> SymbolTable {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.len();
        let mut out = vec![ZERO; n * n];
        let columns: Vec<Vec<Complex64>> = if self.periodic {
            (0..n)
                .into_par_iter()
                .map(|k| {
                    let col: Vec<Complex64> = (0..n).map(|j| self.data[j * n + k]).collect();
                    self.grid.spectral_dx(&col, order as u32)
                })
                .collect()
        } else {
            let stencils = StencilSet::new(order, n, 6);
            let scale = self.grid.dx().powi(-(order as i32));
            (0..n)
                .into_par_iter()
                .map(|k| {
                    (0..n)
                        .map(|j| {
                            let (s, w) = stencils.get(j);
                            let mut acc = ZERO;
                            for (i, c) in w.iter().enumerate() {
                                acc += self.data[(s + i) * n + k] * c;
                            }
                            acc * scale
                        })
                        .collect()
                })
                .collect()
        };
        for (k, col) in columns.iter().enumerate() {
            for j in 0..n {
                out[j * n + k] = col[j];
            }
        }
        SymbolTable { grid: self.grid.clone(), data: out, order: self.order, periodic: self.periodic }
    }

    /// D_x^order = (−i∂_x)^order.
    pub fn big_d_x(&self, order: usize) -> SymbolTable {
        let f = Complex64::new(0.0, -1.0).powu(order as u32);
        let mut t = self.d_x(order);
        t.data.iter_mut().for_each(|v| *v *= f);
        t
    }
}

/// Dense N×N operator on node values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    mat: DMatrix<Complex64>,
}

impl DenseOperator {
    pub fn from_matrix(mat: DMatrix<Complex64>) -> DenseOperator {
        assert!(mat.is_square(), "dense operators are square");
        DenseOperator { mat }
    }

    pub fn identity(n: usize) -> DenseOperator {
        DenseOperator { mat: DMatrix::identity(n, n) }
    }

    pub fn diagonal(values: &[Complex64]) -> DenseOperator {
        DenseOperator { mat: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)) }
    }

    /// Fourier multiplier with the given centered-order symbol values.
    pub fn fourier_multiplier(grid: &Grid, values: &[Complex64]) -> DenseOperator {
        let t = SymbolTable::from_data(
            grid,
            (0..grid.len()).flat_map(|_| values.iter().copied()).collect(),
            0.0,
        );
        to_dense(&t)
    }

    /// Orthogonal projection onto the resolved band |ξ| ≤ ξ_max/2.
    pub fn band_projector(grid: &Grid) -> DenseOperator {
        let vals: Vec<Complex64> = (0..grid.len())
            .map(|k| if grid.in_band(k) { Complex64::new(1.0, 0.0) } else { ZERO })
            .collect();
        DenseOperator::fourier_multiplier(grid, &vals)
    }

    /// Multiplication by a smooth window: 1 on |x| ≤ frac·L/2, 0 beyond frac·L.
    /// frac ≥ 1 gives the identity.
    pub fn interior_window(grid: &Grid, frac: f64) -> DenseOperator {
        if frac >= 1.0 {
            return DenseOperator::identity(grid.len());
        }
        let vals: Vec<Complex64> = grid
            .nodes()
            .iter()
            .map(|&x| {
                let s = (x.abs() / grid.half_width() - 0.5 * frac) / (0.5 * frac);
                Complex64::new(1.0 - smooth_step(s), 0.0)
            })
            .collect();
        DenseOperator::diagonal(&vals)
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.mat
    }

    pub fn mul(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator { mat: &self.mat * &other.mat }
    }

    pub fn add(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator { mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator { mat: &self.mat - &other.mat }
    }

    pub fn scale(&self, c: Complex64) -> DenseOperator {
        DenseOperator { mat: &self.mat * c }
    }

    /// Adjoint for the weighted inner product; the weight is uniform so this is
    /// the conjugate transpose.
    pub fn adjoint(&self) -> DenseOperator {
        DenseOperator { mat: self.mat.adjoint() }
    }

    pub fn hermitian_part(&self) -> DenseOperator {
        DenseOperator { mat: (&self.mat + self.mat.adjoint()) * Complex64::new(0.5, 0.0) }
    }

    pub fn apply_values(&self, u: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(u);
        (&self.mat * v).iter().copied().collect()
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.values().len() != self.n() {
            return Err(Error::Shape(format!("operator is {}×{}, field has {} values", self.n(), self.n(), u.values().len())));
        }
        Ok(Field::from_raw(u.grid(), self.apply_values(u.values())))
    }

    /// Spectral norm (largest singular value).
    pub fn norm2(&self) -> f64 {
        self.mat.clone().singular_values().max()
    }

    pub fn norm_fro(&self) -> f64 {
        self.mat.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.mat.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn hermitian_min_eigenvalue(&self) -> f64 {
        let h = self.hermitian_part().mat;
        h.symmetric_eigenvalues().min()
    }

    /// Writes the "PSIDO1" dump: magic, N as u64, then 2N² f64 row-major re/im, all little-endian.
    pub fn write_psido1(&self, w: &mut impl Write) -> Result<()> {
        let n = self.n();
        w.write_all(b"PSIDO1")?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for i in 0..n {
            for j in 0..n {
                let v = self.mat[(i, j)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_psido1(r: &mut impl Read) -> Result<DenseOperator> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"PSIDO1" {
            return Err(Error::Config("not a PSIDO1 dump".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut mat = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            for j in 0..n {
                r.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                r.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                mat[(i, j)] = Complex64::new(re, im);
            }
        }
        Ok(DenseOperator { mat })
    }
}

/// (p(x,D)u)(x_j) = N^{−1/2} Σ_k e^{iξ_k x_j} p(x_j, ξ_k) û_k.
pub fn apply(p: &SymbolTable, u: &Field) -> Result<Field> {
    p.grid.check_same(u.grid())?;
    Ok(Field::from_raw(u.grid(), apply_values(p, u.values())))
}

pub(crate) fn apply_values(p: &SymbolTable, u: &[Complex64]) -> Vec<Complex64> {
    let grid = &p.grid;
    let n = grid.len();
    let uh = grid.forward_values(u);
    let scale = 1.0 / (n as f64).sqrt();
    let phases = grid.phases();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let row = &p.data[j * n..(j + 1) * n];
            let ph = &phases[j * n..(j + 1) * n];
            let mut acc = ZERO;
            for k in 0..n {
                acc += ph[k] * row[k] * uh[k];
            }
            acc * scale
        })
        .collect()
}

/// Dense matrix M[j,l] = N^{−1} Σ_k e^{iξ_k x_j} p_{jk} e^{−iξ_k x_l}.
pub fn to_dense(p: &SymbolTable) -> DenseOperator {
    let grid = &p.grid;
    let n = grid.len();
    let phases = grid.phases();
    let a = DMatrix::from_fn(n, n, |j, k| phases[j * n + k] * p.data[j * n + k]);
    let b = DMatrix::from_fn(n, n, |k, l| phases[l * n + k].conj());
    DenseOperator { mat: (a * b) * Complex64::new(1.0 / n as f64, 0.0) }
}

pub fn adjoint(a: &DenseOperator) -> DenseOperator {
    a.adjoint()
}

/// Result of a truncated composition expansion.
#[derive(Clone, Debug)]
pub struct Composition {
    pub table: SymbolTable,
    pub warning: Option<String>,
}

/// s = Σ_{α<N} (1/α!) ∂_ξ^α p · D_x^α q.
pub fn compose_expansion(p: &SymbolTable, q: &SymbolTable, n_trunc: usize) -> Result<Composition> {
    p.grid.check_same(&q.grid)?;
    if n_trunc == 0 || n_trunc > 8 {
        return Err(Error::Parameter(format!("composition truncation must be in 1..=8, got {n_trunc}")));
    }
    let mut s = p.mul(q);
    for alpha in 1..n_trunc {
        let term = p.d_xi(alpha).mul(&q.big_d_x(alpha));
        s.add_scaled(&term, Complex64::new(1.0 / factorial(alpha), 0.0));
    }
    s.order = p.order + q.order;
    let width = n_trunc + 4;
    let warning = (4 * width > p.n()).then(|| {
        format!("truncation {n_trunc} needs {width}-point stencils on a {}-point lattice", p.n())
    });
    Ok(Composition { table: s, warning })
}

/// Entrywise exponential of the real part of Λ (the Nyquist column is kept).
pub fn exp_table(lambda: &SymbolTable) -> Result<SymbolTable> {
    let max = lambda.data.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    if max > 700.0 {
        return Err(Error::Parameter(format!(
            "exponent reaches {max:.1}, exp would overflow; reduce k0 or rho"
        )));
    }
    Ok(SymbolTable {
        grid: lambda.grid.clone(),
        data: lambda.data.par_iter().map(|v| Complex64::new(v.re.exp(), 0.0)).collect(),
        order: 0.0,
        periodic: lambda.periodic,
    })
}

/// ‖G(a − b)G‖₂ / ‖G b G‖₂ with G = P·W·P, P the band projector and W the
/// smooth interior window of [`DenseOperator::interior_window`] (frac = 1 disables it).
pub fn resolved_discrepancy(grid: &Grid, a: &DenseOperator, b: &DenseOperator, frac: f64) -> f64 {
    let p = DenseOperator::band_projector(grid);
    let g = if frac >= 1.0 { p } else { p.mul(&DenseOperator::interior_window(grid, frac)).mul(&p) };
    let num = g.mul(&a.sub(b)).mul(&g).norm2();
    let den = g.mul(b).mul(&g).norm2();
    num / den.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bracket;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn apply_examples() {
        let g = Grid::new(PI, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Field::new(&g, random_values(64, &mut rng)).unwrap();
        // p ≡ 1 including Nyquist reproduces u exactly
        let one = SymbolTable::from_fn_full(&g, 0.0, |_, _| c(1.0, 0.0));
        assert!(max_diff(apply(&one, &u).unwrap().values(), u.values()) < 1e-12);

        let e = Field::from_fn(&g, |x| c(0.0, x).exp()).unwrap();
        let xi = SymbolTable::from_fn(&g, 1.0, |_, xi| c(xi, 0.0));
        assert!(max_diff(apply(&xi, &e).unwrap().values(), e.values()) < 1e-12);

        let mult = SymbolTable::from_fn_full(&g, 0.0, |x, _| c(0.0, x).exp());
        let out = apply(&mult, &u).unwrap();
        let expect: Vec<Complex64> = u.values().iter().zip(g.nodes()).map(|(v, &x)| v * c(0.0, x).exp()).collect();
        assert!(max_diff(out.values(), &expect) < 1e-12);
    }

    #[test]
    fn dense_matches_apply() {
        let g = Grid::new(2.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SymbolTable::from_data(&g, random_values(32 * 32, &mut rng), 0.0);
        let m = to_dense(&p);
        for _ in 0..10 {
            let u = Field::new(&g, random_values(32, &mut rng)).unwrap();
            let a = m.apply(&u).unwrap();
            let b = apply(&p, &u).unwrap();
            assert!(max_diff(a.values(), b.values()) < 1e-12 * u.l2_norm().max(1.0));
        }
        let one = SymbolTable::from_fn_full(&g, 0.0, |_, _| c(1.0, 0.0));
        let id = to_dense(&one);
        assert!(id.sub(&DenseOperator::identity(32)).norm_fro() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let g = Grid::new(2.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = to_dense(&SymbolTable::from_data(&g, random_values(256, &mut rng), 0.0));
        let u = random_values(16, &mut rng);
        let v = random_values(16, &mut rng);
        let lhs = g.inner(&a.apply_values(&u), &v);
        let rhs = g.inner(&u, &a.adjoint().apply_values(&v));
        assert!((lhs - rhs).norm() < 1e-12);
        assert_eq!(a.adjoint().adjoint(), a);
        let d = DenseOperator::diagonal(&[c(1.0, 0.0), c(-2.0, 0.0), c(3.0, 0.0)]);
        assert_eq!(d.adjoint(), d);
    }

    #[test]
    fn composition_terminating_case() {
        let g = Grid::new(PI, 64).unwrap();
        let p = SymbolTable::from_fn(&g, 1.0, |_, xi| c(xi, 0.0));
        let q = SymbolTable::from_fn(&g, 0.0, |x, _| c(0.0, x).exp());
        let s = compose_expansion(&p, &q, 2).unwrap().table;
        let mut err = 0.0f64;
        for (j, &x) in g.nodes().iter().enumerate() {
            for k in 1..64 {
                let xi = g.freqs()[k];
                err = err.max((s.get(j, k) - c(0.0, x).exp() * (xi + 1.0)).norm());
            }
        }
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn composition_x_independent_q() {
        let g = Grid::new(PI, 32).unwrap();
        let p = SymbolTable::from_fn(&g, 1.0, |x, xi| c(xi * x.cos(), 0.0));
        let q = SymbolTable::from_xi_fn(&g, 2.0, |xi| c(xi * xi, 1.0));
        for n in 1..5 {
            let s = compose_expansion(&p, &q, n).unwrap().table;
            assert!(max_diff(s.data(), p.mul(&q).data()) < 1e-12);
        }
    }

    #[test]
    fn exp_table_examples() {
        let g = Grid::new(PI, 16).unwrap();
        let z = SymbolTable::zeros(&g);
        assert!(exp_table(&z).unwrap().data().iter().all(|v| *v == c(1.0, 0.0)));
        let k0 = 0.3;
        let lam = SymbolTable::from_fn_full(&g, 0.0, |_, xi| c(k0 * bracket(xi, 8.0).powf(1.0 / 1.8), 0.0));
        let e = exp_table(&lam).unwrap();
        assert!((e.get(0, 8).re - (k0 * 8f64.powf(1.0 / 1.8)).exp()).abs() < 1e-12);
        let prod = e.zip_with(&exp_table(&lam.scale_re(-1.0)).unwrap(), |a, b| a * b);
        assert!(prod.data().iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-12));
        let big = SymbolTable::from_fn_full(&g, 0.0, |_, _| c(800.0, 0.0));
        assert!(matches!(exp_table(&big), Err(Error::Parameter(_))));
    }

    #[test]
    fn psido1_roundtrip() {
        let g = Grid::new(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = to_dense(&SymbolTable::from_data(&g, random_values(64, &mut rng), 0.0));
        let mut buf = Vec::new();
        a.write_psido1(&mut buf).unwrap();
        assert_eq!(buf.len(), 6 + 8 + 16 * 64);
        assert_eq!(&buf[..6], b"PSIDO1");
        assert_eq!(u64::from_le_bytes(buf[6..14].try_into().unwrap()), 8);
        let re0 = f64::from_le_bytes(buf[14..22].try_into().unwrap());
        assert_eq!(re0, a.matrix()[(0, 0)].re);
        let b = DenseOperator::read_psido1(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hermitian_part_of_real_multipliers() {
        let g = Grid::new(PI, 32).unwrap();
        let xonly = SymbolTable::from_fn_full(&g, 0.0, |x, _| c(1.0 + 0.5 * x.cos(), 0.0));
        let a = to_dense(&xonly);
        assert!(a.sub(&a.hermitian_part()).norm_fro() < 1e-12);
        let xionly = SymbolTable::from_fn(&g, 2.0, |_, xi| c(xi * xi, 0.0));
        let a = to_dense(&xionly);
        assert!(a.sub(&a.hermitian_part()).norm_fro() < 1e-10);
    }

    #[test]
    fn d_xi_and_d_x_on_smooth_tables() {
        let g = Grid::new(PI, 64).unwrap();
        let t = SymbolTable::from_fn(&g, 3.0, |x, xi| c(x.sin() * xi.powi(3), 0.0));
        let d = t.d_xi(1);
        let dd = t.d_x(1);
        for j in [3usize, 30, 50] {
            for k in 1..64 {
                let (x, xi) = (g.nodes()[j], g.freqs()[k]);
                assert!((d.get(j, k).re - 3.0 * x.sin() * xi * xi).abs() < 1e-9);
                assert!((dd.get(j, k).re - x.cos() * xi.powi(3)).abs() < 1e-8 * xi.abs().powi(3).max(1.0));
            }
        }
        // non-periodic path on a ramp
        let r = SymbolTable::from_fn(&g, 0.0, |x, _| c(x * x, 0.0)).with_periodic(false);
        let dr = r.d_x(1);
        for j in 0..64 {
            assert!((dr.get(j, 5).re - 2.0 * g.nodes()[j]).abs() < 1e-9);
        }
    }

    proptest::proptest! {
        #[test]
        fn dense_and_apply_agree(seed in 0u64..200) {
            let g = Grid::new(1.5, 16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SymbolTable::from_data(&g, random_values(256, &mut rng), 0.0);
            let u = Field::new(&g, random_values(16, &mut rng)).unwrap();
            let a = to_dense(&p).apply(&u).unwrap();
            let b = apply(&p, &u).unwrap();
            proptest::prop_assert!(max_diff(a.values(), b.values()) < 1e-12);
        }

        #[test]
        fn dense_products_associate(seed in 0u64..50) {
            let g = Grid::new(1.5, 16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = to_dense(&SymbolTable::from_data(&g, random_values(256, &mut rng), 0.0));
            let b = to_dense(&SymbolTable::from_data(&g, random_values(256, &mut rng), 0.0));
            let d = to_dense(&SymbolTable::from_data(&g, random_values(256, &mut rng), 0.0));
            let lhs = a.mul(&b).mul(&d);
            let rhs = a.mul(&b.mul(&d));
            proptest::prop_assert!(lhs.sub(&rhs).norm_fro() < 1e-11 * lhs.norm_fro());
        }
    }
}
