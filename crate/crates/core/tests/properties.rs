use gevrey_core::conjugate::{truncation, MAX_TRUNCATION};
use gevrey_core::evolve::{gevrey_norm, read_field1, write_field1, GevreyNormSpec};
use gevrey_core::grid::{bracket, Field, Grid};
use gevrey_core::positivity::{select_parameters, SelectionOptions};
use gevrey_core::quantize::{apply, compose_expansion, to_dense, SymbolTable};
use gevrey_core::symbols::model_problem;
use gevrey_core::weights::{cutoff_psi, k_of_t, smooth_step, WeightParams};
use num_complex::Complex64;
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b)), n)
}

fn sized() -> impl Strategy<Value = (usize, Vec<Complex64>)> {
    prop::sample::select(vec![8usize, 16, 32, 64]).prop_flat_map(|n| (Just(n), values(n)))
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn transform_round_trip_and_parseval((n, u) in sized(), l in 0.5..50.0f64) {
        let g = Grid::new(l, n).unwrap();
        let c = g.forward_values(&u);
        prop_assert!(max_diff(&g.inverse_values(&c), &u) < 1e-12);
        let lhs = g.l2(&u);
        let rhs = (g.dx() * c.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn quantization_matches_dense_matrix((n, u) in sized(), s in values(64)) {
        let g = Grid::new(3.0, n).unwrap();
        let table = SymbolTable::from_fn(&g, 0.0, |x, xi| s[((x.abs() * 7.0) as usize + xi.abs() as usize) % 64]);
        let f = Field::new(&g, u.clone()).unwrap();
        let a = apply(&table, &f).unwrap();
        let b = to_dense(&table).apply_values(&u);
        prop_assert!(max_diff(a.values(), &b) < 1e-10);
    }

    #[test]
    fn x_independent_right_factor_composes_exactly(n_trunc in 1usize..=4, c in -2.0..2.0f64) {
        let g = Grid::new(std::f64::consts::PI, 32).unwrap();
        let p = SymbolTable::from_fn(&g, 1.0, move |x, xi| Complex64::new(xi * (c * x).cos(), x.sin()));
        let q = SymbolTable::from_xi_fn(&g, 2.0, |xi| Complex64::new(xi * xi, 1.0));
        let s = compose_expansion(&p, &q, n_trunc).unwrap().table;
        prop_assert!(max_diff(s.data(), p.mul(&q).data()) < 1e-12);
    }

    #[test]
    fn gevrey_norm_grows_with_radius(u in values(32), r1 in 0.0..2.0f64, dr in 0.0..2.0f64, m in 0.0..3.0f64) {
        let g = Grid::new(4.0, 32).unwrap();
        let f = Field::new(&g, u).unwrap();
        let a = gevrey_norm(&f, &GevreyNormSpec { m, rho: r1, theta: 1.5 }).unwrap();
        let b = gevrey_norm(&f, &GevreyNormSpec { m, rho: r1 + dr, theta: 1.5 }).unwrap();
        prop_assert!(a <= b * (1.0 + 1e-12));
        let l2 = gevrey_norm(&f, &GevreyNormSpec { m: 0.0, rho: 0.0, theta: 1.5 }).unwrap();
        prop_assert!((l2 - f.l2_norm()).abs() <= 1e-12 * l2.max(1.0));
    }

    #[test]
    fn bracket_dominates(xi in -1e4..1e4f64, h in 1.0..1e4f64) {
        let b = bracket(xi, h);
        prop_assert!(b >= xi.abs() && b >= h);
        prop_assert!(b <= xi.abs() + h);
    }

    #[test]
    fn cutoffs_stay_in_unit_interval(s in -3.0..3.0f64, ds in 0.0..1.0f64) {
        let a = smooth_step(s);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= smooth_step(s + ds));
        prop_assert!((0.0..=1.0).contains(&cutoff_psi(s)));
        prop_assert_eq!(cutoff_psi(s), cutoff_psi(-s));
    }

    #[test]
    fn truncation_is_monotone_and_capped(order in 0.0..4.0f64, d in 0.0..2.0f64, theta in 1.05..3.0f64) {
        let a = truncation(order, theta);
        prop_assert!((1..=MAX_TRUNCATION).contains(&a));
        prop_assert!(a <= truncation(order + d, theta));
    }

    #[test]
    fn field1_round_trip(rows in prop::collection::vec(values(8), 1..4)) {
        let times: Vec<f64> = (0..rows.len()).map(|i| 0.1 * i as f64).collect();
        let mut buf = Vec::new();
        write_field1(&mut buf, &times, &rows).unwrap();
        let (t, r) = read_field1(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(t, times);
        prop_assert_eq!(r, rows);
    }

    #[test]
    fn time_weight_decreases(k0 in 0.01..0.5f64, c1 in 0.0..0.2f64, c2 in 0.0..0.2f64, t in 0.0..0.5f64, dt in 0.0..0.5f64) {
        let p = WeightParams {
            m2: 0.1, m1: 0.1, h: 8.0, k0, c1, c2, sigma: 0.75, theta: 1.8, mu: 2.0, r_a3: 1.5, horizon: 1.0,
        };
        let a = k_of_t(0.0, &p);
        prop_assert!((a.unwrap() - k0).abs() < 1e-15);
        if let (Ok(x), Ok(y)) = (k_of_t(t, &p), k_of_t(t + dt, &p)) {
            prop_assert!(y <= x + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // selection is costly, so few cases
    #[test]
    fn m2_grows_with_imaginary_strength(c2 in 0.01..0.08f64, dc in 0.001..0.03f64) {
        let g = Grid::new(std::f64::consts::PI, 64).unwrap();
        let opts = SelectionOptions::default();
        let a = select_parameters(&model_problem("complex-damped", 0.75, &[c2], 0.2).unwrap(), 1.8, &g, &opts).unwrap();
        let b = select_parameters(&model_problem("complex-damped", 0.75, &[c2 + dc], 0.2).unwrap(), 1.8, &g, &opts).unwrap();
        prop_assert!(a.params.m2 < b.params.m2);
        prop_assert!(a.report.passed() && b.report.passed());
    }
}
