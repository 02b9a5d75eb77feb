use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use gevrey_core::error::{Error, Result};
use gevrey_core::grid::Grid;
use gevrey_core::positivity::{BOUND_A1, BOUND_A2, BOUND_THETA};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{RunConfig, AXES};
use crate::pipeline::{self, Outcome};

/// One sweep row. Failures are recorded in the row; the sweep continues.
#[derive(Clone, Debug)]
pub struct Row {
    pub value: f64,
    pub status: String,
    pub message: String,
    pub m2: f64,
    pub m1: f64,
    pub h: f64,
    pub k0: f64,
    pub margin_a2: f64,
    pub margin_a1: f64,
    pub margin_theta: f64,
    pub l2_t: f64,
    pub hm_t: f64,
    pub radius_t: f64,
    pub max_residual: f64,
    pub c_prime_emp: f64,
    /// L² distance of u(T) to the previous row's u(T), compared mode by mode.
    pub terminal_diff: f64,
    /// Previous terminal_diff over this one.
    pub richardson: f64,
    pub seconds: f64,
    terminal: Option<(Grid, Vec<Complex64>)>,
}

fn row_from(value: f64, out: &Outcome, seconds: f64) -> Row {
    let nan = f64::NAN;
    let mut row = Row {
        value,
        status: "ok".into(),
        message: String::new(),
        m2: nan,
        m1: nan,
        h: nan,
        k0: nan,
        margin_a2: nan,
        margin_a1: nan,
        margin_theta: nan,
        l2_t: nan,
        hm_t: nan,
        radius_t: nan,
        max_residual: nan,
        c_prime_emp: nan,
        terminal_diff: nan,
        richardson: nan,
        seconds,
        terminal: None,
    };
    if let Some(e) = &out.error {
        row.status = e.category().name().into();
        row.message = e.to_string();
    }
    if let Some(sel) = &out.selection {
        let p = &sel.params;
        (row.m2, row.m1, row.h, row.k0) = (p.m2, p.m1, p.h, p.k0);
        let worst = |name| sel.report.worst(name).map_or(nan, |r| r.margin);
        row.margin_a2 = worst(BOUND_A2);
        row.margin_a1 = worst(BOUND_A1);
        row.margin_theta = worst(BOUND_THETA);
    }
    if let Some(tr) = &out.trajectory {
        row.l2_t = *tr.l2.last().unwrap_or(&nan);
        row.hm_t = *tr.hm.last().unwrap_or(&nan);
        row.radius_t = *tr.radius.last().unwrap_or(&nan);
        row.max_residual = tr.max_residual;
        row.c_prime_emp = tr.c_prime_emp;
        row.terminal = tr.primary().last().map(|u| (tr.grid.clone(), u.clone()));
    }
    row
}

/// Coefficients scaled so their ℓ² norm is the grid L² norm, keyed by the
/// integer frequency index. The Nyquist mode is dropped.
fn scaled_modes(grid: &Grid, u: &[Complex64]) -> BTreeMap<i64, Complex64> {
    let s = grid.dx().sqrt();
    grid.forward_values(u)
        .into_iter()
        .zip(grid.freqs())
        .skip(1)
        .map(|(c, &xi)| ((xi / grid.dxi()).round() as i64, c * s))
        .collect()
}

/// L² distance between two states that may live on grids of different N
/// (same L). NaN when the lattices differ.
pub fn terminal_diff(a: (&Grid, &[Complex64]), b: (&Grid, &[Complex64])) -> f64 {
    if a.0.half_width() != b.0.half_width() {
        return f64::NAN;
    }
    let ma = scaled_modes(a.0, a.1);
    let mb = scaled_modes(b.0, b.1);
    let mut sum = 0.0;
    for (k, va) in &ma {
        sum += (va - mb.get(k).copied().unwrap_or_default()).norm_sqr();
    }
    for (k, vb) in &mb {
        if !ma.contains_key(k) {
            sum += vb.norm_sqr();
        }
    }
    sum.sqrt()
}

/// Runs one full pipeline per value on the worker pool; rows come back in
/// input order.
pub fn sweep(cfg: &RunConfig, axis: &str, values: &[f64]) -> Result<Vec<Row>> {
    if !AXES.contains(&axis) {
        return Err(Error::Config(format!("unknown sweep axis {axis:?}; axes: {}", AXES.join(", "))));
    }
    let mut rows: Vec<Row> = values
        .par_iter()
        .map(|&v| {
            let start = Instant::now();
            let out = match cfg.with_axis(axis, v) {
                Ok(c) => pipeline::run(&c),
                Err(e) => Outcome::failed(cfg, e),
            };
            row_from(v, &out, start.elapsed().as_secs_f64())
        })
        .collect();
    for i in 1..rows.len() {
        let d = match (&rows[i - 1].terminal, &rows[i].terminal) {
            (Some((ga, ua)), Some((gb, ub))) => terminal_diff((ga, ua), (gb, ub)),
            _ => f64::NAN,
        };
        rows[i].terminal_diff = d;
        if i >= 2 {
            rows[i].richardson = rows[i - 1].terminal_diff / d;
        }
    }
    Ok(rows)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub const HEADER: &str = "value,status,M2,M1,h,k0,margin_re_a2,margin_re_a1_c_e,margin_re_a_theta,\
l2_T,hm_T,radius_fit_T,max_energy_residual,c_prime_emp,terminal_diff,richardson,message";

/// Aggregated CSV without timings, so identical inputs give identical bytes.
pub fn csv(axis: &str, rows: &[Row]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# schema=1");
    let _ = writeln!(s, "# axis={axis}");
    let _ = writeln!(s, "{HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{},{:.9e},{:.9e},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.15e},{:.15e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{}",
            r.value,
            r.status,
            r.m2,
            r.m1,
            r.h,
            r.k0,
            r.margin_a2,
            r.margin_a1,
            r.margin_theta,
            r.l2_t,
            r.hm_t,
            r.radius_t,
            r.max_residual,
            r.c_prime_emp,
            r.terminal_diff,
            r.richardson,
            quote(&r.message)
        );
    }
    s
}

pub fn timing(rows: &[Row]) -> String {
    let mut s = String::from("value,seconds\n");
    for r in rows {
        let _ = writeln!(s, "{:?},{:.3}", r.value, r.seconds);
    }
    s
}

/// Writes sweep.csv and sweep_timing.txt into the output directory.
pub fn write_outputs(cfg: &RunConfig, axis: &str, rows: &[Row]) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.csv"), csv(axis, rows))?;
    fs::write(dir.join("sweep_timing.txt"), timing(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gevrey_core::evolve::gevrey_profile;

    #[test]
    fn terminal_diff_across_resolutions() {
        let a = Grid::new(4.0, 64).unwrap();
        let b = Grid::new(4.0, 128).unwrap();
        let ua = gevrey_profile(&a, 3.0, 1.5, 1.0, 0.3);
        let ub = gevrey_profile(&b, 3.0, 1.5, 1.0, 0.3);
        // identical on common modes, the extra ones are ~e^{−ρ⟨32π/4⟩^{2/3}}
        let d = terminal_diff((&a, ua.values()), (&b, ub.values()));
        assert!(d < 1e-8, "{d}");
        assert_eq!(terminal_diff((&a, ua.values()), (&a, ua.values())), 0.0);
        let c = Grid::new(5.0, 64).unwrap();
        assert!(terminal_diff((&a, ua.values()), (&c, ua.values())).is_nan());
    }

    #[test]
    fn csv_quotes_messages() {
        assert_eq!(quote("a \"b\", c"), "\"a \"\"b\"\", c\"");
    }
}
