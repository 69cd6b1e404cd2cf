//! Discrete invariants, error norms and convergence rates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{dot, FeField};

/// Quadrature over the field's own rule of `g(x, U, U_x, U_xx)`, with the
/// second derivative taken cellwise.
fn integrate_broken(u: &FeField, g: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64) -> f64 {
    let s = u.space();
    let d = u.components();
    let quad = s.quadrature();
    let np = quad.len();
    let (mut val, mut dx, mut dxx) = (vec![0.0; np * d], vec![0.0; np * d], vec![0.0; np * d]);
    let mut total = 0.0;
    for m in 0..s.cell_count() {
        u.cell_quad_values(m, &mut val, &mut dx, Some(&mut dxx));
        let (a, b) = s.mesh().cell_bounds(m);
        let h = b - a;
        let mut cell = 0.0;
        for (p, (&xi, &w)) in quad.points().iter().zip(quad.weights()).enumerate() {
            let r = p * d..(p + 1) * d;
            cell += w * g(a + h * xi, &val[r.clone()], &dx[r.clone()], &dxx[r]);
        }
        total += cell * h;
    }
    total
}

/// `∫ ½|U|²`.
pub fn momentum_f2(u: &FeField) -> f64 {
    u.integrate(|_, u, _| 0.5 * dot(u, u))
}

/// `∫ ½|U_x|² − ⅛|U|⁴`.
pub fn energy_f4(u: &FeField) -> f64 {
    u.integrate(|_, u, ux| {
        let uu = dot(u, u);
        0.5 * dot(ux, ux) - 0.125 * uu * uu
    })
}

/// Next density of the hierarchy, with the broken second derivative.
pub fn hierarchy_f6(u: &FeField) -> f64 {
    integrate_broken(u, |_, u, ux, uxx| {
        let uu = dot(u, u);
        let uux = dot(u, ux);
        0.5 * uu * uu * uu + 10.0 * uux * uux + uu * dot(ux, ux) + 7.0 * uu * dot(u, uxx) + 4.0 * dot(uxx, uxx)
    })
}

/// `∫ V·W`.
pub fn constraint(v: &FeField, w: &FeField) -> Result<f64> {
    if !v.compatible(w) {
        return Err(Error::Usage("V and W live on different spaces".into()));
    }
    let s = v.space();
    let d = v.components();
    let quad = s.quadrature();
    let np = quad.len();
    let (mut vv, mut ww, mut scratch) = (vec![0.0; np * d], vec![0.0; np * d], vec![0.0; np * d]);
    let mut total = 0.0;
    for m in 0..s.cell_count() {
        v.cell_quad_values(m, &mut vv, &mut scratch, None);
        w.cell_quad_values(m, &mut ww, &mut scratch, None);
        let h = s.mesh().cell_size(m);
        let cell: f64 = (0..np)
            .map(|p| quad.weights()[p] * dot(&vv[p * d..(p + 1) * d], &ww[p * d..(p + 1) * d]))
            .sum();
        total += cell * h;
    }
    Ok(total)
}

/// Per-component `L²` error against `exact`.
pub fn l2_errors(u: &FeField, exact: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    let s = u.space();
    let d = u.components();
    let quad = s.quadrature();
    let np = quad.len();
    let (mut val, mut dx) = (vec![0.0; np * d], vec![0.0; np * d]);
    let mut sums = vec![0.0; d];
    for m in 0..s.cell_count() {
        u.cell_quad_values(m, &mut val, &mut dx, None);
        let (a, b) = s.mesh().cell_bounds(m);
        let h = b - a;
        for (p, (&xi, &w)) in quad.points().iter().zip(quad.weights()).enumerate() {
            let ex = exact(a + h * xi);
            for c in 0..d {
                let e = ex[c] - val[p * d + c];
                sums[c] += w * h * e * e;
            }
        }
    }
    sums.into_iter().map(f64::sqrt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantRow {
    pub step: usize,
    pub t: f64,
    #[serde(rename = "F2")]
    pub f2: f64,
    #[serde(rename = "F4")]
    pub f4: f64,
    #[serde(rename = "F6")]
    pub f6: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub constraint: f64,
    pub newton_iters: usize,
    pub residual: f64,
}

/// One row per accepted step, plus the initial row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantSeries {
    rows: Vec<InvariantRow>,
}

impl InvariantSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: InvariantRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            let forward = row.t > last.t;
            let backward = row.t < last.t && last.t <= self.rows[0].t;
            if !(forward || backward) || row.step != last.step + 1 {
                return Err(Error::Usage(format!(
                    "invariant rows must advance: step {} t {} after step {} t {}",
                    row.step, row.t, last.step, last.t
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[InvariantRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn max_deviation(&self, f: impl Fn(&InvariantRow) -> f64) -> f64 {
        let Some(first) = self.rows.first() else { return 0.0 };
        let f0 = f(first);
        self.rows.iter().map(|r| (f(r) - f0).abs()).fold(0.0, f64::max)
    }

    pub fn max_f2_deviation(&self) -> f64 {
        self.max_deviation(|r| r.f2)
    }

    pub fn max_f4_deviation(&self) -> f64 {
        self.max_deviation(|r| r.f4)
    }

    pub fn max_f6_deviation(&self) -> f64 {
        self.max_deviation(|r| r.f6)
    }

    /// Over accepted steps only: the initial auxiliary fields are not
    /// constrained.
    pub fn max_abs_constraint(&self) -> f64 {
        self.rows.iter().skip(1).map(|r| r.constraint.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_multiplier(&self) -> f64 {
        self.rows.iter().map(|r| r.p.abs()).fold(0.0, f64::max)
    }
}

/// Running maximum of per-component `L²` errors, the `L∞(0, t; L²)` norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSeries {
    times: Vec<f64>,
    current: Vec<Vec<f64>>,
    running: Vec<Vec<f64>>,
}

impl ErrorSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, errors: Vec<f64>) {
        let running = match self.running.last() {
            Some(prev) => prev.iter().zip(&errors).map(|(a, b)| a.max(*b)).collect(),
            None => errors.clone(),
        };
        self.times.push(t);
        self.current.push(errors);
        self.running.push(running);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Errors at each checkpoint, not maximised.
    pub fn instantaneous(&self) -> &[Vec<f64>] {
        &self.current
    }

    pub fn running(&self) -> &[Vec<f64>] {
        &self.running
    }

    /// Per-component `max_m ‖u(t_m) − U^m‖` over the whole history.
    pub fn final_running(&self) -> Option<&[f64]> {
        self.running.last().map(Vec::as_slice)
    }
}

/// Builds the error series of a stored history against an exact solution.
pub fn linf_l2_error<'a>(
    history: impl IntoIterator<Item = (f64, &'a FeField)>,
    exact: impl Fn(f64, f64) -> Vec<f64>,
) -> ErrorSeries {
    let mut series = ErrorSeries::new();
    for (t, u) in history {
        series.push(t, l2_errors(u, |x| exact(x, t)));
    }
    series
}

/// Experimental order of convergence between consecutive refinement levels.
pub fn eoc(errors: &[f64], meshsizes: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != meshsizes.len() || errors.len() < 2 {
        return Err(Error::Usage("need at least two (error, h) pairs of equal length".into()));
    }
    if errors.iter().chain(meshsizes).any(|&v| !(v > 0.0)) {
        return Err(Error::Usage("errors and mesh sizes must be positive".into()));
    }
    if meshsizes.windows(2).any(|h| h[1] >= h[0]) {
        return Err(Error::Usage("mesh sizes must decrease".into()));
    }
    Ok(errors
        .windows(2)
        .zip(meshsizes.windows(2))
        .map(|(a, h)| (a[1] / a[0]).ln() / (h[1] / h[0]).ln())
        .collect())
}
