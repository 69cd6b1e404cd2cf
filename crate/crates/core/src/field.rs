//! Vector-valued finite element fields.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::space::LagrangeSpace;

/// A `d`-component field in a [`LagrangeSpace`]. Coefficients are stored
/// component-major: entry `c * N + j` is component `c` at global DOF `j`.
#[derive(Debug, Clone)]
pub struct FeField {
    space: Arc<LagrangeSpace>,
    components: usize,
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub l4: f64,
    pub h1_semi: f64,
}

impl FeField {
    pub fn zeros(space: Arc<LagrangeSpace>, components: usize) -> Self {
        let n = space.dof_count() * components;
        FeField {
            space,
            components,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coefficients(space: Arc<LagrangeSpace>, components: usize, coeffs: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(Error::config("d", "need at least one component"));
        }
        let want = space.dof_count() * components;
        if coeffs.len() != want {
            return Err(Error::Usage(format!(
                "expected {want} coefficients for {components} components, got {}",
                coeffs.len()
            )));
        }
        Ok(FeField {
            space,
            components,
            coeffs,
        })
    }

    pub fn space(&self) -> &Arc<LagrangeSpace> {
        &self.space
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.space.dof_count();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn compatible(&self, other: &FeField) -> bool {
        self.components == other.components && self.space.same_as(&other.space)
    }

    /// Value at `x`, reduced modulo `L`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.eval_with(x, false)
    }

    /// Derivative at `x`, taken from the cell containing `x` (cells are left-closed).
    pub fn deriv(&self, x: f64) -> Vec<f64> {
        self.eval_with(x, true)
    }

    fn eval_with(&self, x: f64, derivative: bool) -> Vec<f64> {
        let (cell, xi) = self.space.mesh().locate(x);
        let t = self.space.eval_basis(cell, &[xi]);
        let h = self.space.mesh().cell_size(cell);
        let n = self.space.dof_count();
        (0..self.components)
            .map(|c| {
                (0..=self.space.degree())
                    .map(|a| {
                        let u = self.coeffs[c * n + self.space.dof(cell, a)];
                        if derivative {
                            u * t.deriv(0, a) / h
                        } else {
                            u * t.value(0, a)
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Values, first and (broken) second derivatives at the quadrature points
    /// of `cell`, written as `[point * d + c]`.
    pub(crate) fn cell_quad_values(&self, cell: usize, val: &mut [f64], dx: &mut [f64], dxx: Option<&mut [f64]>) {
        let s = &*self.space;
        let t = s.quad_table();
        let inv_h = 1.0 / s.mesh().cell_size(cell);
        let d = self.components;
        let n = s.dof_count();
        let nl = s.degree() + 1;
        let mut stack = [0.0; 64];
        let mut heap;
        let local: &mut [f64] = if nl * d <= stack.len() {
            &mut stack[..nl * d]
        } else {
            heap = vec![0.0; nl * d];
            &mut heap
        };
        for a in 0..nl {
            let j = s.dof(cell, a);
            for c in 0..d {
                local[c * nl + a] = self.coeffs[c * n + j];
            }
        }
        let contract = |table: &[f64], out: &mut [f64], scale: f64| match nl {
            2 => contract_fixed::<2>(table, local, d, out, scale),
            3 => contract_fixed::<3>(table, local, d, out, scale),
            4 => contract_fixed::<4>(table, local, d, out, scale),
            _ => {
                for (p, row) in table.chunks_exact(nl).enumerate() {
                    for c in 0..d {
                        let lc = &local[c * nl..(c + 1) * nl];
                        out[p * d + c] = scale * lc.iter().zip(row).map(|(u, b)| u * b).sum::<f64>();
                    }
                }
            }
        };
        contract(&t.values, val, 1.0);
        contract(&t.d1, dx, inv_h);
        if let Some(b) = dxx {
            contract(&t.d2, b, inv_h * inv_h);
        }
    }

    /// Integrates `g(x, U, U_x)` over the domain with the space's quadrature.
    pub fn integrate(&self, g: impl Fn(f64, &[f64], &[f64]) -> f64) -> f64 {
        let s = &*self.space;
        let d = self.components;
        let np = s.quadrature().len();
        let mut val = vec![0.0; np * d];
        let mut dx = vec![0.0; np * d];
        let mut total = 0.0;
        for m in 0..s.cell_count() {
            self.cell_quad_values(m, &mut val, &mut dx, None);
            let (a, b) = s.mesh().cell_bounds(m);
            let h = b - a;
            let mut cell_sum = 0.0;
            for (p, (&xi, &w)) in s.quadrature().points().iter().zip(s.quadrature().weights()).enumerate() {
                cell_sum += w * g(a + h * xi, &val[p * d..(p + 1) * d], &dx[p * d..(p + 1) * d]);
            }
            total += cell_sum * h;
        }
        total
    }

    pub fn norms(&self) -> Norms {
        let l2 = self.integrate(|_, u, _| dot(u, u)).sqrt();
        let l4 = self.integrate(|_, u, _| dot(u, u).powi(2)).powf(0.25);
        let h1_semi = self.integrate(|_, _, ux| dot(ux, ux)).sqrt();
        Norms { l2, l4, h1_semi }
    }

    /// `L²` projection of `f` under the given quadrature.
    pub fn l2_project(
        space: Arc<LagrangeSpace>,
        d: usize,
        f: impl Fn(f64) -> Vec<f64>,
        quad: &QuadratureRule,
    ) -> Result<Self> {
        let n = space.dof_count();
        let mut rhs = vec![0.0; d * n];
        let table = space.eval_basis(0, quad.points());
        for m in 0..space.cell_count() {
            let (a, b) = space.mesh().cell_bounds(m);
            let h = b - a;
            for (p, (&xi, &w)) in quad.points().iter().zip(quad.weights()).enumerate() {
                let fx = f(a + h * xi);
                if fx.len() != d {
                    return Err(Error::Usage(format!("function returned {} components, expected {d}", fx.len())));
                }
                for loc in 0..=space.degree() {
                    let j = space.dof(m, loc);
                    let phi = table.value(p, loc) * w * h;
                    for c in 0..d {
                        rhs[c * n + j] += fx[c] * phi;
                    }
                }
            }
        }
        if quad.exactness() >= 2 * space.degree() {
            for c in 0..d {
                space.mass_solve(&mut rhs[c * n..(c + 1) * n]);
            }
        } else {
            // under-integrated mass matrix: assemble it with the same rule
            let lu = crate::assembly::assemble_mass(&space, quad).factor()?;
            for c in 0..d {
                let b = &mut rhs[c * n..(c + 1) * n];
                b.rotate_left(1);
                lu.solve_in_place(b);
                b.rotate_right(1);
            }
        }
        FeField::from_coefficients(space, d, rhs)
    }

    /// Nodal interpolant: coefficients are `f` at the DOF positions.
    pub fn interpolate(space: Arc<LagrangeSpace>, d: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let n = space.dof_count();
        let mut coeffs = vec![0.0; d * n];
        for (j, x) in space.dof_positions().into_iter().enumerate() {
            let fx = f(x);
            if fx.len() != d {
                return Err(Error::Usage(format!("function returned {} components, expected {d}", fx.len())));
            }
            for c in 0..d {
                coeffs[c * n + j] = fx[c];
            }
        }
        FeField::from_coefficients(space, d, coeffs)
    }

    /// `A U` pointwise for a `d × d` row-major matrix `A`.
    pub fn transform(&self, a: &[f64]) -> FeField {
        let d = self.components;
        assert_eq!(a.len(), d * d);
        let n = self.space.dof_count();
        let mut out = vec![0.0; d * n];
        for j in 0..n {
            for r in 0..d {
                out[r * n + j] = (0..d).map(|c| a[r * d + c] * self.coeffs[c * n + j]).sum();
            }
        }
        FeField {
            space: self.space.clone(),
            components: d,
            coeffs: out,
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }
}

/// `out[p d + c] = scale Σ_a local[c NL + a] table[p NL + a]`, unrolled for
/// the common degrees.
#[inline(always)]
fn contract_fixed<const NL: usize>(table: &[f64], local: &[f64], d: usize, out: &mut [f64], scale: f64) {
    for (row, out) in table.chunks_exact(NL).zip(out.chunks_exact_mut(d)) {
        let row: &[f64; NL] = row.try_into().expect("chunk of NL");
        for (c, o) in out.iter_mut().enumerate() {
            let lc: &[f64; NL] = local[c * NL..(c + 1) * NL].try_into().expect("chunk of NL");
            let mut acc = 0.0;
            for a in 0..NL {
                acc += lc[a] * row[a];
            }
            *o = scale * acc;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
