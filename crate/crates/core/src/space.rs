//! Continuous piecewise-polynomial Lagrange spaces on a periodic mesh.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{BorderedLu, Slot};
use crate::mesh::Mesh;
use crate::quadrature::{gauss_rule, legendre, QuadratureRule};

pub const MAX_DEGREE: usize = 6;

/// Placement of the Lagrange nodes inside a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeFamily {
    #[default]
    Equispaced,
    GaussLobatto,
}

/// Values and reference-coordinate derivatives of the `q + 1` local basis
/// functions at a set of reference points. Indexed `[point * (q + 1) + local]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub n_points: usize,
    pub n_local: usize,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl BasisTable {
    #[inline]
    pub fn value(&self, point: usize, local: usize) -> f64 {
        self.values[point * self.n_local + local]
    }

    #[inline]
    pub fn deriv(&self, point: usize, local: usize) -> f64 {
        self.d1[point * self.n_local + local]
    }

    #[inline]
    pub fn second_deriv(&self, point: usize, local: usize) -> f64 {
        self.d2[point * self.n_local + local]
    }
}

#[derive(Debug)]
pub struct LagrangeSpace {
    mesh: Mesh,
    degree: usize,
    family: NodeFamily,
    ref_nodes: Vec<f64>,
    quad: QuadratureRule,
    table: BasisTable,
    mass: OnceLock<BorderedLu>,
}

impl LagrangeSpace {
    /// Degree-`q` space with equispaced nodes and the default `3q + 2`-point rule.
    pub fn new(mesh: Mesh, degree: usize) -> Result<Arc<Self>> {
        Self::with_options(mesh, degree, NodeFamily::Equispaced, None)
    }

    pub fn with_options(
        mesh: Mesh,
        degree: usize,
        family: NodeFamily,
        quad: Option<QuadratureRule>,
    ) -> Result<Arc<Self>> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::config(
                "degree",
                format!("polynomial degree must lie in 1..={MAX_DEGREE}, got {degree}"),
            ));
        }
        let quad = match quad {
            Some(q) => q,
            None => gauss_rule(default_quad_points(degree))?,
        };
        let ref_nodes = reference_nodes(degree, family);
        let table = tabulate(&ref_nodes, quad.points());
        Ok(Arc::new(LagrangeSpace {
            mesh,
            degree,
            family,
            ref_nodes,
            quad,
            table,
            mass: OnceLock::new(),
        }))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn node_family(&self) -> NodeFamily {
        self.family
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    /// Basis tabulated at this space's quadrature points.
    pub fn quad_table(&self) -> &BasisTable {
        &self.table
    }

    pub fn reference_nodes(&self) -> &[f64] {
        &self.ref_nodes
    }

    /// Global DOF count `N = M q`.
    pub fn dof_count(&self) -> usize {
        self.mesh.cell_count() * self.degree
    }

    pub fn cell_count(&self) -> usize {
        self.mesh.cell_count()
    }

    /// Global index of local DOF `local` in `cell`.
    #[inline]
    pub fn dof(&self, cell: usize, local: usize) -> usize {
        (cell * self.degree + local) % self.dof_count()
    }

    /// Physical coordinate of every global DOF, in DOF order.
    pub fn dof_positions(&self) -> Vec<f64> {
        let mut xs = Vec::with_capacity(self.dof_count());
        for m in 0..self.cell_count() {
            let (a, b) = self.mesh.cell_bounds(m);
            for &xi in &self.ref_nodes[..self.degree] {
                xs.push(a + (b - a) * xi);
            }
        }
        xs
    }

    pub fn same_as(&self, other: &LagrangeSpace) -> bool {
        std::ptr::eq(self, other)
            || (self.degree == other.degree
                && self.family == other.family
                && self.mesh == other.mesh
                && self.quad == other.quad)
    }

    /// Local basis values and reference derivatives at `ref_points`. Physical
    /// derivatives are the reference ones divided by the cell size.
    pub fn eval_basis(&self, cell: usize, ref_points: &[f64]) -> BasisTable {
        debug_assert!(cell < self.cell_count());
        tabulate(&self.ref_nodes, ref_points)
    }

    /// Position of scalar DOF `j` in the bordered mass-matrix layout.
    #[inline]
    pub(crate) fn scalar_slot(&self, j: usize) -> Slot {
        if j == 0 {
            Slot::Border(0)
        } else {
            Slot::Inner(j - 1)
        }
    }

    /// Factorised periodic mass matrix under this space's quadrature.
    pub fn mass_factor(&self) -> &BorderedLu {
        self.mass.get_or_init(|| {
            crate::assembly::assemble_mass(self, &self.quad)
                .factor()
                .expect("periodic mass matrix is positive definite")
        })
    }

    /// Solves `M x = b` in place, `b` in global DOF order.
    pub fn mass_solve(&self, b: &mut [f64]) {
        let n = self.dof_count();
        assert_eq!(b.len(), n);
        // bordered layout is [1..N, 0]
        b.rotate_left(1);
        self.mass_factor().solve_in_place(b);
        b.rotate_right(1);
    }
}

/// Default Gauss point count: exact to degree `6q + 3`, which covers every
/// integrand in the residual and the quartic energy term.
pub fn default_quad_points(degree: usize) -> usize {
    3 * degree + 2
}

fn reference_nodes(q: usize, family: NodeFamily) -> Vec<f64> {
    match family {
        NodeFamily::Equispaced => (0..=q).map(|a| a as f64 / q as f64).collect(),
        NodeFamily::GaussLobatto => {
            let mut xs = vec![-1.0];
            // interior nodes are the roots of P_q'
            for i in (1..q).rev() {
                let mut x = (std::f64::consts::PI * i as f64 / q as f64).cos();
                for _ in 0..100 {
                    let (p, dp) = legendre(q, x);
                    let nf = q as f64;
                    let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
                    let dx = dp / d2p;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                xs.push(x);
            }
            xs.push(1.0);
            xs.iter().map(|x| 0.5 * (x + 1.0)).collect()
        }
    }
}

fn tabulate(nodes: &[f64], points: &[f64]) -> BasisTable {
    let nl = nodes.len();
    let mut t = BasisTable {
        n_points: points.len(),
        n_local: nl,
        values: vec![0.0; points.len() * nl],
        d1: vec![0.0; points.len() * nl],
        d2: vec![0.0; points.len() * nl],
    };
    for (p, &x) in points.iter().enumerate() {
        for a in 0..nl {
            let denom: f64 = (0..nl).filter(|&b| b != a).map(|b| nodes[a] - nodes[b]).product();
            // ∏_{b ∉ skip} (x - x_b)
            let prod = |skip: &[usize]| -> f64 {
                (0..nl)
                    .filter(|b| *b != a && !skip.contains(b))
                    .map(|b| x - nodes[b])
                    .product()
            };
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for c in (0..nl).filter(|&c| c != a) {
                d1 += prod(&[c]);
                for e in (0..nl).filter(|&e| e != a && e != c) {
                    d2 += prod(&[c, e]);
                }
            }
            t.values[p * nl + a] = prod(&[]) / denom;
            t.d1[p * nl + a] = d1 / denom;
            t.d2[p * nl + a] = d2 / denom;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn space(q: usize) -> Arc<LagrangeSpace> {
        LagrangeSpace::new(Mesh::uniform(1.0, 4).unwrap(), q).unwrap()
    }

    #[test]
    fn linear_nodal_values() {
        let s = space(1);
        let t = s.eval_basis(0, &[0.0, 0.5]);
        assert_eq!((t.value(0, 0), t.value(0, 1)), (1.0, 0.0));
        assert_eq!((t.value(1, 0), t.value(1, 1)), (0.5, 0.5));
        assert_eq!((t.deriv(1, 0), t.deriv(1, 1)), (-1.0, 1.0));
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for q in 1..=3 {
            for family in [NodeFamily::Equispaced, NodeFamily::GaussLobatto] {
                let s = LagrangeSpace::with_options(Mesh::uniform(1.0, 4).unwrap(), q, family, None)
                    .unwrap();
                let pts: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
                let t = s.eval_basis(0, &pts);
                for p in 0..pts.len() {
                    let sum: f64 = (0..=q).map(|a| t.value(p, a)).sum();
                    let dsum: f64 = (0..=q).map(|a| t.deriv(p, a)).sum();
                    assert!((sum - 1.0).abs() < 1e-14, "q={q} sum={sum}");
                    assert!(dsum.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nodal_property() {
        for q in 1..=MAX_DEGREE {
            let s = space(q);
            let t = s.eval_basis(0, s.reference_nodes());
            for p in 0..=q {
                for a in 0..=q {
                    let want = if a == p { 1.0 } else { 0.0 };
                    assert!((t.value(p, a) - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn second_derivative_of_quadratic_basis() {
        // nodes 0, 1/2, 1: l_1(x) = 4x(1-x), l_1'' = -8
        let s = space(2);
        let t = s.eval_basis(0, &[0.3]);
        assert!((t.second_deriv(0, 1) + 8.0).abs() < 1e-12);
        assert!((t.second_deriv(0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_lobatto_nodes_cubic() {
        // GLL nodes on [-1,1] for q=3 are ±1, ±1/√5
        let n = reference_nodes(3, NodeFamily::GaussLobatto);
        let expect = [0.0, 0.5 - 0.5 / 5f64.sqrt(), 0.5 + 0.5 / 5f64.sqrt(), 1.0];
        for (a, b) in n.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_dof_map() {
        let s = space(2);
        assert_eq!(s.dof_count(), 8);
        assert_eq!(s.dof(0, 0), 0);
        assert_eq!(s.dof(3, 1), 7);
        assert_eq!(s.dof(3, 2), 0);
        assert_eq!(s.dof_positions(), vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]);
    }

    #[test]
    fn degree_bounds() {
        let m = Mesh::uniform(1.0, 4).unwrap();
        assert!(LagrangeSpace::new(m.clone(), 0).is_err());
        assert!(LagrangeSpace::new(m, 7).is_err());
    }
}
