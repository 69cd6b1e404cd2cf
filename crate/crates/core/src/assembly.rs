//! Residual and Jacobian of the fully discrete mixed system.
//!
//! One time step seeks `(U, V, W, P)` at the new level such that, with
//! `A = (Uⁿ + U)/2`,
//!
//! ```text
//! R_U(Φ) = ∫ ((U − Uⁿ)/τ + V_x + W)·Φ
//! R_V(Ψ) = ∫ (V − ¼(|Uⁿ|² + |U|²) A)·Ψ + A_x·Ψ_x
//! R_W(Ξ) = ∫ (W − |A|² A_x + (A_x·A) A + P V)·Ξ
//! R_P    = ∫ V·W
//! ```
//!
//! vanish for every test function. The multiplier `P` enforces the discrete
//! orthogonality `∫ V·W = 0`, which is what makes the energy
//! `∫ ½|U_x|² − ⅛|U|⁴` an exact invariant of the step.
//!
//! Logical unknown layout is `[U (dN), V (dN), W (dN), P]`, each field
//! component-major. Internally the matrix is stored node-interleaved with
//! DOF 0 and `P` moved to the border of a [`BorderedMatrix`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{dot, FeField};
use crate::linalg::{BorderedLu, BorderedMatrix, Slot};
use crate::quadrature::QuadratureRule;
use crate::space::LagrangeSpace;

/// Largest supported number of field components.
pub const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    U = 0,
    V = 1,
    W = 2,
}

/// One time level of the discrete solution.
#[derive(Debug, Clone)]
pub struct DiscreteState {
    pub u: FeField,
    pub v: FeField,
    pub w: FeField,
    /// Lagrange multiplier.
    pub p: f64,
    pub t: f64,
}

impl DiscreteState {
    pub fn zeros(space: Arc<LagrangeSpace>, d: usize) -> Self {
        DiscreteState {
            u: FeField::zeros(space.clone(), d),
            v: FeField::zeros(space.clone(), d),
            w: FeField::zeros(space, d),
            p: 0.0,
            t: 0.0,
        }
    }

    pub fn space(&self) -> &Arc<LagrangeSpace> {
        self.u.space()
    }

    pub fn components(&self) -> usize {
        self.u.components()
    }

    pub fn layout(&self) -> SystemLayout {
        SystemLayout::new(self.components(), self.space().dof_count())
    }

    fn check(&self) -> Result<()> {
        if self.components() > MAX_COMPONENTS {
            return Err(Error::Usage(format!(
                "at most {MAX_COMPONENTS} components are supported, got {}",
                self.components()
            )));
        }
        if !self.u.compatible(&self.v) || !self.u.compatible(&self.w) {
            return Err(Error::Usage("U, V and W must share one space and component count".into()));
        }
        Ok(())
    }

    /// Packs the unknowns in the logical layout.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout().size());
        x.extend_from_slice(self.u.coefficients());
        x.extend_from_slice(self.v.coefficients());
        x.extend_from_slice(self.w.coefficients());
        x.push(self.p);
        x
    }

    /// Overwrites the unknowns from a logical-layout vector.
    pub fn set_from_vector(&mut self, x: &[f64]) {
        let dn = self.components() * self.space().dof_count();
        assert_eq!(x.len(), 3 * dn + 1);
        self.u.coefficients_mut().copy_from_slice(&x[..dn]);
        self.v.coefficients_mut().copy_from_slice(&x[dn..2 * dn]);
        self.w.coefficients_mut().copy_from_slice(&x[2 * dn..3 * dn]);
        self.p = x[3 * dn];
    }

    /// Applies a logical-layout increment.
    pub fn apply_update(&mut self, delta: &[f64], scale: f64) {
        let dn = self.components() * self.space().dof_count();
        for (blk, field) in [&mut self.u, &mut self.v, &mut self.w].into_iter().enumerate() {
            for (a, b) in field.coefficients_mut().iter_mut().zip(&delta[blk * dn..(blk + 1) * dn]) {
                *a += scale * b;
            }
        }
        self.p += scale * delta[3 * dn];
    }

    /// `A U`, `A V`, `A W` for an orthogonal `A`; `P` and `t` unchanged.
    pub fn transform(&self, a: &[f64]) -> Self {
        DiscreteState {
            u: self.u.transform(a),
            v: self.v.transform(a),
            w: self.w.transform(a),
            p: self.p,
            t: self.t,
        }
    }
}

/// Index arithmetic for the `3dN + 1` unknowns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemLayout {
    d: usize,
    n: usize,
}

impl SystemLayout {
    pub fn new(d: usize, n: usize) -> Self {
        SystemLayout { d, n }
    }

    pub fn components(&self) -> usize {
        self.d
    }

    pub fn dof_count(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        3 * self.d * self.n + 1
    }

    #[inline]
    pub fn index(&self, block: Block, c: usize, j: usize) -> usize {
        block as usize * self.d * self.n + c * self.n + j
    }

    pub fn multiplier(&self) -> usize {
        3 * self.d * self.n
    }

    fn per_node(&self) -> usize {
        3 * self.d
    }

    #[inline]
    fn node_slot(&self, block: usize, c: usize, j: usize) -> Slot {
        let r = block * self.d + c;
        if j == 0 {
            Slot::Border(r)
        } else {
            Slot::Inner((j - 1) * self.per_node() + r)
        }
    }

    fn multiplier_slot(&self) -> Slot {
        Slot::Border(self.per_node())
    }

    /// Internal slot of a logical index.
    pub fn slot(&self, logical: usize) -> Slot {
        if logical == self.multiplier() {
            return self.multiplier_slot();
        }
        let dn = self.d * self.n;
        let (block, r) = (logical / dn, logical % dn);
        self.node_slot(block, r / self.n, r % self.n)
    }

    fn inner_dim(&self) -> usize {
        (self.n - 1) * self.per_node()
    }

    fn flat(&self, s: Slot) -> usize {
        match s {
            Slot::Inner(i) => i,
            Slot::Border(b) => self.inner_dim() + b,
        }
    }

    fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (i, &v) in x.iter().enumerate() {
            y[self.flat(self.slot(i))] = v;
        }
        y
    }

    fn to_logical(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len()).map(|i| y[self.flat(self.slot(i))]).collect()
    }

    fn empty_matrix(&self, degree: usize) -> BorderedMatrix {
        let bw = self.per_node() * (degree + 1) - 1;
        BorderedMatrix::zeros(self.inner_dim(), bw, bw, self.per_node() + 1)
    }
}

/// Newton matrix and residual in the logical layout.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    layout: SystemLayout,
    matrix: BorderedMatrix,
    residual: Vec<f64>,
    pinned: bool,
}

impl BlockSystem {
    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Entry `(i, j)` in the logical layout.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(self.layout.slot(i), self.layout.slot(j))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.layout.size();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let xi = self.layout.to_internal(x);
        let mut yi = vec![0.0; xi.len()];
        self.matrix.matvec(&xi, &mut yi);
        self.layout.to_logical(&yi)
    }

    /// Whether the constraint row has been replaced by `δP = −P`.
    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Replaces the constraint equation by `P = 0` for this iterate. Used when
    /// `V` is so small that the multiplier column vanishes.
    pub fn pin_multiplier(&mut self, current_p: f64) {
        let b = self.layout.per_node();
        self.matrix.set_border_identity_row(b);
        let m = self.layout.multiplier();
        self.residual[m] = current_p;
        self.pinned = true;
    }

    pub fn factor(self) -> Result<FactoredSystem> {
        Ok(FactoredSystem {
            lu: self.matrix.factor()?,
            layout: self.layout,
            pinned: self.pinned,
        })
    }
}

/// A factorised Newton matrix that can be reused across iterations.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    layout: SystemLayout,
    lu: BorderedLu,
    pinned: bool,
}

impl FactoredSystem {
    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Solves `J x = b` with `b`, `x` in the logical layout.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.layout.to_internal(b);
        self.lu.solve_in_place(&mut y);
        self.layout.to_logical(&y)
    }

    /// Newton update `−J⁻¹ R`.
    pub fn newton_update(&self, residual: &[f64]) -> Vec<f64> {
        let mut x = self.solve(residual);
        x.iter_mut().for_each(|v| *v = -*v);
        x
    }
}

/// Newton update `−J⁻¹ R` for an assembled system.
pub fn solve_block(system: BlockSystem) -> Result<Vec<f64>> {
    let residual = system.residual.clone();
    Ok(system.factor()?.newton_update(&residual))
}

/// The `w` nonlinearity `|a|² a_x − (a_x·a) a`. It is orthogonal to `a`
/// pointwise, which is what localises the Hamiltonian operator.
pub fn w_nonlinearity(a: &[f64], ax: &[f64]) -> Vec<f64> {
    let aa = dot(a, a);
    let axa = dot(ax, a);
    a.iter().zip(ax).map(|(ai, axi)| aa * axi - axa * ai).collect()
}

/// Periodic mass matrix in the bordered scalar layout (DOF 0 in the border).
pub fn assemble_mass(space: &LagrangeSpace, quad: &QuadratureRule) -> BorderedMatrix {
    let n = space.dof_count();
    let q = space.degree();
    let mut m = BorderedMatrix::zeros(n - 1, q, q, 1);
    let t = space.eval_basis(0, quad.points());
    for cell in 0..space.cell_count() {
        let h = space.mesh().cell_size(cell);
        for a in 0..=q {
            let ra = space.scalar_slot(space.dof(cell, a));
            for b in 0..=q {
                let cb = space.scalar_slot(space.dof(cell, b));
                let v: f64 = (0..t.n_points)
                    .map(|p| quad.weights()[p] * t.value(p, a) * t.value(p, b))
                    .sum();
                m.add(ra, cb, v * h);
            }
        }
    }
    m
}

/// Entry `(i, j)` of a scalar matrix produced by [`assemble_mass`].
pub fn mass_entry(space: &LagrangeSpace, m: &BorderedMatrix, i: usize, j: usize) -> f64 {
    m.get(space.scalar_slot(i), space.scalar_slot(j))
}

fn check_pair(prev: &DiscreteState, guess: &DiscreteState, tau: f64) -> Result<()> {
    prev.check()?;
    guess.check()?;
    if !prev.u.compatible(&guess.u) {
        return Err(Error::Usage("previous and new states live in different spaces".into()));
    }
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::Usage(format!("time step must be finite and non-zero, got {tau}")));
    }
    Ok(())
}

pub fn assemble_residual(prev: &DiscreteState, guess: &DiscreteState, tau: f64) -> Result<Vec<f64>> {
    check_pair(prev, guess, tau)?;
    let mut asm = Assembler::new(prev, guess, tau, false);
    asm.run();
    Ok(asm.residual)
}

/// Residual with the time difference `U - Uⁿ` supplied exactly as `du`.
///
/// Newton iterates on `du` so that `R_U` does not carry the rounding of
/// `|U|/τ`, which for small steps sits near the solver tolerance.
pub fn assemble_residual_increment(
    prev: &DiscreteState,
    guess: &DiscreteState,
    du: &FeField,
    tau: f64,
) -> Result<Vec<f64>> {
    check_pair(prev, guess, tau)?;
    if !du.compatible(&prev.u) {
        return Err(Error::Usage("increment lives in a different space".into()));
    }
    let mut asm = Assembler::new(prev, guess, tau, false);
    asm.increment = Some(du);
    asm.run();
    Ok(asm.residual)
}

/// Analytic Newton matrix together with the residual at `guess`.
pub fn assemble_jacobian(prev: &DiscreteState, guess: &DiscreteState, tau: f64) -> Result<BlockSystem> {
    check_pair(prev, guess, tau)?;
    let mut asm = Assembler::new(prev, guess, tau, true);
    asm.run();
    Ok(BlockSystem {
        layout: asm.layout,
        matrix: asm.matrix.expect("jacobian requested"),
        residual: asm.residual,
        pinned: false,
    })
}

struct Assembler<'a> {
    prev: &'a DiscreteState,
    guess: &'a DiscreteState,
    tau: f64,
    increment: Option<&'a FeField>,
    layout: SystemLayout,
    residual: Vec<f64>,
    matrix: Option<BorderedMatrix>,
}

impl<'a> Assembler<'a> {
    fn new(prev: &'a DiscreteState, guess: &'a DiscreteState, tau: f64, jacobian: bool) -> Self {
        let layout = prev.layout();
        let matrix = jacobian.then(|| layout.empty_matrix(prev.space().degree()));
        Assembler {
            prev,
            guess,
            tau,
            increment: None,
            residual: vec![0.0; layout.size()],
            layout,
            matrix,
        }
    }

    fn run(&mut self) {
        let space = self.prev.space().clone();
        let d = self.layout.d;
        let nl = space.degree() + 1;
        let nloc = nl * 3 * d;
        let t = space.quad_table();
        let weights = space.quadrature().weights();
        let np = t.n_points;
        let tau = self.tau;
        let p_mult = self.guess.p;

        let buf = || vec![0.0; np * d];
        let (mut un, mut unx) = (buf(), buf());
        let (mut u1, mut u1x) = (buf(), buf());
        let (mut v, mut vx) = (buf(), buf());
        let (mut w, mut wx) = (buf(), buf());

        let mut kloc = vec![0.0; nloc * nloc];
        let mut rloc = vec![0.0; nloc];
        let mut pcol = vec![0.0; nloc];
        let mut prow = vec![0.0; nloc];
        let mut slots = vec![Slot::Inner(0); nloc];
        let mut logical = vec![0usize; nloc];
        let li = |a: usize, blk: usize, c: usize| a * 3 * d + blk * d + c;

        let mut avu = vec![0.0; d * d];
        let mut gwu = vec![0.0; d * d];
        let mut hwu = vec![0.0; d * d];
        let mut phi = vec![0.0; nl];
        let mut dphi = vec![0.0; nl];
        let mut rp = 0.0;

        // The time difference comes from the coefficient difference: evaluating
        // both levels and subtracting would leave ε|U|/τ of noise in R_U.
        let diff = match self.increment {
            Some(du) => du.clone(),
            None => {
                let mut diff = self.guess.u.clone();
                diff.axpy(-1.0, &self.prev.u);
                diff
            }
        };
        let (mut du, mut dux) = (buf(), buf());

        for cell in 0..space.cell_count() {
            let h = space.mesh().cell_size(cell);
            self.guess.u.cell_quad_values(cell, &mut u1, &mut u1x, None);
            diff.cell_quad_values(cell, &mut du, &mut dux, None);
            for k in 0..np * d {
                un[k] = u1[k] - du[k];
                unx[k] = u1x[k] - dux[k];
            }
            self.guess.v.cell_quad_values(cell, &mut v, &mut vx, None);
            self.guess.w.cell_quad_values(cell, &mut w, &mut wx, None);
            rloc.iter_mut().for_each(|x| *x = 0.0);
            if self.matrix.is_some() {
                kloc.iter_mut().for_each(|x| *x = 0.0);
                pcol.iter_mut().for_each(|x| *x = 0.0);
                prow.iter_mut().for_each(|x| *x = 0.0);
            }

            for p in 0..np {
                let wt = weights[p] * h;
                let r = p * d..(p + 1) * d;
                let (un, unx, u1, u1x) = (&un[r.clone()], &unx[r.clone()], &u1[r.clone()], &u1x[r.clone()]);
                let (vp, vxp, wp) = (&v[r.clone()], &vx[r.clone()], &w[r.clone()]);
                let mut a = [0.0; MAX_COMPONENTS];
                let mut ax = [0.0; MAX_COMPONENTS];
                let a = &mut a[..d];
                let ax = &mut ax[..d];
                for c in 0..d {
                    a[c] = 0.5 * (un[c] + u1[c]);
                    ax[c] = 0.5 * (unx[c] + u1x[c]);
                }
                let nn = dot(un, un);
                let n1 = dot(u1, u1);
                let aa = dot(a, a);
                let axa = dot(ax, a);
                // discrete gradient of ⅛|u|⁴ between the two levels
                let kappa = 0.25 * (nn + n1);
                for b in 0..nl {
                    phi[b] = t.value(p, b);
                    dphi[b] = t.deriv(p, b) / h;
                }

                // pointwise integrands, then tested against every local basis function
                let mut pt = [[0.0; 3]; MAX_COMPONENTS];
                for c in 0..d {
                    let g = aa * ax[c] - axa * a[c];
                    pt[c] = [
                        du[p * d + c] / tau + vxp[c] + wp[c],
                        vp[c] - kappa * a[c],
                        wp[c] - g + p_mult * vp[c],
                    ];
                }
                for aidx in 0..nl {
                    let (f, df) = (phi[aidx] * wt, dphi[aidx] * wt);
                    for c in 0..d {
                        let [ru, rv, rw] = pt[c];
                        rloc[li(aidx, 0, c)] += ru * f;
                        rloc[li(aidx, 1, c)] += rv * f + ax[c] * df;
                        rloc[li(aidx, 2, c)] += rw * f;
                    }
                }
                rp += wt * dot(vp, wp);

                if self.matrix.is_none() {
                    continue;
                }
                // pointwise d×d couplings with respect to the new-level U
                for c in 0..d {
                    for e in 0..d {
                        let delta = if c == e { 1.0 } else { 0.0 };
                        avu[c * d + e] = -0.5 * (u1[e] * a[c] + kappa * delta);
                        // ∂g_c/∂a_e and ∂g_c/∂(a_x)_e, times ∂a/∂U = ½
                        gwu[c * d + e] = -0.5 * (2.0 * a[e] * ax[c] - ax[e] * a[c] - axa * delta);
                        hwu[c * d + e] = -0.5 * (aa * delta - a[e] * a[c]);
                    }
                }
                for ai in 0..nl {
                    let (fa, dfa) = (phi[ai] * wt, dphi[ai] * wt);
                    for bi in 0..nl {
                        let mass = fa * phi[bi];
                        let adv = fa * dphi[bi];
                        let stiff = dfa * dphi[bi];
                        for c in 0..d {
                            let ru = li(ai, 0, c) * nloc;
                            let rv = li(ai, 1, c) * nloc;
                            let rw = li(ai, 2, c) * nloc;
                            kloc[ru + li(bi, 0, c)] += mass / tau;
                            kloc[ru + li(bi, 1, c)] += adv;
                            kloc[ru + li(bi, 2, c)] += mass;
                            kloc[rv + li(bi, 1, c)] += mass;
                            kloc[rv + li(bi, 0, c)] += 0.5 * stiff;
                            kloc[rw + li(bi, 2, c)] += mass;
                            kloc[rw + li(bi, 1, c)] += p_mult * mass;
                            for e in 0..d {
                                kloc[rv + li(bi, 0, e)] += avu[c * d + e] * mass;
                                kloc[rw + li(bi, 0, e)] += gwu[c * d + e] * mass + hwu[c * d + e] * adv;
                            }
                        }
                    }
                    for c in 0..d {
                        pcol[li(ai, 2, c)] += vp[c] * fa;
                        prow[li(ai, 1, c)] += wp[c] * fa;
                        prow[li(ai, 2, c)] += vp[c] * fa;
                    }
                }
            }

            for a in 0..nl {
                let j = space.dof(cell, a);
                for blk in 0..3 {
                    for c in 0..d {
                        let l = li(a, blk, c);
                        slots[l] = self.layout.node_slot(blk, c, j);
                        logical[l] = blk * d * self.layout.n + c * self.layout.n + j;
                    }
                }
            }
            for l in 0..nloc {
                self.residual[logical[l]] += rloc[l];
            }
            if let Some(m) = self.matrix.as_mut() {
                let ps = self.layout.multiplier_slot();
                for r in 0..nloc {
                    for c in 0..nloc {
                        let v = kloc[r * nloc + c];
                        if v != 0.0 {
                            m.add(slots[r], slots[c], v);
                        }
                    }
                    if pcol[r] != 0.0 {
                        m.add(slots[r], ps, pcol[r]);
                    }
                    if prow[r] != 0.0 {
                        m.add(ps, slots[r], prow[r]);
                    }
                }
            }
        }
        let mi = self.layout.multiplier();
        self.residual[mi] = rp;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(cells: usize, q: usize) -> Arc<LagrangeSpace> {
        LagrangeSpace::new(Mesh::uniform(2.0, cells).unwrap(), q).unwrap()
    }

    fn random_state(s: &Arc<LagrangeSpace>, d: usize, rng: &mut ChaCha8Rng) -> DiscreteState {
        let mut f = || {
            let c = (0..d * s.dof_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            FeField::from_coefficients(s.clone(), d, c).unwrap()
        };
        let (u, v, w) = (f(), f(), f());
        DiscreteState {
            u,
            v,
            w,
            p: rng.random_range(-1.0..1.0),
            t: 0.0,
        }
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let s = space(5, 2);
        let z = DiscreteState::zeros(s, 2);
        let r = assemble_residual(&z, &z, 0.1).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_w_nonlinearity_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = [rng.random_range(-2.0..2.0)];
            let ax = [rng.random_range(-2.0..2.0)];
            assert!(w_nonlinearity(&a, &ax)[0].abs() < 1e-15);
        }
    }

    #[test]
    fn w_nonlinearity_is_orthogonal_to_its_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 2..=4 {
            for _ in 0..50 {
                let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let ax: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = w_nonlinearity(&a, &ax);
                assert!(dot(&g, &a).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn linear_mass_pattern() {
        let s = LagrangeSpace::new(Mesh::uniform(1.0, 8).unwrap(), 1).unwrap();
        let h = 0.125;
        let m = assemble_mass(&s, s.quadrature());
        for i in 0..8 {
            let prev = (i + 7) % 8;
            let next = (i + 1) % 8;
            assert!((mass_entry(&s, &m, i, prev) - h / 6.0).abs() < 1e-15);
            assert!((mass_entry(&s, &m, i, i) - 2.0 * h / 3.0).abs() < 1e-15);
            assert!((mass_entry(&s, &m, i, next) - h / 6.0).abs() < 1e-15);
            let row: f64 = (0..8).map(|j| mass_entry(&s, &m, i, j)).sum();
            assert!((row - h).abs() < 1e-15);
        }
    }

    #[test]
    fn mass_is_symmetric() {
        for q in 1..=3 {
            let s = space(5, q);
            let m = assemble_mass(&s, s.quadrature());
            let n = s.dof_count();
            for i in 0..n {
                for j in 0..n {
                    assert!((mass_entry(&s, &m, i, j) - mass_entry(&s, &m, j, i)).abs() < 1e-16);
                }
            }
        }
    }

    #[test]
    fn mass_solve_matches_dense_oracle() {
        let s = space(4, 2);
        let n = s.dof_count();
        let m = assemble_mass(&s, s.quadrature());
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| mass_entry(&s, &m, i, j));
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let oracle = dense.lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let mut x = b.clone();
        s.mass_solve(&mut x);
        for (a, o) in x.iter().zip(oracle.iter()) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_jacobian_diagonal_blocks_are_mass() {
        let s = space(4, 2);
        let z = DiscreteState::zeros(s.clone(), 2);
        let sys = assemble_jacobian(&z, &z, 0.5).unwrap();
        let lay = sys.layout().clone();
        let m = assemble_mass(&s, s.quadrature());
        let n = s.dof_count();
        for blk in [Block::V, Block::W] {
            for c in 0..2 {
                for i in 0..n {
                    for j in 0..n {
                        let got = sys.get(lay.index(blk, c, i), lay.index(blk, c, j));
                        assert!((got - mass_entry(&s, &m, i, j)).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn multiplier_column_vanishes_with_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = space(4, 2);
        let mut st = random_state(&s, 2, &mut rng);
        st.v = FeField::zeros(s.clone(), 2);
        let sys = assemble_jacobian(&st, &st, 0.1).unwrap();
        let lay = sys.layout();
        let pc = lay.multiplier();
        for i in 0..lay.size() {
            assert_eq!(sys.get(i, pc), 0.0);
        }
        // the constraint row is retained, so the system is singular
        assert!(matches!(solve_block(sys.clone()), Err(Error::Singular { .. })));
        let mut pinned = sys;
        pinned.pin_multiplier(st.p);
        let upd = solve_block(pinned).unwrap();
        assert!((upd[pc] + st.p).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (q, d) in [(1, 2), (2, 2), (3, 3), (2, 1)] {
            let s = space(5, q);
            let prev = random_state(&s, d, &mut rng);
            let guess = random_state(&s, d, &mut rng);
            let tau = 0.3;
            let sys = assemble_jacobian(&prev, &guess, tau).unwrap();
            for _ in 0..3 {
                let dir: Vec<f64> = (0..sys.layout().size()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let jd = sys.matvec(&dir);
                let eps = 1e-6;
                let mut plus = guess.clone();
                plus.apply_update(&dir, eps);
                let mut minus = guess.clone();
                minus.apply_update(&dir, -eps);
                let rp = assemble_residual(&prev, &plus, tau).unwrap();
                let rm = assemble_residual(&prev, &minus, tau).unwrap();
                let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
                let num: f64 = jd.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(num / den <= 1e-6, "q={q} d={d} rel={}", num / den);
            }
        }
    }

    #[test]
    fn weak_derivative_is_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for q in 1..=3 {
            let s = space(6, q);
            let st = random_state(&s, 1, &mut rng);
            // ∫ V_x Φ + ∫ V Φ_x = 0 for periodic fields
            let (v, phi) = (&st.v, &st.w);
            let np = s.quadrature().len();
            let (mut a, mut ax, mut b, mut bx) = (vec![0.0; np], vec![0.0; np], vec![0.0; np], vec![0.0; np]);
            let mut total = 0.0;
            for m in 0..s.cell_count() {
                v.cell_quad_values(m, &mut a, &mut ax, None);
                phi.cell_quad_values(m, &mut b, &mut bx, None);
                let h = s.mesh().cell_size(m);
                for p in 0..np {
                    total += s.quadrature().weights()[p] * h * (ax[p] * b[p] + a[p] * bx[p]);
                }
            }
            assert!(total.abs() < 1e-13, "q={q}: {total}");
        }
    }

    #[test]
    fn residual_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = space(6, 2);
        let prev = random_state(&s, 2, &mut rng);
        let guess = random_state(&s, 2, &mut rng);
        let th: f64 = 0.7;
        let rot = [th.cos(), -th.sin(), th.sin(), th.cos()];
        let r = assemble_residual(&prev, &guess, 0.2).unwrap();
        let rr = assemble_residual(&prev.transform(&rot), &guess.transform(&rot), 0.2).unwrap();
        let lay = prev.layout();
        let n = s.dof_count();
        for blk in [Block::U, Block::V, Block::W] {
            for j in 0..n {
                let x = r[lay.index(blk, 0, j)];
                let y = r[lay.index(blk, 1, j)];
                let rx = rot[0] * x + rot[1] * y;
                let ry = rot[2] * x + rot[3] * y;
                assert!((rr[lay.index(blk, 0, j)] - rx).abs() < 1e-13);
                assert!((rr[lay.index(blk, 1, j)] - ry).abs() < 1e-13);
            }
        }
        let m = lay.multiplier();
        assert!((rr[m] - r[m]).abs() < 1e-13);
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let a = DiscreteState::zeros(space(4, 1), 2);
        let b = DiscreteState::zeros(space(5, 1), 2);
        assert!(matches!(assemble_residual(&a, &b, 0.1), Err(Error::Usage(_))));
    }
}
