//! Closed-form soliton solutions, benchmark initial data and a
//! finite-difference residual of the continuous equation.

use crate::error::{Error, Result};
use crate::field::dot;

fn check_unit(field: &str, e: &[f64]) -> Result<()> {
    if e.is_empty() {
        return Err(Error::config(field, "direction must have at least one component"));
    }
    let n = dot(e, e).sqrt();
    if (n - 1.0).abs() > 1e-14 {
        return Err(Error::config(field, format!("direction must be a unit vector, |E| = {n}")));
    }
    Ok(())
}

/// Parameters of `u = 2μ sech(ξ) E`, `ξ = μ(x − c) − μ³ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitonParams {
    pub mu: f64,
    pub shift: f64,
    pub direction: Vec<f64>,
}

impl SolitonParams {
    pub fn new(mu: f64, shift: f64, direction: Vec<f64>) -> Result<Self> {
        if mu == 0.0 || !mu.is_finite() {
            return Err(Error::config("mu", "speed parameter must be finite and non-zero"));
        }
        check_unit("direction", &direction)?;
        Ok(SolitonParams { mu, shift, direction })
    }

    /// The benchmark soliton: `μ = 1`, `c = 20`, `E = (0.8, 0.6)`.
    pub fn benchmark() -> Self {
        SolitonParams {
            mu: 1.0,
            shift: 20.0,
            direction: vec![0.8, (1.0_f64 - 0.8 * 0.8).sqrt()],
        }
    }

    pub fn phase(&self, x: f64, t: f64) -> f64 {
        self.mu * (x - self.shift) - self.mu.powi(3) * t
    }
}

pub fn one_soliton(p: &SolitonParams, x: f64, t: f64) -> Vec<f64> {
    let amp = 2.0 * p.mu / p.phase(x, t).cosh();
    p.direction.iter().map(|e| amp * e).collect()
}

/// Parameters of the two-soliton solution with per-soliton shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSolitonParams {
    pub mu: f64,
    pub nu: f64,
    pub shift_mu: f64,
    pub shift_nu: f64,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl TwoSolitonParams {
    pub fn new(mu: f64, nu: f64, shift_mu: f64, shift_nu: f64, e1: Vec<f64>, e2: Vec<f64>) -> Result<Self> {
        if (mu.abs() - nu.abs()).abs() == 0.0 {
            return Err(Error::config("nu", "two-soliton parameters need mu != ±nu"));
        }
        if !(mu.is_finite() && nu.is_finite()) {
            return Err(Error::config("mu", "speed parameters must be finite"));
        }
        check_unit("e1", &e1)?;
        check_unit("e2", &e2)?;
        if e1.len() != e2.len() {
            return Err(Error::config("e2", "e1 and e2 must have the same dimension"));
        }
        Ok(TwoSolitonParams {
            mu,
            nu,
            shift_mu,
            shift_nu,
            e1,
            e2,
        })
    }

    /// Orthogonal polarisations, `μ = √2`, `ν = √3`, `c_μ = 25.1`, `c_ν = 24.9`.
    pub fn benchmark() -> Self {
        TwoSolitonParams {
            mu: 2f64.sqrt(),
            nu: 3f64.sqrt(),
            shift_mu: 25.1,
            shift_nu: 24.9,
            e1: vec![1.0, 0.0],
            e2: vec![0.0, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.e1.len()
    }
}

/// `(F_{μ,ν} E₁ + F_{ν,μ} E₂)/G` with `F_{k,l} = 2(l² − k²) l cosh ξ_k`.
///
/// Numerator and denominator are divided by `cosh ξ_μ cosh ξ_ν` so the
/// evaluation never overflows far from the solitons.
pub fn two_soliton(p: &TwoSolitonParams, x: f64, t: f64) -> Vec<f64> {
    let (mu, nu) = (p.mu, p.nu);
    let xm = mu * (x - p.shift_mu) - mu.powi(3) * t;
    let xn = nu * (x - p.shift_nu) - nu.powi(3) * t;
    let (sm, sn) = (1.0 / xm.cosh(), 1.0 / xn.cosh());
    let e12 = dot(&p.e1, &p.e2);
    let g = (mu * mu + nu * nu) - 2.0 * mu * nu * xm.tanh() * xn.tanh() - 2.0 * mu * nu * e12 * sm * sn;
    // g ≥ (|μ| − |ν|)² > 0 for admissible parameters
    debug_assert!(g > 0.0, "two-soliton denominator vanished");
    let c1 = 2.0 * (nu * nu - mu * mu) * nu * sn / g;
    let c2 = 2.0 * (mu * mu - nu * nu) * mu * sm / g;
    p.e1.iter().zip(&p.e2).map(|(a, b)| c1 * a + c2 * b).collect()
}

/// Superposition of one-soliton profiles at `t = 0`.
pub fn three_soliton_ic(params: &[SolitonParams; 3], x: f64) -> Vec<f64> {
    let d = params[0].direction.len();
    let mut u = vec![0.0; d];
    for p in params {
        for (ui, v) in u.iter_mut().zip(one_soliton(p, x, 0.0)) {
            *ui += v;
        }
    }
    u
}

/// Default three-soliton data: `μ = (19/10, −40/25, 13/10)`, `c = (4, 12, 21)`.
pub fn three_soliton_benchmark() -> [SolitonParams; 3] {
    [
        SolitonParams {
            mu: 19.0 / 10.0,
            shift: 4.0,
            direction: vec![1.0, 0.0],
        },
        SolitonParams {
            mu: -40.0 / 25.0,
            shift: 12.0,
            direction: vec![0.0, 1.0],
        },
        SolitonParams {
            mu: 13.0 / 10.0,
            shift: 21.0,
            direction: vec![1.0, 0.0],
        },
    ]
}

/// `(sin(πx/20), cos(πx/10))`.
pub fn trig_ic(x: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    vec![(PI * x / 20.0).sin(), (PI * x / 10.0).cos()]
}

/// First component is 1 on `[10, 20]`, second is 0 on `[20, 30]`; both
/// intervals are closed, so the jump nodes take the inside value.
pub fn box_ic(x: f64) -> Vec<f64> {
    let u1 = if (10.0..=20.0).contains(&x) { 1.0 } else { 0.0 };
    let u2 = if (20.0..=30.0).contains(&x) { 0.0 } else { 1.0 };
    vec![u1, u2]
}

/// Fourth-order central-difference estimate of `u_t + (3/2)|u|² u_x + u_xxx`.
pub fn pde_residual_fd(u: impl Fn(f64, f64) -> Vec<f64>, x: f64, t: f64, h: f64) -> Vec<f64> {
    let center = u(x, t);
    let d = center.len();
    let ux_at = |k: f64| u(x + k * h, t);
    let ut_at = |k: f64| u(x, t + k * h);
    let (xm3, xm2, xm1, xp1, xp2, xp3) = (ux_at(-3.0), ux_at(-2.0), ux_at(-1.0), ux_at(1.0), ux_at(2.0), ux_at(3.0));
    let (tm2, tm1, tp1, tp2) = (ut_at(-2.0), ut_at(-1.0), ut_at(1.0), ut_at(2.0));
    let uu = dot(&center, &center);
    (0..d)
        .map(|c| {
            let ut = (-tp2[c] + 8.0 * tp1[c] - 8.0 * tm1[c] + tm2[c]) / (12.0 * h);
            let ux = (-xp2[c] + 8.0 * xp1[c] - 8.0 * xm1[c] + xm2[c]) / (12.0 * h);
            let uxxx = (-xp3[c] + 8.0 * xp2[c] - 13.0 * xp1[c] + 13.0 * xm1[c] - 8.0 * xm2[c] + xm3[c])
                / (8.0 * h * h * h);
            ut + 1.5 * uu * ux + uxxx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    #[test]
    fn peak_values() {
        let p = SolitonParams::new(1.5, 3.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(one_soliton(&p, 3.0, 0.0), vec![0.0, 3.0]);
        let b = SolitonParams::benchmark();
        let u = one_soliton(&b, 20.0, 0.0);
        assert!((u[0] - 1.6).abs() < 1e-15 && (u[1] - 1.2).abs() < 1e-15, "{u:?}");
    }

    #[test]
    fn parameter_validation() {
        assert!(SolitonParams::new(0.0, 0.0, vec![1.0]).is_err());
        assert!(SolitonParams::new(1.0, 0.0, vec![1.0, 1.0]).is_err());
        let e = vec![0.9, 19f64.sqrt() / 10.0];
        let f = vec![0.1, 3.0 * 11f64.sqrt() / 10.0];
        assert!(TwoSolitonParams::new(2f64.sqrt(), 3f64.sqrt(), 13.0, 10.0, e.clone(), f).is_ok());
        assert!(TwoSolitonParams::new(1.0, -1.0, 0.0, 0.0, e.clone(), e).is_err());
    }

    #[test]
    fn one_soliton_solves_the_pde() {
        // The stencil's floor in double precision sits near 3e-8 at the peak:
        // roundoff grows like ε/h³ and truncation like h⁴.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = SolitonParams::benchmark();
        for _ in 0..200 {
            let x = rng.random_range(0.0..40.0);
            let t = rng.random_range(0.0..10.0);
            let r = pde_residual_fd(|x, t| one_soliton(&p, x, t), x, t, 5e-3);
            assert!(norm(&r) < 1e-7, "x={x} t={t} r={r:?}");
        }
    }

    fn fourth_order_ratio(u: impl Fn(f64, f64) -> Vec<f64>, x: f64, t: f64, h: f64) -> f64 {
        norm(&pde_residual_fd(&u, x, t, h)) / norm(&pde_residual_fd(&u, x, t, h / 2.0))
    }

    #[test]
    fn fd_residual_fourth_order_on_soliton() {
        let p = SolitonParams::new(1.3, 0.0, vec![0.6, 0.8]).unwrap();
        let ratio = fourth_order_ratio(|x, t| one_soliton(&p, x, t), 0.7, 0.2, 0.08);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn fd_residual_controls() {
        // exact up to cancellation in the h⁻³ stencil
        let c = pde_residual_fd(|_, _| vec![0.3, -1.0], 1.0, 1.0, 0.01);
        assert!(norm(&c) < 1e-9);
        let r = pde_residual_fd(|x, t| vec![(x - t).sin(), 0.0], 0.4, 0.0, 0.01);
        assert!(norm(&r) > 0.1);
    }

    #[test]
    fn two_soliton_solves_the_pde() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let e = vec![0.9, 19f64.sqrt() / 10.0];
        let f = vec![0.1, 3.0 * 11f64.sqrt() / 10.0];
        let dyn_params = TwoSolitonParams::new(2f64.sqrt(), 3f64.sqrt(), 13.0, 10.0, e, f).unwrap();
        for p in [TwoSolitonParams::benchmark(), dyn_params] {
            let u = |x, t| two_soliton(&p, x, t);
            for _ in 0..100 {
                let x = rng.random_range(5.0..35.0);
                let t = rng.random_range(0.0..2.0);
                let r = pde_residual_fd(u, x, t, 5e-3);
                assert!(norm(&r) < 1e-5, "x={x} t={t} r={r:?}");
            }
            // halving the stencil near the interaction divides the residual by 16
            let (x, t) = (0.5 * (p.shift_mu + p.shift_nu) + 0.3, 0.05);
            let ratio = fourth_order_ratio(u, x, t, 0.04);
            assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
        }
    }

    #[test]
    fn two_soliton_matches_unscaled_formula() {
        let p = TwoSolitonParams::benchmark();
        for &(x, t) in &[(24.0, 0.1), (25.3, 0.3), (20.0, 1.0), (30.0, 0.0)] {
            let (mu, nu) = (p.mu, p.nu);
            let xm: f64 = mu * (x - p.shift_mu) - mu.powi(3) * t;
            let xn: f64 = nu * (x - p.shift_nu) - nu.powi(3) * t;
            let g = (mu * mu + nu * nu) * xm.cosh() * xn.cosh() - 2.0 * mu * nu * xm.sinh() * xn.sinh();
            let fmn = 2.0 * (nu * nu - mu * mu) * nu * xm.cosh();
            let fnm = 2.0 * (mu * mu - nu * nu) * mu * xn.cosh();
            let u = two_soliton(&p, x, t);
            assert!((u[0] - fmn / g).abs() < 1e-13);
            assert!((u[1] - fnm / g).abs() < 1e-13);
        }
        // reference values at t = 0, evaluated independently in 30-digit arithmetic
        let u = two_soliton(&p, 24.0, 0.1);
        assert!((u[0] - 1.75487477090531).abs() < 1e-13, "{}", u[0]);
        assert!((u[1] + 1.80434478379016).abs() < 1e-13, "{}", u[1]);
    }

    #[test]
    fn two_soliton_decays() {
        let p = TwoSolitonParams::benchmark();
        assert!(norm(&two_soliton(&p, 1e4, 0.0)) < 1e-300);
        assert!(norm(&two_soliton(&p, -1e4, 0.0)) < 1e-300);
        assert!(norm(&two_soliton(&p, 0.0, 0.0)).is_finite());
    }

    #[test]
    fn scaling_symmetry() {
        // ũ(x, t) = e^{-ε} u(e^{-ε} x, e^{-3ε} t) is the soliton with μ e^{-ε}, c e^{ε}
        let p = SolitonParams::new(1.2, 3.0, vec![0.6, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for eps in [-0.4, 0.1, 0.7] {
            let s = f64::exp(eps);
            let q = SolitonParams::new(p.mu / s, p.shift * s, p.direction.clone()).unwrap();
            for _ in 0..20 {
                let x = rng.random_range(-10.0..10.0);
                let t = rng.random_range(0.0..2.0);
                let lhs: Vec<f64> = one_soliton(&p, x / s, t / s.powi(3)).iter().map(|v| v / s).collect();
                let rhs = one_soliton(&q, x, t);
                for (a, b) in lhs.iter().zip(&rhs) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn three_soliton_data() {
        let ps = three_soliton_benchmark();
        assert!(norm(&three_soliton_ic(&ps, 39.9)) < 1e-6);
        let u = three_soliton_ic(&ps, 4.0);
        assert!((u[0] - 3.8).abs() < 1e-4, "{u:?}");
        let neg: [SolitonParams; 3] = ps.clone().map(|mut p| {
            p.direction.iter_mut().for_each(|e| *e = -*e);
            p
        });
        let (a, b) = (three_soliton_ic(&ps, 11.0), three_soliton_ic(&neg, 11.0));
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], -b[1]);
    }

    #[test]
    fn trig_and_box_values() {
        assert_eq!(trig_ic(0.0), vec![0.0, 1.0]);
        assert_eq!(box_ic(15.0), vec![1.0, 1.0]);
        assert_eq!(box_ic(25.0), vec![0.0, 0.0]);
        assert_eq!(box_ic(5.0), vec![0.0, 1.0]);
        assert_eq!(box_ic(10.0), vec![1.0, 1.0]);
        assert_eq!(box_ic(20.0), vec![1.0, 0.0]);
    }

    #[test]
    fn soliton_invariants_by_quadrature() {
        // closed forms F2 = 4μ, F4 = −4μ³/3, ∫|u_x|² = 8μ³/3, checked by
        // composite Gauss quadrature of the exact profile on [c − 40, c + 40]
        let rule = crate::quadrature::gauss_rule(10).unwrap();
        for mu in [1.0, 0.7] {
            let p = SolitonParams::new(mu, 0.0, vec![0.8, 0.6]).unwrap();
            let (mut f2, mut ux2, mut u4) = (0.0, 0.0, 0.0);
            for k in 0..800 {
                let a = -40.0 + 0.1 * k as f64;
                f2 += rule.integrate(a, a + 0.1, |x| 0.5 * dot(&one_soliton(&p, x, 0.0), &one_soliton(&p, x, 0.0)));
                ux2 += rule.integrate(a, a + 0.1, |x| {
                    let s = 1.0 / (mu * x).cosh();
                    let v = 2.0 * mu * mu * s * (mu * x).tanh();
                    v * v
                });
                u4 += rule.integrate(a, a + 0.1, |x| dot(&one_soliton(&p, x, 0.0), &one_soliton(&p, x, 0.0)).powi(2));
            }
            assert!((f2 - 4.0 * mu).abs() < 1e-12);
            assert!((ux2 - 8.0 * mu.powi(3) / 3.0).abs() < 1e-12);
            let f4 = 0.5 * ux2 - u4 / 8.0;
            assert!((f4 + 4.0 * mu.powi(3) / 3.0).abs() < 1e-12);
        }
    }
}
