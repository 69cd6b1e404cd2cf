//! Newton solve of one time step and the time-marching driver.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_jacobian, assemble_residual, assemble_residual_increment, DiscreteState, FactoredSystem};
use crate::error::{Error, Result};
use crate::field::FeField;
use crate::metrics::{self, ErrorSeries, InvariantRow, InvariantSeries};
use crate::space::LagrangeSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Absolute tolerance on the max-norm of the weak residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Backtrack on the residual norm instead of taking full steps.
    pub damping: bool,
    /// Keep the factorised Jacobian across iterations and steps.
    pub reuse_jacobian: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-12,
            max_iterations: 50,
            damping: false,
            reuse_jacobian: false,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::config("newton.tolerance", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("newton.max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Residual evaluations, so a step that starts converged reports 1.
    pub iterations: usize,
    pub residual: f64,
    pub p: f64,
    pub constraint: f64,
    /// Whether any iterate replaced the constraint row by `P = 0`.
    pub pinned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Project,
    Interpolate,
}

/// `V` and `W` from their defining equations at a single level `U`.
pub fn auxiliary_fields(u: &FeField) -> Result<(FeField, FeField)> {
    let space = u.space().clone();
    let d = u.components();
    let mut state = DiscreteState::zeros(space.clone(), d);
    state.u = u.clone();
    // with Uⁿ = U and V = W = P = 0 the V and W residuals are −M V, −M W
    let r = assemble_residual(&state, &state, 1.0)?;
    let n = space.dof_count();
    let dn = d * n;
    let mut out = Vec::with_capacity(2);
    for blk in 1..3 {
        let mut coeffs: Vec<f64> = r[blk * dn..(blk + 1) * dn].iter().map(|v| -v).collect();
        for c in 0..d {
            space.mass_solve(&mut coeffs[c * n..(c + 1) * n]);
        }
        out.push(FeField::from_coefficients(space.clone(), d, coeffs)?);
    }
    let w = out.pop().expect("two fields");
    let v = out.pop().expect("two fields");
    Ok((v, w))
}

/// `U⁰` from the initial data, with `V⁰`, `W⁰` as diagnostics and `P = 0`.
pub fn initial_state(
    space: Arc<LagrangeSpace>,
    d: usize,
    ic: impl Fn(f64) -> Vec<f64>,
    mode: InitMode,
) -> Result<DiscreteState> {
    let u = match mode {
        InitMode::Project => FeField::l2_project(space.clone(), d, ic, space.quadrature())?,
        InitMode::Interpolate => FeField::interpolate(space.clone(), d, ic)?,
    };
    let (v, w) = auxiliary_fields(&u)?;
    Ok(DiscreteState { u, v, w, p: 0.0, t: 0.0 })
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

/// `‖V‖ < 10⁻¹⁰ ‖U‖_{H¹}`: the multiplier column is then numerically zero.
fn v_is_degenerate(x: &DiscreteState) -> bool {
    let v2 = x.v.integrate(|_, v, _| crate::field::dot(v, v));
    let u2 = x.u.integrate(|_, u, ux| crate::field::dot(u, u) + crate::field::dot(ux, ux));
    v2 == 0.0 || v2 < 1e-20 * u2
}

/// Newton solver that can keep one factorised Jacobian alive across
/// iterations and steps.
///
/// With `reuse_jacobian` off every iteration assembles and factors a fresh
/// Jacobian. With it on, the last factorisation is reused (a chord method)
/// and refreshed whenever an iteration fails to cut the residual by
/// `REFRESH_RATIO`. If a chord step fails, it is retried once with full
/// Newton from the same initial guess. Both stop on the same residual
/// tolerance.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: NewtonConfig,
    cached: Option<(f64, FactoredSystem)>,
    factorisations: usize,
}

const REFRESH_RATIO: f64 = 0.5;

impl Stepper {
    pub fn new(cfg: NewtonConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Stepper {
            cfg,
            cached: None,
            factorisations: 0,
        })
    }

    pub fn config(&self) -> &NewtonConfig {
        &self.cfg
    }

    /// Jacobian factorisations performed so far.
    pub fn factorisations(&self) -> usize {
        self.factorisations
    }

    fn factorise(&mut self, prev: &DiscreteState, x: &DiscreteState, tau: f64, pin: bool) -> Result<FactoredSystem> {
        let mut sys = assemble_jacobian(prev, x, tau)?;
        if pin {
            sys.pin_multiplier(x.p);
        }
        self.factorisations += 1;
        match sys.clone().factor() {
            Ok(lu) => Ok(lu),
            Err(Error::Singular { .. }) if !pin => {
                sys.pin_multiplier(x.p);
                sys.factor()
            }
            Err(e) => Err(e),
        }
    }

    /// Advances `prev` by `tau`.
    pub fn step(&mut self, prev: &DiscreteState, tau: f64) -> Result<(DiscreteState, StepStats)> {
        if !self.cfg.reuse_jacobian {
            return self.solve(prev, tau, false);
        }
        match self.solve(prev, tau, true) {
            Err(Error::NewtonFailure { iterations, .. }) => self.retry(prev, tau, iterations),
            Err(Error::Singular { .. }) => self.retry(prev, tau, 0),
            other => other,
        }
    }

    fn retry(&mut self, prev: &DiscreteState, tau: f64, spent: usize) -> Result<(DiscreteState, StepStats)> {
        self.cached = None;
        let add = |n: usize| n + spent;
        match self.solve(prev, tau, false) {
            Ok((x, mut stats)) => {
                stats.iterations = add(stats.iterations);
                Ok((x, stats))
            }
            Err(Error::NewtonFailure { step, iterations, residual, multiplier }) => Err(Error::NewtonFailure {
                step,
                iterations: add(iterations),
                residual,
                multiplier,
            }),
            Err(e) => Err(e),
        }
    }

    fn solve(&mut self, prev: &DiscreteState, tau: f64, reuse: bool) -> Result<(DiscreteState, StepStats)> {
        let cfg = self.cfg;
        let mut x = prev.clone();
        let (v, w) = auxiliary_fields(&prev.u)?;
        x.v = v;
        x.w = w;
        x.p = 0.0;
        x.t = prev.t + tau;
        let pin = v_is_degenerate(&x);
        if !reuse || self.cached.as_ref().is_some_and(|(t, lu)| *t != tau || lu.is_pinned() != pin) {
            self.cached = None;
        }

        let mut du = FeField::zeros(prev.space().clone(), prev.components());
        let mut residual = assemble_residual_increment(prev, &x, &du, tau)?;
        let mut norm = max_abs(&residual);
        let mut evaluations = 1;
        let mut pinned_any = false;
        let mut fresh = false;
        let m = x.layout().multiplier();
        while !(norm <= cfg.tolerance) {
            if evaluations > cfg.max_iterations || !norm.is_finite() {
                self.cached = None;
                return Err(Error::NewtonFailure {
                    step: None,
                    iterations: evaluations,
                    residual: norm,
                    multiplier: x.p,
                });
            }
            if self.cached.is_none() {
                let lu = self.factorise(prev, &x, tau, pin)?;
                self.cached = Some((tau, lu));
                fresh = true;
            }
            let lu = &self.cached.as_ref().expect("factorisation present").1;
            pinned_any |= lu.is_pinned();
            let mut r = residual.clone();
            if lu.is_pinned() {
                r[m] = x.p;
            }
            let delta = lu.newton_update(&r);

            let old = norm;
            if cfg.damping {
                let mut scale = 1.0;
                loop {
                    let (mut trial, mut trial_du) = (x.clone(), du.clone());
                    apply_increment(prev, &mut trial, &mut trial_du, &delta, scale);
                    let r = assemble_residual_increment(prev, &trial, &trial_du, tau)?;
                    evaluations += 1;
                    let n = max_abs(&r);
                    if n < norm || scale < 1e-3 {
                        x = trial;
                        du = trial_du;
                        residual = r;
                        norm = n;
                        break;
                    }
                    scale *= 0.5;
                }
            } else {
                apply_increment(prev, &mut x, &mut du, &delta, 1.0);
                residual = assemble_residual_increment(prev, &x, &du, tau)?;
                norm = max_abs(&residual);
                evaluations += 1;
            }
            let stalled = norm > cfg.tolerance && norm > REFRESH_RATIO * old && !fresh;
            if !reuse || stalled || !norm.is_finite() {
                self.cached = None;
            }
            fresh = false;
        }
        if !reuse {
            self.cached = None;
        }
        let constraint = residual[m];
        let stats = StepStats {
            iterations: evaluations,
            residual: norm,
            p: x.p,
            constraint,
            pinned: pinned_any,
        };
        Ok((x, stats))
    }
}

// The U-block of `delta` accumulates into `du`; `U` is rebuilt from `Uⁿ + du`.
fn apply_increment(prev: &DiscreteState, x: &mut DiscreteState, du: &mut FeField, delta: &[f64], scale: f64) {
    for (a, b) in du.coefficients_mut().iter_mut().zip(delta) {
        *a += scale * b;
    }
    x.apply_update(delta, scale);
    x.u.coefficients_mut().copy_from_slice(prev.u.coefficients());
    x.u.axpy(1.0, du);
}

/// Advances `prev` by `tau` with a fresh solver.
pub fn step(prev: &DiscreteState, tau: f64, cfg: &NewtonConfig) -> Result<(DiscreteState, StepStats)> {
    Stepper::new(*cfg)?.step(prev, tau)
}

/// Invariants of a state, as recorded after every step.
pub fn invariant_row(state: &DiscreteState, step: usize, stats: Option<&StepStats>) -> Result<InvariantRow> {
    Ok(InvariantRow {
        step,
        t: state.t,
        f2: metrics::momentum_f2(&state.u),
        f4: metrics::energy_f4(&state.u),
        f6: metrics::hierarchy_f6(&state.u),
        p: state.p,
        // After a step this is the ∫V·W row of the residual Newton accepted;
        // recomputing it differs only by rounding.
        constraint: match stats {
            Some(s) => s.constraint,
            None => metrics::constraint(&state.v, &state.w)?,
        },
        newton_iters: stats.map_or(0, |s| s.iterations),
        residual: stats.map_or(0.0, |s| s.residual),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub tau: f64,
    pub steps: usize,
    pub newton: NewtonConfig,
    /// Compare against the exact solution every this many steps.
    pub error_every: usize,
}

impl RunOptions {
    pub fn new(tau: f64, steps: usize) -> Self {
        RunOptions {
            tau,
            steps,
            newton: NewtonConfig::default(),
            error_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub invariants: InvariantSeries,
    pub errors: Option<ErrorSeries>,
    pub final_state: DiscreteState,
    /// Jacobian factorisations over the whole run.
    pub factorisations: usize,
}

/// Exact solution `u(x, t)` used for error tracking.
pub type ExactFn<'a> = &'a dyn Fn(f64, f64) -> Vec<f64>;

/// Marches `steps` uniform steps from `initial`. The observer sees the
/// initial state and every accepted step, and may abort the run.
pub fn run(
    initial: DiscreteState,
    opts: &RunOptions,
    exact: Option<ExactFn<'_>>,
    mut observer: impl FnMut(usize, &DiscreteState, &InvariantRow) -> Result<()>,
) -> Result<RunOutput> {
    opts.newton.validate()?;
    if !(opts.tau.is_finite() && opts.tau != 0.0) {
        return Err(Error::config("tau", "time step must be finite and non-zero"));
    }
    if opts.error_every == 0 {
        return Err(Error::config("error_every", "must be at least 1"));
    }
    let mut invariants = InvariantSeries::new();
    let mut errors = exact.map(|_| ErrorSeries::new());
    let track = |errors: &mut Option<ErrorSeries>, s: &DiscreteState| {
        if let (Some(series), Some(f)) = (errors.as_mut(), exact) {
            series.push(s.t, metrics::l2_errors(&s.u, |x| f(x, s.t)));
        }
    };

    let row = invariant_row(&initial, 0, None)?;
    observer(0, &initial, &row)?;
    invariants.push(row)?;
    track(&mut errors, &initial);

    let mut stepper = Stepper::new(opts.newton)?;
    let mut state = initial;
    for n in 1..=opts.steps {
        let (next, stats) = stepper.step(&state, opts.tau).map_err(|e| match e {
            Error::NewtonFailure {
                iterations,
                residual,
                multiplier,
                ..
            } => Error::NewtonFailure {
                step: Some(n),
                iterations,
                residual,
                multiplier,
            },
            other => other,
        })?;
        // keep t free of accumulated rounding
        let mut next = next;
        next.t = invariants.rows()[0].t + n as f64 * opts.tau;
        let row = invariant_row(&next, n, Some(&stats))?;
        observer(n, &next, &row)?;
        invariants.push(row)?;
        if n % opts.error_every == 0 || n == opts.steps {
            track(&mut errors, &next);
        }
        state = next;
    }
    Ok(RunOutput {
        invariants,
        errors,
        final_state: state,
        factorisations: stepper.factorisations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{one_soliton, trig_ic, SolitonParams};
    use crate::mesh::Mesh;

    fn space(len: f64, cells: usize, q: usize) -> Arc<LagrangeSpace> {
        LagrangeSpace::new(Mesh::uniform(len, cells).unwrap(), q).unwrap()
    }

    fn trig_state(cells: usize, q: usize) -> DiscreteState {
        initial_state(space(40.0, cells, q), 2, trig_ic, InitMode::Project).unwrap()
    }

    #[test]
    fn zero_state_is_fixed() {
        let z = DiscreteState::zeros(space(10.0, 5, 2), 2);
        let (next, stats) = step(&z, 0.1, &NewtonConfig::default()).unwrap();
        assert_eq!(stats.iterations, 1);
        assert!(next.to_vector().iter().all(|&v| v == 0.0));
        assert_eq!(next.t, 0.1);
    }

    #[test]
    fn auxiliary_fields_of_a_constant() {
        // v = ½|u|²u, w = 0 for constant u
        let s = space(10.0, 5, 2);
        let u = FeField::interpolate(s, 2, |_| vec![0.6, 0.8]).unwrap();
        let (v, w) = auxiliary_fields(&u).unwrap();
        for j in 0..v.space().dof_count() {
            assert!((v.component(0)[j] - 0.3).abs() < 1e-13);
            assert!((v.component(1)[j] - 0.4).abs() < 1e-13);
        }
        assert!(w.coefficients().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn energy_and_constraint_after_one_step() {
        for q in 1..=3 {
            let s0 = trig_state(20, q);
            let (s1, stats) = step(&s0, 0.01, &NewtonConfig::default()).unwrap();
            let (f0, f1) = (metrics::energy_f4(&s0.u), metrics::energy_f4(&s1.u));
            assert!((f1 - f0).abs() < 1e-12, "q={q} ΔF4 = {}", f1 - f0);
            assert!(stats.constraint.abs() <= 1e-12);
            let recomputed = metrics::constraint(&s1.v, &s1.w).unwrap();
            assert!((recomputed - stats.constraint).abs() < 1e-14);
            assert_eq!(invariant_row(&s1, 1, Some(&stats)).unwrap().constraint, stats.constraint);
            assert!(stats.residual <= 1e-12);
            assert!(stats.p != 0.0, "trig data needs the multiplier");
            assert!(stats.iterations <= 8, "{stats:?}");
        }
    }

    #[test]
    fn time_reversal() {
        let s0 = trig_state(16, 2);
        let cfg = NewtonConfig::default();
        let (s1, _) = step(&s0, 0.02, &cfg).unwrap();
        let (back, _) = step(&s1, -0.02, &cfg).unwrap();
        let diff = back
            .u
            .coefficients()
            .iter()
            .zip(s0.u.coefficients())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 100.0 * cfg.tolerance, "{diff}");
        assert!(back.t.abs() < 1e-15);
    }

    #[test]
    fn scalar_problem_keeps_w_zero() {
        let s = space(40.0, 20, 2);
        let p = SolitonParams::new(1.0, 20.0, vec![1.0]).unwrap();
        let init = initial_state(s, 1, |x| one_soliton(&p, x, 0.0), InitMode::Project).unwrap();
        let mut opts = RunOptions::new(0.01, 5);
        opts.error_every = 5;
        let out = run(init, &opts, None, |_, st, _| {
            assert!(st.w.coefficients().iter().all(|x| x.abs() <= 1e-12));
            Ok(())
        })
        .unwrap();
        assert_eq!(out.invariants.len(), 6);
    }

    #[test]
    fn zero_length_run() {
        let init = trig_state(8, 1);
        let exact = |x: f64, _t: f64| trig_ic(x);
        let mut seen = 0;
        let out = run(init, &RunOptions::new(0.1, 0), Some(&exact), |_, _, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 1);
        assert_eq!(out.invariants.len(), 1);
        assert_eq!(out.errors.unwrap().times(), &[0.0]);
    }

    #[test]
    fn newton_failure_carries_step() {
        let init = trig_state(8, 1);
        let mut opts = RunOptions::new(0.5, 3);
        opts.newton.max_iterations = 1;
        match run(init, &opts, None, |_, _, _| Ok(())) {
            Err(Error::NewtonFailure { step, iterations, .. }) => {
                assert_eq!(step, Some(1));
                assert_eq!(iterations, 2);
            }
            other => panic!("expected a Newton failure, got {other:?}"),
        }
    }

    #[test]
    fn projection_converges_at_optimal_rate() {
        let p = SolitonParams::benchmark();
        let errs: Vec<f64> = [40, 80, 160]
            .iter()
            .map(|&m| {
                let st = initial_state(space(40.0, m, 2), 2, |x| one_soliton(&p, x, 0.0), InitMode::Project).unwrap();
                let e = metrics::l2_errors(&st.u, |x| one_soliton(&p, x, 0.0));
                (e[0] * e[0] + e[1] * e[1]).sqrt()
            })
            .collect();
        let rates = metrics::eoc(&errs, &[1.0, 0.5, 0.25]).unwrap();
        assert!((rates[1] - 3.0).abs() < 0.2, "{rates:?}");
    }

    #[test]
    fn config_validation() {
        let bad = NewtonConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NewtonConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
