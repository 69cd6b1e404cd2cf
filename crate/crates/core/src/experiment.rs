//! Experiment orchestration: configured runs with file output, convergence
//! sweeps, and the symbolic conservation report.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::assembly::DiscreteState;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::jet;
use crate::metrics::{self, ErrorSeries, InvariantRow, InvariantSeries};
use crate::output::{self, FailureMarker};
use crate::stepper::{initial_state, run, ExactFn, RunOptions, RunOutput};

/// Runs a configuration in memory. The observer sees every accepted state.
pub fn simulate(
    cfg: &RunConfig,
    observer: impl FnMut(usize, &DiscreteState, &InvariantRow) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let space = cfg.space()?;
    let solution = cfg.ic.solution()?;
    let initial = initial_state(space, cfg.dim(), |x| solution(x, 0.0), cfg.init_mode)?;
    let mut opts = RunOptions::new(cfg.tau, cfg.steps()?);
    opts.newton = cfg.newton;
    opts.error_every = cfg.error_every;
    let exact: Option<ExactFn<'_>> = if cfg.compare_exact { Some(&*solution) } else { None };
    run(initial, &opts, exact, observer)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub version: String,
    pub status: String,
    pub output_dir: PathBuf,
    pub steps_completed: usize,
    pub wall_seconds: f64,
    pub factorisations: Option<usize>,
    pub max_f2_deviation: f64,
    pub max_f4_deviation: f64,
    pub max_abs_constraint: f64,
    pub max_abs_multiplier: f64,
    /// Final `max_t ‖u − U‖` per component, when errors were tracked.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_l2_errors: Option<Vec<f64>>,
}

fn snapshot_due(cfg: &RunConfig, n: usize, steps: usize) -> bool {
    n == 0 || n == steps || (cfg.snapshot_every > 0 && n.is_multiple_of(cfg.snapshot_every))
}

/// Runs a configuration and writes its output directory:
/// `config.toml` (exact echo), `invariants.csv`, `snapshot_<step>.csv`,
/// `errors.csv` when errors are tracked, and `metadata.toml`.
///
/// A Newton failure still writes every file, with a failure marker closing
/// `invariants.csv`, and is then returned as the error.
pub fn run_to_disk(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    output::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;

    let steps = cfg.steps()?;
    let d = cfg.dim();
    let exact = cfg.ic.solution()?;
    let mut series = InvariantSeries::new();
    let mut errors = cfg.compare_exact.then(ErrorSeries::new);
    let started = Instant::now();

    let tracked = RunConfig {
        compare_exact: false,
        ..cfg.clone()
    };
    let result = simulate(&tracked, |n, state, row| {
        series.push(*row)?;
        if let Some(e) = errors.as_mut() {
            if n % cfg.error_every == 0 || n == steps {
                e.push(state.t, metrics::l2_errors(&state.u, |x| exact(x, state.t)));
            }
        }
        if snapshot_due(cfg, n, steps) {
            output::write_atomic(&dir.join(format!("snapshot_{n}.csv")), &output::snapshot_csv(state)?)?;
        }
        Ok(())
    });
    let wall_seconds = started.elapsed().as_secs_f64();
    let result = match result {
        Err(e) if !matches!(e, Error::NewtonFailure { .. }) => return Err(e),
        r => r,
    };

    let (marker, status, factorisations) = match &result {
        Ok(out) => (None, "ok".to_string(), Some(out.factorisations)),
        Err(Error::NewtonFailure {
            step,
            iterations,
            residual,
            multiplier,
        }) => {
            let step = step.unwrap_or(series.len());
            let marker = FailureMarker {
                step,
                t: step as f64 * cfg.tau,
                iterations: *iterations,
                residual: *residual,
                multiplier: *multiplier,
            };
            (Some(marker), format!("failed: {}", result.as_ref().unwrap_err()), None)
        }
        Err(_) => unreachable!("other errors returned above"),
    };

    output::write_atomic(
        &dir.join("invariants.csv"),
        &output::invariants_csv(series.rows(), marker.as_ref())?,
    )?;
    if let Some(e) = &errors {
        output::write_atomic(&dir.join("errors.csv"), &output::errors_csv(e, d)?)?;
    }
    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status,
        output_dir: dir.clone(),
        steps_completed: series.len().saturating_sub(1),
        wall_seconds,
        factorisations,
        max_f2_deviation: series.max_f2_deviation(),
        max_f4_deviation: series.max_f4_deviation(),
        max_abs_constraint: series.max_abs_constraint(),
        max_abs_multiplier: series.max_abs_multiplier(),
        linf_l2_errors: errors.as_ref().and_then(|e| e.final_running().map(<[f64]>::to_vec)),
    };
    let meta = toml::to_string(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    output::write_atomic(&dir.join("metadata.toml"), meta.as_bytes())?;
    match result {
        Ok(_) => Ok(summary),
        Err(e) => Err(e),
    }
}

/// What is refined across a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    /// Refine `h` at the configured `τ`.
    Spatial,
    /// Refine `h` with `τ = coupling · h`.
    Temporal { coupling: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: u32,
    pub cells: usize,
    pub h: f64,
    pub tau: f64,
    /// `max_t ‖u − U‖` per component, or the failure message.
    pub errors: std::result::Result<Vec<f64>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocTable {
    pub components: usize,
    pub levels: Vec<LevelResult>,
}

impl EocTable {
    /// EOC against the previous level, per component. `None` on the first
    /// level, next to a failed level, or where an error vanishes.
    pub fn rates(&self) -> Vec<Vec<Option<f64>>> {
        let mut out = vec![vec![None; self.components]];
        for pair in self.levels.windows(2) {
            let row = match (&pair[0].errors, &pair[1].errors) {
                (Ok(a), Ok(b)) => (0..self.components)
                    .map(|c| {
                        metrics::eoc(&[a[c], b[c]], &[pair[0].h, pair[1].h])
                            .ok()
                            .map(|r| r[0])
                    })
                    .collect(),
                _ => vec![None; self.components],
            };
            out.push(row);
        }
        out.truncate(self.levels.len());
        out
    }

    /// Rate between the two finest levels.
    pub fn terminal_rate(&self, component: usize) -> Option<f64> {
        self.rates().last()?.get(component).copied().flatten()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let d = self.components;
        let mut header: Vec<String> = ["level", "cells", "h", "tau"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=d).map(|c| format!("error_u{c}")));
        header.extend((1..=d).map(|c| format!("eoc_u{c}")));
        let rates = self.rates();
        let rows: Vec<Vec<Option<f64>>> = self
            .levels
            .iter()
            .zip(&rates)
            .map(|(l, r)| {
                let mut row = vec![Some(l.level as f64), Some(l.cells as f64), Some(l.h), Some(l.tau)];
                match &l.errors {
                    Ok(e) => row.extend(e.iter().map(|v| Some(*v))),
                    Err(_) => row.extend(std::iter::repeat_n(Some(f64::NAN), d)),
                }
                row.extend(r.iter().copied());
                row
            })
            .collect();
        output::table_csv(&header, &rows)
    }
}

/// Configuration of refinement level `i`: `2^i` times the base cell count.
pub fn level_config(base: &RunConfig, level: u32, mode: SweepMode) -> Result<RunConfig> {
    let cells = base
        .cells
        .checked_mul(1usize << level.min(40))
        .filter(|_| level <= 40)
        .ok_or_else(|| Error::config("levels", format!("level {level} is too fine")))?;
    let mut cfg = RunConfig {
        cells,
        compare_exact: true,
        output_dir: base.output_dir.join(format!("level_{level}")),
        ..base.clone()
    };
    if let SweepMode::Temporal { coupling } = mode {
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(Error::config("coupling", format!("must be positive, got {coupling}")));
        }
        cfg.tau = coupling * cfg.mesh_size();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every level and tabulates `L∞(0, T; L²)` errors and their EOC.
/// A failed level is recorded and the sweep continues.
pub fn convergence_sweep(
    base: &RunConfig,
    levels: RangeInclusive<u32>,
    mode: SweepMode,
    mut on_level: impl FnMut(&RunConfig, &Result<RunOutput>) -> Result<()>,
) -> Result<EocTable> {
    if !base.ic.has_exact_solution() {
        return Err(Error::config(
            "ic",
            format!("no exact solution is known for `{}`", base.ic.kind()),
        ));
    }
    if levels.is_empty() {
        return Err(Error::config("levels", "empty range of levels"));
    }
    let configs: Vec<(u32, RunConfig)> = levels
        .map(|i| level_config(base, i, mode).map(|c| (i, c)))
        .collect::<Result<_>>()?;
    let mut table = EocTable {
        components: base.dim(),
        levels: Vec::with_capacity(configs.len()),
    };
    for (level, cfg) in configs {
        let out = simulate(&cfg, |_, _, _| Ok(()));
        on_level(&cfg, &out)?;
        let errors = match out {
            Ok(o) => Ok(o
                .errors
                .and_then(|e| e.final_running().map(<[f64]>::to_vec))
                .expect("errors are tracked in sweeps")),
            Err(e) => Err(format!("level {level}: {e}")),
        };
        table.levels.push(LevelResult {
            level,
            cells: cfg.cells,
            h: cfg.mesh_size(),
            tau: cfg.tau,
            errors,
        });
    }
    Ok(table)
}

/// One density of the conservation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClawLine {
    pub d: usize,
    pub name: &'static str,
    pub conserved: bool,
    pub flux: Option<String>,
}

/// Checks `f2`, `f4`, `f6` and the non-conserved control `|u|⁴` for every
/// `d`, and audits the two printed fluxes against the computed ones.
pub fn claws_report(dims: &[usize]) -> Result<(Vec<ClawLine>, String)> {
    let mut lines = Vec::new();
    let mut text = String::new();
    for &d in dims {
        if d == 0 {
            return Err(Error::config("d", "dimension must be at least 1"));
        }
        let _ = writeln!(text, "d = {d}");
        let densities = [
            ("f2", jet::f2(d)?),
            ("f4", jet::f4(d)?),
            ("f6", jet::f6(d)?),
            ("|u|^4", jet::norm_sq(d, 0)?.pow(2)),
        ];
        for (name, f) in densities {
            let c = jet::verify_conservation(&f, d)?;
            let flux = c.flux.as_ref().map(ToString::to_string);
            match &flux {
                Some(g) => {
                    let _ = writeln!(text, "  {name}: conserved");
                    let _ = writeln!(text, "    flux: {g}");
                }
                None => {
                    let _ = writeln!(text, "  {name}: not conserved");
                }
            }
            lines.push(ClawLine {
                d,
                name,
                conserved: c.is_conserved,
                flux,
            });
        }
        for (name, density, printed) in [
            ("g2", jet::f2(d)?, jet::printed_g2(d)?),
            ("g4", jet::f4(d)?, jet::printed_g4(d)?),
        ] {
            let audit = jet::audit_flux(&density, &printed, d)?;
            let ratio = audit
                .ratio
                .map(|r| r.to_string())
                .unwrap_or_else(|| "not proportional".into());
            let _ = writeln!(
                text,
                "  printed {name}: printed/computed = {ratio}, D_x(printed) = D_t f: {}",
                if audit.reference_is_flux { "yes" } else { "no" }
            );
            if !audit.difference.is_zero() {
                let _ = writeln!(text, "    printed - computed: {}", audit.difference);
            }
        }
    }
    Ok((lines, text))
}
