//! Run configuration: TOML parsing, defaults, validation and the initial
//! data each configuration describes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, SolitonParams, TwoSolitonParams};
use crate::mesh::Mesh;
use crate::quadrature::gauss_rule;
use crate::space::{LagrangeSpace, NodeFamily, MAX_DEGREE};
use crate::stepper::{InitMode, NewtonConfig};

/// `u(x, t)` of an initial-data family.
pub type SolutionFn = Box<dyn Fn(f64, f64) -> Vec<f64> + Send + Sync>;

/// Overrides a relative `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "VMKDV_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSpec {
    pub mu: f64,
    pub shift: f64,
    pub direction: Vec<f64>,
}

impl SolitonSpec {
    fn params(&self) -> Result<SolitonParams> {
        SolitonParams::new(self.mu, self.shift, self.direction.clone())
    }
}

impl From<&SolitonParams> for SolitonSpec {
    fn from(p: &SolitonParams) -> Self {
        SolitonSpec {
            mu: p.mu,
            shift: p.shift,
            direction: p.direction.clone(),
        }
    }
}

/// Initial data. Omitted parameters take the benchmark values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IcConfig {
    OneSoliton {
        #[serde(default = "one_mu")]
        mu: f64,
        #[serde(default = "one_shift")]
        shift: f64,
        #[serde(default = "one_direction")]
        direction: Vec<f64>,
    },
    TwoSoliton {
        #[serde(default = "two_mu")]
        mu: f64,
        #[serde(default = "two_nu")]
        nu: f64,
        #[serde(default = "two_shift_mu")]
        shift_mu: f64,
        #[serde(default = "two_shift_nu")]
        shift_nu: f64,
        #[serde(default = "unit_x")]
        e1: Vec<f64>,
        #[serde(default = "unit_y")]
        e2: Vec<f64>,
    },
    /// Superposition of three single solitons; not an exact solution.
    ThreeSoliton {
        #[serde(default = "three_solitons")]
        solitons: Vec<SolitonSpec>,
    },
    Trig,
    Box,
    Zero {
        #[serde(default = "two")]
        d: usize,
    },
}

fn one_mu() -> f64 {
    SolitonParams::benchmark().mu
}
fn one_shift() -> f64 {
    SolitonParams::benchmark().shift
}
fn one_direction() -> Vec<f64> {
    SolitonParams::benchmark().direction
}
fn two_mu() -> f64 {
    TwoSolitonParams::benchmark().mu
}
fn two_nu() -> f64 {
    TwoSolitonParams::benchmark().nu
}
fn two_shift_mu() -> f64 {
    TwoSolitonParams::benchmark().shift_mu
}
fn two_shift_nu() -> f64 {
    TwoSolitonParams::benchmark().shift_nu
}
fn unit_x() -> Vec<f64> {
    vec![1.0, 0.0]
}
fn unit_y() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn three_solitons() -> Vec<SolitonSpec> {
    exact::three_soliton_benchmark().iter().map(SolitonSpec::from).collect()
}
fn two() -> usize {
    2
}

/// Names accepted by `kind`, with a one-line description each.
pub const IC_KINDS: [(&str, &str); 6] = [
    ("one_soliton", "exact 1-soliton, mu = 1, c = 20, E = (0.8, 0.6)"),
    ("two_soliton", "exact 2-soliton, mu = sqrt 2, nu = sqrt 3, c = (25.1, 24.9)"),
    ("three_soliton", "three superposed solitons, mu = (1.9, -1.6, 1.3), c = (4, 12, 21)"),
    ("trig", "(sin(pi x/20), cos(pi x/10))"),
    ("box", "u1 = 1 on [10, 20] and 0 elsewhere, u2 = 0 on [20, 30] and 1 elsewhere"),
    ("zero", "u = 0 in d components"),
];

/// The jump locations of the box data; meshes must have nodes there.
const BOX_JUMPS: [f64; 3] = [10.0, 20.0, 30.0];

impl IcConfig {
    /// Benchmark parameters for a kind name.
    pub fn from_kind(kind: &str) -> Result<Self> {
        let table = toml::Table::from_iter([("kind".to_string(), toml::Value::String(kind.to_string()))]);
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("ic.kind", e.message().to_string()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            IcConfig::OneSoliton { .. } => "one_soliton",
            IcConfig::TwoSoliton { .. } => "two_soliton",
            IcConfig::ThreeSoliton { .. } => "three_soliton",
            IcConfig::Trig => "trig",
            IcConfig::Box => "box",
            IcConfig::Zero { .. } => "zero",
        }
    }

    /// Number of components of the data.
    pub fn dim(&self) -> usize {
        match self {
            IcConfig::OneSoliton { direction, .. } => direction.len(),
            IcConfig::TwoSoliton { e1, .. } => e1.len(),
            IcConfig::ThreeSoliton { solitons } => solitons.first().map_or(0, |s| s.direction.len()),
            IcConfig::Trig | IcConfig::Box => 2,
            IcConfig::Zero { d } => *d,
        }
    }

    /// 50 for the 2-soliton, whose centres sit near 25, and 40 otherwise.
    /// On [0, 40] the 2-soliton tail at the right end reaches 7e-7 by t = 1,
    /// which caps its measurable error; on [0, 50] it stays below 1e-12.
    pub fn default_length(&self) -> f64 {
        match self {
            IcConfig::TwoSoliton { .. } => 50.0,
            _ => 40.0,
        }
    }

    pub fn has_exact_solution(&self) -> bool {
        matches!(
            self,
            IcConfig::OneSoliton { .. } | IcConfig::TwoSoliton { .. } | IcConfig::Zero { .. }
        )
    }

    /// The solution `u(x, t)` when known in closed form, otherwise the data
    /// at `t = 0` only (`t` is then ignored).
    pub fn solution(&self) -> Result<SolutionFn> {
        Ok(match self {
            IcConfig::OneSoliton { mu, shift, direction } => {
                let p = SolitonParams::new(*mu, *shift, direction.clone())
                    .map_err(|e| Error::config("ic", e.to_string()))?;
                Box::new(move |x, t| exact::one_soliton(&p, x, t))
            }
            IcConfig::TwoSoliton {
                mu,
                nu,
                shift_mu,
                shift_nu,
                e1,
                e2,
            } => {
                let p = TwoSolitonParams::new(*mu, *nu, *shift_mu, *shift_nu, e1.clone(), e2.clone())
                    .map_err(|e| Error::config("ic", e.to_string()))?;
                Box::new(move |x, t| exact::two_soliton(&p, x, t))
            }
            IcConfig::ThreeSoliton { solitons } => {
                if solitons.len() != 3 {
                    return Err(Error::config(
                        "ic.solitons",
                        format!("need exactly 3 solitons, got {}", solitons.len()),
                    ));
                }
                let p: Vec<SolitonParams> = solitons
                    .iter()
                    .map(SolitonSpec::params)
                    .collect::<Result<_>>()
                    .map_err(|e| Error::config("ic.solitons", e.to_string()))?;
                if p.iter().any(|s| s.direction.len() != p[0].direction.len()) {
                    return Err(Error::config("ic.solitons", "directions differ in dimension"));
                }
                let p: [SolitonParams; 3] = p.try_into().expect("length checked");
                Box::new(move |x, _| exact::three_soliton_ic(&p, x))
            }
            IcConfig::Trig => Box::new(|x, _| exact::trig_ic(x)),
            IcConfig::Box => Box::new(|x, _| exact::box_ic(x)),
            IcConfig::Zero { d } => {
                let d = *d;
                Box::new(move |_, _| vec![0.0; d])
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Components; defaults to the dimension of the initial data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Domain length; defaults to [`IcConfig::default_length`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Gauss points per cell; `3q + 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    #[serde(default)]
    pub gauss_lobatto_nodes: bool,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_final_time")]
    pub final_time: f64,
    #[serde(default)]
    pub init_mode: InitMode,
    /// Write a snapshot every this many steps; 0 writes only the first and last.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Track L² errors against the exact solution.
    #[serde(default)]
    pub compare_exact: bool,
    #[serde(default = "default_error_every")]
    pub error_every: usize,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default = "default_ic")]
    pub ic: IcConfig,
}

fn default_cells() -> usize {
    160
}
fn default_degree() -> usize {
    2
}
fn default_tau() -> f64 {
    1e-3
}
fn default_final_time() -> f64 {
    10.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}
fn default_error_every() -> usize {
    1
}
fn default_ic() -> IcConfig {
    IcConfig::from_kind("one_soliton").expect("benchmark kind")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: None,
            length: None,
            cells: default_cells(),
            degree: default_degree(),
            quad_points: None,
            gauss_lobatto_nodes: false,
            tau: default_tau(),
            final_time: default_final_time(),
            init_mode: InitMode::default(),
            snapshot_every: 0,
            output_dir: default_output_dir(),
            compare_exact: false,
            error_every: default_error_every(),
            newton: NewtonConfig::default(),
            ic: default_ic(),
        }
    }
}

/// Maps a TOML error to a configuration error naming the offending key
/// where the parser reports one.
fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
        .unwrap_or("config")
        .to_string();
    Error::Config {
        field,
        message: e.to_string().trim().to_string(),
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML echo; parsing it gives back the same configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    pub fn dim(&self) -> usize {
        self.d.unwrap_or_else(|| self.ic.dim())
    }

    pub fn length(&self) -> f64 {
        self.length.unwrap_or_else(|| self.ic.default_length())
    }

    pub fn mesh_size(&self) -> f64 {
        self.length() / self.cells as f64
    }

    /// Number of steps; `final_time` must be a whole number of steps.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.final_time / self.tau).round();
        if (n * self.tau - self.final_time).abs() > 1e-9 * self.final_time.max(self.tau) {
            return Err(Error::config(
                "final_time",
                format!("{} is not a whole number of steps of size {}", self.final_time, self.tau),
            ));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.final_time >= 0.0 && self.final_time.is_finite()) {
            return Err(Error::config("final_time", format!("must be non-negative, got {}", self.final_time)));
        }
        let length = self.length();
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config("length", format!("must be positive, got {length}")));
        }
        if self.cells < 2 {
            return Err(Error::config("cells", format!("need at least 2 cells, got {}", self.cells)));
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::config(
                "degree",
                format!("must lie in 1..={MAX_DEGREE}, got {}", self.degree),
            ));
        }
        if let Some(n) = self.quad_points {
            gauss_rule(n)?;
        }
        if self.error_every == 0 {
            return Err(Error::config("error_every", "must be at least 1"));
        }
        self.newton.validate()?;
        let d = self.dim();
        if d == 0 || d > crate::assembly::MAX_COMPONENTS {
            return Err(Error::config(
                "d",
                format!("must lie in 1..={}, got {d}", crate::assembly::MAX_COMPONENTS),
            ));
        }
        if d != self.ic.dim() {
            return Err(Error::config(
                "d",
                format!("initial data `{}` has {} components, not {d}", self.ic.kind(), self.ic.dim()),
            ));
        }
        self.ic.solution().map(drop)?;
        if self.compare_exact && !self.ic.has_exact_solution() {
            return Err(Error::config(
                "compare_exact",
                format!("no exact solution is known for `{}`", self.ic.kind()),
            ));
        }
        if matches!(self.ic, IcConfig::Box) {
            let h = self.mesh_size();
            for x in BOX_JUMPS {
                let r = x / h;
                if x > length || (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                    return Err(Error::config(
                        "cells",
                        format!("box data jumps at x = {x}, which is not a mesh node for h = {h}"),
                    ));
                }
            }
        }
        self.steps()?;
        Ok(())
    }

    pub fn space(&self) -> Result<Arc<LagrangeSpace>> {
        let mesh = Mesh::uniform(self.length(), self.cells)?;
        let family = if self.gauss_lobatto_nodes {
            NodeFamily::GaussLobatto
        } else {
            NodeFamily::Equispaced
        };
        let quad = self.quad_points.map(gauss_rule).transpose()?;
        LagrangeSpace::with_options(mesh, self.degree, family, quad)
    }

    /// `output_dir`, placed under the root directory from
    /// [`OUTPUT_ROOT_ENV`] when that is set and the path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() && !root.is_empty() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}
