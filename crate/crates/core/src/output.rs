//! CSV serialisation of run data and atomic file writes.
//!
//! Every number is written in scientific notation with 17 significant
//! digits, which round-trips `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::assembly::DiscreteState;
use crate::error::{Error, Result};
use crate::metrics::{ErrorSeries, InvariantRow};

pub const INVARIANTS_HEADER: [&str; 9] = ["step", "t", "F2", "F4", "F6", "P", "constraint", "newton_iters", "residual"];

/// Full-precision scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary file in the same directory, then renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn strings<const N: usize>(a: [&str; N]) -> Vec<String> {
    a.iter().map(|s| s.to_string()).collect()
}

/// Why a run stopped early; becomes the last row of the invariants file.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureMarker {
    pub step: usize,
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
    pub multiplier: f64,
}

/// Invariant rows, optionally closed by a failure marker whose `step`
/// column reads `failed` and whose unknown quantities are `nan`.
pub fn invariants_csv(rows: &[InvariantRow], failure: Option<&FailureMarker>) -> Result<Vec<u8>> {
    let body = rows.iter().map(|r| {
        vec![
            r.step.to_string(),
            sci(r.t),
            sci(r.f2),
            sci(r.f4),
            sci(r.f6),
            sci(r.p),
            sci(r.constraint),
            r.newton_iters.to_string(),
            sci(r.residual),
        ]
    });
    let marker = failure.map(|m| {
        vec![
            "failed".to_string(),
            sci(m.t),
            "nan".into(),
            "nan".into(),
            "nan".into(),
            sci(m.multiplier),
            "nan".into(),
            m.iterations.to_string(),
            sci(m.residual),
        ]
    });
    csv_bytes(&strings(INVARIANTS_HEADER), body.chain(marker))
}

/// Nodal values of `U`, `V`, `W` at the degrees of freedom.
pub fn snapshot_csv(state: &DiscreteState) -> Result<Vec<u8>> {
    let d = state.components();
    let mut header = vec!["x".to_string()];
    for name in ["u", "v", "w"] {
        header.extend((1..=d).map(|c| format!("{name}{c}")));
    }
    let xs = state.space().dof_positions();
    let rows = xs.iter().enumerate().map(|(j, &x)| {
        let mut r = vec![sci(x)];
        for f in [&state.u, &state.v, &state.w] {
            r.extend((0..d).map(|c| sci(f.component(c)[j])));
        }
        r
    });
    csv_bytes(&header, rows)
}

/// `t`, the L² error per component, and its running maximum over time.
pub fn errors_csv(series: &ErrorSeries, d: usize) -> Result<Vec<u8>> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|c| format!("l2_u{c}")));
    header.extend((1..=d).map(|c| format!("linf_l2_u{c}")));
    let rows = series
        .times()
        .iter()
        .zip(series.instantaneous())
        .zip(series.running())
        .map(|((t, e), m)| {
            let mut r = vec![sci(*t)];
            r.extend(e.iter().map(|v| sci(*v)));
            r.extend(m.iter().map(|v| sci(*v)));
            r
        });
    csv_bytes(&header, rows)
}

/// Generic numeric table; `None` cells are left empty.
pub fn table_csv(header: &[String], rows: &[Vec<Option<f64>>]) -> Result<Vec<u8>> {
    csv_bytes(
        header,
        rows.iter()
            .map(|r| r.iter().map(|v| v.map(sci).unwrap_or_default()).collect()),
    )
}
