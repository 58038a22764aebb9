//! Read-only verbs operating on stored runs.

use std::io::Write;

use torcont::colloc::interpolate;
use torcont::odesys::builtin;
use torcont::store::{RunStore, Snapshot};
use torcont::torus::{export_torus_mesh, validate_invariance, InvarianceReport};
use torcont::{Error, Result};

/// Default deviation above which a torus is flagged as not invariant.
pub const DEFAULT_INVARIANCE_TOL: f64 = 1e-3;

/// Forward-simulation check of a stored torus.
pub fn validate(store: &RunStore, run_id: &str, label: u32, returns: usize) -> Result<InvarianceReport> {
    let snap = store.read_solution(run_id, label)?.into_torus()?;
    let vf = builtin(&snap.system)?;
    validate_invariance(vf.as_ref(), &snap.solution()?, returns)
}

pub fn write_validation(out: &mut dyn Write, report: &InvarianceReport, tol: f64) -> Result<bool> {
    for (k, d) in report.deviations.iter().enumerate() {
        writeln!(out, "return {:>3}  deviation {:.6e}", k + 1, d)?;
    }
    let ok = report.max < tol;
    writeln!(
        out,
        "max {:.6e}  mean {:.6e}  {}",
        report.max,
        report.mean,
        if ok { "ok" } else { "FLAGGED" }
    )?;
    Ok(ok)
}

/// Writes a plot-ready grid of a stored solution.
///
/// Tori: blocks of `theta2_count` lines, one block per `theta1` row,
/// separated by blank lines; columns `theta1 theta2 x_1 .. x_n`. Periodic
/// orbits: one line per base point with columns `t x_1 .. x_n`.
pub fn export(store: &RunStore, run_id: &str, label: u32, theta2_count: usize, out: &mut dyn Write) -> Result<()> {
    match store.read_solution(run_id, label)? {
        Snapshot::Torus(t) => {
            let sol = t.solution()?;
            let grid = export_torus_mesh(&sol, theta2_count)?;
            let c = sol.coupling()?;
            writeln!(out, "# torus run={run_id} label={label} system={}", t.system)?;
            writeln!(out, "# {} theta1 rows x {theta2_count} theta2 columns x {} components", grid.len(), sol.dim())?;
            write!(out, "# theta1 theta2")?;
            for i in 0..sol.dim() {
                write!(out, " x{}", i + 1)?;
            }
            writeln!(out)?;
            for (row, th1) in grid.iter().zip(&c.angles) {
                for (k, v) in row.iter().enumerate() {
                    let th2 = 2.0 * std::f64::consts::PI * k as f64 / (theta2_count - 1) as f64;
                    write!(out, "{th1:.17e} {th2:.17e}")?;
                    for x in v.iter() {
                        write!(out, " {x:.17e}")?;
                    }
                    writeln!(out)?;
                }
                writeln!(out)?;
            }
        }
        Snapshot::Po(p) => {
            let orbit = p.orbit()?;
            writeln!(out, "# periodic orbit run={run_id} label={label} system={}", p.system)?;
            write!(out, "# t")?;
            for i in 0..p.dim {
                write!(out, " x{}", i + 1)?;
            }
            writeln!(out)?;
            let n = 10 * orbit.traj.mesh.ntst;
            for k in 0..=n {
                let t = orbit.traj.t_offset + orbit.traj.duration * k as f64 / n as f64;
                let x = interpolate(&orbit.traj, t)?;
                write!(out, "{t:.17e}")?;
                for v in x.iter() {
                    write!(out, " {v:.17e}")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

/// Writes selected monitor columns of a run's branch table. Values are
/// printed as shortest round-trip decimals, so they reproduce the stored
/// table exactly.
pub fn bd(store: &RunStore, run_id: &str, columns: &[String], out: &mut dyn Write) -> Result<()> {
    let meta = store.read_meta(run_id)?;
    let idx = columns
        .iter()
        .map(|c| {
            meta.monitor_names.iter().position(|m| m == c).ok_or_else(|| {
                Error::NotFound(format!("column '{c}' in run '{run_id}' (available: {})", meta.monitor_names.join(", ")))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    writeln!(out, "# label type {}", columns.join(" "))?;
    for row in store.read_bd(run_id)? {
        let label = row.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        let kind = row.kind.map(|k| k.as_str()).unwrap_or("-");
        write!(out, "{label} {kind}")?;
        for &i in &idx {
            write!(out, " {}", row.monitors[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Lists runs, or the labeled points of one run.
pub fn list(store: &RunStore, run_id: Option<&str>, out: &mut dyn Write) -> Result<()> {
    match run_id {
        None => {
            for id in store.runs()? {
                let meta = store.read_meta(&id)?;
                let rows = store.read_bd(&id)?;
                let labels = rows.iter().filter(|r| r.label.is_some()).count();
                writeln!(
                    out,
                    "{id}  kind={:?}  system={}  released={}  points={}  labels={labels}",
                    meta.kind,
                    meta.system,
                    meta.released.join(","),
                    rows.len()
                )?;
            }
        }
        Some(id) => {
            let meta = store.read_meta(id)?;
            write!(out, "{:>5} {:>4} {:>5}", "LAB", "TYPE", "IDX")?;
            for m in &meta.monitor_names {
                write!(out, " {m:>14}")?;
            }
            writeln!(out)?;
            for row in store.read_bd(id)?.iter().filter(|r| r.label.is_some()) {
                let kind = row.kind.map(|k| k.as_str()).unwrap_or("");
                write!(out, "{:>5} {kind:>4} {:>5}", row.label.unwrap_or(0), row.index)?;
                for v in &row.monitors {
                    write!(out, " {v:>14.7e}")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}
