//! Execution of configured stages against a run store.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use torcont::colloc::build_mesh;
use torcont::contin::{run, Branch, PointType};
use torcont::ivp::{integrate, IvpOptions};
use torcont::odesys::{builtin, VectorField};
use torcont::po::{PeriodicOrbit, PoProblem};
use torcont::store::{
    po_snapshots, restart_bp2tor, restart_isol2tor, restart_tor2tor, restart_tr2tor, run_meta, torus_snapshots,
    Restart, RunStore, SamplesFile, SolutionKind,
};
use torcont::{Error, Result};

use crate::config::{parse_selector, Config, Generate, LabelSelector, LoadedConfig, StageConfig, StageKind, Which};

const DEFAULT_NTST: usize = 20;
const DEFAULT_DEGREE: usize = 4;

/// Outcome of one stage.
#[derive(Debug, Clone)]
pub struct StageSummary {
    pub run_id: String,
    pub branch: Branch,
}

/// Resolves a label selector against the branch table of a stored run.
pub fn resolve_label(store: &RunStore, run_id: &str, sel: &LabelSelector) -> Result<u32> {
    match sel {
        LabelSelector::Label(l) => Ok(*l),
        LabelSelector::Select(s) => {
            let (kind, which) = parse_selector(s).map_err(Error::Config)?;
            let labels = store.labels(run_id, Some(kind))?;
            let pick = match which {
                Which::First => labels.first(),
                Which::Last => labels.last(),
                Which::Nth(k) => labels.get(k - 1),
            };
            pick.copied()
                .ok_or_else(|| Error::NotFound(format!("no point matching '{s}' in run '{run_id}'")))
        }
    }
}

/// Runs every stage of a config in order (or only the one named `only`).
pub fn run_config(
    loaded: &LoadedConfig,
    store: &RunStore,
    only: Option<&str>,
    out: &mut dyn Write,
) -> Result<Vec<StageSummary>> {
    let cfg = &loaded.config;
    if let Some(id) = only {
        if !cfg.stages.iter().any(|s| s.run_id == id) {
            return Err(Error::Config(format!("no stage with run_id '{id}'")));
        }
    }
    let mut done = Vec::new();
    for stage in cfg.stages.iter().filter(|s| only.is_none_or(|id| s.run_id == id)) {
        let summary = run_stage(cfg, loaded, stage, store)?;
        print_summary(out, stage, &summary.branch)?;
        done.push(summary);
    }
    Ok(done)
}

fn run_stage(cfg: &Config, loaded: &LoadedConfig, st: &StageConfig, store: &RunStore) -> Result<StageSummary> {
    let settings = st.cont.settings();
    let released_refs: Vec<&str> = st.released.iter().map(|s| s.as_str()).collect();
    if st.kind == StageKind::Po {
        let vf = builtin(&cfg.system)?;
        let sim = st.simulate.as_ref().expect("validated");
        let mesh = Arc::new(build_mesh(st.ntst.unwrap_or(DEFAULT_NTST), st.degree.unwrap_or(DEFAULT_DEGREE))?);
        let orbit = PeriodicOrbit::from_simulation(vf.as_ref(), mesh, &sim.x0, &sim.p, sim.transient, sim.period)?;
        let mut problem = PoProblem::new(vf, &orbit, &released_refs)?;
        let start = torcont::contin::Start::new(problem.to_vector(&orbit));
        let branch = run(&mut problem, &start, &settings)?;
        let snaps = po_snapshots(&cfg.system, &problem, &branch)?;
        let released = problem.released_names();
        let meta = run_meta(&st.run_id, SolutionKind::Po, &cfg.system, &released, &problem, &settings, &branch);
        store.write_run(&meta, &branch, &snaps)?;
        return Ok(StageSummary { run_id: st.run_id.clone(), branch });
    }

    let source = |st: &StageConfig| -> Result<(String, u32)> {
        let from = st.from.as_ref().expect("validated");
        Ok((from.run.clone(), resolve_label(store, &from.run, &from.label)?))
    };
    let mut samples_to_keep = None;
    let Restart { vf, mut problem, start } = match st.kind {
        StageKind::Tr2tor => {
            let (run_id, label) = source(st)?;
            restart_tr2tor(store, &run_id, label, st.modes, st.eps, &released_refs)?
        }
        StageKind::Tor2tor => {
            let (run_id, label) = source(st)?;
            restart_tor2tor(store, &run_id, label, &released_refs)?
        }
        StageKind::Bp2tor => {
            let (run_id, label) = source(st)?;
            restart_bp2tor(store, &run_id, label)?
        }
        StageKind::Isol2tor => {
            let spec = st.samples.as_ref().expect("validated");
            let samples = match (&spec.file, &spec.generate) {
                (Some(f), _) => SamplesFile::read(&loaded.base_dir.join(f))?,
                (None, Some(g)) => generate_samples(&cfg.system, g)?,
                (None, None) => unreachable!("validated"),
            };
            let r = restart_isol2tor(
                &samples,
                st.ntst.unwrap_or(DEFAULT_NTST),
                st.degree.unwrap_or(DEFAULT_DEGREE),
                &released_refs,
            )?;
            samples_to_keep = Some(samples);
            r
        }
        StageKind::Po => unreachable!(),
    };
    if vf.name() != cfg.system {
        return Err(Error::Config(format!(
            "stage '{}' starts from a '{}' solution but the config declares system '{}'",
            st.run_id,
            vf.name(),
            cfg.system
        )));
    }
    let branch = run(&mut problem, &start, &settings)?;
    let snaps = torus_snapshots(&cfg.system, &problem, &branch)?;
    let meta = run_meta(&st.run_id, SolutionKind::Torus, &cfg.system, &problem.released, &problem, &settings, &branch);
    store.write_run(&meta, &branch, &snaps)?;
    if let Some(s) = samples_to_keep {
        s.write(&store.run_dir(&st.run_id).join("samples.json"))?;
    }
    Ok(StageSummary { run_id: st.run_id.clone(), branch })
}

/// Samples `2N+1` trajectories started on a circle of the given radius in
/// the first two state components.
pub fn generate_samples(system: &str, g: &Generate) -> Result<SamplesFile> {
    let vf: Arc<dyn VectorField> = builtin(system)?;
    let ns = 2 * g.modes + 1;
    let t_ret = 2.0 * PI / g.om2;
    let points = g.points.unwrap_or(10 * ns);
    if points < 2 {
        return Err(Error::Config("samples.generate.points must be at least 2".into()));
    }
    let grid: Vec<f64> = (0..points).map(|k| t_ret * k as f64 / (points - 1) as f64).collect();
    let opts = IvpOptions::tight();
    let segments = (0..ns)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / ns as f64;
            let mut x0 = vec![0.0; vf.dim_state()];
            x0[0] = g.radius * th.cos();
            x0[1] = g.radius * th.sin();
            let x = integrate(vf.as_ref(), &[0.0, g.transient_returns * t_ret], &x0, &g.p, &opts)?;
            Ok(integrate(vf.as_ref(), &grid, x[1].as_slice(), &g.p, &opts)?
                .into_iter()
                .map(|v| v.iter().copied().collect())
                .collect())
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
    Ok(SamplesFile {
        system: system.to_string(),
        t: grid,
        segments,
        p: g.p.clone(),
        om1: g.om1,
        om2: g.om2,
        varrho: g.varrho,
    })
}

/// Writes the point table of a branch: every point, labeled or not.
pub fn print_summary(out: &mut dyn Write, st: &StageConfig, branch: &Branch) -> Result<()> {
    writeln!(out, "run {} ({})", st.run_id, st.kind.as_str())?;
    write!(out, "{:>5} {:>4} {:>5} {:>3} {:>9}", "LAB", "TYPE", "IDX", "IT", "h")?;
    for m in &branch.monitor_names {
        write!(out, " {:>14}", m)?;
    }
    writeln!(out)?;
    for p in &branch.points {
        let label = p.label.map(|l| l.to_string()).unwrap_or_default();
        let mut kind = p.kind.map(PointType::as_str).unwrap_or("").to_string();
        if p.unlocated {
            kind.push('?');
        }
        write!(out, "{label:>5} {kind:>4} {:>5} {:>3} {:>9.3e}", p.index, p.iterations, p.h)?;
        for v in &p.monitors {
            write!(out, " {v:>14.7e}")?;
        }
        writeln!(out)?;
    }
    for n in &branch.notes {
        writeln!(out, "note: {n}")?;
    }
    Ok(())
}
