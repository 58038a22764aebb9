//! On-disk run records and the restart pathways built on them.
//!
//! Layout of one run directory `<root>/<run_id>/`:
//!
//! * `run.json` — format version, run id, solution kind, system, released
//!   parameters, monitor names, settings and notes;
//! * `bd.jsonl` — one JSON object per computed point (the branch table);
//! * `sol_<label>.json` — one self-describing snapshot per labeled point.
//!
//! Floating-point numbers are written as shortest round-trip decimals and
//! parsed exactly, so `read(write(x))` is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::colloc::{build_mesh, SegmentMesh, Trajectory};
use crate::contin::{switch_branch, Branch, ContinuationSettings, Point, PointType, Start, ZeroProblem};
use crate::error::{Error, Result};
use crate::odesys::{builtin, VectorField};
use crate::po::{floquet, PeriodicOrbit, PoProblem};
use crate::torus::{init_from_samples, init_from_tr, ReferenceSection, TorusProblem, TorusSolution};

/// Bumped on any schema change; files with another version are rejected.
pub const FORMAT_VERSION: u32 = 1;

/// Default number of Fourier modes for tori started at a TR point.
pub const DEFAULT_MODES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionKind {
    Po,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    pub run_id: String,
    pub kind: SolutionKind,
    pub system: String,
    pub released: Vec<String>,
    pub monitor_names: Vec<String>,
    pub settings: ContinuationSettings,
    pub notes: Vec<String>,
}

/// One row of the branch table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRow {
    pub label: Option<u32>,
    #[serde(rename = "type")]
    pub kind: Option<PointType>,
    pub index: i64,
    pub monitors: Vec<f64>,
    pub iterations: usize,
    pub h: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unlocated: bool,
}

impl From<&Point> for BdRow {
    fn from(p: &Point) -> Self {
        Self {
            label: p.label,
            kind: p.kind,
            index: p.index,
            monitors: p.monitors.clone(),
            iterations: p.iterations,
            h: p.h,
            unlocated: p.unlocated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub ntst: usize,
    pub degree: usize,
}

impl MeshSpec {
    fn of(mesh: &SegmentMesh) -> Self {
        Self {
            ntst: mesh.ntst,
            degree: mesh.degree,
        }
    }

    pub fn build(&self) -> Result<Arc<SegmentMesh>> {
        Ok(Arc::new(build_mesh(self.ntst, self.degree)?))
    }
}

/// Data shared by every snapshot: where the point sits on its branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInfo {
    pub label: u32,
    #[serde(rename = "type")]
    pub kind: Option<PointType>,
    pub index: i64,
    pub monitors: Vec<f64>,
    /// Unit tangent in the unknowns of the run that produced the point (for
    /// a BP: the incoming tangent).
    pub tangent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoSnapshot {
    pub format_version: u32,
    pub system: String,
    pub mesh: MeshSpec,
    pub dim: usize,
    pub x_bp: Vec<f64>,
    pub duration: f64,
    pub t_offset: f64,
    pub p: Vec<f64>,
    pub released: Vec<String>,
    pub point: PointInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceData {
    pub v_star_00: Vec<f64>,
    pub v_phi_star: Vec<f64>,
    pub v_t_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusSnapshot {
    pub format_version: u32,
    pub system: String,
    pub modes: usize,
    pub mesh: MeshSpec,
    pub dim: usize,
    /// Base points of each of the `2N+1` segments.
    pub segments: Vec<Vec<f64>>,
    pub t0: f64,
    pub period: f64,
    pub p: Vec<f64>,
    pub om1: f64,
    pub om2: f64,
    pub varrho: f64,
    pub reference: ReferenceData,
    pub released: Vec<String>,
    pub point: PointInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Snapshot {
    Po(PoSnapshot),
    Torus(TorusSnapshot),
}

impl Snapshot {
    pub fn point(&self) -> &PointInfo {
        match self {
            Snapshot::Po(s) => &s.point,
            Snapshot::Torus(s) => &s.point,
        }
    }

    fn format_version(&self) -> u32 {
        match self {
            Snapshot::Po(s) => s.format_version,
            Snapshot::Torus(s) => s.format_version,
        }
    }

    pub fn into_torus(self) -> Result<TorusSnapshot> {
        match self {
            Snapshot::Torus(t) => Ok(t),
            Snapshot::Po(_) => Err(Error::Type("snapshot holds a periodic orbit, a torus is required".into())),
        }
    }

    pub fn into_po(self) -> Result<PoSnapshot> {
        match self {
            Snapshot::Po(p) => Ok(p),
            Snapshot::Torus(_) => Err(Error::Type("snapshot holds a torus, a periodic orbit is required".into())),
        }
    }
}

impl PoSnapshot {
    pub fn new(system: &str, orbit: &PeriodicOrbit, released: &[String], point: PointInfo) -> Self {
        let t = &orbit.traj;
        Self {
            format_version: FORMAT_VERSION,
            system: system.to_string(),
            mesh: MeshSpec::of(&t.mesh),
            dim: t.dim,
            x_bp: t.x_bp.clone(),
            duration: t.duration,
            t_offset: t.t_offset,
            p: orbit.p.clone(),
            released: released.to_vec(),
            point,
        }
    }

    pub fn orbit(&self) -> Result<PeriodicOrbit> {
        let traj = Trajectory::new(self.mesh.build()?, self.dim, self.x_bp.clone(), self.duration, self.t_offset)?;
        Ok(PeriodicOrbit::new(traj, self.p.clone()))
    }
}

impl TorusSnapshot {
    pub fn new(system: &str, sol: &TorusSolution, released: &[String], point: PointInfo) -> Self {
        let r = &sol.reference;
        Self {
            format_version: FORMAT_VERSION,
            system: system.to_string(),
            modes: sol.modes,
            mesh: MeshSpec::of(sol.mesh()),
            dim: sol.dim(),
            segments: sol.segments.iter().map(|s| s.x_bp.clone()).collect(),
            t0: sol.t0,
            period: sol.period,
            p: sol.p.clone(),
            om1: sol.om1,
            om2: sol.om2,
            varrho: sol.varrho,
            reference: ReferenceData {
                v_star_00: r.v_star_00.clone(),
                v_phi_star: r.v_phi_star.clone(),
                v_t_star: r.v_t_star.clone(),
            },
            released: released.to_vec(),
            point,
        }
    }

    pub fn solution(&self) -> Result<TorusSolution> {
        if self.segments.len() != 2 * self.modes + 1 {
            return Err(Error::Format(format!(
                "snapshot has {} segments but N = {}",
                self.segments.len(),
                self.modes
            )));
        }
        let mesh = self.mesh.build()?;
        let segments = self
            .segments
            .iter()
            .map(|x| Trajectory::new(mesh.clone(), self.dim, x.clone(), self.period, self.t0))
            .collect::<Result<Vec<_>>>()?;
        Ok(TorusSolution {
            modes: self.modes,
            segments,
            t0: self.t0,
            period: self.period,
            p: self.p.clone(),
            om1: self.om1,
            om2: self.om2,
            varrho: self.varrho,
            reference: ReferenceSection {
                v_star_00: self.reference.v_star_00.clone(),
                v_phi_star: self.reference.v_phi_star.clone(),
                v_t_star: self.reference.v_t_star.clone(),
            },
        })
    }
}

/// Root directory holding one subdirectory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn check_run_id(run_id: &str) -> Result<()> {
    let ok = !run_id.is_empty()
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && run_id != "."
        && run_id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "invalid run id '{run_id}' (letters, digits, '_', '-', '.' only)"
        )))
    }
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn existing_run_dir(&self, run_id: &str) -> Result<PathBuf> {
        check_run_id(run_id)?;
        let dir = self.run_dir(run_id);
        if !dir.join("run.json").is_file() {
            return Err(Error::NotFound(format!("run '{run_id}' in {}", self.root.display())));
        }
        Ok(dir)
    }

    /// Writes a complete run, replacing any previous run with the same id.
    pub fn write_run(&self, meta: &RunMeta, branch: &Branch, snapshots: &[Snapshot]) -> Result<()> {
        check_run_id(&meta.run_id)?;
        let dir = self.run_dir(&meta.run_id);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("run.json"), meta)?;
        let mut bd = BufWriter::new(fs::File::create(dir.join("bd.jsonl"))?);
        for p in &branch.points {
            serde_json::to_writer(&mut bd, &BdRow::from(p))?;
            bd.write_all(b"\n")?;
        }
        bd.flush()?;
        for s in snapshots {
            self.write_solution(&meta.run_id, s)?;
        }
        Ok(())
    }

    pub fn write_solution(&self, run_id: &str, snapshot: &Snapshot) -> Result<()> {
        check_run_id(run_id)?;
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join(format!("sol_{}.json", snapshot.point().label)), snapshot)
    }

    pub fn read_meta(&self, run_id: &str) -> Result<RunMeta> {
        let dir = self.existing_run_dir(run_id)?;
        let value: serde_json::Value = read_json(&dir.join("run.json"))?;
        check_version(&value, &dir.join("run.json"))?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn read_bd(&self, run_id: &str) -> Result<Vec<BdRow>> {
        // validates the version through the metadata
        self.read_meta(run_id)?;
        let path = self.run_dir(run_id).join("bd.jsonl");
        let file = fs::File::open(&path).map_err(|e| not_found_or_io(e, &path))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
            );
        }
        Ok(rows)
    }

    pub fn read_solution(&self, run_id: &str, label: u32) -> Result<Snapshot> {
        let dir = self.existing_run_dir(run_id)?;
        let path = dir.join(format!("sol_{label}.json"));
        if !path.is_file() {
            return Err(Error::NotFound(format!("label {label} in run '{run_id}'")));
        }
        let value: serde_json::Value = read_json(&path)?;
        check_version(&value, &path)?;
        let snap: Snapshot = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if snap.format_version() != FORMAT_VERSION {
            return Err(Error::Format(format!("{}: unsupported format version", path.display())));
        }
        Ok(snap)
    }

    /// Labels of a run in ascending order, optionally filtered by type.
    pub fn labels(&self, run_id: &str, kind: Option<PointType>) -> Result<Vec<u32>> {
        let mut labels: Vec<u32> = self
            .read_bd(run_id)?
            .iter()
            .filter(|r| kind.is_none() || r.kind == kind)
            .filter_map(|r| r.label)
            .collect();
        labels.sort_unstable();
        Ok(labels)
    }

    /// Run ids present under the root, sorted.
    pub fn runs(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        if !self.root.is_dir() {
            return Ok(out);
        }
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("run.json").is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }
}

fn not_found_or_io(e: std::io::Error, path: &Path) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.display().to_string())
    } else {
        Error::Io(e)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| not_found_or_io(e, path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check_version(value: &serde_json::Value, path: &Path) -> Result<()> {
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(Error::Format(format!(
            "{}: format version {v} is not supported (expected {FORMAT_VERSION}); recompute the run",
            path.display()
        ))),
        None => Err(Error::Format(format!("{}: missing format_version", path.display()))),
    }
}

/// Snapshot of a labeled point of a periodic-orbit run.
pub fn po_snapshot(system: &str, problem: &PoProblem, point: &Point) -> Result<Snapshot> {
    let info = point_info(point)?;
    Ok(Snapshot::Po(PoSnapshot::new(system, &problem.orbit(&point.u), &problem.released_names(), info)))
}

/// Snapshot of a labeled point of a torus run; the reference section is
/// recomputed from the point itself.
pub fn torus_snapshot(system: &str, problem: &TorusProblem, point: &Point) -> Result<Snapshot> {
    let info = point_info(point)?;
    let sol = problem.snapshot(&point.u)?;
    Ok(Snapshot::Torus(TorusSnapshot::new(system, &sol, &problem.released, info)))
}

fn point_info(point: &Point) -> Result<PointInfo> {
    let label = point
        .label
        .ok_or_else(|| Error::Input("only labeled points can be stored".into()))?;
    Ok(PointInfo {
        label,
        kind: point.kind,
        index: point.index,
        monitors: point.monitors.clone(),
        tangent: point.tangent.iter().copied().collect(),
    })
}

/// A problem rebuilt from disk, ready for [`crate::contin::run`].
pub struct Restart {
    pub vf: Arc<dyn VectorField>,
    pub problem: TorusProblem,
    pub start: Start,
}

fn system(name: &str) -> Result<Arc<dyn VectorField>> {
    builtin(name)
}

/// Continues tori from a stored torus, with a possibly different set of
/// released parameters.
pub fn restart_tor2tor(store: &RunStore, run_id: &str, label: u32, released: &[&str]) -> Result<Restart> {
    let snap = store.read_solution(run_id, label)?.into_torus()?;
    let vf = system(&snap.system)?;
    let sol = snap.solution()?;
    let problem = TorusProblem::new(vf.clone(), &sol, released)?;
    let start = Start::new(problem.to_vector(&sol));
    Ok(Restart { vf, problem, start })
}

/// Starts tori at a stored TR point of a periodic-orbit run.
///
/// `modes` defaults to [`DEFAULT_MODES`]; `eps` defaults to a tenth of the
/// orbit's RMS amplitude.
pub fn restart_tr2tor(
    store: &RunStore,
    run_id: &str,
    label: u32,
    modes: Option<usize>,
    eps: Option<f64>,
    released: &[&str],
) -> Result<Restart> {
    let snap = store.read_solution(run_id, label)?.into_po()?;
    if snap.point.kind != Some(PointType::TR) {
        return Err(Error::Type(format!(
            "label {label} of run '{run_id}' is not a TR point (type {})",
            snap.point.kind.map(|k| k.as_str()).unwrap_or("none")
        )));
    }
    let vf = system(&snap.system)?;
    let orbit = snap.orbit()?;
    let eps = eps.unwrap_or(0.1 * orbit.rms_amplitude());
    if !(eps.abs() > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "perturbation amplitude eps = {eps} gives a degenerate torus (the orbit itself); use eps > 0"
        )));
    }
    let floq = floquet(vf.as_ref(), &orbit)?;
    let init = init_from_tr(vf.as_ref(), &orbit, &floq, modes.unwrap_or(DEFAULT_MODES), eps)?;
    let problem = TorusProblem::new(vf.clone(), &init.solution, released)?;
    let u = problem.to_vector(&init.solution);
    let mut seed = DVector::zeros(u.len());
    seed.rows_mut(0, init.direction.len()).copy_from_slice(&init.direction);
    Ok(Restart {
        vf,
        problem,
        start: Start::with_seed(u, seed),
    })
}

/// Starts continuation along the secondary branch through a stored BP.
pub fn restart_bp2tor(store: &RunStore, run_id: &str, label: u32) -> Result<Restart> {
    let snap = store.read_solution(run_id, label)?.into_torus()?;
    if snap.point.kind != Some(PointType::BP) {
        return Err(Error::Type(format!("label {label} of run '{run_id}' is not a BP point")));
    }
    let vf = system(&snap.system)?;
    let sol = snap.solution()?;
    let released: Vec<&str> = snap.released.iter().map(|s| s.as_str()).collect();
    let problem = TorusProblem::new(vf.clone(), &sol, &released)?;
    let u = problem.to_vector(&sol);
    if snap.point.tangent.len() != u.len() {
        return Err(Error::Format("stored tangent does not match the torus unknowns".into()));
    }
    let incoming = DVector::from_vec(snap.point.tangent.clone());
    let start = switch_branch(&problem, &u, &incoming)?;
    Ok(Restart { vf, problem, start })
}

/// Sampled segments used to start tori without a periodic orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesFile {
    pub system: String,
    /// Common, strictly increasing time grid covering one return period.
    pub t: Vec<f64>,
    /// `segments[j][k]` is the state of segment `j` at `t[k]`; `2N+1` segments.
    pub segments: Vec<Vec<Vec<f64>>>,
    pub p: Vec<f64>,
    pub om1: f64,
    pub om2: f64,
    pub varrho: f64,
}

impl SamplesFile {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Starts tori from a samples file (see [`SamplesFile`]).
pub fn restart_isol2tor(samples: &SamplesFile, ntst: usize, degree: usize, released: &[&str]) -> Result<Restart> {
    let vf = system(&samples.system)?;
    let mesh = Arc::new(build_mesh(ntst, degree)?);
    let sol = init_from_samples(
        vf.as_ref(),
        mesh,
        &samples.t,
        &samples.segments,
        &samples.p,
        samples.om1,
        samples.om2,
        samples.varrho,
    )?;
    let problem = TorusProblem::new(vf.clone(), &sol, released)?;
    let start = Start::new(problem.to_vector(&sol));
    Ok(Restart { vf, problem, start })
}

/// Snapshots for every labeled point of a torus branch.
pub fn torus_snapshots(system: &str, problem: &TorusProblem, branch: &Branch) -> Result<Vec<Snapshot>> {
    branch.labeled().map(|p| torus_snapshot(system, problem, p)).collect()
}

/// Snapshots for every labeled point of a periodic-orbit branch.
pub fn po_snapshots(system: &str, problem: &PoProblem, branch: &Branch) -> Result<Vec<Snapshot>> {
    branch.labeled().map(|p| po_snapshot(system, problem, p)).collect()
}

/// Run metadata for a finished branch.
pub fn run_meta(
    run_id: &str,
    kind: SolutionKind,
    system: &str,
    released: &[String],
    problem: &dyn ZeroProblem,
    settings: &ContinuationSettings,
    branch: &Branch,
) -> RunMeta {
    RunMeta {
        format_version: FORMAT_VERSION,
        run_id: run_id.to_string(),
        kind,
        system: system.to_string(),
        released: released.to_vec(),
        monitor_names: problem.monitor_names(),
        settings: settings.clone(),
        notes: branch.notes.clone(),
    }
}
