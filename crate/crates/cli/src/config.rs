//! Declarative run configuration.
//!
//! A config file names one builtin system and a list of `[[stage]]` tables
//! that are executed in order. Later stages start from labeled points of
//! earlier runs, which they read back from the run directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use torcont::contin::{Bound, ContinuationSettings};
use torcont::odesys::{builtin, VectorField};
use torcont::torus::{RELEASED_COUNT, TORUS_PARAMS};
use torcont::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: String,
    #[serde(rename = "stage", default)]
    pub stages: Vec<StageConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    /// Periodic orbits from a simulated initial condition.
    Po,
    /// Tori born at a TR point of a periodic-orbit run.
    Tr2tor,
    /// Tori restarted from a torus of an earlier run.
    Tor2tor,
    /// Tori from sampled trajectory segments.
    Isol2tor,
    /// Tori along the secondary branch through a BP of an earlier run.
    Bp2tor,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Po => "po",
            StageKind::Tr2tor => "tr2tor",
            StageKind::Tor2tor => "tor2tor",
            StageKind::Isol2tor => "isol2tor",
            StageKind::Bp2tor => "bp2tor",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub run_id: String,
    pub kind: StageKind,
    pub from: Option<Source>,
    #[serde(default)]
    pub released: Vec<String>,
    pub ntst: Option<usize>,
    pub degree: Option<usize>,
    pub modes: Option<usize>,
    pub eps: Option<f64>,
    pub simulate: Option<Simulate>,
    pub samples: Option<Samples>,
    #[serde(default)]
    pub cont: ContConfig,
}

/// A labeled point of an earlier run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub run: String,
    pub label: LabelSelector,
}

/// Either an explicit label or `"TYPE"`, `"TYPE:first"`, `"TYPE:last"`,
/// `"TYPE:<k>"` (k-th point of that type, counting from 1).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LabelSelector {
    Label(u32),
    Select(String),
}

/// Periodic-orbit initial data: simulate from `x0`, discard `transient`
/// time units, then sample one `period`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulate {
    pub x0: Vec<f64>,
    pub p: Vec<f64>,
    pub transient: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    /// Samples file, relative to the config file.
    pub file: Option<PathBuf>,
    pub generate: Option<Generate>,
}

/// Samples from trajectories started on a circle in the first two state
/// components, after a transient of `transient_returns` return times
/// `2 pi / om2`. The samples are written to the run directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generate {
    pub modes: usize,
    pub p: Vec<f64>,
    pub om1: f64,
    pub om2: f64,
    pub varrho: f64,
    pub radius: f64,
    #[serde(default = "default_transient_returns")]
    pub transient_returns: f64,
    /// Grid points per segment; defaults to ten per segment count.
    pub points: Option<usize>,
}

fn default_transient_returns() -> f64 {
    10.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContConfig {
    pub h0: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub pt_max: Option<usize>,
    pub bi_direct: Option<bool>,
    pub npr: Option<usize>,
    pub max_newton_iter: Option<usize>,
    pub max_start_iter: Option<usize>,
    pub tol: Option<f64>,
    pub detect_bp: Option<bool>,
    pub max_angle: Option<f64>,
    #[serde(default)]
    pub bounds: Vec<BoundConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub monitor: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl ContConfig {
    pub fn settings(&self) -> ContinuationSettings {
        let d = ContinuationSettings::default();
        ContinuationSettings {
            h0: self.h0.unwrap_or(d.h0),
            h_min: self.h_min.unwrap_or(d.h_min),
            h_max: self.h_max.unwrap_or(d.h_max),
            pt_max: self.pt_max.unwrap_or(d.pt_max),
            bi_direct: self.bi_direct.unwrap_or(d.bi_direct),
            npr: self.npr.unwrap_or(d.npr),
            max_newton_iter: self.max_newton_iter.unwrap_or(d.max_newton_iter),
            max_start_iter: self.max_start_iter.unwrap_or(d.max_start_iter),
            tol: self.tol.unwrap_or(d.tol),
            detect_bp: self.detect_bp.unwrap_or(d.detect_bp),
            max_angle: self.max_angle.unwrap_or(d.max_angle),
            bounds: self
                .bounds
                .iter()
                .map(|b| Bound {
                    monitor: b.monitor.clone(),
                    min: b.min,
                    max: b.max,
                })
                .collect(),
        }
    }
}

/// A config file together with the directory relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }
}

/// Parses and validates a config.
pub fn parse(text: &str) -> Result<Config> {
    let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    validate(&config)?;
    Ok(config)
}

fn field_err(i: usize, field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("stage[{i}].{field}: {msg}"))
}

pub fn validate(config: &Config) -> Result<()> {
    let vf = builtin(&config.system)
        .map_err(|_| Error::Config(format!("system: unknown builtin '{}' (available: langford, vdp)", config.system)))?;
    if config.stages.is_empty() {
        return Err(Error::Config("no [[stage]] tables".into()));
    }
    let mut seen = HashSet::new();
    for (i, st) in config.stages.iter().enumerate() {
        if !seen.insert(st.run_id.as_str()) {
            return Err(field_err(i, "run_id", format!("'{}' is used by an earlier stage", st.run_id)));
        }
        validate_stage(vf.as_ref(), i, st)?;
    }
    Ok(())
}

fn validate_stage(vf: &dyn VectorField, i: usize, st: &StageConfig) -> Result<()> {
    let params = vf.param_names();
    let needs_source = matches!(st.kind, StageKind::Tr2tor | StageKind::Tor2tor | StageKind::Bp2tor);
    match (&st.from, needs_source) {
        (None, true) => return Err(field_err(i, "from", format!("required for kind '{}'", st.kind.as_str()))),
        (Some(_), false) => return Err(field_err(i, "from", format!("not used by kind '{}'", st.kind.as_str()))),
        _ => {}
    }
    if let Some(LabelSelector::Select(s)) = st.from.as_ref().map(|f| &f.label) {
        parse_selector(s).map_err(|m| field_err(i, "from.label", m))?;
    }
    let check_len = |field: &str, v: &[f64], n: usize| {
        if v.len() == n {
            Ok(())
        } else {
            Err(field_err(i, field, format!("expected {n} values, got {}", v.len())))
        }
    };
    match st.kind {
        StageKind::Po => {
            if st.released.len() != 1 {
                return Err(field_err(i, "released", "periodic-orbit runs release exactly one parameter"));
            }
            if !params.contains(&st.released[0]) {
                return Err(field_err(
                    i,
                    "released",
                    format!("unknown parameter '{}' (known: {})", st.released[0], params.join(", ")),
                ));
            }
            let sim = st.simulate.as_ref().ok_or_else(|| field_err(i, "simulate", "required for kind 'po'"))?;
            check_len("simulate.x0", &sim.x0, vf.dim_state())?;
            check_len("simulate.p", &sim.p, params.len())?;
        }
        StageKind::Bp2tor => {
            if !st.released.is_empty() {
                return Err(field_err(i, "released", "bp2tor keeps the released set of the source run"));
            }
        }
        _ => {
            for name in &st.released {
                if !params.contains(name) && !TORUS_PARAMS.contains(&name.as_str()) {
                    return Err(field_err(
                        i,
                        "released",
                        format!(
                            "unknown parameter '{name}' (known: {}, {})",
                            params.join(", "),
                            TORUS_PARAMS.join(", ")
                        ),
                    ));
                }
            }
            if st.released.len() < RELEASED_COUNT {
                return Err(field_err(
                    i,
                    "released",
                    format!("tori need {RELEASED_COUNT} released parameters, got {}", st.released.len()),
                ));
            }
        }
    }
    if st.kind == StageKind::Isol2tor {
        let s = st.samples.as_ref().ok_or_else(|| field_err(i, "samples", "required for kind 'isol2tor'"))?;
        match (&s.file, &s.generate) {
            (Some(_), None) => {}
            (None, Some(g)) => {
                check_len("samples.generate.p", &g.p, params.len())?;
                if g.modes == 0 {
                    return Err(field_err(i, "samples.generate.modes", "must be positive"));
                }
                if vf.dim_state() < 2 {
                    return Err(field_err(i, "samples.generate", "needs at least two state components"));
                }
            }
            _ => return Err(field_err(i, "samples", "give exactly one of 'file' or 'generate'")),
        }
    } else if st.samples.is_some() {
        return Err(field_err(i, "samples", format!("not used by kind '{}'", st.kind.as_str())));
    }
    if st.kind != StageKind::Po && st.simulate.is_some() {
        return Err(field_err(i, "simulate", format!("not used by kind '{}'", st.kind.as_str())));
    }
    if !matches!(st.kind, StageKind::Po | StageKind::Isol2tor) && (st.ntst.is_some() || st.degree.is_some()) {
        return Err(field_err(i, "ntst", "the discretization of a restart is taken from the source point"));
    }
    if st.kind != StageKind::Tr2tor && (st.modes.is_some() || st.eps.is_some()) {
        return Err(field_err(i, "modes", "only tr2tor stages take 'modes' and 'eps'"));
    }
    let c = &st.cont;
    for (name, v) in [("h0", c.h0), ("h_min", c.h_min), ("h_max", c.h_max), ("tol", c.tol)] {
        if let Some(v) = v {
            if !(v > 0.0) {
                return Err(field_err(i, &format!("cont.{name}"), "must be positive"));
            }
        }
    }
    let s = c.settings();
    if s.h_min > s.h0 || s.h0 > s.h_max {
        return Err(field_err(i, "cont", "step sizes must satisfy h_min <= h0 <= h_max"));
    }
    Ok(())
}

/// Parsed form of a string label selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    First,
    Last,
    Nth(usize),
}

pub fn parse_selector(s: &str) -> std::result::Result<(torcont::contin::PointType, Which), String> {
    let (kind, which) = match s.split_once(':') {
        Some((k, w)) => (k, w),
        None => (s, "first"),
    };
    let kind = torcont::contin::PointType::parse(kind)
        .ok_or_else(|| format!("unknown point type '{kind}' (EP, TR, BP, RO)"))?;
    let which = match which {
        "first" => Which::First,
        "last" => Which::Last,
        n => match n.parse::<usize>() {
            Ok(k) if k > 0 => Which::Nth(k),
            _ => return Err(format!("selector '{s}': expected first, last or a positive index after ':'")),
        },
    };
    Ok((kind, which))
}
