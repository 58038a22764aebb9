//! Two-dimensional invariant tori as multi-segment boundary-value problems.
//!
//! The torus function `u(theta1, theta2)` is represented through the
//! characteristic curves `v(phi, t) = u(phi + om1 t, om2 t)`, sampled at
//! `2N+1` angles `phi_j`. Each curve is a trajectory of the original vector
//! field over `[T0, T0 + T]`, discretized by collocation, and the curves are
//! tied together by the all-to-all condition `v(phi + 2 pi varrho, 0) = v(phi, T)`
//! expressed in Fourier coefficients.
//!
//! Residual order (fixed):
//!
//! | block | rows | equation |
//! |---|---|---|
//! | a | per segment | collocation and continuity |
//! | b | `n (2N+1)` | `(F ⊗ I) vT - ((R F) ⊗ I) v0` |
//! | c | 1 | `T0` |
//! | d | 1 | `T - 2 pi / om2` |
//! | e | 1 | `varrho - om1 / om2` |
//! | f | 1 | `<v*_phi(0,0), v(0,0) - v*(0,0)>` |
//! | g | 1 | autonomous: `<f(0, v*(0,0), p*), v(0,0) - v*(0,0)>` |
//! | h | 1 | non-autonomous: `Omega - om2` |
//!
//! Global unknowns are ordered `(T0, T, p_1..p_q, om1, om2, varrho)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bordered::{BorderedOperator, BoundaryJacobian, GlobalColumn, MultiSegmentOperator};
use crate::colloc::{self, interpolate_into, SegmentMesh, Trajectory};
use crate::contin::ZeroProblem;
use crate::error::{input, Error, Result};
use crate::fourier::{dft_matrix, rotation_matrix, rotation_matrix_derivative, CouplingMatrices};
use crate::ivp::{integrate, transition_matrix, IvpOptions, Reference};
use crate::odesys::VectorField;
use crate::po::{FloquetData, PeriodicOrbit};

/// Number of parameters that must be released for a one-dimensional family.
pub const RELEASED_COUNT: usize = 4;

/// Names of the torus-specific parameters appended to the system parameters.
pub const TORUS_PARAMS: [&str; 3] = ["om1", "om2", "varrho"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSection {
    /// `v*(0, 0)`: initial point of the first segment.
    pub v_star_00: Vec<f64>,
    /// `v*_phi(0, 0)` from the phase-derivative weights.
    pub v_phi_star: Vec<f64>,
    /// `f(0, v*(0,0), p*)`; autonomous systems only.
    pub v_t_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TorusSolution {
    pub modes: usize,
    pub segments: Vec<Trajectory>,
    pub t0: f64,
    pub period: f64,
    pub p: Vec<f64>,
    pub om1: f64,
    pub om2: f64,
    pub varrho: f64,
    pub reference: ReferenceSection,
}

impl TorusSolution {
    pub fn n_seg(&self) -> usize {
        2 * self.modes + 1
    }

    pub fn dim(&self) -> usize {
        self.segments[0].dim
    }

    pub fn mesh(&self) -> &Arc<SegmentMesh> {
        &self.segments[0].mesh
    }

    pub fn coupling(&self) -> Result<CouplingMatrices> {
        dft_matrix(self.modes)
    }

    /// Stacked initial points `v(phi_j, 0)`.
    pub fn initial_points(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.first().to_vec()).collect()
    }

    /// Stacked end points `v(phi_j, T)`.
    pub fn end_points(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.last().to_vec()).collect()
    }

    /// Full global vector `(T0, T, p, om1, om2, varrho)`.
    pub fn globals(&self) -> Vec<f64> {
        let mut g = vec![self.t0, self.period];
        g.extend_from_slice(&self.p);
        g.extend_from_slice(&[self.om1, self.om2, self.varrho]);
        g
    }

    /// `v(phi, t)` for arbitrary `phi` (trigonometric interpolation across
    /// segments) and `t in [T0, T0 + T]` (collocation interpolation).
    pub fn eval(&self, coupling: &CouplingMatrices, phi: f64, t: f64) -> Result<DVector<f64>> {
        let n = self.dim();
        let w = coupling.interpolation_weights(phi);
        let mut x = vec![0.0; n];
        let mut out = DVector::zeros(n);
        for (j, seg) in self.segments.iter().enumerate() {
            interpolate_into(seg, t, &mut x)?;
            for i in 0..n {
                out[i] += w[j] * x[i];
            }
        }
        Ok(out)
    }
}

fn check_vf(vf: &dyn VectorField) -> Result<Option<usize>> {
    if vf.autonomous() {
        return Ok(None);
    }
    vf.forcing_frequency().map(Some).ok_or_else(|| {
        Error::Config(format!(
            "non-autonomous field '{}' does not declare a forcing-frequency parameter",
            vf.name()
        ))
    })
}

/// Recomputes the reference section from the solution itself.
pub fn update_reference(vf: &dyn VectorField, sol: &TorusSolution) -> Result<TorusSolution> {
    let mut out = sol.clone();
    out.reference = section_of(vf, &sol.initial_points(), sol.dim(), &sol.p, sol.modes)?;
    Ok(out)
}

fn section_of(vf: &dyn VectorField, v0: &[f64], n: usize, p: &[f64], modes: usize) -> Result<ReferenceSection> {
    let c = dft_matrix(modes)?;
    let v_star_00 = v0[..n].to_vec();
    let v_phi_star = c.phase_derivative(v0, n).iter().copied().collect();
    let v_t_star = if vf.autonomous() {
        let mut f = vec![0.0; n];
        vf.rhs(0.0, &v_star_00, p, &mut f);
        Some(f)
    } else {
        None
    };
    Ok(ReferenceSection {
        v_star_00,
        v_phi_star,
        v_t_star,
    })
}

fn check_solution(vf: &dyn VectorField, sol: &TorusSolution) -> Result<()> {
    if sol.segments.len() != sol.n_seg() {
        return input(format!("expected {} segments, got {}", sol.n_seg(), sol.segments.len()));
    }
    let n = vf.dim_state();
    if sol.p.len() != vf.dim_params() {
        return input("parameter vector has the wrong length");
    }
    let mesh = sol.mesh();
    for s in &sol.segments {
        if s.dim != n || !Arc::ptr_eq(&s.mesh, mesh) && s.mesh.num_basepoints() != mesh.num_basepoints() {
            return input("all segments must share one mesh and the field dimension");
        }
        if s.x_bp.len() != mesh.num_basepoints() * n {
            return input("segment base-point array has the wrong length");
        }
    }
    Ok(())
}

/// Full residual in the fixed (a)–(h) order.
pub fn torus_residual(vf: &dyn VectorField, sol: &TorusSolution) -> Result<DVector<f64>> {
    check_solution(vf, sol)?;
    let forcing = check_vf(vf)?;
    let coupling = sol.coupling()?;
    let n = sol.dim();
    let mesh = sol.mesh();
    let neq = mesh.num_equations(n);
    let ns = sol.n_seg();
    let mut out = DVector::zeros(ns * neq + ns * n + 5);
    for (j, seg) in sol.segments.iter().enumerate() {
        colloc::residual_into(
            vf,
            mesh,
            n,
            &seg.x_bp,
            sol.t0,
            sol.period,
            &sol.p,
            &mut out.as_mut_slice()[j * neq..(j + 1) * neq],
        );
    }
    let v0 = sol.initial_points();
    let vt = sol.end_points();
    let r = rotation_matrix(sol.modes, sol.varrho);
    let cres = crate::fourier::coupling_residual(&v0, &vt, &r, &coupling.f, n)?;
    let mut k = ns * neq;
    out.rows_mut(k, ns * n).copy_from(&cres);
    k += ns * n;
    let refs = &sol.reference;
    let dv: Vec<f64> = (0..n).map(|i| v0[i] - refs.v_star_00[i]).collect();
    out[k] = sol.t0;
    out[k + 1] = sol.period - 2.0 * PI / sol.om2;
    out[k + 2] = sol.varrho - sol.om1 / sol.om2;
    out[k + 3] = (0..n).map(|i| refs.v_phi_star[i] * dv[i]).sum();
    out[k + 4] = match forcing {
        None => {
            let vt = refs
                .v_t_star
                .as_ref()
                .ok_or_else(|| Error::Input("autonomous reference section lacks v_t".into()))?;
            (0..n).map(|i| vt[i] * dv[i]).sum()
        }
        Some(idx) => sol.p[idx] - sol.om2,
    };
    Ok(out)
}

/// Continuation problem for tori.
pub struct TorusProblem {
    pub vf: Arc<dyn VectorField>,
    pub mesh: Arc<SegmentMesh>,
    pub modes: usize,
    coupling: CouplingMatrices,
    /// Full global vector of the start solution; fixed entries stay here.
    pub base_globals: Vec<f64>,
    /// Global indices of the unknowns: `T0`, `T`, then the released names.
    pub free: Vec<usize>,
    pub released: Vec<String>,
    pub reference: ReferenceSection,
    forcing: Option<usize>,
}

impl TorusProblem {
    /// Builds the problem releasing exactly [`RELEASED_COUNT`] parameters.
    ///
    /// If more names are given, the first four are released and the rest
    /// are only monitored (they are monitored anyway).
    pub fn new(vf: Arc<dyn VectorField>, sol: &TorusSolution, released: &[&str]) -> Result<Self> {
        if released.len() < RELEASED_COUNT {
            return Err(Error::Config(format!(
                "torus problems need {RELEASED_COUNT} released parameters, got {}: the system is over-determined",
                released.len()
            )));
        }
        Self::with_released_unchecked(vf, sol, &released[..RELEASED_COUNT])
    }

    /// As [`TorusProblem::new`] without the count check; used for
    /// dimension accounting.
    pub fn with_released_unchecked(vf: Arc<dyn VectorField>, sol: &TorusSolution, released: &[&str]) -> Result<Self> {
        check_solution(vf.as_ref(), sol)?;
        let forcing = check_vf(vf.as_ref())?;
        let names = global_names(vf.as_ref());
        let mut free = vec![0, 1];
        for r in released {
            let i = names
                .iter()
                .skip(2)
                .position(|n| n == r)
                .map(|i| i + 2)
                .ok_or_else(|| Error::Config(format!("unknown parameter '{r}' (allowed: {})", names[2..].join(", "))))?;
            if free.contains(&i) {
                return Err(Error::Config(format!("parameter '{r}' released twice")));
            }
            free.push(i);
        }
        Ok(Self {
            mesh: sol.mesh().clone(),
            modes: sol.modes,
            coupling: sol.coupling()?,
            base_globals: sol.globals(),
            free,
            released: released.iter().map(|s| s.to_string()).collect(),
            reference: sol.reference.clone(),
            forcing,
            vf,
        })
    }

    fn n(&self) -> usize {
        self.vf.dim_state()
    }

    fn seg_len(&self) -> usize {
        self.mesh.num_basepoints() * self.n()
    }

    fn nx(&self) -> usize {
        self.seg_len() * (2 * self.modes + 1)
    }

    pub fn num_equations(&self) -> usize {
        let ns = 2 * self.modes + 1;
        ns * self.mesh.num_equations(self.n()) + ns * self.n() + 5
    }

    /// Unknowns minus equations; `-3` with no released parameters.
    pub fn dimension_deficit(&self) -> i64 {
        self.num_unknowns() as i64 - self.num_equations() as i64
    }

    pub fn to_vector(&self, sol: &TorusSolution) -> DVector<f64> {
        let nx = self.nx();
        let mut u = DVector::zeros(nx + self.free.len());
        let l = self.seg_len();
        for (j, s) in sol.segments.iter().enumerate() {
            u.rows_mut(j * l, l).copy_from_slice(&s.x_bp);
        }
        let g = sol.globals();
        for (k, &i) in self.free.iter().enumerate() {
            u[nx + k] = g[i];
        }
        u
    }

    fn globals_of(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut g = self.base_globals.clone();
        let nx = self.nx();
        for (k, &i) in self.free.iter().enumerate() {
            g[i] = u[nx + k];
        }
        g
    }

    pub fn solution(&self, u: &DVector<f64>) -> TorusSolution {
        let g = self.globals_of(u);
        let q = self.vf.dim_params();
        let l = self.seg_len();
        let segments = (0..2 * self.modes + 1)
            .map(|j| Trajectory {
                mesh: self.mesh.clone(),
                dim: self.n(),
                x_bp: u.as_slice()[j * l..(j + 1) * l].to_vec(),
                duration: g[1],
                t_offset: g[0],
            })
            .collect();
        TorusSolution {
            modes: self.modes,
            segments,
            t0: g[0],
            period: g[1],
            p: g[2..2 + q].to_vec(),
            om1: g[2 + q],
            om2: g[3 + q],
            varrho: g[4 + q],
            reference: self.reference.clone(),
        }
    }

    /// Solution at `u` with the reference section recomputed from `u`
    /// itself, suitable for storing and restarting.
    pub fn snapshot(&self, u: &DVector<f64>) -> Result<TorusSolution> {
        update_reference(self.vf.as_ref(), &self.solution(u))
    }

    /// Unit vector in `u` along a named global, if it is free.
    pub fn unit_vector(&self, name: &str) -> Option<DVector<f64>> {
        let names = global_names(self.vf.as_ref());
        let gi = names.iter().position(|n| n == name)?;
        let k = self.free.iter().position(|&i| i == gi)?;
        let mut e = DVector::zeros(self.num_unknowns());
        e[self.nx() + k] = 1.0;
        Some(e)
    }
}

/// Names of the global unknowns in order.
pub fn global_names(vf: &dyn VectorField) -> Vec<String> {
    let mut names = vec!["T0".to_string(), "T".to_string()];
    names.extend(vf.param_names().iter().cloned());
    names.extend(TORUS_PARAMS.iter().map(|s| s.to_string()));
    names
}

impl ZeroProblem for TorusProblem {
    fn num_unknowns(&self) -> usize {
        self.nx() + self.free.len()
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        torus_residual(self.vf.as_ref(), &self.solution(u))
    }

    fn linearize(&self, u: &DVector<f64>) -> Result<Box<dyn BorderedOperator>> {
        let g = self.globals_of(u);
        let (n, q) = (self.n(), self.vf.dim_params());
        let ns = 2 * self.modes + 1;
        let l = self.seg_len();
        let (t0, period) = (g[0], g[1]);
        let p = &g[2..2 + q];
        let (om1, om2, varrho) = (g[2 + q], g[3 + q], g[4 + q]);

        let jacs = (0..ns)
            .map(|j| colloc::jacobian_blocks(self.vf.as_ref(), &self.mesh, n, &u.as_slice()[j * l..(j + 1) * l], t0, period, p))
            .collect();
        let columns: Vec<GlobalColumn> = self
            .free
            .iter()
            .map(|&i| match i {
                0 => GlobalColumn::TOffset,
                1 => GlobalColumn::Duration,
                i if i < 2 + q => GlobalColumn::Param(i - 2),
                _ => GlobalColumn::Zero,
            })
            .collect();
        let ng = columns.len();
        let nb = ns * n + 5;
        let mut bx0 = DMatrix::zeros(nb, ns * n);
        let mut bxt = DMatrix::zeros(nb, ns * n);
        let mut bg = DMatrix::zeros(nb, ng);
        let f = &self.coupling.f;
        let rf = rotation_matrix(self.modes, varrho) * f;
        for r in 0..ns {
            for j in 0..ns {
                for i in 0..n {
                    bxt[(r * n + i, j * n + i)] = f[(r, j)];
                    bx0[(r * n + i, j * n + i)] = -rf[(r, j)];
                }
            }
        }
        let col = |gi: usize| self.free.iter().position(|&i| i == gi);
        if let Some(c) = col(4 + q) {
            let drf = rotation_matrix_derivative(self.modes, varrho) * f;
            let v0: Vec<f64> = (0..ns).flat_map(|j| u.as_slice()[j * l..j * l + n].to_vec()).collect();
            let d = crate::fourier::kron_apply(&drf, &v0, n);
            for k in 0..ns * n {
                bg[(k, c)] = -d[k];
            }
        }
        let k = ns * n;
        if let Some(c) = col(0) {
            bg[(k, c)] = 1.0;
        }
        if let Some(c) = col(1) {
            bg[(k + 1, c)] = 1.0;
        }
        if let Some(c) = col(3 + q) {
            bg[(k + 1, c)] = 2.0 * PI / (om2 * om2);
            bg[(k + 2, c)] = om1 / (om2 * om2);
        }
        if let Some(c) = col(4 + q) {
            bg[(k + 2, c)] = 1.0;
        }
        if let Some(c) = col(2 + q) {
            bg[(k + 2, c)] = -1.0 / om2;
        }
        for i in 0..n {
            bx0[(k + 3, i)] = self.reference.v_phi_star[i];
        }
        match self.forcing {
            None => {
                let vt = self.reference.v_t_star.as_ref().expect("autonomous section has v_t");
                for i in 0..n {
                    bx0[(k + 4, i)] = vt[i];
                }
            }
            Some(idx) => {
                if let Some(c) = col(2 + idx) {
                    bg[(k + 4, c)] = 1.0;
                }
                if let Some(c) = col(3 + q) {
                    bg[(k + 4, c)] = -1.0;
                }
            }
        }
        let op = MultiSegmentOperator::new(
            jacs,
            columns,
            BoundaryJacobian {
                x0: bx0,
                xt: bxt,
                g: bg,
            },
        )?;
        Ok(Box::new(op))
    }

    fn monitor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.vf.param_names().to_vec();
        names.extend(TORUS_PARAMS.iter().map(|s| s.to_string()));
        names.push("T".into());
        names
    }

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
        let g = self.globals_of(u);
        let mut m = g[2..].to_vec();
        m.push(g[1]);
        m
    }

    fn weights(&self) -> DVector<f64> {
        let nx = self.nx();
        let npts = (nx / self.n()) as f64;
        DVector::from_fn(self.num_unknowns(), |i, _| if i < nx { 1.0 / npts } else { 1.0 })
    }

    fn primary_index(&self) -> Option<usize> {
        (self.free.len() > 2).then(|| self.nx() + 2)
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let sol = self.solution(u);
        self.reference = section_of(self.vf.as_ref(), &sol.initial_points(), self.n(), &sol.p, self.modes)?;
        Ok(())
    }
}

/// Local Lagrange interpolation on a (possibly non-uniform) grid.
fn interp_grid(t_grid: &[f64], values: &[Vec<f64>], t: f64, order: usize) -> Vec<f64> {
    let m = t_grid.len();
    let k = order.min(m - 1) + 1;
    let pos = t_grid.partition_point(|&x| x < t);
    let start = pos.saturating_sub(k / 2).min(m - k);
    let pts = &t_grid[start..start + k];
    let n = values[0].len();
    let mut out = vec![0.0; n];
    for a in 0..k {
        let mut w = 1.0;
        for b in 0..k {
            if a != b {
                w *= (t - pts[b]) / (pts[a] - pts[b]);
            }
        }
        for i in 0..n {
            out[i] += w * values[start + a][i];
        }
    }
    out
}

/// Builds a torus from state samples of each segment on a common time grid
/// covering one return period. `samples[j][k]` is the state of segment `j`
/// at `t_grid[k]`.
#[allow(clippy::too_many_arguments)]
pub fn init_from_samples(
    vf: &dyn VectorField,
    mesh: Arc<SegmentMesh>,
    t_grid: &[f64],
    samples: &[Vec<Vec<f64>>],
    p: &[f64],
    om1: f64,
    om2: f64,
    varrho: f64,
) -> Result<TorusSolution> {
    let ns = samples.len();
    if ns < 3 || ns % 2 == 0 {
        return input(format!("segment count must be odd and at least 3 (2N+1), got {ns}"));
    }
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return input("time grid must be strictly increasing with at least two points");
    }
    if p.len() != vf.dim_params() {
        return input("parameter vector has the wrong length");
    }
    check_vf(vf)?;
    let n = vf.dim_state();
    for s in samples {
        if s.len() != t_grid.len() || s.iter().any(|x| x.len() != n) {
            return input("samples must hold one state of the field dimension per grid time");
        }
    }
    let modes = (ns - 1) / 2;
    let t0 = t_grid[0];
    let period = t_grid[t_grid.len() - 1] - t0;
    let segments = samples
        .iter()
        .map(|s| Trajectory::from_fn(mesh.clone(), n, t0, period, |t| Ok(interp_grid(t_grid, s, t, 5))))
        .collect::<Result<Vec<_>>>()?;
    let v0: Vec<f64> = segments.iter().flat_map(|s| s.first().to_vec()).collect();
    let reference = section_of(vf, &v0, n, p, modes)?;
    Ok(TorusSolution {
        modes,
        segments,
        t0,
        period,
        p: p.to_vec(),
        om1,
        om2,
        varrho,
        reference,
    })
}

/// Rotates `v` by `e^{i theta}` so that its real and imaginary parts are
/// orthogonal, and normalizes it.
pub fn orthogonalize_eigvec(v: &DVector<num_complex::Complex64>) -> DVector<num_complex::Complex64> {
    let vr: DVector<f64> = v.map(|z| z.re);
    let vi: DVector<f64> = v.map(|z| z.im);
    let theta = 0.5 * (2.0 * vr.dot(&vi)).atan2(vi.dot(&vi) - vr.dot(&vr));
    let rot = num_complex::Complex64::from_polar(1.0, theta);
    let out = v.map(|z| z * rot);
    let norm = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    out / num_complex::Complex64::new(norm, 0.0)
}

/// Torus guess near a TR orbit, and the perturbation direction (in base
/// points, segment-major) used to seed the first correction.
pub struct TrInit {
    pub solution: TorusSolution,
    /// `d solution / d eps`, stacked like the base points of all segments.
    pub direction: Vec<f64>,
}

/// Builds the perturbed torus around a periodic orbit with a TR pair.
pub fn init_from_tr(vf: &dyn VectorField, po: &PeriodicOrbit, floq: &FloquetData, modes: usize, eps: f64) -> Result<TrInit> {
    let (Some(alpha), Some(v)) = (floq.tr_angle, floq.tr_eigvec.as_ref()) else {
        return input("Floquet data carries no TR pair");
    };
    if modes < 1 {
        return input("number of Fourier modes must be at least 1");
    }
    check_vf(vf)?;
    let v = orthogonalize_eigvec(v);
    let traj = &po.traj;
    let n = traj.dim;
    let (t0, period) = (traj.t_offset, traj.duration);
    let times = traj.basepoint_times();
    let tm = transition_matrix(vf, t0, period, Reference::Initial(traj.first()), &po.p, &times, &IvpOptions::tight())?;
    let om1 = alpha / period;
    let om2 = 2.0 * PI / period;
    let varrho = alpha / (2.0 * PI);
    // u(t) = exp(-i alpha (t - t0) / T) M(t, t0) v at every base point
    let vr: DVector<f64> = v.map(|z| z.re);
    let vi: DVector<f64> = v.map(|z| z.im);
    let us: Vec<(DVector<f64>, DVector<f64>)> = times
        .iter()
        .zip(&tm.phi)
        .map(|(&t, phi)| {
            let (mr, mi) = (phi * &vr, phi * &vi);
            let (s, c) = (-alpha * (t - t0) / period).sin_cos();
            (&mr * c - &mi * s, &mr * s + &mi * c)
        })
        .collect();
    let coupling = dft_matrix(modes)?;
    let nbp = times.len();
    let mut direction = Vec::with_capacity(coupling.n_seg * nbp * n);
    let mut segments = Vec::with_capacity(coupling.n_seg);
    for &phi in &coupling.angles {
        let mut x_bp = Vec::with_capacity(nbp * n);
        for (k, &t) in times.iter().enumerate() {
            let th = phi + om1 * (t - t0);
            let (s, c) = th.sin_cos();
            let (ur, ui) = &us[k];
            for i in 0..n {
                let d = c * ur[i] - s * ui[i];
                direction.push(d);
                x_bp.push(traj.point(k)[i] + eps * d);
            }
        }
        segments.push(Trajectory::new(traj.mesh.clone(), n, x_bp, period, t0)?);
    }
    let v0: Vec<f64> = segments.iter().flat_map(|s| s.first().to_vec()).collect();
    let reference = section_of(vf, &v0, n, &po.p, modes)?;
    Ok(TrInit {
        solution: TorusSolution {
            modes,
            segments,
            t0,
            period,
            p: po.p.clone(),
            om1,
            om2,
            varrho,
            reference,
        },
        direction,
    })
}

/// Grid of torus points `u(theta1, theta2) = v(theta1 - varrho theta2, theta2 / om2)`.
/// Rows are `theta1 = phi_j` (segment angles), columns are `theta2_count`
/// uniform values in `[0, 2 pi]`.
pub fn export_torus_mesh(sol: &TorusSolution, theta2_count: usize) -> Result<Vec<Vec<DVector<f64>>>> {
    if theta2_count < 2 {
        return input("at least two theta2 values are required");
    }
    let c = sol.coupling()?;
    let mut grid = Vec::with_capacity(sol.n_seg());
    for &th1 in &c.angles {
        let mut row = Vec::with_capacity(theta2_count);
        for k in 0..theta2_count {
            let th2 = 2.0 * PI * k as f64 / (theta2_count - 1) as f64;
            let t = (th2 / sol.om2).min(sol.period);
            row.push(sol.eval(&c, th1 - sol.varrho * th2, sol.t0 + t)?);
        }
        grid.push(row);
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub deviations: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

/// Integrates from `v(phi_1, 0)` over `returns` periods and compares each
/// return with the trigonometric interpolant of the initial circle at
/// `phi_1 + 2 pi k varrho`.
pub fn validate_invariance(vf: &dyn VectorField, sol: &TorusSolution, returns: usize) -> Result<InvarianceReport> {
    if returns == 0 {
        return input("at least one return is required");
    }
    let c = sol.coupling()?;
    let n = sol.dim();
    let v0 = sol.initial_points();
    let times: Vec<f64> = (0..=returns).map(|k| sol.t0 + k as f64 * sol.period).collect();
    let states = integrate(vf, &times, &v0[..n], &sol.p, &IvpOptions::tight())?;
    let deviations: Vec<f64> = (1..=returns)
        .map(|k| {
            let phi = c.angles[0] + 2.0 * PI * k as f64 * sol.varrho;
            (c.interpolate(&v0, n, phi) - &states[k]).norm()
        })
        .collect();
    let max = deviations.iter().copied().fold(0.0, f64::max);
    let mean = deviations.iter().sum::<f64>() / returns as f64;
    Ok(InvarianceReport { deviations, max, mean })
}

/// Re-discretizes a torus on a different number of modes and mesh by
/// interpolation (trigonometric in `phi`, piecewise polynomial in `t`).
pub fn resample(vf: &dyn VectorField, sol: &TorusSolution, modes: usize, mesh: Arc<SegmentMesh>) -> Result<TorusSolution> {
    let old = sol.coupling()?;
    let new = dft_matrix(modes)?;
    let n = sol.dim();
    let segments = new
        .angles
        .iter()
        .map(|&phi| {
            Trajectory::from_fn(mesh.clone(), n, sol.t0, sol.period, |t| {
                Ok(sol.eval(&old, phi, t.min(sol.t0 + sol.period))?.iter().copied().collect())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TorusSolution {
        modes,
        segments,
        ..sol.clone()
    };
    out.reference = section_of(vf, &out.initial_points(), n, &out.p, modes)?;
    Ok(out)
}
