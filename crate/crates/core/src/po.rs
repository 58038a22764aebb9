//! Periodic orbits as collocation boundary-value problems, their Floquet
//! multipliers, and the Neimark–Sacker (TR) test function.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bordered::{BorderedOperator, BoundaryJacobian, GlobalColumn, MultiSegmentOperator};
use crate::colloc::{segment_jacobian, segment_residual, SegmentMesh, Trajectory};
use crate::contin::{PointType, ZeroProblem};
use crate::error::{input, Error, Result};
use crate::ivp::{integrate, integrate_dense, transition_matrix, IvpOptions, Reference};
use crate::odesys::VectorField;

/// Imaginary parts below this are treated as real multipliers.
pub const IMAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub traj: Trajectory,
    pub p: Vec<f64>,
    /// Frozen copy of the orbit defining the Poincaré section.
    pub reference: Trajectory,
    pub reference_params: Vec<f64>,
}

impl PeriodicOrbit {
    /// An orbit that serves as its own reference.
    pub fn new(traj: Trajectory, p: Vec<f64>) -> Self {
        Self {
            reference: traj.clone(),
            reference_params: p.clone(),
            traj,
            p,
        }
    }

    pub fn period(&self) -> f64 {
        self.traj.duration
    }

    /// Samples one period of a simulated trajectory after a transient.
    ///
    /// Integrates from `x0` over `[0, transient]`, then samples the next
    /// `period` time units at the mesh base points.
    pub fn from_simulation(
        vf: &dyn VectorField,
        mesh: Arc<SegmentMesh>,
        x0: &[f64],
        p: &[f64],
        transient: f64,
        period: f64,
    ) -> Result<Self> {
        if !(period > 0.0) || transient < 0.0 {
            return input("period must be positive and transient non-negative");
        }
        let opts = IvpOptions::tight();
        let start = if transient > 0.0 {
            integrate(vf, &[0.0, transient], x0, p, &opts)?.pop().unwrap()
        } else {
            DVector::from_column_slice(x0)
        };
        // a non-autonomous orbit must start at a multiple of the forcing period
        let t0 = if vf.autonomous() { 0.0 } else { transient };
        let sol = integrate_dense(vf, t0, t0 + period, start.as_slice(), p, &opts)?;
        let traj = Trajectory::from_fn(mesh, vf.dim_state(), 0.0, period, |t| {
            Ok(sol.eval(t0 + t)?.iter().copied().collect())
        })?;
        Ok(Self::new(traj, p.to_vec()))
    }

    /// Root-mean-square distance of the base points from their mean.
    pub fn rms_amplitude(&self) -> f64 {
        let n = self.traj.dim;
        let nbp = self.traj.mesh.num_basepoints();
        let mut mean = vec![0.0; n];
        for i in 0..nbp {
            for (c, v) in self.traj.point(i).iter().enumerate() {
                mean[c] += v / nbp as f64;
            }
        }
        let ss: f64 = (0..nbp)
            .map(|i| self.traj.point(i).iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
            .sum();
        (ss / nbp as f64).sqrt()
    }
}

/// Poincaré section data: the reference point and the flow direction there.
#[derive(Debug, Clone, PartialEq)]
pub struct PoSection {
    pub x0: Vec<f64>,
    pub f0: Vec<f64>,
}

impl PoSection {
    pub fn from_orbit(vf: &dyn VectorField, reference: &Trajectory, p: &[f64]) -> Self {
        let x0 = reference.first().to_vec();
        let mut f0 = vec![0.0; x0.len()];
        vf.rhs(reference.t_offset, &x0, p, &mut f0);
        Self { x0, f0 }
    }
}

fn forcing_index(vf: &dyn VectorField) -> Result<usize> {
    vf.forcing_frequency().ok_or_else(|| {
        Error::Config(format!(
            "non-autonomous field '{}' does not declare a forcing-frequency parameter",
            vf.name()
        ))
    })
}

/// Collocation ⊕ periodicity `x(T) - x(0)` ⊕ either the Poincaré condition
/// `<f_ref, x(0) - x_ref(0)>` (autonomous) or `T - 2 pi / Omega`
/// (non-autonomous, pinning the period to the forcing period).
pub fn po_residual(vf: &dyn VectorField, traj: &Trajectory, p: &[f64], section: &PoSection) -> Result<DVector<f64>> {
    let seg = segment_residual(vf, traj, p)?;
    let n = traj.dim;
    let mut out = DVector::zeros(seg.len() + n + 1);
    out.rows_mut(0, seg.len()).copy_from(&seg);
    let (x0, xt) = (traj.first(), traj.last());
    for i in 0..n {
        out[seg.len() + i] = xt[i] - x0[i];
    }
    out[seg.len() + n] = if vf.autonomous() {
        (0..n).map(|i| section.f0[i] * (x0[i] - section.x0[i])).sum()
    } else {
        traj.duration - 2.0 * PI / p[forcing_index(vf)?]
    };
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FloquetData {
    pub multipliers: Vec<Complex64>,
    pub autonomous: bool,
    /// `alpha in (0, pi)` of the complex pair closest to the unit circle.
    pub tr_angle: Option<f64>,
    /// Eigenvector for `e^{i alpha}` (positive imaginary part).
    pub tr_eigvec: Option<DVector<Complex64>>,
    pub monodromy: DMatrix<f64>,
    /// The eigenproblem looked defective or ill-conditioned.
    pub ill_conditioned: bool,
}

impl FloquetData {
    /// Floquet data from a bare list of multipliers (no monodromy).
    pub fn from_multipliers(multipliers: Vec<Complex64>, autonomous: bool) -> Self {
        let n = multipliers.len();
        let mut d = Self {
            multipliers,
            autonomous,
            tr_angle: None,
            tr_eigvec: None,
            monodromy: DMatrix::zeros(n, n),
            ill_conditioned: false,
        };
        d.tr_angle = d.tr_pair().map(|i| d.multipliers[i].arg());
        d
    }

    /// Index of the multiplier identified as trivial (closest to 1), for
    /// autonomous systems.
    pub fn trivial_index(&self) -> Option<usize> {
        if !self.autonomous {
            return None;
        }
        self.multipliers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .map(|(i, _)| i)
    }

    /// Multipliers with positive imaginary part, excluding the trivial one.
    fn pair_candidates(&self) -> Vec<usize> {
        let trivial = self.trivial_index();
        (0..self.multipliers.len())
            .filter(|&i| Some(i) != trivial && self.multipliers[i].im > IMAG_TOL)
            .collect()
    }

    /// The complex pair member closest to the unit circle.
    pub fn tr_pair(&self) -> Option<usize> {
        self.pair_candidates()
            .into_iter()
            .min_by(|&a, &b| (self.multipliers[a].norm() - 1.0).abs().total_cmp(&(self.multipliers[b].norm() - 1.0).abs()))
    }
}

/// `max(|mu| - 1)` over complex pairs; `None` when there is no pair.
pub fn tr_test_function(floq: &FloquetData) -> Option<f64> {
    floq.pair_candidates()
        .into_iter()
        .map(|i| floq.multipliers[i].norm() - 1.0)
        .reduce(f64::max)
}

/// Null vector of `M - mu I` (unit length) and the ratio of its two smallest
/// singular values, which is small for a well-separated eigenvalue.
fn eigenvector(m: &DMatrix<f64>, mu: Complex64) -> (DVector<Complex64>, f64) {
    let n = m.nrows();
    let a = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(m[(i, j)], 0.0) - if i == j { mu } else { Complex64::new(0.0, 0.0) }
    });
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let v: DVector<Complex64> = vt.row(n - 1).adjoint();
    let ratio = if n > 1 { sv[n - 1] / sv[n - 2].max(f64::MIN_POSITIVE) } else { 0.0 };
    (v, ratio)
}

/// Floquet data from a monodromy matrix.
pub fn floquet_from_monodromy(monodromy: DMatrix<f64>, autonomous: bool) -> FloquetData {
    let eig = monodromy.complex_eigenvalues();
    let mut mults: Vec<Complex64> = eig.iter().copied().collect();
    mults.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let mut d = FloquetData::from_multipliers(mults, autonomous);
    d.monodromy = monodromy;
    let det: f64 = d.monodromy.determinant();
    let prod = d.multipliers.iter().fold(Complex64::new(1.0, 0.0), |a, b| a * b);
    if (prod.re - det).abs() > 1e-6 * det.abs().max(1e-12) || !det.is_finite() {
        d.ill_conditioned = true;
    }
    if let Some(i) = d.tr_pair() {
        let (v, ratio) = eigenvector(&d.monodromy, d.multipliers[i]);
        if ratio > 1e-3 {
            d.ill_conditioned = true;
        }
        d.tr_eigvec = Some(v);
    }
    d
}

/// Multipliers of the orbit through `x0` at time `t0` with period `period`,
/// from the variational equation integrated jointly with the state.
pub fn floquet_at(vf: &dyn VectorField, x0: &[f64], t0: f64, period: f64, p: &[f64]) -> Result<FloquetData> {
    let tm = transition_matrix(vf, t0, period, Reference::Initial(x0), p, &[t0 + period], &IvpOptions::tight())?;
    Ok(floquet_from_monodromy(tm.monodromy, vf.autonomous()))
}

pub fn floquet(vf: &dyn VectorField, po: &PeriodicOrbit) -> Result<FloquetData> {
    floquet_at(vf, po.traj.first(), po.traj.t_offset, po.traj.duration, &po.p)
}

/// Continuation problem for periodic orbits.
///
/// Unknowns: `(x_bp, T, p_released)`. Exactly one parameter is released.
pub struct PoProblem {
    pub vf: Arc<dyn VectorField>,
    pub mesh: Arc<SegmentMesh>,
    pub base_params: Vec<f64>,
    pub released: Vec<usize>,
    pub t_offset: f64,
    pub section: PoSection,
    pub detect_tr: bool,
}

impl PoProblem {
    pub fn new(vf: Arc<dyn VectorField>, orbit: &PeriodicOrbit, released: &[&str]) -> Result<Self> {
        if released.len() != 1 {
            return Err(Error::Config(format!(
                "periodic-orbit continuation releases exactly one parameter, got {}",
                released.len()
            )));
        }
        let idx = crate::odesys::resolve_params(vf.as_ref(), released).map_err(|e| Error::Config(e.to_string()))?;
        if orbit.p.len() != vf.dim_params() || orbit.traj.dim != vf.dim_state() {
            return input("orbit does not match the vector field dimensions");
        }
        if !vf.autonomous() {
            forcing_index(vf.as_ref())?;
        }
        let section = PoSection::from_orbit(vf.as_ref(), &orbit.reference, &orbit.reference_params);
        Ok(Self {
            mesh: orbit.traj.mesh.clone(),
            base_params: orbit.p.clone(),
            released: idx,
            t_offset: orbit.traj.t_offset,
            section,
            detect_tr: true,
            vf,
        })
    }

    fn nx(&self) -> usize {
        self.mesh.num_basepoints() * self.vf.dim_state()
    }

    pub fn to_vector(&self, orbit: &PeriodicOrbit) -> DVector<f64> {
        let nx = self.nx();
        let mut u = DVector::zeros(nx + 1 + self.released.len());
        u.rows_mut(0, nx).copy_from_slice(&orbit.traj.x_bp);
        u[nx] = orbit.traj.duration;
        for (k, &i) in self.released.iter().enumerate() {
            u[nx + 1 + k] = orbit.p[i];
        }
        u
    }

    fn unpack(&self, u: &DVector<f64>) -> (Trajectory, Vec<f64>) {
        let nx = self.nx();
        let traj = Trajectory {
            mesh: self.mesh.clone(),
            dim: self.vf.dim_state(),
            x_bp: u.as_slice()[..nx].to_vec(),
            duration: u[nx],
            t_offset: self.t_offset,
        };
        let mut p = self.base_params.clone();
        for (k, &i) in self.released.iter().enumerate() {
            p[i] = u[nx + 1 + k];
        }
        (traj, p)
    }

    /// The orbit at `u`, with the current section's reference.
    pub fn orbit(&self, u: &DVector<f64>) -> PeriodicOrbit {
        let (traj, p) = self.unpack(u);
        PeriodicOrbit::new(traj, p)
    }

    pub fn floquet(&self, u: &DVector<f64>) -> Result<FloquetData> {
        floquet(self.vf.as_ref(), &self.orbit(u))
    }

    pub fn released_names(&self) -> Vec<String> {
        let names = self.vf.param_names();
        self.released.iter().map(|&i| names[i].clone()).collect()
    }
}

impl ZeroProblem for PoProblem {
    fn num_unknowns(&self) -> usize {
        self.nx() + 1 + self.released.len()
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (traj, p) = self.unpack(u);
        po_residual(self.vf.as_ref(), &traj, &p, &self.section)
    }

    fn linearize(&self, u: &DVector<f64>) -> Result<Box<dyn BorderedOperator>> {
        let (traj, p) = self.unpack(u);
        let n = traj.dim;
        let jac = segment_jacobian(self.vf.as_ref(), &traj, &p)?;
        let mut columns = vec![GlobalColumn::Duration];
        columns.extend(self.released.iter().map(|&i| GlobalColumn::Param(i)));
        let ng = columns.len();
        let mut x0 = DMatrix::zeros(n + 1, n);
        let mut xt = DMatrix::zeros(n + 1, n);
        let mut g = DMatrix::zeros(n + 1, ng);
        for i in 0..n {
            x0[(i, i)] = -1.0;
            xt[(i, i)] = 1.0;
        }
        if self.vf.autonomous() {
            for i in 0..n {
                x0[(n, i)] = self.section.f0[i];
            }
        } else {
            let k = forcing_index(self.vf.as_ref())?;
            g[(n, 0)] = 1.0;
            for (c, &i) in self.released.iter().enumerate() {
                if i == k {
                    g[(n, 1 + c)] = 2.0 * PI / (p[k] * p[k]);
                }
            }
        }
        let op = MultiSegmentOperator::new(vec![jac], columns, BoundaryJacobian { x0, xt, g })?;
        Ok(Box::new(op))
    }

    fn monitor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.vf.param_names().to_vec();
        names.push("T".into());
        names
    }

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
        let (traj, mut p) = self.unpack(u);
        p.push(traj.duration);
        p
    }

    fn weights(&self) -> DVector<f64> {
        let nx = self.nx();
        let nbp = self.mesh.num_basepoints() as f64;
        DVector::from_fn(self.num_unknowns(), |i, _| if i < nx { 1.0 / nbp } else { 1.0 })
    }

    fn primary_index(&self) -> Option<usize> {
        Some(self.nx() + 1)
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let (traj, p) = self.unpack(u);
        self.section = PoSection::from_orbit(self.vf.as_ref(), &traj, &p);
        Ok(())
    }

    fn test_kinds(&self) -> Vec<PointType> {
        if self.detect_tr {
            vec![PointType::TR]
        } else {
            Vec::new()
        }
    }

    fn test_functions(&self, u: &DVector<f64>) -> Result<Vec<Option<f64>>> {
        if !self.detect_tr {
            return Ok(Vec::new());
        }
        Ok(vec![tr_test_function(&self.floquet(u)?)])
    }
}
