//! Piecewise-polynomial Gauss collocation of a single trajectory segment.
//!
//! Time is normalized to `tau in [0, 1]`; the physical time is
//! `t = t_offset + duration * tau`. Each of the `ntst` subintervals carries
//! `degree + 1` uniformly spaced base points (endpoints included) and
//! `degree` Gauss–Legendre collocation nodes. Adjacent subintervals store
//! their shared endpoint twice and continuity is imposed as equations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Result};
use crate::odesys::VectorField;

pub const MAX_DEGREE: usize = 7;

/// Gauss–Legendre nodes on `[-1, 1]`, ascending.
pub fn gauss_legendre_nodes(m: usize) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(m);
    for i in 1..=m {
        let mut x = -(std::f64::consts::PI * (i as f64 - 0.25) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
    }
    nodes
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Lagrange basis values and derivatives for the nodes `pts` evaluated at `s`.
pub(crate) fn lagrange_basis(pts: &[f64], s: f64, vals: &mut [f64], ders: &mut [f64]) {
    let k = pts.len();
    for j in 0..k {
        let mut v = 1.0;
        let mut d = 0.0;
        for l in 0..k {
            if l == j {
                continue;
            }
            let denom = pts[j] - pts[l];
            // product rule accumulated on the fly
            d = d * (s - pts[l]) / denom + v / denom;
            v *= (s - pts[l]) / denom;
        }
        vals[j] = v;
        ders[j] = d;
    }
}

#[derive(Debug, Clone)]
pub struct SegmentMesh {
    pub ntst: usize,
    pub degree: usize,
    /// `ntst + 1` subinterval boundaries in `[0, 1]`.
    pub subinterval_bounds: Vec<f64>,
    /// `ntst * (degree + 1)` base-point times.
    pub basepoints: Vec<f64>,
    /// `ntst * degree` collocation times.
    pub collnodes: Vec<f64>,
    /// Base points of one subinterval in local coordinates `[0, 1]`.
    local_bp: Vec<f64>,
    /// `L_j(node_c)`, `degree x (degree + 1)`.
    node_vals: DMatrix<f64>,
    /// `dL_j/dsigma(node_c)`, `degree x (degree + 1)`.
    node_ders: DMatrix<f64>,
}

/// Builds a uniform mesh with Gauss–Legendre collocation nodes.
pub fn build_mesh(ntst: usize, degree: usize) -> Result<SegmentMesh> {
    if ntst == 0 {
        return input("ntst must be at least 1");
    }
    if degree == 0 || degree > MAX_DEGREE {
        return input(format!("collocation degree must be in 1..={MAX_DEGREE}, got {degree}"));
    }
    let m = degree;
    let h = 1.0 / ntst as f64;
    let bounds: Vec<f64> = (0..=ntst).map(|k| k as f64 * h).collect();
    let local_bp: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
    let local_nodes: Vec<f64> = gauss_legendre_nodes(m).iter().map(|x| 0.5 * (x + 1.0)).collect();

    let mut basepoints = Vec::with_capacity(ntst * (m + 1));
    let mut collnodes = Vec::with_capacity(ntst * m);
    for k in 0..ntst {
        let a = bounds[k];
        for &s in &local_bp {
            basepoints.push(if s == 1.0 { bounds[k + 1] } else { a + h * s });
        }
        for &s in &local_nodes {
            collnodes.push(a + h * s);
        }
    }

    let mut node_vals = DMatrix::zeros(m, m + 1);
    let mut node_ders = DMatrix::zeros(m, m + 1);
    let mut v = vec![0.0; m + 1];
    let mut d = vec![0.0; m + 1];
    for (c, &s) in local_nodes.iter().enumerate() {
        lagrange_basis(&local_bp, s, &mut v, &mut d);
        for j in 0..=m {
            node_vals[(c, j)] = v[j];
            node_ders[(c, j)] = d[j];
        }
    }
    Ok(SegmentMesh {
        ntst,
        degree,
        subinterval_bounds: bounds,
        basepoints,
        collnodes,
        local_bp,
        node_vals,
        node_ders,
    })
}

impl SegmentMesh {
    pub fn num_basepoints(&self) -> usize {
        self.ntst * (self.degree + 1)
    }

    pub fn num_collnodes(&self) -> usize {
        self.ntst * self.degree
    }

    /// Number of residual rows for a state dimension `n`:
    /// collocation plus continuity.
    pub fn num_equations(&self, n: usize) -> usize {
        (self.num_collnodes() + self.ntst - 1) * n
    }

    fn width(&self) -> f64 {
        1.0 / self.ntst as f64
    }

    /// Locates the subinterval containing `tau` and the local coordinate.
    fn locate(&self, tau: f64) -> (usize, f64) {
        let k = ((tau * self.ntst as f64).floor() as usize).min(self.ntst - 1);
        let s = (tau - self.subinterval_bounds[k]) / self.width();
        (k, s)
    }

    /// Interpolation weights for `tau` on the base points of its subinterval.
    pub(crate) fn weights(&self, tau: f64) -> (usize, Vec<f64>) {
        let (k, s) = self.locate(tau);
        let m = self.degree;
        let mut v = vec![0.0; m + 1];
        let mut d = vec![0.0; m + 1];
        lagrange_basis(&self.local_bp, s, &mut v, &mut d);
        (k, v)
    }
}

/// One collocation segment: base-point states over a normalized mesh.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: Arc<SegmentMesh>,
    pub dim: usize,
    /// Base-point states, point-major: entry `i * dim + c`.
    pub x_bp: Vec<f64>,
    pub duration: f64,
    pub t_offset: f64,
}

impl Trajectory {
    pub fn new(mesh: Arc<SegmentMesh>, dim: usize, x_bp: Vec<f64>, duration: f64, t_offset: f64) -> Result<Self> {
        if x_bp.len() != mesh.num_basepoints() * dim {
            return input(format!(
                "expected {} base-point values, got {}",
                mesh.num_basepoints() * dim,
                x_bp.len()
            ));
        }
        Ok(Self {
            mesh,
            dim,
            x_bp,
            duration,
            t_offset,
        })
    }

    /// Samples `x(t)` at the physical base-point times.
    pub fn from_fn<F>(mesh: Arc<SegmentMesh>, dim: usize, t_offset: f64, duration: f64, mut x: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<Vec<f64>>,
    {
        let mut x_bp = Vec::with_capacity(mesh.num_basepoints() * dim);
        for &tau in &mesh.basepoints {
            let v = x(t_offset + duration * tau)?;
            if v.len() != dim {
                return input("sampled state has wrong dimension");
            }
            x_bp.extend_from_slice(&v);
        }
        Self::new(mesh, dim, x_bp, duration, t_offset)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x_bp[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.point(0)
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.mesh.num_basepoints() - 1)
    }

    pub fn basepoint_times(&self) -> Vec<f64> {
        self.mesh
            .basepoints
            .iter()
            .map(|tau| self.t_offset + self.duration * tau)
            .collect()
    }
}

/// Collocation and continuity residuals of a segment.
///
/// Layout: `ntst * degree * n` collocation rows ordered by subinterval, node,
/// component, followed by `(ntst - 1) * n` continuity rows `x_{k,end} - x_{k+1,0}`.
pub fn segment_residual(vf: &dyn VectorField, traj: &Trajectory, p: &[f64]) -> Result<DVector<f64>> {
    check(vf, traj, p)?;
    let mesh = &traj.mesh;
    let mut out = DVector::zeros(mesh.num_equations(traj.dim));
    residual_into(vf, mesh, traj.dim, &traj.x_bp, traj.t_offset, traj.duration, p, out.as_mut_slice());
    Ok(out)
}

fn check(vf: &dyn VectorField, traj: &Trajectory, p: &[f64]) -> Result<()> {
    if traj.dim != vf.dim_state() || p.len() != vf.dim_params() {
        return input("trajectory or parameter dimension does not match the vector field");
    }
    if traj.x_bp.len() != traj.mesh.num_basepoints() * traj.dim {
        return input("trajectory base-point array has wrong length");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn residual_into(
    vf: &dyn VectorField,
    mesh: &SegmentMesh,
    n: usize,
    x_bp: &[f64],
    t0: f64,
    dur: f64,
    p: &[f64],
    out: &mut [f64],
) {
    let m = mesh.degree;
    let inv_h = 1.0 / mesh.width();
    let mut x = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut f = vec![0.0; n];
    for k in 0..mesh.ntst {
        let base = k * (m + 1);
        for c in 0..m {
            x.iter_mut().for_each(|v| *v = 0.0);
            dx.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..=m {
                let w = mesh.node_vals[(c, j)];
                let dw = mesh.node_ders[(c, j)] * inv_h;
                let xj = &x_bp[(base + j) * n..(base + j + 1) * n];
                for i in 0..n {
                    x[i] += w * xj[i];
                    dx[i] += dw * xj[i];
                }
            }
            let tau = mesh.collnodes[k * m + c];
            vf.rhs(t0 + dur * tau, &x, p, &mut f);
            let row = (k * m + c) * n;
            for i in 0..n {
                out[row + i] = dx[i] - dur * f[i];
            }
        }
    }
    let off = mesh.num_collnodes() * n;
    for k in 0..mesh.ntst.saturating_sub(1) {
        let a = (k * (m + 1) + m) * n;
        let b = (k + 1) * (m + 1) * n;
        for i in 0..n {
            out[off + k * n + i] = x_bp[a + i] - x_bp[b + i];
        }
    }
}

/// Jacobian blocks of one subinterval's collocation rows.
#[derive(Debug, Clone)]
pub struct SubintervalJacobian {
    /// `m n x (m + 1) n` block with respect to the subinterval's base points.
    pub states: DMatrix<f64>,
    /// Derivative with respect to the duration.
    pub duration: DVector<f64>,
    /// Derivative with respect to the time offset.
    pub t_offset: DVector<f64>,
    /// `m n x q` derivative with respect to the parameters.
    pub params: DMatrix<f64>,
}

/// Structured Jacobian of [`segment_residual`]. Continuity rows have the
/// constant pattern `+I` / `-I` and are not stored.
#[derive(Debug, Clone)]
pub struct SegmentJacobian {
    pub dim: usize,
    pub degree: usize,
    pub blocks: Vec<SubintervalJacobian>,
}

pub fn segment_jacobian(vf: &dyn VectorField, traj: &Trajectory, p: &[f64]) -> Result<SegmentJacobian> {
    check(vf, traj, p)?;
    Ok(jacobian_blocks(vf, &traj.mesh, traj.dim, &traj.x_bp, traj.t_offset, traj.duration, p))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn jacobian_blocks(
    vf: &dyn VectorField,
    mesh: &SegmentMesh,
    n: usize,
    x_bp: &[f64],
    t0: f64,
    dur: f64,
    p: &[f64],
) -> SegmentJacobian {
    let m = mesh.degree;
    let q = p.len();
    let inv_h = 1.0 / mesh.width();
    let mut x = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut ft = vec![0.0; n];
    let mut fx = DMatrix::zeros(n, n);
    let mut fp = DMatrix::zeros(n, q);
    let autonomous = vf.autonomous();
    let mut blocks = Vec::with_capacity(mesh.ntst);
    for k in 0..mesh.ntst {
        let base = k * (m + 1);
        let mut states = DMatrix::zeros(m * n, (m + 1) * n);
        let mut d_dur = DVector::zeros(m * n);
        let mut d_t0 = DVector::zeros(m * n);
        let mut d_p = DMatrix::zeros(m * n, q);
        for c in 0..m {
            x.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..=m {
                let w = mesh.node_vals[(c, j)];
                let xj = &x_bp[(base + j) * n..(base + j + 1) * n];
                for i in 0..n {
                    x[i] += w * xj[i];
                }
            }
            let tau = mesh.collnodes[k * m + c];
            let t = t0 + dur * tau;
            vf.rhs(t, &x, p, &mut f);
            vf.jac_state(t, &x, p, &mut fx);
            if q > 0 {
                vf.jac_params(t, &x, p, &mut fp);
            }
            if autonomous {
                ft.iter_mut().for_each(|v| *v = 0.0);
            } else {
                vf.jac_time(t, &x, p, &mut ft);
            }
            let row = c * n;
            for j in 0..=m {
                let w = mesh.node_vals[(c, j)];
                let dw = mesh.node_ders[(c, j)] * inv_h;
                for i in 0..n {
                    for l in 0..n {
                        states[(row + i, j * n + l)] = -dur * fx[(i, l)] * w;
                    }
                    states[(row + i, j * n + i)] += dw;
                }
            }
            for i in 0..n {
                d_dur[row + i] = -f[i] - dur * tau * ft[i];
                d_t0[row + i] = -dur * ft[i];
                for l in 0..q {
                    d_p[(row + i, l)] = -dur * fp[(i, l)];
                }
            }
        }
        blocks.push(SubintervalJacobian {
            states,
            duration: d_dur,
            t_offset: d_t0,
            params: d_p,
        });
    }
    SegmentJacobian {
        dim: n,
        degree: m,
        blocks,
    }
}

impl SegmentJacobian {
    pub fn ntst(&self) -> usize {
        self.blocks.len()
    }

    /// Dense matrix with columns ordered `(x_bp, duration, t_offset, p)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, m, ntst) = (self.dim, self.degree, self.ntst());
        let q = self.blocks.first().map_or(0, |b| b.params.ncols());
        let nbp = ntst * (m + 1);
        let rows = (ntst * m + ntst - 1) * n;
        let mut out = DMatrix::zeros(rows, nbp * n + 2 + q);
        for (k, b) in self.blocks.iter().enumerate() {
            let r0 = k * m * n;
            let c0 = k * (m + 1) * n;
            out.view_mut((r0, c0), (m * n, (m + 1) * n)).copy_from(&b.states);
            out.view_mut((r0, nbp * n), (m * n, 1)).copy_from(&b.duration);
            out.view_mut((r0, nbp * n + 1), (m * n, 1)).copy_from(&b.t_offset);
            out.view_mut((r0, nbp * n + 2), (m * n, q)).copy_from(&b.params);
        }
        let off = ntst * m * n;
        for k in 0..ntst.saturating_sub(1) {
            for i in 0..n {
                out[(off + k * n + i, (k * (m + 1) + m) * n + i)] = 1.0;
                out[(off + k * n + i, (k + 1) * (m + 1) * n + i)] = -1.0;
            }
        }
        out
    }
}

/// Lagrange interpolation of the trajectory at physical time `t`.
pub fn interpolate(traj: &Trajectory, t: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(traj.dim);
    interpolate_into(traj, t, out.as_mut_slice())?;
    Ok(out)
}

pub fn interpolate_into(traj: &Trajectory, t: f64, out: &mut [f64]) -> Result<()> {
    if !(traj.duration > 0.0) {
        return input("trajectory has non-positive duration");
    }
    let tau = (t - traj.t_offset) / traj.duration;
    let slack = 1e-12;
    if !(-slack..=1.0 + slack).contains(&tau) {
        return input(format!(
            "t = {t} outside trajectory domain [{}, {}]",
            traj.t_offset,
            traj.t_offset + traj.duration
        ));
    }
    let tau = tau.clamp(0.0, 1.0);
    let (k, w) = traj.mesh.weights(tau);
    let n = traj.dim;
    let base = k * (traj.mesh.degree + 1);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, wj) in w.iter().enumerate() {
        let xj = traj.point(base + j);
        for i in 0..n {
            out[i] += wj * xj[i];
        }
    }
    Ok(())
}

impl crate::ivp::ReferenceCurve for Trajectory {
    fn domain(&self) -> (f64, f64) {
        (self.t_offset, self.t_offset + self.duration)
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        interpolate_into(self, t, out)
    }
}
