//! Adaptive explicit integration (Dormand–Prince 5(4) with PI step control and
//! continuous extension) plus state-transition matrices along reference orbits.

use nalgebra::DMatrix;
use nalgebra::DVector;

use crate::error::{input, Error, Result};
use crate::odesys::VectorField;

#[derive(Debug, Clone)]
pub struct IvpOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: Option<f64>,
    /// Interpolate requested output times from the continuous extension
    /// instead of shortening steps to land on them.
    pub dense_output: bool,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IvpOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: None,
            dense_output: false,
            initial_step: None,
            max_steps: 1_000_000,
        }
    }
}

impl IvpOptions {
    pub fn tight() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return input("integration tolerances must be positive");
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return input("max_step must be positive");
            }
        }
        Ok(())
    }
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step's interpolation data.
#[derive(Debug, Clone)]
struct DenseStep {
    t_old: f64,
    h: f64,
    /// Five coefficient vectors of length `dim`, stored contiguously.
    rcont: Vec<f64>,
}

/// Continuous solution assembled from every accepted step.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    t_start: f64,
    t_end: f64,
    steps: Vec<DenseStep>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t_start.min(self.t_end), self.t_start.max(self.t_end))
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.domain();
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if t < lo - slack || t > hi + slack || self.steps.is_empty() {
            return input(format!("t = {t} outside dense solution domain [{lo}, {hi}]"));
        }
        let forward = self.t_end >= self.t_start;
        // steps are ordered in integration direction
        let idx = self
            .steps
            .partition_point(|s| if forward { s.t_old + s.h < t } else { s.t_old + s.h > t })
            .min(self.steps.len() - 1);
        let step = &self.steps[idx];
        let theta = (t - step.t_old) / step.h;
        let theta1 = 1.0 - theta;
        let d = self.dim;
        let r = &step.rcont;
        for i in 0..d {
            out[i] = r[i]
                + theta
                    * (r[d + i]
                        + theta1 * (r[2 * d + i] + theta * (r[3 * d + i] + theta1 * r[4 * d + i])));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(t, out.as_mut_slice())?;
        Ok(out)
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &IvpOptions) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.abs_tol + opts.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn initial_step<F>(rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, span: f64, opts: &IvpOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let sk: Vec<f64> = y0.iter().map(|y| opts.abs_tol + opts.rel_tol * y.abs()).collect();
    let dnf: f64 = f0.iter().zip(&sk).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n as f64;
    let dny: f64 = y0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n as f64;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(span);
    if let Some(hm) = opts.max_step {
        h = h.min(hm);
    }
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h * f).collect();
    let mut f1 = vec![0.0; n];
    rhs(t0 + dir * h, &y1, &mut f1);
    let der2: f64 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    let mut h = (100.0 * h).min(h1).min(span);
    if let Some(hm) = opts.max_step {
        h = h.min(hm);
    }
    h
}

/// Integrates `y' = rhs(t, y)` from `t_span[0]` through every time in
/// `t_span` (strictly monotone, either direction). Returns the states at the
/// requested times and, when `keep_dense` is set, the continuous solution.
fn integrate_system<F>(
    mut rhs: F,
    t_span: &[f64],
    y0: &[f64],
    opts: &IvpOptions,
    keep_dense: bool,
) -> Result<(Vec<Vec<f64>>, Option<DenseSolution>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    opts.validate()?;
    if t_span.len() < 2 {
        return input("t_span needs at least two times");
    }
    let dir = if t_span[1] > t_span[0] { 1.0 } else { -1.0 };
    for w in t_span.windows(2) {
        if !((w[1] - w[0]) * dir > 0.0) {
            return input("t_span must be strictly monotone");
        }
    }
    let n = y0.len();
    let t_final = *t_span.last().unwrap();
    let span = (t_final - t_span[0]).abs();

    let mut out = vec![y0.to_vec()];
    let mut next_out = 1;

    let mut t = t_span[0];
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    rhs(t, &y, &mut k1);
    let mut h = opts
        .initial_step
        .unwrap_or_else(|| initial_step(&mut rhs, t, &y, &k1, dir, span, opts));
    let hmax = opts.max_step.unwrap_or(span);

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];

    let mut dense = keep_dense.then(|| DenseSolution {
        dim: n,
        t_start: t_span[0],
        t_end: t_final,
        steps: Vec::new(),
    });
    let mut facold: f64 = 1e-4;
    let beta = 0.04;
    let expo1 = 0.2 - beta * 0.75;
    let safe = 0.9;
    let mut reject = false;
    let mut nsteps = 0usize;

    while next_out < t_span.len() {
        nsteps += 1;
        if nsteps > opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: "maximum number of steps exceeded".into(),
            });
        }
        h = h.min(hmax);
        // land exactly on the next output time unless interpolating
        let target = if opts.dense_output || keep_dense {
            t_final
        } else {
            t_span[next_out]
        };
        let remaining = (target - t) * dir;
        let mut last = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            last = true;
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: "step size underflow".into(),
            });
        }
        let hs = dir * h;

        for i in 0..n {
            ytmp[i] = y[i] + hs * A21 * k1[i];
        }
        rhs(t + C2 * hs, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * hs, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * hs, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * hs, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] =
                y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + hs, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] =
                y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + hs, &ynew, &mut k7);
        for i in 0..n {
            err[i] = hs
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = error_norm(&err, &y, &ynew, opts);
        if !e.is_finite() {
            h *= 0.1;
            reject = true;
            continue;
        }

        let fac11 = e.powf(expo1);
        let mut fac = fac11 / facold.powf(beta);
        fac = (fac / safe).clamp(0.2, 10.0);
        let hnew = h / fac;

        if e <= 1.0 {
            facold = e.max(1e-4);
            let t_new = if last { target } else { t + hs };
            if let Some(d) = dense.as_mut() {
                let mut rc = vec![0.0; 5 * n];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = hs * k1[i] - ydiff;
                    rc[i] = y[i];
                    rc[n + i] = ydiff;
                    rc[2 * n + i] = bspl;
                    rc[3 * n + i] = ydiff - hs * k7[i] - bspl;
                    rc[4 * n + i] = hs
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                d.steps.push(DenseStep {
                    t_old: t,
                    h: t_new - t,
                    rcont: rc,
                });
            }
            if opts.dense_output || keep_dense {
                // emit every output time covered by this step
                while next_out < t_span.len() && (t_span[next_out] - t_new) * dir <= 0.0 {
                    let ts = t_span[next_out];
                    let mut ys = vec![0.0; n];
                    if (ts - t_new).abs() <= 1e-14 * t_new.abs().max(1.0) {
                        ys.copy_from_slice(&ynew);
                    } else {
                        let theta = (ts - t) / hs;
                        let theta1 = 1.0 - theta;
                        for i in 0..n {
                            let ydiff = ynew[i] - y[i];
                            let bspl = hs * k1[i] - ydiff;
                            let r4 = ydiff - hs * k7[i] - bspl;
                            let r5 = hs
                                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                    + D6 * k6[i]
                                    + D7 * k7[i]);
                            ys[i] =
                                y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                        }
                    }
                    out.push(ys);
                    next_out += 1;
                }
            } else if last {
                out.push(ynew.clone());
                next_out += 1;
            }
            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut ynew);
            t = t_new;
            let hnew = if reject { hnew.min(h) } else { hnew };
            reject = false;
            h = hnew;
        } else {
            h /= (fac11 / safe).min(5.0);
            reject = true;
        }
    }
    Ok((out, dense))
}

/// Integrates `vf` and returns the states at every time in `t_span`
/// (the first entry is `y0`).
pub fn integrate(
    vf: &dyn VectorField,
    t_span: &[f64],
    y0: &[f64],
    p: &[f64],
    opts: &IvpOptions,
) -> Result<Vec<DVector<f64>>> {
    if y0.len() != vf.dim_state() || p.len() != vf.dim_params() {
        return input("state or parameter dimension does not match the vector field");
    }
    let (states, _) = integrate_system(|t, y, f| vf.rhs(t, y, p, f), t_span, y0, opts, false)?;
    Ok(states.into_iter().map(DVector::from_vec).collect())
}

/// Integrates over `[t0, t1]` and keeps the continuous extension.
pub fn integrate_dense(
    vf: &dyn VectorField,
    t0: f64,
    t1: f64,
    y0: &[f64],
    p: &[f64],
    opts: &IvpOptions,
) -> Result<DenseSolution> {
    if y0.len() != vf.dim_state() || p.len() != vf.dim_params() {
        return input("state or parameter dimension does not match the vector field");
    }
    let (_, dense) =
        integrate_system(|t, y, f| vf.rhs(t, y, p, f), &[t0, t1], y0, opts, true)?;
    Ok(dense.expect("dense output requested"))
}

/// A state curve `t -> x(t)` along which the variational equation is solved.
pub trait ReferenceCurve {
    fn domain(&self) -> (f64, f64);
    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<()>;
}

impl ReferenceCurve for DenseSolution {
    fn domain(&self) -> (f64, f64) {
        DenseSolution::domain(self)
    }

    fn state_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.eval_into(t, out)
    }
}

pub enum Reference<'a> {
    /// Integrate the state jointly with the variational equation from this
    /// initial point.
    Initial(&'a [f64]),
    /// Use a precomputed curve for the state.
    Curve(&'a dyn ReferenceCurve),
}

#[derive(Debug, Clone)]
pub struct TransitionMatrixResult {
    pub times: Vec<f64>,
    /// Raw solution `Phi(t)` of the variational equation at `times`.
    pub phi: Vec<DMatrix<f64>>,
    /// `M(t0 + T, t0) = Phi(t0 + T) Phi0^{-1}`.
    pub monodromy: DMatrix<f64>,
    /// States along the reference at `times` (when integrated jointly).
    pub states: Option<Vec<DVector<f64>>>,
}

impl TransitionMatrixResult {
    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        &self.phi[i]
    }
}

/// Transition matrix `Phi(t, t0)` with `Phi(t0) = I` over `[t0, t0 + period]`.
pub fn transition_matrix(
    vf: &dyn VectorField,
    t0: f64,
    period: f64,
    reference: Reference<'_>,
    p: &[f64],
    sample_times: &[f64],
    opts: &IvpOptions,
) -> Result<TransitionMatrixResult> {
    let n = vf.dim_state();
    transition_matrix_from(vf, t0, period, reference, p, sample_times, &DMatrix::identity(n, n), opts)
}

/// As [`transition_matrix`] but starting the variational equation from an
/// arbitrary invertible `phi0`.
#[allow(clippy::too_many_arguments)]
pub fn transition_matrix_from(
    vf: &dyn VectorField,
    t0: f64,
    period: f64,
    reference: Reference<'_>,
    p: &[f64],
    sample_times: &[f64],
    phi0: &DMatrix<f64>,
    opts: &IvpOptions,
) -> Result<TransitionMatrixResult> {
    let n = vf.dim_state();
    if phi0.nrows() != n || phi0.ncols() != n {
        return input("phi0 must be n x n");
    }
    if !(period > 0.0) {
        return input("period must be positive");
    }
    let t1 = t0 + period;
    let slack = 1e-12 * (1.0 + t1.abs());
    for &ts in sample_times {
        if ts < t0 - slack || ts > t1 + slack {
            return input(format!("sample time {ts} outside [{t0}, {t1}]"));
        }
    }
    let phi0_inv = phi0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("phi0 is not invertible".into()))?;

    let mut jac = DMatrix::zeros(n, n);
    let (dense, joint) = match reference {
        Reference::Initial(x0) => {
            if x0.len() != n {
                return input("reference initial state has wrong dimension");
            }
            let mut y0 = x0.to_vec();
            y0.extend_from_slice(phi0.as_slice());
            let rhs = |t: f64, y: &[f64], f: &mut [f64]| {
                let (x, phi) = y.split_at(n);
                vf.rhs(t, x, p, &mut f[..n]);
                vf.jac_state(t, x, p, &mut jac);
                variational_rhs(&jac, phi, &mut f[n..]);
            };
            let (_, dense) = integrate_system(rhs, &[t0, t1], &y0, opts, true)?;
            (dense.unwrap(), true)
        }
        Reference::Curve(curve) => {
            let (lo, hi) = curve.domain();
            let tol = 1e-9 * (1.0 + hi.abs());
            if lo > t0 + tol || hi < t1 - tol {
                return input(format!(
                    "reference curve covers [{lo}, {hi}], need [{t0}, {t1}]"
                ));
            }
            let mut x = vec![0.0; n];
            let mut failure: Option<Error> = None;
            let rhs = |t: f64, phi: &[f64], f: &mut [f64]| {
                if let Err(e) = curve.state_into(t.clamp(lo, hi), &mut x) {
                    failure.get_or_insert(e);
                }
                vf.jac_state(t, &x, p, &mut jac);
                variational_rhs(&jac, phi, f);
            };
            let (_, dense) = integrate_system(rhs, &[t0, t1], phi0.as_slice(), opts, true)?;
            if let Some(e) = failure {
                return Err(e);
            }
            (dense.unwrap(), false)
        }
    };

    let offset = if joint { n } else { 0 };
    let mut buf = vec![0.0; dense.dim()];
    let mut phi = Vec::with_capacity(sample_times.len());
    let mut states = joint.then(Vec::new);
    for &ts in sample_times {
        dense.eval_into(ts.clamp(t0, t1), &mut buf)?;
        phi.push(DMatrix::from_column_slice(n, n, &buf[offset..offset + n * n]));
        if let Some(s) = states.as_mut() {
            s.push(DVector::from_column_slice(&buf[..n]));
        }
    }
    dense.eval_into(t1, &mut buf)?;
    let phi_end = DMatrix::from_column_slice(n, n, &buf[offset..offset + n * n]);
    Ok(TransitionMatrixResult {
        times: sample_times.to_vec(),
        phi,
        monodromy: phi_end * phi0_inv,
        states,
    })
}

/// `dPhi/dt = J Phi` with `Phi` stored column-major.
fn variational_rhs(jac: &DMatrix<f64>, phi: &[f64], out: &mut [f64]) {
    let n = jac.nrows();
    for c in 0..n {
        let col = &phi[c * n..(c + 1) * n];
        for r in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += jac[(r, k)] * col[k];
            }
            out[c * n + r] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesys::{builtin_langford, ClosureField, LinearField};

    fn decay() -> ClosureField {
        ClosureField::new("decay", 1, &[], true, |_, y, _, f| f[0] = -y[0])
    }

    #[test]
    fn scalar_decay() {
        let vf = decay();
        let ys = integrate(&vf, &[0.0, 1.0], &[1.0], &[], &IvpOptions::default()).unwrap();
        assert!((ys[1][0] - (-1.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn backward_integration() {
        let vf = decay();
        let ys = integrate(&vf, &[1.0, 0.0], &[(-1.0f64).exp()], &[], &IvpOptions::default())
            .unwrap();
        assert!((ys[1][0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let vf = LinearField::new(a).unwrap();
        let tau = std::f64::consts::TAU;
        let ys = integrate(&vf, &[0.0, tau], &[1.0, 0.0], &[], &IvpOptions::default()).unwrap();
        assert!((ys[1][0] - 1.0).abs() < 1e-6 && ys[1][1].abs() < 1e-6);
    }

    #[test]
    fn tightening_tolerances_does_not_increase_error() {
        let vf = decay();
        let exact = (-1.0f64).exp();
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let tol = 1e-4 / 2f64.powi(k);
            let opts = IvpOptions {
                rel_tol: tol,
                abs_tol: tol,
                ..Default::default()
            };
            let err = (integrate(&vf, &[0.0, 1.0], &[1.0], &[], &opts).unwrap()[1][0] - exact).abs();
            assert!(err <= 2.0 * prev, "tol {tol}: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn dense_output_matches_stepped_output() {
        let vf = builtin_langford();
        let p = [3.5, 1.5, 0.0];
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let stepped = integrate(vf.as_ref(), &times, &[0.3, 0.4, 0.0], &p, &IvpOptions::tight()).unwrap();
        let dense_opts = IvpOptions {
            dense_output: true,
            ..IvpOptions::tight()
        };
        let dense = integrate(vf.as_ref(), &times, &[0.3, 0.4, 0.0], &p, &dense_opts).unwrap();
        for (a, b) in stepped.iter().zip(&dense) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn non_monotone_span_rejected() {
        let vf = decay();
        assert!(matches!(
            integrate(&vf, &[0.0, 1.0, 0.5], &[1.0], &[], &IvpOptions::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn blow_up_reports_failure_time() {
        let vf = ClosureField::new("blowup", 1, &[], true, |_, y, _, f| f[0] = y[0] * y[0]);
        // y = 1/(1-t) blows up at t = 1
        match integrate(&vf, &[0.0, 2.0], &[1.0], &[], &IvpOptions::default()) {
            Err(Error::Integration { t, .. }) => assert!(t > 0.9 && t < 1.0 + 1e-6, "failed at {t}"),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn rotation_monodromy_is_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let vf = LinearField::new(a).unwrap();
        let res = transition_matrix(
            &vf,
            0.0,
            std::f64::consts::TAU,
            Reference::Initial(&[1.0, 0.0]),
            &[],
            &[0.0],
            &IvpOptions::tight(),
        )
        .unwrap();
        assert!((res.monodromy.clone() - DMatrix::identity(2, 2)).amax() < 1e-6);
        assert!((res.phi[0].clone() - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn short_reference_curve_rejected() {
        let vf = builtin_langford();
        let p = [3.5, 1.5, 0.0];
        let dense = integrate_dense(vf.as_ref(), 0.0, 1.0, &[0.3, 0.4, 0.0], &p, &IvpOptions::default()).unwrap();
        let r = transition_matrix(vf.as_ref(), 0.0, 2.0, Reference::Curve(&dense), &p, &[], &IvpOptions::default());
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
