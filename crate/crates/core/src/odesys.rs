//! Vector fields for autonomous and periodically forced ODE systems.
//!
//! A [`VectorField`] evaluates `f(t, y, p)` together with its Jacobians with
//! respect to state, parameters and time. Implementations that do not provide
//! analytic Jacobians fall back to central finite differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Error, Result};

/// Relative/absolute step used by the finite-difference fallbacks.
const FD_STEP: f64 = 1e-7;

fn fd_step(value: f64) -> f64 {
    FD_STEP.max(FD_STEP * value.abs())
}

pub trait VectorField: Send + Sync {
    /// Identifier used to find the field again when a run is restarted from disk.
    fn name(&self) -> &str;

    fn dim_state(&self) -> usize;

    fn param_names(&self) -> &[String];

    fn dim_params(&self) -> usize {
        self.param_names().len()
    }

    fn autonomous(&self) -> bool;

    /// Index of the parameter holding the forcing frequency of a
    /// non-autonomous field. Torus problems couple it to `om2`.
    fn forcing_frequency(&self) -> Option<usize> {
        None
    }

    fn rhs(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]);

    /// `out` is `n x n`.
    fn jac_state(&self, t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        fd_jac_state(self, t, y, p, out);
    }

    /// `out` is `n x q`.
    fn jac_params(&self, t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        fd_jac_params(self, t, y, p, out);
    }

    fn jac_time(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        if self.autonomous() {
            out.iter_mut().for_each(|v| *v = 0.0);
        } else {
            fd_jac_time(self, t, y, p, out);
        }
    }

    fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| n == name)
    }
}

impl fmt::Debug for dyn VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("name", &self.name())
            .field("dim_state", &self.dim_state())
            .field("params", &self.param_names())
            .field("autonomous", &self.autonomous())
            .finish()
    }
}

pub fn fd_jac_state<V: VectorField + ?Sized>(
    vf: &V,
    t: f64,
    y: &[f64],
    p: &[f64],
    out: &mut DMatrix<f64>,
) {
    let n = vf.dim_state();
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = fd_step(y[j]);
        yp[j] = y[j] + h;
        vf.rhs(t, &yp, p, &mut fp);
        yp[j] = y[j] - h;
        vf.rhs(t, &yp, p, &mut fm);
        yp[j] = y[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

pub fn fd_jac_params<V: VectorField + ?Sized>(
    vf: &V,
    t: f64,
    y: &[f64],
    p: &[f64],
    out: &mut DMatrix<f64>,
) {
    let n = vf.dim_state();
    let mut pp = p.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..p.len() {
        let h = fd_step(p[j]);
        pp[j] = p[j] + h;
        vf.rhs(t, y, &pp, &mut fp);
        pp[j] = p[j] - h;
        vf.rhs(t, y, &pp, &mut fm);
        pp[j] = p[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

pub fn fd_jac_time<V: VectorField + ?Sized>(vf: &V, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
    let n = vf.dim_state();
    let h = fd_step(t);
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    vf.rhs(t + h, y, p, &mut fp);
    vf.rhs(t - h, y, p, &mut fm);
    for i in 0..n {
        out[i] = (fp[i] - fm[i]) / (2.0 * h);
    }
}

fn check_dims(vf: &dyn VectorField, y: &[f64], p: &[f64]) -> Result<()> {
    if y.len() != vf.dim_state() {
        return input(format!(
            "state has length {}, field '{}' expects {}",
            y.len(),
            vf.name(),
            vf.dim_state()
        ));
    }
    if p.len() != vf.dim_params() {
        return input(format!(
            "parameter vector has length {}, field '{}' expects {}",
            p.len(),
            vf.name(),
            vf.dim_params()
        ));
    }
    Ok(())
}

/// Evaluates `f(t, y, p)` after checking dimensions.
pub fn eval_rhs(vf: &dyn VectorField, t: f64, y: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    check_dims(vf, y, p)?;
    let mut out = DVector::zeros(vf.dim_state());
    vf.rhs(t, y, p, out.as_mut_slice());
    Ok(out)
}

pub fn eval_jac_state(vf: &dyn VectorField, t: f64, y: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(vf, y, p)?;
    let n = vf.dim_state();
    let mut out = DMatrix::zeros(n, n);
    vf.jac_state(t, y, p, &mut out);
    Ok(out)
}

pub fn eval_jac_params(vf: &dyn VectorField, t: f64, y: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(vf, y, p)?;
    let mut out = DMatrix::zeros(vf.dim_state(), vf.dim_params());
    vf.jac_params(t, y, p, &mut out);
    Ok(out)
}

pub fn eval_jac_time(vf: &dyn VectorField, t: f64, y: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    check_dims(vf, y, p)?;
    let mut out = DVector::zeros(vf.dim_state());
    vf.jac_time(t, y, p, out.as_mut_slice());
    Ok(out)
}

/// Resolves parameter names to indices, failing on the first unknown name.
pub fn resolve_params(vf: &dyn VectorField, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            vf.param_index(name).ok_or_else(|| {
                Error::Config(format!("field '{}' has no parameter named '{name}'", vf.name()))
            })
        })
        .collect()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Langford system with parameters `(om, rho, eps)`.
#[derive(Debug, Clone)]
pub struct Langford {
    names: Vec<String>,
}

impl Default for Langford {
    fn default() -> Self {
        Self {
            names: names(&["om", "rho", "eps"]),
        }
    }
}

impl VectorField for Langford {
    fn name(&self) -> &str {
        "langford"
    }

    fn dim_state(&self) -> usize {
        3
    }

    fn param_names(&self) -> &[String] {
        &self.names
    }

    fn autonomous(&self) -> bool {
        true
    }

    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        let (x1, x2, x3) = (y[0], y[1], y[2]);
        let (om, rho, eps) = (p[0], p[1], p[2]);
        out[0] = (x3 - 0.7) * x1 - om * x2;
        out[1] = om * x1 + (x3 - 0.7) * x2;
        out[2] = 0.6 + x3 - x3.powi(3) / 3.0 - (x1 * x1 + x2 * x2) * (1.0 + rho * x3)
            + eps * x3 * x1.powi(3);
    }

    fn jac_state(&self, _t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        let (x1, x2, x3) = (y[0], y[1], y[2]);
        let (om, rho, eps) = (p[0], p[1], p[2]);
        out[(0, 0)] = x3 - 0.7;
        out[(0, 1)] = -om;
        out[(0, 2)] = x1;
        out[(1, 0)] = om;
        out[(1, 1)] = x3 - 0.7;
        out[(1, 2)] = x2;
        out[(2, 0)] = -2.0 * x1 * (1.0 + rho * x3) + 3.0 * eps * x3 * x1 * x1;
        out[(2, 1)] = -2.0 * x2 * (1.0 + rho * x3);
        out[(2, 2)] = 1.0 - x3 * x3 - rho * (x1 * x1 + x2 * x2) + eps * x1.powi(3);
    }

    fn jac_params(&self, _t: f64, y: &[f64], _p: &[f64], out: &mut DMatrix<f64>) {
        let (x1, x2, x3) = (y[0], y[1], y[2]);
        out.fill(0.0);
        out[(0, 0)] = -x2;
        out[(1, 0)] = x1;
        out[(2, 1)] = -x3 * (x1 * x1 + x2 * x2);
        out[(2, 2)] = x3 * x1.powi(3);
    }
}

/// Harmonically forced Van der Pol oscillator `x'' - c(1-x^2)x' + x = a cos(Om2 t)`
/// in first-order form, parameters `(Om2, c, a)`.
#[derive(Debug, Clone)]
pub struct VanDerPol {
    names: Vec<String>,
}

impl Default for VanDerPol {
    fn default() -> Self {
        Self {
            names: names(&["Om2", "c", "a"]),
        }
    }
}

impl VectorField for VanDerPol {
    fn name(&self) -> &str {
        "vdp"
    }

    fn dim_state(&self) -> usize {
        2
    }

    fn param_names(&self) -> &[String] {
        &self.names
    }

    fn autonomous(&self) -> bool {
        false
    }

    fn forcing_frequency(&self) -> Option<usize> {
        Some(0)
    }

    fn rhs(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        let (x, v) = (y[0], y[1]);
        let (om, c, a) = (p[0], p[1], p[2]);
        out[0] = v;
        out[1] = c * (1.0 - x * x) * v - x + a * (om * t).cos();
    }

    fn jac_state(&self, _t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        let (x, v) = (y[0], y[1]);
        let c = p[1];
        out[(0, 0)] = 0.0;
        out[(0, 1)] = 1.0;
        out[(1, 0)] = -2.0 * c * x * v - 1.0;
        out[(1, 1)] = c * (1.0 - x * x);
    }

    fn jac_params(&self, t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        let (x, v) = (y[0], y[1]);
        let (om, a) = (p[0], p[2]);
        out.fill(0.0);
        out[(1, 0)] = -a * t * (om * t).sin();
        out[(1, 1)] = (1.0 - x * x) * v;
        out[(1, 2)] = (om * t).cos();
    }

    fn jac_time(&self, t: f64, _y: &[f64], p: &[f64], out: &mut [f64]) {
        let (om, a) = (p[0], p[2]);
        out[0] = 0.0;
        out[1] = -a * om * (om * t).sin();
    }
}

/// Constant-coefficient linear field `y' = A y` without parameters.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
    names: Vec<String>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return input("linear field needs a non-empty square matrix");
        }
        Ok(Self { a, names: Vec::new() })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl VectorField for LinearField {
    fn name(&self) -> &str {
        "linear"
    }

    fn dim_state(&self) -> usize {
        self.a.nrows()
    }

    fn param_names(&self) -> &[String] {
        &self.names
    }

    fn autonomous(&self) -> bool {
        true
    }

    fn rhs(&self, _t: f64, y: &[f64], _p: &[f64], out: &mut [f64]) {
        let n = self.a.nrows();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.a[(i, j)] * y[j]).sum();
        }
    }

    fn jac_state(&self, _t: f64, _y: &[f64], _p: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.a);
    }

    fn jac_params(&self, _t: f64, _y: &[f64], _p: &[f64], _out: &mut DMatrix<f64>) {}
}

type RhsFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(f64, &[f64], &[f64], &mut DMatrix<f64>) + Send + Sync;

/// A field assembled from closures. Jacobians that are not supplied are
/// approximated by central differences.
pub struct ClosureField {
    name: String,
    dim: usize,
    names: Vec<String>,
    autonomous: bool,
    forcing: Option<usize>,
    rhs: Box<RhsFn>,
    jac_state: Option<Box<JacFn>>,
    jac_params: Option<Box<JacFn>>,
}

impl ClosureField {
    pub fn new<F>(name: &str, dim: usize, params: &[&str], autonomous: bool, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            dim,
            names: names(params),
            autonomous,
            forcing: None,
            rhs: Box::new(rhs),
            jac_state: None,
            jac_params: None,
        }
    }

    pub fn with_forcing_frequency(mut self, param: &str) -> Result<Self> {
        let idx = self
            .names
            .iter()
            .position(|n| n == param)
            .ok_or_else(|| Error::Config(format!("no parameter named '{param}'")))?;
        self.forcing = Some(idx);
        Ok(self)
    }

    pub fn with_jac_state<F>(mut self, jac: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
    {
        self.jac_state = Some(Box::new(jac));
        self
    }

    pub fn with_jac_params<F>(mut self, jac: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
    {
        self.jac_params = Some(Box::new(jac));
        self
    }
}

impl VectorField for ClosureField {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_state(&self) -> usize {
        self.dim
    }

    fn param_names(&self) -> &[String] {
        &self.names
    }

    fn autonomous(&self) -> bool {
        self.autonomous
    }

    fn forcing_frequency(&self) -> Option<usize> {
        self.forcing
    }

    fn rhs(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, p, out)
    }

    fn jac_state(&self, t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        match &self.jac_state {
            Some(jac) => jac(t, y, p, out),
            None => fd_jac_state(self, t, y, p, out),
        }
    }

    fn jac_params(&self, t: f64, y: &[f64], p: &[f64], out: &mut DMatrix<f64>) {
        match &self.jac_params {
            Some(jac) => jac(t, y, p, out),
            None => fd_jac_params(self, t, y, p, out),
        }
    }
}

pub fn builtin_langford() -> Arc<dyn VectorField> {
    Arc::new(Langford::default())
}

pub fn builtin_vdp() -> Arc<dyn VectorField> {
    Arc::new(VanDerPol::default())
}

/// Looks up a shipped system by name.
pub fn builtin(name: &str) -> Result<Arc<dyn VectorField>> {
    match name {
        "langford" => Ok(builtin_langford()),
        "vdp" => Ok(builtin_vdp()),
        other => Err(Error::NotFound(format!("no builtin system named '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Relative error with an absolute floor of 1e-8.
    fn rel_err(a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if d < 1e-8 {
            0.0
        } else {
            d / a.abs().max(b.abs())
        }
    }

    #[test]
    fn langford_values() {
        let vf = builtin_langford();
        let f = eval_rhs(vf.as_ref(), 17.0, &[0.0, 0.0, 0.0], &[3.5, 1.5, 0.0]).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0, 0.6]);

        let (om, rho) = (2.3, 0.8);
        let f = eval_rhs(vf.as_ref(), 0.0, &[1.0, 0.0, 0.7], &[om, rho, 0.0]).unwrap();
        let expected = 0.6 + 0.7 - 0.7f64.powi(3) / 3.0 - (1.0 + 0.7 * rho);
        assert!(f[0].abs() < 1e-15);
        assert!((f[1] - om).abs() < 1e-15);
        assert!((f[2] - expected).abs() < 1e-14);
    }

    #[test]
    fn langford_param_jacobian_eps_column() {
        let vf = builtin_langford();
        let y = [0.4, -0.3, 1.2];
        let j = eval_jac_params(vf.as_ref(), 0.0, &y, &[3.5, 1.5, 0.2]).unwrap();
        assert_eq!(j[(2, 2)], y[2] * y[0].powi(3));
    }

    #[test]
    fn vdp_values() {
        let vf = builtin_vdp();
        assert!(!vf.autonomous());
        assert_eq!(vf.forcing_frequency(), Some(0));
        let f = eval_rhs(vf.as_ref(), 0.0, &[0.0, 0.0], &[1.3, 0.2, 0.7]).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.7]);
        let f = eval_rhs(vf.as_ref(), 0.0, &[1.0, 0.0], &[1.5111, 0.11, 0.1]).unwrap();
        assert!((f[0]).abs() < 1e-15 && (f[1] - (-1.0 + 0.1)).abs() < 1e-15);
        let t = 0.9;
        let p = [1.5111, 0.11, 0.1];
        let jt = eval_jac_time(vf.as_ref(), t, &[0.3, 0.2], &p).unwrap();
        assert_eq!(jt[0], 0.0);
        assert!((jt[1] + p[2] * p[0] * (p[0] * t).sin()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let vf = builtin_langford();
        assert!(matches!(
            eval_rhs(vf.as_ref(), 0.0, &[0.0, 0.0], &[3.5, 1.5, 0.0]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            eval_rhs(vf.as_ref(), 0.0, &[0.0, 0.0, 0.0], &[3.5]),
            Err(Error::Input(_))
        ));
    }

    fn check_all_jacobians(vf: &dyn VectorField, seed: u64) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let (n, q) = (vf.dim_state(), vf.dim_params());
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-5.0..5.0);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p: Vec<f64> = (0..q).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let js = eval_jac_state(vf, t, &y, &p).unwrap();
            let mut fd = DMatrix::zeros(n, n);
            fd_jac_state(vf, t, &y, &p, &mut fd);
            for (a, b) in js.iter().zip(fd.iter()) {
                assert!(rel_err(*a, *b) < 1e-5, "state jac {a} vs {b}");
            }
            let jp = eval_jac_params(vf, t, &y, &p).unwrap();
            let mut fd = DMatrix::zeros(n, q);
            fd_jac_params(vf, t, &y, &p, &mut fd);
            for (a, b) in jp.iter().zip(fd.iter()) {
                assert!(rel_err(*a, *b) < 1e-5, "param jac {a} vs {b}");
            }
            let jt = eval_jac_time(vf, t, &y, &p).unwrap();
            let mut fd = vec![0.0; n];
            fd_jac_time(vf, t, &y, &p, &mut fd);
            for (a, b) in jt.iter().zip(fd.iter()) {
                assert!(rel_err(*a, *b) < 1e-5, "time jac {a} vs {b}");
            }
        }
    }

    #[test]
    fn builtin_jacobians_match_finite_differences() {
        check_all_jacobians(builtin_langford().as_ref(), 11);
        check_all_jacobians(builtin_vdp().as_ref(), 12);
    }

    #[test]
    fn langford_rotation_equivariance() {
        let vf = builtin_langford();
        let p = [3.5, 0.9, 0.0];
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let beta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (c, s) = (beta.cos(), beta.sin());
            let ry = [c * y[0] - s * y[1], s * y[0] + c * y[1], y[2]];
            let f = eval_rhs(vf.as_ref(), 0.0, &y, &p).unwrap();
            let f_rot = eval_rhs(vf.as_ref(), 0.0, &ry, &p).unwrap();
            let rf = [c * f[0] - s * f[1], s * f[0] + c * f[1], f[2]];
            for i in 0..3 {
                assert!((f_rot[i] - rf[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closure_field_uses_finite_differences() {
        let vf = ClosureField::new("cubic", 1, &["lam"], true, |_, y, p, out| {
            out[0] = p[0] * y[0] - y[0].powi(3)
        });
        let j = eval_jac_state(&vf, 0.0, &[0.5], &[0.3]).unwrap();
        assert!((j[(0, 0)] - (0.3 - 3.0 * 0.25)).abs() < 1e-7);
        let jp = eval_jac_params(&vf, 0.0, &[0.5], &[0.3]).unwrap();
        assert!((jp[(0, 0)] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn autonomous_field_ignores_time() {
        let vf = builtin_langford();
        let y = [0.3, 0.4, 0.1];
        let p = [3.5, 1.5, 0.0];
        let a = eval_rhs(vf.as_ref(), 0.0, &y, &p).unwrap();
        let b = eval_rhs(vf.as_ref(), 123.4, &y, &p).unwrap();
        assert_eq!(a, b);
        let jt = eval_jac_time(vf.as_ref(), 3.0, &y, &p).unwrap();
        assert!(jt.iter().all(|v| *v == 0.0));
    }
}
