//! Pseudo-arclength continuation of one-dimensional solution manifolds.
//!
//! A [`ZeroProblem`] has one more unknown than equations. The driver
//! alternates a secant (or tangent) predictor with a Newton corrector on the
//! bordered system `{F(u) = 0, <t, u - u_pred> = 0}`, adapts the step size,
//! and detects and locates events: bound crossings (EP), sign changes of
//! problem-specific test functions (e.g. TR) and sign changes of the
//! tangent-bordered Jacobian determinant (BP).
//!
//! All inner products use the diagonal metric returned by
//! [`ZeroProblem::weights`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bordered::BorderedOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointType {
    /// End point: start, end of a direction, bound crossing.
    EP,
    /// Neimark–Sacker (torus) bifurcation of a periodic orbit.
    TR,
    /// Branch point.
    BP,
    /// Regular labeled output point.
    RO,
}

impl PointType {
    pub fn as_str(self) -> &'static str {
        match self {
            PointType::EP => "EP",
            PointType::TR => "TR",
            PointType::BP => "BP",
            PointType::RO => "RO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "EP" => Some(PointType::EP),
            "TR" => Some(PointType::TR),
            "BP" => Some(PointType::BP),
            "RO" => Some(PointType::RO),
            _ => None,
        }
    }
}

impl std::fmt::Display for PointType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A zero problem `F(u) = 0` with `F: R^d -> R^(d-1)`.
pub trait ZeroProblem {
    fn num_unknowns(&self) -> usize;

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn linearize(&self, u: &DVector<f64>) -> Result<Box<dyn BorderedOperator>>;

    fn monitor_names(&self) -> Vec<String>;

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64>;

    /// Diagonal metric used for arclength and tangent normalization.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.num_unknowns(), 1.0)
    }

    /// Index into `u` of the primary continuation parameter; the forward
    /// direction is the one in which it increases.
    fn primary_index(&self) -> Option<usize> {
        None
    }

    /// Called after a point has been accepted (e.g. to move Poincaré sections).
    fn accept(&mut self, _u: &DVector<f64>) -> Result<()> {
        Ok(())
    }

    /// Event types of the problem-specific test functions.
    fn test_kinds(&self) -> Vec<PointType> {
        Vec::new()
    }

    /// Values of the test functions; `None` means "not defined here".
    fn test_functions(&self, _u: &DVector<f64>) -> Result<Vec<Option<f64>>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub monitor: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Maximum number of steps per direction.
    pub pt_max: usize,
    pub bi_direct: bool,
    /// Label every `npr`-th regular point (0 disables).
    pub npr: usize,
    pub max_newton_iter: usize,
    pub max_start_iter: usize,
    /// Residual tolerance (max norm).
    pub tol: f64,
    pub detect_bp: bool,
    /// Maximum angle (radians) between consecutive tangents.
    pub max_angle: f64,
    pub bounds: Vec<Bound>,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            h0: 0.1,
            h_min: 1e-4,
            h_max: 0.5,
            pt_max: 50,
            bi_direct: true,
            npr: 10,
            max_newton_iter: 10,
            max_start_iter: 20,
            tol: 1e-9,
            detect_bp: true,
            max_angle: std::f64::consts::FRAC_PI_3,
            bounds: Vec::new(),
        }
    }
}

/// A start point for [`run`].
#[derive(Debug, Clone)]
pub struct Start {
    pub u: DVector<f64>,
    /// Optional seed direction. The initial correction then holds the
    /// projection onto the seed fixed, and the seed orients the tangent.
    pub seed: Option<DVector<f64>>,
    /// Use the seed itself as the first tangent (required at branch points,
    /// where the bordered tangent system is singular).
    pub seed_is_tangent: bool,
}

impl Start {
    pub fn new(u: DVector<f64>) -> Self {
        Self {
            u,
            seed: None,
            seed_is_tangent: false,
        }
    }

    pub fn with_seed(u: DVector<f64>, seed: DVector<f64>) -> Self {
        Self {
            u,
            seed: Some(seed),
            seed_is_tangent: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Point {
    pub label: Option<u32>,
    pub kind: Option<PointType>,
    /// Step index; negative in the backward direction.
    pub index: i64,
    pub u: DVector<f64>,
    pub tangent: DVector<f64>,
    pub monitors: Vec<f64>,
    pub iterations: usize,
    pub h: f64,
    /// The event could not be located to tolerance.
    pub unlocated: bool,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub monitor_names: Vec<String>,
    pub points: Vec<Point>,
    pub notes: Vec<String>,
}

impl Branch {
    pub fn labeled(&self) -> impl Iterator<Item = &Point> {
        self.points.iter().filter(|p| p.label.is_some())
    }

    pub fn events(&self, kind: PointType) -> impl Iterator<Item = &Point> {
        self.points.iter().filter(move |p| p.kind == Some(kind))
    }

    pub fn monitor(&self, name: &str) -> Option<usize> {
        self.monitor_names.iter().position(|m| m == name)
    }
}

fn wdot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter().zip(a.iter().zip(b.iter())).map(|(w, (a, b))| w * a * b).sum()
}

fn wnorm(w: &DVector<f64>, a: &DVector<f64>) -> f64 {
    wdot(w, a, a).sqrt()
}

/// A border equation `<b, u> = gamma` (with `b` already weighted).
struct Border {
    b: DVector<f64>,
    gamma: f64,
}

impl Border {
    /// `<dir, u - center>_W = h`.
    fn arclength(w: &DVector<f64>, dir: &DVector<f64>, center: &DVector<f64>, h: f64) -> Self {
        let b = dir.component_mul(w);
        let gamma = b.dot(center) + h;
        Self { b, gamma }
    }
}

/// Newton's method on `{F(u) = 0, borders}`; returns the solution and the
/// number of linear solves.
fn newton(
    problem: &dyn ZeroProblem,
    u0: &DVector<f64>,
    borders: &[Border],
    max_iter: usize,
    tol: f64,
) -> Result<(DVector<f64>, usize)> {
    let mut u = u0.clone();
    let mut res = problem.residual(&u)?;
    let mut rnorm = res.amax();
    for it in 0..=max_iter {
        let bres: Vec<f64> = borders.iter().map(|b| b.gamma - b.b.dot(&u)).collect();
        let bscale = borders.iter().map(|b| b.b.amax()).fold(1.0, f64::max);
        let bnorm = bres.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if rnorm < tol && bnorm < tol * bscale.max(1.0) * 10.0 && (it > 0 || borders.is_empty() || bnorm < tol) {
            return Ok((u, it));
        }
        if it == max_iter || !rnorm.is_finite() || rnorm > 1e8 {
            break;
        }
        let op = problem.linearize(&u)?;
        let bs: Vec<&DVector<f64>> = borders.iter().map(|b| &b.b).collect();
        let du = op.solve(&bs, &(-&res), &bres)?;
        u += du;
        res = problem.residual(&u)?;
        rnorm = res.amax();
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: rnorm,
    })
}

/// Newton without an arclength border: each step is orthogonal (in the
/// metric) to the current approximate null vector.
fn newton_free(problem: &dyn ZeroProblem, u0: &DVector<f64>, max_iter: usize, tol: f64) -> Result<(DVector<f64>, usize)> {
    let w = problem.weights();
    let mut u = u0.clone();
    let mut res = problem.residual(&u)?;
    for it in 0..=max_iter {
        if res.amax() < tol {
            return Ok((u, it));
        }
        if it == max_iter || !res.amax().is_finite() {
            break;
        }
        let op = problem.linearize(&u)?;
        let (null, _) = op.null_space(1)?;
        let b = null[0].component_mul(&w);
        let du = op.solve(&[&b], &(-&res), &[0.0])?;
        u += du;
        res = problem.residual(&u)?;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: res.amax(),
    })
}

/// Corrects a start point onto the manifold.
pub fn correct(problem: &dyn ZeroProblem, start: &Start, settings: &ContinuationSettings) -> Result<(DVector<f64>, usize)> {
    if start.u.len() != problem.num_unknowns() {
        return Err(Error::Input(format!(
            "start vector has length {}, problem expects {}",
            start.u.len(),
            problem.num_unknowns()
        )));
    }
    match &start.seed {
        Some(seed) => {
            let w = problem.weights();
            let border = Border::arclength(&w, seed, &start.u, 0.0);
            newton(problem, &start.u, &[border], settings.max_start_iter, settings.tol)
        }
        None => newton_free(problem, &start.u, settings.max_start_iter, settings.tol),
    }
}

/// Relative bracket width accepted when the corrector stalls during event
/// location.
const STALL_BRACKET: f64 = 1e-2;

/// Tolerance for a start point lying on a bound.
const BOUND_SLACK: f64 = 1e-8;

/// Unit tangent at `u`, bordered by (and oriented along) `guide`.
fn tangent(op: &dyn BorderedOperator, w: &DVector<f64>, guide: &DVector<f64>) -> Result<DVector<f64>> {
    let b = guide.component_mul(w);
    let zero = DVector::zeros(op.num_equations());
    let t = op.solve(&[&b], &zero, &[1.0])?;
    let norm = wnorm(w, &t);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Singular("degenerate tangent".into()));
    }
    Ok(t / norm)
}

/// Located or bracketing point produced during event handling.
struct Located {
    u: DVector<f64>,
    unlocated: bool,
    iterations: usize,
}

/// Root of a test function along the chord from `ua` to `ub`, each trial
/// point corrected by Newton on the chord-orthogonal hyperplane.
///
/// `f` returns `None` where the test function is undefined. When
/// `sign_only`, plain bisection is used; otherwise the Illinois variant of
/// regula falsi. Stops when `|f| < ftol` or the bracket is below `stol`.
#[allow(clippy::too_many_arguments)]
fn locate_on_chord(
    problem: &dyn ZeroProblem,
    ua: &DVector<f64>,
    ub: &DVector<f64>,
    fa: f64,
    fb: f64,
    f: &mut dyn FnMut(&DVector<f64>, &DVector<f64>) -> Result<Option<f64>>,
    sign_only: bool,
    ftol: f64,
    stol: f64,
    settings: &ContinuationSettings,
) -> Result<Located> {
    let w = problem.weights();
    let chord = ub - ua;
    let len = wnorm(&w, &chord);
    let dir = &chord / len;
    let (mut sa, mut sb) = (0.0, len);
    let (mut fa, mut fb) = (fa, fb);
    let mut best = if fa.abs() < fb.abs() { ua.clone() } else { ub.clone() };
    let (mut pa, mut pb) = (ua.clone(), ub.clone());
    let mut side = 0i32;
    let mut total = 0;
    for _ in 0..60 {
        if sb - sa < stol {
            break;
        }
        let s = if sign_only {
            0.5 * (sa + sb)
        } else {
            let s = sb - fb * (sb - sa) / (fb - fa);
            // stay strictly inside, and fall back to bisection near the ends
            if s <= sa + 1e-3 * (sb - sa) || s >= sb - 1e-3 * (sb - sa) || !s.is_finite() {
                0.5 * (sa + sb)
            } else {
                s
            }
        };
        // interpolate between the converged bracket ends: far better than the
        // chord itself once the bracket is small
        let guess = &pa + (&pb - &pa) * ((s - sa) / (sb - sa));
        let border = Border::arclength(&w, &dir, ua, s);
        let (u, it) = match newton(problem, &guess, &[border], settings.max_newton_iter, settings.tol) {
            Ok(v) => v,
            Err(_) => {
                // close to a branch point the bordered Jacobian is singular
                // for every border and Newton stalls; a small bracket counts
                return Ok(Located {
                    u: best,
                    unlocated: sb - sa > STALL_BRACKET * len,
                    iterations: total,
                })
            }
        };
        total += it;
        let Some(fs) = f(&u, &dir)? else {
            return Ok(Located {
                u: best,
                unlocated: true,
                iterations: total,
            });
        };
        best = u.clone();
        if fs.abs() < ftol {
            return Ok(Located {
                u: best,
                unlocated: false,
                iterations: total,
            });
        }
        if fs.signum() == fa.signum() {
            sa = s;
            fa = fs;
            pa = u;
            if side == -1 && !sign_only {
                fb *= 0.5;
            }
            side = -1;
        } else {
            sb = s;
            fb = fs;
            pb = u;
            if side == 1 && !sign_only {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let ok = sb - sa < stol * 10.0;
    Ok(Located {
        u: best,
        unlocated: !ok,
        iterations: total,
    })
}

/// Locates a root of a scalar function of the chord between two converged
/// points. Exposed for reuse by drivers that evaluate their own test
/// functions.
#[allow(clippy::too_many_arguments)]
pub fn locate_event(
    problem: &dyn ZeroProblem,
    ua: &DVector<f64>,
    ub: &DVector<f64>,
    test: &mut dyn FnMut(&DVector<f64>) -> Result<Option<f64>>,
    sign_only: bool,
    ftol: f64,
    stol: f64,
    settings: &ContinuationSettings,
) -> Result<(DVector<f64>, bool)> {
    let fa = test(ua)?.ok_or_else(|| Error::Input("test function undefined at bracket start".into()))?;
    let fb = test(ub)?.ok_or_else(|| Error::Input("test function undefined at bracket end".into()))?;
    if fa.signum() == fb.signum() {
        return Err(Error::Input("test function does not change sign over the bracket".into()));
    }
    let mut f = |u: &DVector<f64>, _: &DVector<f64>| test(u);
    let loc = locate_on_chord(problem, ua, ub, fa, fb, &mut f, sign_only, ftol, stol, settings)?;
    Ok((loc.u, loc.unlocated))
}

/// Sign of the determinant of the Jacobian bordered by `dir`.
fn det_sign(problem: &dyn ZeroProblem, u: &DVector<f64>, dir: &DVector<f64>) -> Result<f64> {
    let op = problem.linearize(u)?;
    let b = dir.component_mul(&problem.weights());
    Ok(op.det(&[&b])?.0)
}

struct Walker<'a> {
    problem: &'a mut dyn ZeroProblem,
    settings: &'a ContinuationSettings,
    bounds: Vec<(usize, Option<f64>, Option<f64>)>,
    points: Vec<Point>,
    notes: Vec<String>,
    next_label: u32,
}

impl<'a> Walker<'a> {
    fn make_point(&mut self, kind: Option<PointType>, index: i64, u: DVector<f64>, tangent: DVector<f64>, iterations: usize, h: f64) -> Point {
        let label = if kind.is_some() {
            let l = self.next_label;
            self.next_label += 1;
            Some(l)
        } else {
            None
        };
        let monitors = self.problem.monitors(&u);
        Point {
            label,
            kind,
            index,
            u,
            tangent,
            monitors,
            iterations,
            h,
            unlocated: false,
        }
    }

    fn bound_values(&self, mons: &[f64]) -> Vec<f64> {
        let mut v = Vec::new();
        for &(i, lo, hi) in &self.bounds {
            if let Some(lo) = lo {
                v.push(mons[i] - lo);
            }
            if let Some(hi) = hi {
                v.push(hi - mons[i]);
            }
        }
        v
    }

    fn bound_value_at(&self, u: &DVector<f64>, k: usize) -> f64 {
        self.bound_values(&self.problem.monitors(u))[k]
    }

    /// Walks one direction from a converged start with tangent `t0`.
    fn walk(&mut self, u0: &DVector<f64>, t0: &DVector<f64>, sign: i64, skip_first_bp: bool) -> Result<()> {
        let s = self.settings;
        let w = self.problem.weights();
        let mut u = u0.clone();
        let mut t = t0.clone();
        let mut prev: Option<DVector<f64>> = None;
        let mut h = s.h0.clamp(s.h_min, s.h_max);
        let mut tests = self.problem.test_functions(&u)?;
        let mut det = if s.detect_bp && !skip_first_bp {
            Some(det_sign(&*self.problem, &u, &t)?)
        } else {
            None
        };
        let mut bvals = self.bound_values(&self.problem.monitors(&u));
        let primary = self.problem.primary_index();
        let mut step = 0usize;
        while step < s.pt_max {
            let dir = match &prev {
                Some(up) => {
                    let sec = &u - up;
                    let n = wnorm(&w, &sec);
                    if n > 0.0 && wdot(&w, &sec, &t) > 0.0 {
                        sec / n
                    } else {
                        t.clone()
                    }
                }
                None => t.clone(),
            };
            let pred = &u + &dir * h;
            let border = Border::arclength(&w, &dir, &u, h);
            let attempt = newton(&*self.problem, &pred, &[border], s.max_newton_iter, s.tol).and_then(|(un, it)| {
                let dist = wnorm(&w, &(&un - &u));
                if dist > 2.0 * s.h_max {
                    return Err(Error::Convergence {
                        iterations: it,
                        residual: dist,
                    });
                }
                let op = self.problem.linearize(&un)?;
                let tn = tangent(op.as_ref(), &w, &t)?;
                if wdot(&w, &tn, &t).clamp(-1.0, 1.0).acos() > s.max_angle {
                    return Err(Error::Convergence {
                        iterations: it,
                        residual: f64::NAN,
                    });
                }
                let dn = if s.detect_bp {
                    Some(op.det(&[&tn.component_mul(&w)])?.0)
                } else {
                    None
                };
                Ok((un, it, tn, dn))
            });
            let (un, it, tn, dn) = match attempt {
                Ok(v) => v,
                Err(e) => {
                    if h <= s.h_min * (1.0 + 1e-12) {
                        self.notes.push(format!(
                            "corrector failed at minimal step size after step {step} ({e}); direction terminated"
                        ));
                        break;
                    }
                    h = (h / 2.0).max(s.h_min);
                    continue;
                }
            };
            step += 1;
            let idx = sign * step as i64;

            if let Some(pi) = primary {
                if t[pi] * tn[pi] < 0.0 {
                    self.notes.push(format!("fold (extremum of the primary parameter) near step {idx}"));
                }
            }

            // collect events on (u, un]
            let mut events: Vec<(f64, Point)> = Vec::new();
            let mut terminate = false;
            let new_tests = self.problem.test_functions(&un)?;
            let kinds = self.problem.test_kinds();
            for (k, kind) in kinds.iter().enumerate() {
                if let (Some(Some(a)), Some(Some(b))) = (tests.get(k), new_tests.get(k)) {
                    if a.signum() != b.signum() && *a != 0.0 {
                        let (a, b) = (*a, *b);
                        let prob: &dyn ZeroProblem = &*self.problem;
                        let mut f = |x: &DVector<f64>, _: &DVector<f64>| -> Result<Option<f64>> {
                            Ok(prob.test_functions(x)?.get(k).copied().flatten())
                        };
                        let loc = locate_on_chord(prob, &u, &un, a, b, &mut f, false, 1e-6, 1e-8, s)?;
                        events.push(self.event_point(*kind, idx, &u, loc, &t, h)?);
                    }
                }
            }
            if let (Some(a), Some(b)) = (det, dn) {
                if a != b && a != 0.0 && b != 0.0 {
                    let prob: &dyn ZeroProblem = &*self.problem;
                    let chord = &un - &u;
                    let fa = det_sign(prob, &u, &chord)?;
                    let fb = det_sign(prob, &un, &chord)?;
                    if fa != fb {
                        let mut f = |x: &DVector<f64>, d: &DVector<f64>| -> Result<Option<f64>> {
                            Ok(Some(det_sign(prob, x, d)?))
                        };
                        let loc = locate_on_chord(prob, &u, &un, fa, fb, &mut f, true, 0.0, 1e-8, s)?;
                        events.push(self.event_point(PointType::BP, idx, &u, loc, &t, h)?);
                    }
                }
            }
            let nb = self.bound_values(&self.problem.monitors(&un));
            for k in 0..nb.len() {
                // a start located on the boundary may sit marginally outside
                if nb[k] < 0.0 && bvals[k] < 0.0 && bvals[k] > -BOUND_SLACK && step == 1 {
                    self.notes.push(format!("direction {sign:+} leaves the domain at its start point"));
                    return Ok(());
                }
                if bvals[k] >= 0.0 && nb[k] < 0.0 {
                    let prob: &dyn ZeroProblem = &*self.problem;
                    let me: &Self = self;
                    let mut f = |x: &DVector<f64>, _: &DVector<f64>| -> Result<Option<f64>> { Ok(Some(me.bound_value_at(x, k))) };
                    let loc = locate_on_chord(prob, &u, &un, bvals[k], nb[k], &mut f, false, 1e-10, 1e-10, s)?;
                    events.push(self.event_point(PointType::EP, idx, &u, loc, &t, h)?);
                    terminate = true;
                }
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            if terminate {
                // keep events up to and including the first bound crossing
                if let Some(cut) = events.iter().position(|e| e.1.kind == Some(PointType::EP)) {
                    events.truncate(cut + 1);
                }
            }
            for (_, mut p) in events {
                p.label = Some(self.next_label);
                self.next_label += 1;
                self.points.push(p);
            }
            if terminate {
                let last_u = self.points.last().map(|p| p.u.clone()).unwrap_or(un);
                self.problem.accept(&last_u)?;
                return Ok(());
            }

            let last = step == s.pt_max;
            let kind = if last {
                Some(PointType::EP)
            } else if s.npr > 0 && step % s.npr == 0 {
                Some(PointType::RO)
            } else {
                None
            };
            let p = self.make_point(kind, idx, un.clone(), tn.clone(), it, h);
            self.points.push(p);
            self.problem.accept(&un)?;

            prev = Some(u);
            u = un;
            t = tn;
            tests = new_tests;
            det = dn;
            bvals = nb;
            if it <= 4 {
                h = (2.0 * h).min(s.h_max);
            }
        }
        // mark the end of a prematurely terminated direction
        if step < s.pt_max {
            if let Some(p) = self.points.last_mut() {
                if p.kind.is_none() && p.index.signum() == sign && p.index != 0 {
                    p.kind = Some(PointType::EP);
                    p.label = Some(self.next_label);
                    self.next_label += 1;
                }
            }
        }
        Ok(())
    }

    fn event_point(&mut self, kind: PointType, idx: i64, ua: &DVector<f64>, loc: Located, t: &DVector<f64>, h: f64) -> Result<(f64, Point)> {
        let w = self.problem.weights();
        let dist = wnorm(&w, &(&loc.u - ua));
        let op = self.problem.linearize(&loc.u)?;
        // the tangent-bordered system is singular at a branch point, so keep
        // the incoming tangent there
        let tan = if kind == PointType::BP {
            t.clone()
        } else {
            tangent(op.as_ref(), &w, t).unwrap_or_else(|_| t.clone())
        };
        let monitors = self.problem.monitors(&loc.u);
        Ok((
            dist,
            Point {
                label: None,
                kind: Some(kind),
                index: idx,
                u: loc.u,
                tangent: tan,
                monitors,
                iterations: loc.iterations,
                h,
                unlocated: loc.unlocated,
            },
        ))
    }
}

/// Runs a continuation from `start`. Labels start at 1 (the start point),
/// continue through the forward direction and then the backward one.
pub fn run(problem: &mut dyn ZeroProblem, start: &Start, settings: &ContinuationSettings) -> Result<Branch> {
    if !(settings.h_min > 0.0 && settings.h_min <= settings.h_max) {
        return Err(Error::Config("step sizes must satisfy 0 < h_min <= h_max".into()));
    }
    let names = problem.monitor_names();
    let mut bounds = Vec::new();
    for b in &settings.bounds {
        let i = names
            .iter()
            .position(|n| *n == b.monitor)
            .ok_or_else(|| Error::Config(format!("bound refers to unknown monitor '{}'", b.monitor)))?;
        bounds.push((i, b.min, b.max));
    }
    let (u0, it0) = correct(&*problem, start, settings)?;
    let w = problem.weights();
    let op = problem.linearize(&u0)?;
    let t0 = match &start.seed {
        Some(seed) if start.seed_is_tangent => seed / wnorm(&w, seed),
        Some(seed) => tangent(op.as_ref(), &w, seed)?,
        None => {
            let (null, _) = op.null_space(1)?;
            let v = &null[0];
            let v = v / wnorm(&w, v);
            // refine through the bordered system for accuracy
            tangent(op.as_ref(), &w, &v).unwrap_or(v)
        }
    };
    let t0 = match (problem.primary_index(), &start.seed) {
        (Some(i), None) if t0[i] < 0.0 => -t0,
        _ => t0,
    };
    drop(op);
    problem.accept(&u0)?;

    let mut walker = Walker {
        problem,
        settings,
        bounds,
        points: Vec::new(),
        notes: Vec::new(),
        next_label: 1,
    };
    let first = walker.make_point(Some(PointType::EP), 0, u0.clone(), t0.clone(), it0, settings.h0);
    walker.points.push(first);
    walker.walk(&u0, &t0, 1, start.seed_is_tangent)?;
    if settings.bi_direct {
        walker.problem.accept(&u0)?;
        walker.walk(&u0, &(-&t0), -1, start.seed_is_tangent)?;
    }
    Ok(Branch {
        monitor_names: names,
        points: walker.points,
        notes: walker.notes,
    })
}

/// Start data for continuing along the secondary branch through a branch point.
///
/// The secondary direction is the null vector of the Jacobian bordered by
/// the incoming tangent, found by inverse iteration; it is W-orthogonal to
/// the incoming tangent. If that bordered matrix is exactly singular the
/// two smallest singular directions of the Jacobian are used instead.
pub fn switch_branch(problem: &dyn ZeroProblem, u: &DVector<f64>, incoming: &DVector<f64>) -> Result<Start> {
    let w = problem.weights();
    let op = problem.linearize(u)?;
    let d = match secondary_direction(op.as_ref(), &w, incoming) {
        Err(Error::Singular(_)) => {
            let (v, sv) = op.null_space(2)?;
            // with only two unknowns there is no third singular value to compare to
            let third = sv.get(2).copied().unwrap_or(f64::INFINITY);
            if !(sv[1] < 1e-2 * third) {
                return Err(Error::BranchPoint(format!(
                    "null space is not two-dimensional (singular values {:.3e}, {:.3e})",
                    sv[1], third
                )));
            }
            let a = wdot(&w, &v[0], incoming);
            let b = wdot(&w, &v[1], incoming);
            &v[0] * b - &v[1] * a
        }
        other => other?,
    };
    let norm = wnorm(&w, &d);
    if !(norm > 0.0) {
        return Err(Error::BranchPoint("incoming tangent is not in the null space".into()));
    }
    Ok(Start {
        u: u.clone(),
        seed: Some(d / norm),
        seed_is_tangent: true,
    })
}

/// Largest ratio of the two smallest singular values of the tangent-bordered
/// Jacobian for which the point still counts as a branch point.
const BP_SEPARATION: f64 = 1e-2;

/// Null vector of `[J; (W t)^T]`, W-orthogonal to `t`.
///
/// Subspace inverse iteration on two vectors, followed by an SVD of the
/// bordered matrix restricted to that subspace: the smaller singular pair
/// gives the direction, and the ratio of the two classifies the point.
fn secondary_direction(op: &dyn BorderedOperator, w: &DVector<f64>, incoming: &DVector<f64>) -> Result<DVector<f64>> {
    let b = incoming.component_mul(w);
    let neq = op.num_equations();
    let n = op.num_unknowns();
    let bordered = |x: &DVector<f64>| {
        let mut out = DVector::zeros(neq + 1);
        out.rows_mut(0, neq).copy_from(&op.apply(x));
        out[neq] = b.dot(x);
        out
    };
    let mut q = DMatrix::from_fn(n, 2, |i, j| (1.7 * i as f64 + 0.3 + 2.1 * j as f64).sin());
    for _ in 0..4 {
        let mut y = DMatrix::zeros(n, 2);
        for j in 0..2 {
            let x = q.column(j).into_owned();
            let s = op.solve(&[&b], &x.rows(0, neq).into_owned(), &[x[neq]])?;
            y.set_column(j, &s);
        }
        q = y.qr().q();
    }
    let mut aq = DMatrix::zeros(neq + 1, 2);
    for j in 0..2 {
        aq.set_column(j, &bordered(&q.column(j).into_owned()));
    }
    let svd = aq.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Singular("SVD failed".into()))?;
    let (imin, imax) = if svd.singular_values[0] <= svd.singular_values[1] { (0, 1) } else { (1, 0) };
    let (smin, snext) = (svd.singular_values[imin], svd.singular_values[imax]);
    if !(smin < BP_SEPARATION * snext) {
        return Err(Error::BranchPoint(format!(
            "null space is not two-dimensional (bordered singular values {smin:.3e}, {snext:.3e})"
        )));
    }
    let x = &q * v_t.row(imin).transpose();
    let tt = wdot(w, incoming, incoming);
    Ok(&x - incoming * (wdot(w, &x, incoming) / tt))
}

/// W-orthogonality check helper, exposed for tests and diagnostics.
pub fn metric_dot(problem: &dyn ZeroProblem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    wdot(&problem.weights(), a, b)
}

/// Zero problem defined by closures; Jacobian by central differences
/// unless supplied. Monitors are the unknowns themselves.
pub struct ClosureProblem {
    pub names: Vec<String>,
    pub f: Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
    pub tests: Vec<(PointType, Box<dyn Fn(&DVector<f64>) -> Option<f64>>)>,
    pub primary: Option<usize>,
}

impl ClosureProblem {
    pub fn new(names: &[&str], f: impl Fn(&DVector<f64>) -> DVector<f64> + 'static) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            f: Box::new(f),
            tests: Vec::new(),
            primary: None,
        }
    }

    pub fn with_primary(mut self, i: usize) -> Self {
        self.primary = Some(i);
        self
    }

    pub fn with_test(mut self, kind: PointType, g: impl Fn(&DVector<f64>) -> Option<f64> + 'static) -> Self {
        self.tests.push((kind, Box::new(g)));
        self
    }
}

impl ZeroProblem for ClosureProblem {
    fn num_unknowns(&self) -> usize {
        self.names.len()
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.f)(u))
    }

    fn linearize(&self, u: &DVector<f64>) -> Result<Box<dyn BorderedOperator>> {
        let f0 = (self.f)(u);
        let mut j = nalgebra::DMatrix::zeros(f0.len(), u.len());
        for c in 0..u.len() {
            let h = 1e-7f64.max(1e-7 * u[c].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up[c] += h;
            um[c] -= h;
            j.set_column(c, &(((self.f)(&up) - (self.f)(&um)) / (2.0 * h)));
        }
        Ok(Box::new(crate::bordered::DenseOperator::new(j)))
    }

    fn monitor_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter().copied().collect()
    }

    fn primary_index(&self) -> Option<usize> {
        self.primary
    }

    fn test_kinds(&self) -> Vec<PointType> {
        self.tests.iter().map(|t| t.0).collect()
    }

    fn test_functions(&self, u: &DVector<f64>) -> Result<Vec<Option<f64>>> {
        Ok(self.tests.iter().map(|t| (t.1)(u)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn circle_is_traversed() {
        let mut p = ClosureProblem::new(&["x", "y"], |u| v(&[u[0] * u[0] + u[1] * u[1] - 1.0])).with_primary(1);
        let settings = ContinuationSettings {
            h0: 0.1,
            h_max: 0.2,
            pt_max: 100,
            bi_direct: false,
            detect_bp: false,
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[1.0, 0.0])), &settings).unwrap();
        let mut angle = 0.0;
        for w in br.points.windows(2) {
            let (a, b) = (&w[0].u, &w[1].u);
            let d = b[1].atan2(b[0]) - a[1].atan2(a[0]);
            angle += (d + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            assert!((b.norm() - 1.0).abs() < 1e-9);
            assert!(w[1].iterations <= 4);
            assert!((b - a).norm() <= 2.0 * settings.h_max);
        }
        assert!(angle > 2.0 * std::f64::consts::PI, "covered angle {angle}");
        assert_eq!(br.points.len(), 101);
    }

    #[test]
    fn labels_are_unique_and_ascending() {
        let mut p = ClosureProblem::new(&["x", "y"], |u| v(&[u[1] - u[0] * u[0]])).with_primary(0);
        let settings = ContinuationSettings {
            pt_max: 12,
            npr: 5,
            detect_bp: false,
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[0.0, 0.0])), &settings).unwrap();
        let labels: Vec<u32> = br.labeled().map(|p| p.label.unwrap()).collect();
        assert_eq!(labels, (1..=labels.len() as u32).collect::<Vec<_>>());
        assert_eq!(br.points[0].kind, Some(PointType::EP));
        // forward end, backward end, two RO per direction, start
        assert_eq!(br.events(PointType::EP).count(), 3);
        assert_eq!(br.events(PointType::RO).count(), 4);
        assert!(br.points.iter().take(13).skip(1).all(|p| p.u[0] > 0.0));
    }

    fn pitchfork() -> ClosureProblem {
        ClosureProblem::new(&["x", "lam"], |u| v(&[u[1] * u[0] - u[0].powi(3)])).with_primary(1)
    }

    #[test]
    fn pitchfork_branch_point_and_switch() {
        let mut p = pitchfork();
        let settings = ContinuationSettings {
            h0: 0.05,
            h_max: 0.1,
            pt_max: 20,
            bi_direct: false,
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[0.0, -0.5])), &settings).unwrap();
        let bps: Vec<_> = br.events(PointType::BP).collect();
        assert_eq!(bps.len(), 1);
        let bp = bps[0];
        assert!(bp.u.amax() < 1e-7, "BP at {}", bp.u);
        assert!(!bp.unlocated);

        let start = switch_branch(&p, &bp.u, &bp.tangent).unwrap();
        let seed = start.seed.clone().unwrap();
        assert!(seed.dot(&bp.tangent).abs() < 1e-8);
        let br2 = run(&mut p, &start, &ContinuationSettings { pt_max: 5, detect_bp: false, ..settings }).unwrap();
        let first = &br2.points[1];
        assert!(first.u[0].abs() > 1e-3);
        assert!((first.u[1] - first.u[0].powi(2)).abs() < 1e-9);
    }

    #[test]
    fn transcritical_branch_point() {
        let mut p = ClosureProblem::new(&["x", "lam"], |u| v(&[u[1] * u[0] - u[0] * u[0]])).with_primary(1);
        let settings = ContinuationSettings {
            h0: 0.05,
            h_max: 0.1,
            pt_max: 20,
            bi_direct: false,
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[0.0, -0.5])), &settings).unwrap();
        let bps: Vec<_> = br.events(PointType::BP).collect();
        assert_eq!(bps.len(), 1);
        assert!(bps[0].u.amax() < 1e-7);
    }

    #[test]
    fn bounds_terminate_with_end_point() {
        let mut p = ClosureProblem::new(&["x", "y"], |u| v(&[u[1] - 2.0 * u[0]])).with_primary(0);
        let settings = ContinuationSettings {
            h0: 0.3,
            h_max: 0.3,
            pt_max: 100,
            bounds: vec![Bound {
                monitor: "x".into(),
                min: Some(-1.0),
                max: Some(1.234),
            }],
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[0.0, 0.0])), &settings).unwrap();
        let eps: Vec<f64> = br.events(PointType::EP).map(|p| p.u[0]).collect();
        assert_eq!(eps.len(), 3);
        assert!((eps[1] - 1.234).abs() < 1e-10);
        assert!((eps[2] + 1.0).abs() < 1e-10);
        assert!(run(
            &mut p,
            &Start::new(v(&[0.0, 0.0])),
            &ContinuationSettings {
                bounds: vec![Bound { monitor: "z".into(), min: None, max: None }],
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn test_function_events_are_located() {
        // linear and monotone cubic test functions along a line
        let mut p = ClosureProblem::new(&["x", "y"], |u| v(&[u[1] - u[0]]))
            .with_primary(0)
            .with_test(PointType::TR, |u| Some(u[0] - 0.3137))
            .with_test(PointType::TR, |u| Some((u[0] - 0.7).powi(3) + 0.01 * (u[0] - 0.7)));
        let settings = ContinuationSettings {
            h0: 0.25,
            h_max: 0.25,
            pt_max: 6,
            bi_direct: false,
            detect_bp: false,
            ..Default::default()
        };
        let br = run(&mut p, &Start::new(v(&[0.0, 0.0])), &settings).unwrap();
        let tr: Vec<f64> = br.events(PointType::TR).map(|p| p.u[0]).collect();
        assert_eq!(tr.len(), 2);
        assert!((tr[0] - 0.3137).abs() < 1e-6);
        // oracle: scalar bisection of the cubic
        let g = |x: f64| (x - 0.7).powi(3) + 0.01 * (x - 0.7);
        let (mut a, mut b) = (0.5, 1.0);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if g(m) < 0.0 {
                a = m
            } else {
                b = m
            }
        }
        assert!((tr[1] - a).abs() < 1e-4, "{} vs {a}", tr[1]);
        assert!(g(tr[1]).abs() < 1e-6);
    }

    #[test]
    fn locate_event_converges_on_linear_function() {
        let p = ClosureProblem::new(&["x", "y"], |u| v(&[u[1] + u[0]]));
        let settings = ContinuationSettings::default();
        let mut f = |u: &DVector<f64>| Ok(Some(u[0] - 0.123456789));
        let (u, unlocated) = locate_event(&p, &v(&[0.0, 0.0]), &v(&[1.0, -1.0]), &mut f, true, 0.0, 1e-8, &settings).unwrap();
        assert!(!unlocated);
        assert!((u[0] - 0.123456789).abs() < 1e-8);
    }

    #[test]
    fn start_correction_failure_is_reported() {
        let mut p = ClosureProblem::new(&["x", "y"], |u| v(&[u[0] * u[0] + u[1] * u[1] + 1.0]));
        let r = run(&mut p, &Start::new(v(&[1.0, 0.0])), &ContinuationSettings::default());
        assert!(matches!(r, Err(Error::Convergence { .. }) | Err(Error::Singular(_))));
    }
}
