//! Linear algebra for Newton correctors on under-determined zero problems.
//!
//! A zero problem with `d` unknowns has `d - 1` equations; continuation adds
//! one (or more) border rows `b^T du = beta`. Two implementations are
//! provided: a dense one for small problems and a condensing one that
//! exploits the block structure of multi-segment collocation problems.
//!
//! In the multi-segment case every segment's collocation and continuity
//! equations are eliminated by a forward sweep over its subintervals, which
//! expresses all base-point corrections as affine functions of the segment's
//! initial point and of the free global unknowns. What remains is a small
//! dense system in `(x0 of every segment, globals)` formed by the boundary
//! rows and the border rows.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::colloc::SegmentJacobian;
use crate::error::{Error, Result};

/// A linearization `J` (with one more column than rows, in the generic
/// case) that can be solved with additional border rows.
pub trait BorderedOperator {
    fn num_unknowns(&self) -> usize;
    fn num_equations(&self) -> usize;

    /// Solves `[J; B^T] x = [rhs; beta]` where the columns of `B` are `borders`.
    fn solve(&self, borders: &[&DVector<f64>], rhs: &DVector<f64>, beta: &[f64]) -> Result<DVector<f64>>;

    /// Sign and `ln|det|` of the bordered matrix `[J; B^T]`, up to a sign
    /// that depends only on the problem structure.
    fn det(&self, borders: &[&DVector<f64>]) -> Result<(f64, f64)>;

    /// `k` approximate null vectors of `J` (unit length) together with the
    /// `k + 1` smallest singular values of a reduced representation, in
    /// ascending order.
    fn null_space(&self, k: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)>;

    /// `J x`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

fn stack_borders(j: &DMatrix<f64>, borders: &[&DVector<f64>]) -> DMatrix<f64> {
    let (r, c) = j.shape();
    let mut m = DMatrix::zeros(r + borders.len(), c);
    m.rows_mut(0, r).copy_from(j);
    for (i, b) in borders.iter().enumerate() {
        m.row_mut(r + i).copy_from(&b.transpose());
    }
    m
}

/// Sign and log-magnitude of a determinant from an LU factorization.
fn lu_det(lu: &LU<f64, Dyn, Dyn>) -> (f64, f64) {
    let u = lu.u();
    let mut sign: f64 = lu.p().determinant();
    let mut log = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        sign *= d.signum();
        log += d.abs().ln();
    }
    (sign, log)
}

fn square_solve(a: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Singular(format!(
            "bordered system is {}x{}, not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let lu = a.lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Singular("bordered matrix is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("bordered solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Smallest right singular vectors of `a` (padded with zero rows to square).
fn smallest_right_vectors(a: &DMatrix<f64>, k: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let c = a.ncols();
    if k == 0 || k > c {
        return Err(Error::Input(format!("cannot extract {k} null vectors from {c} columns")));
    }
    let rows = a.nrows().max(c);
    let mut sq = DMatrix::zeros(rows, c);
    sq.rows_mut(0, a.nrows()).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Singular("singular value decomposition failed".into()))?;
    let sv = &svd.singular_values;
    let n = sv.len();
    let vecs = (0..k).map(|i| vt.row(n - 1 - i).transpose()).collect();
    let vals = (0..(k + 1).min(n)).map(|i| sv[n - 1 - i]).collect();
    Ok((vecs, vals))
}

/// Dense linearization; suitable for small problems and for testing.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub jac: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(jac: DMatrix<f64>) -> Self {
        Self { jac }
    }
}

impl BorderedOperator for DenseOperator {
    fn num_unknowns(&self) -> usize {
        self.jac.ncols()
    }

    fn num_equations(&self) -> usize {
        self.jac.nrows()
    }

    fn solve(&self, borders: &[&DVector<f64>], rhs: &DVector<f64>, beta: &[f64]) -> Result<DVector<f64>> {
        let a = stack_borders(&self.jac, borders);
        let mut b = DVector::zeros(a.nrows());
        b.rows_mut(0, rhs.len()).copy_from(rhs);
        for (i, v) in beta.iter().enumerate() {
            b[rhs.len() + i] = *v;
        }
        square_solve(a, &b)
    }

    fn det(&self, borders: &[&DVector<f64>]) -> Result<(f64, f64)> {
        let a = stack_borders(&self.jac, borders);
        if a.nrows() != a.ncols() {
            return Err(Error::Singular("determinant of a non-square matrix".into()));
        }
        Ok(lu_det(&a.lu()))
    }

    fn null_space(&self, k: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
        smallest_right_vectors(&self.jac, k)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jac * x
    }
}

/// Which global unknown a free global column corresponds to, as seen from
/// the segment equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalColumn {
    TOffset,
    Duration,
    Param(usize),
    /// The segment equations do not depend on this unknown.
    Zero,
}

/// Jacobian of the boundary rows with respect to the first and last base
/// point of every segment and the free globals.
#[derive(Debug, Clone)]
pub struct BoundaryJacobian {
    /// `nb x (S n)`.
    pub x0: DMatrix<f64>,
    /// `nb x (S n)`.
    pub xt: DMatrix<f64>,
    /// `nb x ng`.
    pub g: DMatrix<f64>,
}

struct SubFactor {
    lu: LU<f64, Dyn, Dyn>,
    c_first: DMatrix<f64>,
    g: DMatrix<f64>,
}

/// Condensed linearization of a multi-segment collocation problem.
///
/// Unknowns: all segments' base points (segment-major), then the free
/// globals. Equations: each segment's collocation and continuity rows, then
/// the boundary rows.
pub struct MultiSegmentOperator {
    n: usize,
    degree: usize,
    ntst: usize,
    nseg: usize,
    ng: usize,
    jacs: Vec<SegmentJacobian>,
    columns: Vec<GlobalColumn>,
    subs: Vec<Vec<SubFactor>>,
    /// Per segment `(nbp n) x n` map from `dx0` to all base-point corrections.
    q: Vec<DMatrix<f64>>,
    /// Per segment `(nbp n) x ng` map from `dg`.
    w: Vec<DMatrix<f64>>,
    boundary: BoundaryJacobian,
    reduced: DMatrix<f64>,
    seg_sign: f64,
    seg_log: f64,
}

impl MultiSegmentOperator {
    pub fn new(jacs: Vec<SegmentJacobian>, columns: Vec<GlobalColumn>, boundary: BoundaryJacobian) -> Result<Self> {
        let first = jacs
            .first()
            .ok_or_else(|| Error::Input("at least one segment is required".into()))?;
        let (n, degree, ntst) = (first.dim, first.degree, first.ntst());
        let nseg = jacs.len();
        let ng = columns.len();
        if jacs.iter().any(|j| j.dim != n || j.degree != degree || j.ntst() != ntst) {
            return Err(Error::Input("segments must share one mesh and dimension".into()));
        }
        let nb = boundary.g.nrows();
        if boundary.x0.shape() != (nb, nseg * n) || boundary.xt.shape() != (nb, nseg * n) || boundary.g.ncols() != ng {
            return Err(Error::Input("boundary Jacobian blocks have inconsistent shapes".into()));
        }
        let m = degree;
        let nbp = ntst * (m + 1);
        let mut subs = Vec::with_capacity(nseg);
        let mut qs = Vec::with_capacity(nseg);
        let mut ws = Vec::with_capacity(nseg);
        let mut seg_sign = 1.0;
        let mut seg_log = 0.0;
        for jac in &jacs {
            let mut q = DMatrix::zeros(nbp * n, n);
            let mut w = DMatrix::zeros(nbp * n, ng);
            q.view_mut((0, 0), (n, n)).fill_with_identity();
            let mut factors = Vec::with_capacity(ntst);
            for (k, blk) in jac.blocks.iter().enumerate() {
                let c_first = blk.states.columns(0, n).into_owned();
                let c_rest = blk.states.columns(n, m * n).into_owned();
                let mut g = DMatrix::zeros(m * n, ng);
                for (c, col) in columns.iter().enumerate() {
                    match *col {
                        GlobalColumn::TOffset => g.set_column(c, &blk.t_offset),
                        GlobalColumn::Duration => g.set_column(c, &blk.duration),
                        GlobalColumn::Param(l) => g.set_column(c, &blk.params.column(l)),
                        GlobalColumn::Zero => {}
                    }
                }
                let lu = c_rest.lu();
                let (s, l) = lu_det(&lu);
                if s == 0.0 {
                    return Err(Error::Singular(format!("collocation block of subinterval {k} is singular")));
                }
                seg_sign *= s;
                seg_log += l;

                let f0 = k * (m + 1) * n;
                let qf = q.rows(f0, n).into_owned();
                let wf = w.rows(f0, n).into_owned();
                let rq = -(&c_first * &qf);
                let rw = -(&c_first * &wf) - &g;
                let sq = lu.solve(&rq).ok_or_else(|| Error::Singular("collocation sweep failed".into()))?;
                let sw = lu.solve(&rw).ok_or_else(|| Error::Singular("collocation sweep failed".into()))?;
                q.rows_mut(f0 + n, m * n).copy_from(&sq);
                w.rows_mut(f0 + n, m * n).copy_from(&sw);
                if k + 1 < ntst {
                    let last = f0 + m * n;
                    let next = (k + 1) * (m + 1) * n;
                    let lq = q.rows(last, n).into_owned();
                    let lw = w.rows(last, n).into_owned();
                    q.rows_mut(next, n).copy_from(&lq);
                    w.rows_mut(next, n).copy_from(&lw);
                }
                factors.push(SubFactor { lu, c_first, g });
            }
            subs.push(factors);
            qs.push(q);
            ws.push(w);
        }

        let nz = nseg * n + ng;
        let mut reduced = DMatrix::zeros(nb, nz);
        reduced.columns_mut(0, nseg * n).copy_from(&boundary.x0);
        reduced.columns_mut(nseg * n, ng).copy_from(&boundary.g);
        for s in 0..nseg {
            let bxt = boundary.xt.columns(s * n, n);
            let qt = qs[s].rows((nbp - 1) * n, n);
            let wt = ws[s].rows((nbp - 1) * n, n);
            let mut cols = reduced.columns_mut(s * n, n);
            cols += &bxt * qt;
            let mut gcols = reduced.columns_mut(nseg * n, ng);
            gcols += &bxt * wt;
        }

        Ok(Self {
            n,
            degree,
            ntst,
            nseg,
            ng,
            jacs,
            columns,
            subs,
            q: qs,
            w: ws,
            boundary,
            reduced,
            seg_sign,
            seg_log,
        })
    }

    fn nbp(&self) -> usize {
        self.ntst * (self.degree + 1)
    }

    fn seg_unknowns(&self) -> usize {
        self.nbp() * self.n
    }

    fn seg_equations(&self) -> usize {
        (self.ntst * self.degree + self.ntst - 1) * self.n
    }

    /// Particular solutions of the segment equations with `dx0 = 0`, `dg = 0`.
    fn particular(&self, rhs: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let (n, m) = (self.n, self.degree);
        let neq = self.seg_equations();
        let ncoll = self.ntst * m * n;
        let mut out = Vec::with_capacity(self.nseg);
        for (s, factors) in self.subs.iter().enumerate() {
            let r = rhs.rows(s * neq, neq);
            let mut p = DVector::zeros(self.seg_unknowns());
            for (k, f) in factors.iter().enumerate() {
                let f0 = k * (m + 1) * n;
                let b = r.rows(k * m * n, m * n) - &f.c_first * p.rows(f0, n);
                let sol = f
                    .lu
                    .solve(&b)
                    .ok_or_else(|| Error::Singular("collocation sweep failed".into()))?;
                p.rows_mut(f0 + n, m * n).copy_from(&sol);
                if k + 1 < self.ntst {
                    let last = p.rows(f0 + m * n, n) - r.rows(ncoll + k * n, n);
                    p.rows_mut((k + 1) * (m + 1) * n, n).copy_from(&last);
                }
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Reduced border row and its contribution from the particular solution.
    fn reduce_border(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, nu) = (self.n, self.seg_unknowns());
        let mut row = DVector::zeros(self.nseg * n + self.ng);
        let mut g = b.rows(self.nseg * nu, self.ng).into_owned();
        for s in 0..self.nseg {
            let bs = b.rows(s * nu, nu);
            row.rows_mut(s * n, n).copy_from(&self.q[s].tr_mul(&bs));
            g += self.w[s].tr_mul(&bs);
        }
        row.rows_mut(self.nseg * n, self.ng).copy_from(&g);
        row
    }

    fn reduced_bordered(&self, borders: &[&DVector<f64>]) -> DMatrix<f64> {
        let nb = self.reduced.nrows();
        let mut a = DMatrix::zeros(nb + borders.len(), self.reduced.ncols());
        a.rows_mut(0, nb).copy_from(&self.reduced);
        for (i, b) in borders.iter().enumerate() {
            a.row_mut(nb + i).copy_from(&self.reduce_border(b).transpose());
        }
        a
    }

    /// Lifts reduced unknowns `(dx0, dg)` plus particular parts to the full space.
    fn lift(&self, z: &DVector<f64>, parts: Option<&[DVector<f64>]>) -> DVector<f64> {
        let (n, nu) = (self.n, self.seg_unknowns());
        let dg = z.rows(self.nseg * n, self.ng);
        let mut x = DVector::zeros(self.num_unknowns());
        for s in 0..self.nseg {
            let mut seg = &self.q[s] * z.rows(s * n, n) + &self.w[s] * dg;
            if let Some(p) = parts {
                seg += &p[s];
            }
            x.rows_mut(s * nu, nu).copy_from(&seg);
        }
        x.rows_mut(self.nseg * nu, self.ng).copy_from(&dg);
        x
    }

    /// Dense assembly of the full Jacobian, for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, nu, neq) = (self.n, self.seg_unknowns(), self.seg_equations());
        let mut out = DMatrix::zeros(self.num_equations(), self.num_unknowns());
        let gcol = self.nseg * nu;
        for (s, jac) in self.jacs.iter().enumerate() {
            let d = jac.to_dense();
            out.view_mut((s * neq, s * nu), (neq, nu)).copy_from(&d.columns(0, nu));
            for (c, col) in self.columns.iter().enumerate() {
                let src = match *col {
                    GlobalColumn::Duration => nu,
                    GlobalColumn::TOffset => nu + 1,
                    GlobalColumn::Param(l) => nu + 2 + l,
                    GlobalColumn::Zero => continue,
                };
                out.view_mut((s * neq, gcol + c), (neq, 1)).copy_from(&d.column(src));
            }
        }
        let r0 = self.nseg * neq;
        let nb = self.boundary.g.nrows();
        for s in 0..self.nseg {
            out.view_mut((r0, s * nu), (nb, n)).copy_from(&self.boundary.x0.columns(s * n, n));
            let mut last = out.view_mut((r0, s * nu + nu - n), (nb, n));
            last += self.boundary.xt.columns(s * n, n);
        }
        out.view_mut((r0, gcol), (nb, self.ng)).copy_from(&self.boundary.g);
        out
    }
}

impl BorderedOperator for MultiSegmentOperator {
    fn num_unknowns(&self) -> usize {
        self.nseg * self.seg_unknowns() + self.ng
    }

    fn num_equations(&self) -> usize {
        self.nseg * self.seg_equations() + self.boundary.g.nrows()
    }

    fn solve(&self, borders: &[&DVector<f64>], rhs: &DVector<f64>, beta: &[f64]) -> Result<DVector<f64>> {
        if rhs.len() != self.num_equations() || borders.len() != beta.len() {
            return Err(Error::Input("right-hand side has the wrong length".into()));
        }
        let parts = self.particular(rhs)?;
        let (n, nbp, nu) = (self.n, self.nbp(), self.seg_unknowns());
        let nb = self.reduced.nrows();
        let mut b = DVector::zeros(nb + borders.len());
        let mut rb = rhs.rows(self.nseg * self.seg_equations(), nb).into_owned();
        for s in 0..self.nseg {
            rb -= self.boundary.xt.columns(s * n, n) * parts[s].rows((nbp - 1) * n, n);
        }
        b.rows_mut(0, nb).copy_from(&rb);
        for (i, bd) in borders.iter().enumerate() {
            let mut v = beta[i];
            for s in 0..self.nseg {
                v -= bd.rows(s * nu, nu).dot(&parts[s]);
            }
            b[nb + i] = v;
        }
        let z = square_solve(self.reduced_bordered(borders), &b)?;
        Ok(self.lift(&z, Some(&parts)))
    }

    fn det(&self, borders: &[&DVector<f64>]) -> Result<(f64, f64)> {
        let a = self.reduced_bordered(borders);
        if a.nrows() != a.ncols() {
            return Err(Error::Singular("determinant of a non-square matrix".into()));
        }
        let (s, l) = lu_det(&a.lu());
        Ok((s * self.seg_sign, l + self.seg_log))
    }

    fn null_space(&self, k: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
        let (vecs, vals) = smallest_right_vectors(&self.reduced, k)?;
        let lifted = vecs
            .iter()
            .map(|z| {
                let v = self.lift(z, None);
                let norm = v.norm();
                v / norm
            })
            .collect();
        Ok((lifted, vals))
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let (n, m, nu, neq) = (self.n, self.degree, self.seg_unknowns(), self.seg_equations());
        let ncoll = self.ntst * m * n;
        let dg = x.rows(self.nseg * nu, self.ng);
        let mut out = DVector::zeros(self.num_equations());
        let mut x0 = DVector::zeros(self.nseg * n);
        let mut xt = DVector::zeros(self.nseg * n);
        for s in 0..self.nseg {
            let xs = x.rows(s * nu, nu);
            for (k, f) in self.subs[s].iter().enumerate() {
                let blk = &self.jacs[s].blocks[k];
                let v = &blk.states * xs.rows(k * (m + 1) * n, (m + 1) * n) + &f.g * dg;
                out.rows_mut(s * neq + k * m * n, m * n).copy_from(&v);
                if k + 1 < self.ntst {
                    let c = xs.rows(k * (m + 1) * n + m * n, n) - xs.rows((k + 1) * (m + 1) * n, n);
                    out.rows_mut(s * neq + ncoll + k * n, n).copy_from(&c);
                }
            }
            x0.rows_mut(s * n, n).copy_from(&xs.rows(0, n));
            xt.rows_mut(s * n, n).copy_from(&xs.rows(nu - n, n));
        }
        let nb = self.boundary.g.nrows();
        let b = &self.boundary.x0 * x0 + &self.boundary.xt * xt + &self.boundary.g * dg;
        out.rows_mut(self.nseg * neq, nb).copy_from(&b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colloc::{build_mesh, segment_jacobian, Trajectory};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    /// Random three-segment system with boundary rows making it one
    /// column short of square.
    fn random_operator(seed: u64) -> MultiSegmentOperator {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let vf = crate::odesys::builtin_vdp();
        let mesh = Arc::new(build_mesh(3, 3).unwrap());
        let (n, nseg) = (2, 3);
        let jacs: Vec<_> = (0..nseg)
            .map(|_| {
                let x: Vec<f64> = (0..mesh.num_basepoints() * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = Trajectory::new(mesh.clone(), n, x, 4.0, 0.1).unwrap();
                segment_jacobian(vf.as_ref(), &t, &[1.3, 0.2, 0.5]).unwrap()
            })
            .collect();
        let columns = vec![
            GlobalColumn::TOffset,
            GlobalColumn::Duration,
            GlobalColumn::Param(2),
            GlobalColumn::Zero,
        ];
        let ng = columns.len();
        let nb = nseg * n + ng - 1;
        let mut rnd = |r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let boundary = BoundaryJacobian {
            x0: rnd(nb, nseg * n),
            xt: rnd(nb, nseg * n),
            g: rnd(nb, ng),
        };
        MultiSegmentOperator::new(jacs, columns, boundary).unwrap()
    }

    #[test]
    fn apply_matches_dense_assembly() {
        let op = random_operator(1);
        let dense = op.to_dense();
        assert_eq!(dense.nrows() + 1, dense.ncols());
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let x = DVector::from_fn(op.num_unknowns(), |_, _| rng.gen_range(-1.0..1.0));
        assert!((op.apply(&x) - &dense * &x).amax() < 1e-12);
    }

    #[test]
    fn condensed_solve_matches_dense() {
        let op = random_operator(2);
        let dense = DenseOperator::new(op.to_dense());
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let border = DVector::from_fn(op.num_unknowns(), |_, _| rng.gen_range(-1.0..1.0));
        let rhs = DVector::from_fn(op.num_equations(), |_, _| rng.gen_range(-1.0..1.0));
        let a = op.solve(&[&border], &rhs, &[0.7]).unwrap();
        let b = dense.solve(&[&border], &rhs, &[0.7]).unwrap();
        assert!((&a - &b).amax() < 1e-9 * b.amax().max(1.0));
        assert!((op.apply(&a) - &rhs).amax() < 1e-9);
        assert!((border.dot(&a) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn condensed_determinant_matches_dense_up_to_structural_sign() {
        let mut ratio = None;
        for seed in 10..14 {
            let op = random_operator(seed);
            let dense = DenseOperator::new(op.to_dense());
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let border = DVector::from_fn(op.num_unknowns(), |_, _| rng.gen_range(-1.0..1.0));
            let (s1, l1) = op.det(&[&border]).unwrap();
            let (s2, l2) = dense.det(&[&border]).unwrap();
            assert!((l1 - l2).abs() < 1e-8 * l2.abs().max(1.0), "{l1} vs {l2}");
            let r = s1 * s2;
            assert_eq!(*ratio.get_or_insert(r), r);
            // flipping the border flips the sign
            let (s3, _) = op.det(&[&(-&border)]).unwrap();
            assert_eq!(s3, -s1);
        }
    }

    #[test]
    fn null_vector_is_annihilated() {
        let op = random_operator(3);
        let (v, sv) = op.null_space(1).unwrap();
        assert!((v[0].norm() - 1.0).abs() < 1e-12);
        assert!(op.apply(&v[0]).amax() < 1e-9);
        assert!(sv[0] < 1e-10 && sv[1] > 1e-6);

        let dense = DenseOperator::new(op.to_dense());
        let (w, _) = dense.null_space(1).unwrap();
        assert!((w[0].dot(&v[0]).abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dense_two_dimensional_null_space() {
        // rank-2 3x4 matrix: null space of dimension 2
        let j = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 3.0, 1.0, 1.0]);
        let op = DenseOperator::new(j.clone());
        let (v, sv) = op.null_space(2).unwrap();
        for x in &v {
            assert!((&j * x).amax() < 1e-12);
        }
        assert!(v[0].dot(&v[1]).abs() < 1e-12);
        assert!(sv[0] < 1e-12 && sv[1] < 1e-12 && sv[2] > 1e-3);
    }
}
