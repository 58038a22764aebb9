//! Real discrete Fourier transform across the `2N+1` torus segments, the
//! shift (rotation) operator in coefficient space and the all-to-all coupling.
//!
//! Samples are taken at the angles `phi_j = 2 pi j / (2N+1)`, `j = 0..2N`.
//! Coefficients are ordered `(a_0, a_1, b_1, ..., a_N, b_N)` for the
//! expansion `chi(phi) = a_0 + sum_k a_k cos(k phi) + b_k sin(k phi)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub modes: usize,
    pub n_seg: usize,
    pub angles: Vec<f64>,
    /// Samples to coefficients.
    pub f: DMatrix<f64>,
    /// Coefficients to samples.
    pub finv: DMatrix<f64>,
    /// `w . samples = d chi / d phi (0)`.
    pub phase_weights: DVector<f64>,
}

/// Trigonometric basis `(1, cos phi, sin phi, ..., cos N phi, sin N phi)`.
pub fn basis_row(modes: usize, phi: f64) -> DVector<f64> {
    let mut row = DVector::zeros(2 * modes + 1);
    row[0] = 1.0;
    for k in 1..=modes {
        let (s, c) = (k as f64 * phi).sin_cos();
        row[2 * k - 1] = c;
        row[2 * k] = s;
    }
    row
}

pub fn dft_matrix(modes: usize) -> Result<CouplingMatrices> {
    if modes < 1 {
        return input("number of Fourier modes must be at least 1");
    }
    let ns = 2 * modes + 1;
    let angles: Vec<f64> = (0..ns).map(|j| 2.0 * PI * j as f64 / ns as f64).collect();
    let mut f = DMatrix::zeros(ns, ns);
    let mut finv = DMatrix::zeros(ns, ns);
    let scale = 2.0 / ns as f64;
    for (j, &phi) in angles.iter().enumerate() {
        f[(0, j)] = 1.0 / ns as f64;
        for k in 1..=modes {
            let (s, c) = (k as f64 * phi).sin_cos();
            f[(2 * k - 1, j)] = scale * c;
            f[(2 * k, j)] = scale * s;
        }
        finv.row_mut(j).copy_from(&basis_row(modes, phi).transpose());
    }
    let phase_weights = phase_derivative_weights(&f, modes)?;
    Ok(CouplingMatrices {
        modes,
        n_seg: ns,
        angles,
        f,
        finv,
        phase_weights,
    })
}

/// Block-diagonal shift operator: coefficients of `chi(. + 2 pi varrho)`.
pub fn rotation_matrix(modes: usize, varrho: f64) -> DMatrix<f64> {
    let ns = 2 * modes + 1;
    let mut r = DMatrix::zeros(ns, ns);
    r[(0, 0)] = 1.0;
    for k in 1..=modes {
        let (s, c) = (2.0 * PI * k as f64 * varrho).sin_cos();
        let i = 2 * k - 1;
        r[(i, i)] = c;
        r[(i, i + 1)] = s;
        r[(i + 1, i)] = -s;
        r[(i + 1, i + 1)] = c;
    }
    r
}

/// Derivative of [`rotation_matrix`] with respect to `varrho`.
pub fn rotation_matrix_derivative(modes: usize, varrho: f64) -> DMatrix<f64> {
    let ns = 2 * modes + 1;
    let mut r = DMatrix::zeros(ns, ns);
    for k in 1..=modes {
        let w = 2.0 * PI * k as f64;
        let (s, c) = (w * varrho).sin_cos();
        let i = 2 * k - 1;
        r[(i, i)] = -w * s;
        r[(i, i + 1)] = w * c;
        r[(i + 1, i)] = -w * c;
        r[(i + 1, i + 1)] = -w * s;
    }
    r
}

/// Computes `(A ⊗ I_n) v` for a stacked vector `v` of `A.ncols()` blocks.
pub fn kron_apply(a: &DMatrix<f64>, v: &[f64], n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows() * n);
    for r in 0..a.nrows() {
        for j in 0..a.ncols() {
            let w = a[(r, j)];
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                out[r * n + i] += w * v[j * n + i];
            }
        }
    }
    out
}

/// All-to-all condition `(F ⊗ I) vT - ((R F) ⊗ I) v0`.
pub fn coupling_residual(
    v0: &[f64],
    vt: &[f64],
    r: &DMatrix<f64>,
    f: &DMatrix<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let ns = f.nrows();
    if f.ncols() != ns || r.nrows() != ns || r.ncols() != ns {
        return input("coupling matrices must be square of equal size");
    }
    if v0.len() != ns * n || vt.len() != ns * n {
        return input(format!(
            "coupling expects stacked vectors of length {}, got {} and {}",
            ns * n,
            v0.len(),
            vt.len()
        ));
    }
    let rf = r * f;
    Ok(kron_apply(f, vt, n) - kron_apply(&rf, v0, n))
}

/// `w = sum_k k * (row of F producing b_k)`.
pub fn phase_derivative_weights(f: &DMatrix<f64>, modes: usize) -> Result<DVector<f64>> {
    if f.nrows() != 2 * modes + 1 || f.ncols() != 2 * modes + 1 {
        return input("DFT matrix size does not match the number of modes");
    }
    let mut w = DVector::zeros(f.ncols());
    for k in 1..=modes {
        w += f.row(2 * k).transpose() * k as f64;
    }
    Ok(w)
}

impl CouplingMatrices {
    /// Weights `c` such that `sum_j c_j chi(phi_j)` is the trigonometric
    /// interpolant evaluated at `phi`.
    pub fn interpolation_weights(&self, phi: f64) -> DVector<f64> {
        self.f.tr_mul(&basis_row(self.modes, phi))
    }

    /// Trigonometric interpolation of stacked samples (`n` components each).
    pub fn interpolate(&self, samples: &[f64], n: usize, phi: f64) -> DVector<f64> {
        let w = self.interpolation_weights(phi);
        let mut out = DVector::zeros(n);
        for j in 0..self.n_seg {
            for i in 0..n {
                out[i] += w[j] * samples[j * n + i];
            }
        }
        out
    }

    /// Weighted sum `sum_j w_j v_j` of stacked samples with the phase weights.
    pub fn phase_derivative(&self, samples: &[f64], n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for j in 0..self.n_seg {
            for i in 0..n {
                out[i] += self.phase_weights[j] * samples[j * n + i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(c: &CouplingMatrices, g: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(c.n_seg, c.angles.iter().map(|&p| g(p)))
    }

    #[test]
    fn dft_examples() {
        let c = dft_matrix(1).unwrap();
        let a = &c.f * DVector::from_element(3, 1.0);
        assert!((a - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-15);
        let a = &c.f * samples(&c, f64::cos);
        assert!((a - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-15);
        assert!(dft_matrix(0).is_err());
        assert_eq!(dft_matrix(50).unwrap().n_seg, 101);
    }

    #[test]
    fn rotation_examples() {
        let i = DMatrix::identity(5, 5);
        assert!((rotation_matrix(2, 0.0) - &i).amax() < 1e-15);
        assert!((rotation_matrix(2, 1.0) - &i).amax() < 1e-13);
        let c = dft_matrix(2).unwrap();
        let shifted = &c.finv * rotation_matrix(2, 0.25) * &c.f * samples(&c, f64::cos);
        let expected = samples(&c, |p| -p.sin());
        assert!((shifted - expected).amax() < 1e-12);
    }

    #[test]
    fn rotation_derivative_matches_fd() {
        let h = 1e-6;
        let d = rotation_matrix_derivative(3, 0.37);
        let fd = (rotation_matrix(3, 0.37 + h) - rotation_matrix(3, 0.37 - h)) / (2.0 * h);
        assert!((d - fd).amax() < 1e-7);
    }

    #[test]
    fn phase_weight_examples() {
        let c = dft_matrix(1).unwrap();
        assert!((c.phase_weights.dot(&samples(&c, f64::sin)) - 1.0).abs() < 1e-14);
        let c = dft_matrix(3).unwrap();
        assert!(c.phase_weights.dot(&samples(&c, |p| (2.0 * p).cos())).abs() < 1e-14);
        let v = samples(&c, |p| p.sin() + 3.0 * (2.0 * p).sin());
        assert!((c.phase_weights.dot(&v) - 7.0).abs() < 1e-13);
        assert!(c.phase_weights.sum().abs() < 1e-14);
    }

    #[test]
    fn coupling_examples() {
        let n = 2;
        let c = dft_matrix(4).unwrap();
        let v0: Vec<f64> = c.angles.iter().flat_map(|&p| [p.cos(), p.sin()]).collect();
        let r0 = rotation_matrix(4, 0.0);
        assert!(coupling_residual(&v0, &v0, &r0, &c.f, n).unwrap().amax() < 1e-14);

        let konst: Vec<f64> = (0..c.n_seg).flat_map(|_| [0.3, -1.2]).collect();
        let r = rotation_matrix(4, 0.2137);
        assert!(coupling_residual(&konst, &konst, &r, &c.f, n).unwrap().amax() < 1e-14);

        let rho = 0.3172;
        let s = 2.0 * PI * rho;
        let vt: Vec<f64> = c.angles.iter().flat_map(|&p| [(p + s).cos(), (p + s).sin()]).collect();
        let r = rotation_matrix(4, rho);
        assert!(coupling_residual(&v0, &vt, &r, &c.f, n).unwrap().amax() < 1e-12);
        assert!(coupling_residual(&v0[1..], &vt, &r, &c.f, n).is_err());
    }

    #[test]
    fn interpolation_reproduces_trig_polynomials() {
        let c = dft_matrix(3).unwrap();
        let g = |p: f64| 0.5 - p.cos() + 2.0 * (3.0 * p).sin() + 0.25 * (2.0 * p).cos();
        let s = samples(&c, g);
        for phi in [0.0, 0.1, 1.7, 4.0, 6.2] {
            assert!((c.interpolate(s.as_slice(), 1, phi)[0] - g(phi)).abs() < 1e-13);
        }
    }

    fn trig_poly(coeffs: &[f64], phi: f64) -> f64 {
        basis_row((coeffs.len() - 1) / 2, phi).dot(&DVector::from_column_slice(coeffs))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_is_identity(modes in 1usize..20) {
            let c = dft_matrix(modes).unwrap();
            let ns = c.n_seg;
            prop_assert!((&c.f * &c.finv - DMatrix::identity(ns, ns)).amax() < 1e-12);
            prop_assert!((&c.finv * &c.f - DMatrix::identity(ns, ns)).amax() < 1e-12);
        }

        #[test]
        fn rotation_group_law(modes in 1usize..12, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let ns = 2 * modes + 1;
            let ra = rotation_matrix(modes, a);
            prop_assert!((ra.transpose() * &ra - DMatrix::identity(ns, ns)).amax() < 1e-12);
            prop_assert!((&ra * rotation_matrix(modes, b) - rotation_matrix(modes, a + b)).amax() < 1e-11);
        }

        #[test]
        fn shift_conjugation(
            coeffs in proptest::collection::vec(-1.0f64..1.0, 9),
            rho in -1.0f64..1.0,
        ) {
            let c = dft_matrix(4).unwrap();
            let s = samples(&c, |p| trig_poly(&coeffs, p));
            let shifted = &c.finv * rotation_matrix(4, rho) * &c.f * s;
            let expected = samples(&c, |p| trig_poly(&coeffs, p + 2.0 * PI * rho));
            prop_assert!((shifted - expected).amax() < 1e-12);
        }

        #[test]
        fn phase_weights_exact(coeffs in proptest::collection::vec(-1.0f64..1.0, 7)) {
            let c = dft_matrix(3).unwrap();
            let s = samples(&c, |p| trig_poly(&coeffs, p));
            let exact: f64 = (1..=3).map(|k| k as f64 * coeffs[2 * k]).sum();
            prop_assert!((c.phase_weights.dot(&s) - exact).abs() < 1e-12);
        }
    }
}
