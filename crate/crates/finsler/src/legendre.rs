//! Legendre duality: the fibre derivative, its inverse, and the dual norm.
//!
//! The Legendre map `l(x, v) = 1/2 dF^2/dv` is a diffeomorphism from each
//! punctured tangent fibre onto the punctured cotangent fibre, with
//! `l(x, 0) = 0` as its continuous extension. Inverting it gives the dual
//! norm `F*(x, w) = F(x, l^{-1}(x, w))` and, one derivative up, the dual
//! fundamental tensor `g*(x, w) = g(x, l^{-1}(x, w))^{-1}`.
//!
//! The inverse is computed by a damped Newton iteration on the strictly
//! convex potential `phi(v) = 1/2 F^2(x, v) - w(v)`, whose gradient is
//! `l(v) - w` and whose Hessian is the fundamental tensor. The iteration is
//! generic over the scalar type and all its branches compare primal parts
//! only, so running it on dual inputs differentiates the inverse map
//! exactly (the final iterations converge the derivative coefficients,
//! which is why convergence is measured on the whole jet).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dual::{lift_slice, Scalar};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::MetricSpec;

/// Fixed seed for the auxiliary direction sweep in dimensions above 3.
/// A constant keeps every evaluation of the inverse map deterministic.
const SWEEP_SEED: u64 = 0x4c45_4745;

/// Newton tolerance on the whole jet, relative to the jet magnitude of the
/// covector. The round-trip contract `|l(l^{-1}(w)) - w| <= 1e-10 (1 + |w|)`
/// leaves two orders of headroom over this target.
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 80;

/// The Legendre map `l_i(x, v) = 1/2 dF^2/dv^i`, extended by zero at `v = 0`.
pub fn legendre_generic<S: Scalar>(spec: &MetricSpec, x: &[S], v: &[S]) -> Vec<S> {
    if v.iter().all(|c| c.re() == 0.0) {
        return vec![S::zero(); spec.dim()];
    }
    let xd = crate::dual::consts(x);
    (0..spec.dim())
        .map(|k| {
            let vd = crate::dual::seed(v, k);
            spec.f2(&xd, &vd).du.scale(0.5)
        })
        .collect()
}

/// Validated f64 Legendre map.
pub fn legendre(spec: &MetricSpec, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    spec.check_args(x, v)?;
    spec.check_valid_at(x)?;
    Ok(legendre_generic(spec, x, v))
}

/// Result of a Legendre inversion, with the achieved round-trip residual.
#[derive(Debug, Clone)]
pub struct LegendreInverse {
    pub v: Vec<f64>,
    /// `|l(v) - w|` in the Euclidean norm of the chart.
    pub residual: f64,
    pub iterations: usize,
}

/// Inverts the Legendre map at a covector with nonzero primal part.
///
/// Exploits 1-homogeneity: the covector is normalized, solved near the unit
/// dual sphere, and the preimage rescaled, so conditioning is independent of
/// `|w|`. Works for any scalar type; dual arguments come out carrying the
/// exact derivatives of the inverse map.
pub fn legendre_inverse_generic<S: Scalar>(
    spec: &MetricSpec,
    x: &[S],
    omega: &[S],
) -> Result<(Vec<S>, usize)> {
    let m = spec.dim();
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(omega.len(), m);
    if omega.iter().all(|c| c.re() == 0.0) {
        // l(x, 0) = 0 is the unique continuous preimage. Derivatives of the
        // inverse are undefined here, so dual seeds on a primally zero
        // covector are rejected rather than silently zeroed.
        if omega.iter().any(|c| c.amax() != 0.0) {
            return Err(Error::DegenerateDirection);
        }
        return Ok((vec![S::zero(); m], 0));
    }

    let s = linalg::norm(omega);
    let omega_hat: Vec<S> = omega.iter().map(|&w| w / s).collect();
    let omega_amax = omega_hat.iter().map(|w| w.amax()).fold(0.0, f64::max);

    let x_primal: Vec<f64> = x.iter().map(|c| c.re()).collect();
    let omega_primal: Vec<f64> = omega_hat.iter().map(|c| c.re()).collect();
    let mut v: Vec<S> = lift_slice(&sweep_initial_guess(spec, &x_primal, &omega_primal));

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        iterations += 1;
        let mut grad = legendre_generic(spec, x, &v);
        for (gi, &wi) in grad.iter_mut().zip(&omega_hat) {
            *gi -= wi;
        }
        let grad_amax = grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
        if grad_amax <= NEWTON_TOL * (1.0 + omega_amax) {
            converged = true;
            break;
        }
        let g = spec.g_matrix(x, &v);
        let rhs: Vec<S> = grad.iter().map(|&gi| -gi).collect();
        let step = linalg::solve(&g, &rhs)?;

        // Armijo backtracking on the primal potential. Once the primal part
        // has converged the directional derivative vanishes and no descent
        // is measurable; those trailing iterations are pure derivative
        // corrections and take the full Newton step.
        let slope: f64 = grad
            .iter()
            .zip(&step)
            .map(|(g, d)| g.re() * d.re())
            .sum();
        let mut t = 1.0;
        let phi0 = potential_primal(spec, &x_primal, &v, &omega_primal);
        // Backtrack only while the predicted decrease is measurable above
        // f64 rounding of the potential; smaller slopes mean the primal part
        // has converged and the step is a pure derivative correction.
        if slope < -1e-13 * (1.0 + phi0.abs()) {
            for _ in 0..40 {
                let trial: Vec<S> = v
                    .iter()
                    .zip(&step)
                    .map(|(&vi, &di)| vi + di.scale(t))
                    .collect();
                let phi = potential_primal(spec, &x_primal, &trial, &omega_primal);
                if phi <= phi0 + 1e-4 * t * slope {
                    break;
                }
                t *= 0.5;
            }
        }
        for (vi, &di) in v.iter_mut().zip(&step) {
            *vi += di.scale(t);
        }
    }

    if !converged {
        let grad = legendre_generic(spec, x, &v);
        let residual: f64 = grad
            .iter()
            .zip(&omega_hat)
            .map(|(g, w)| (g.re() - w.re()).powi(2))
            .sum::<f64>()
            .sqrt();
        return Err(Error::NoConvergence { iterations, residual });
    }

    // Undo the normalization: l is 1-homogeneous, so l^{-1}(s w) = s l^{-1}(w).
    Ok((v.iter().map(|&vi| vi * s).collect(), iterations))
}

fn potential_primal<S: Scalar>(spec: &MetricSpec, x: &[f64], v: &[S], omega: &[f64]) -> f64 {
    let vp: Vec<f64> = v.iter().map(|c| c.re()).collect();
    0.5 * spec.f2(x, &vp) - linalg::dot(omega, &vp)
}

/// Deterministic direction sweep for the Newton initial guess: maximize
/// `w(d) / F(d)` over a fixed fan of directions and scale the best ray so
/// its norm matches the implied dual norm estimate.
fn sweep_initial_guess(spec: &MetricSpec, x: &[f64], omega: &[f64]) -> Vec<f64> {
    let m = spec.dim();
    let mut best_dir = vec![0.0; m];
    let mut best_val = f64::NEG_INFINITY;
    let mut consider = |d: &[f64]| {
        let f = spec.norm(x, d);
        if !(f > 0.0) || !f.is_finite() {
            return;
        }
        let val = linalg::dot(omega, d) / f;
        if val > best_val {
            best_val = val;
            best_dir = d.to_vec();
        }
    };
    match m {
        2 => {
            for k in 0..64 {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                consider(&[th.cos(), th.sin()]);
            }
        }
        3 => {
            // Spherical Fibonacci fan: near-uniform coverage.
            let n = 128;
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            for k in 0..n {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * k as f64;
                consider(&[r * phi.cos(), r * phi.sin(), z]);
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);
            for i in 0..m {
                let mut d = vec![0.0; m];
                d[i] = 1.0;
                consider(&d);
                d[i] = -1.0;
                consider(&d);
            }
            for _ in 0..32 * m {
                let mut d: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = linalg::norm(&d);
                if n > 1e-3 {
                    d.iter_mut().for_each(|c| *c /= n);
                    consider(&d);
                }
            }
        }
    }
    // best_val estimates F*(w); place the guess on that level set.
    let f_dir = spec.norm(x, &best_dir);
    let t = best_val.max(1e-8) / f_dir;
    best_dir.iter().map(|c| c * t).collect()
}

/// Validated f64 Legendre inversion with residual reporting.
pub fn legendre_inverse(spec: &MetricSpec, x: &[f64], omega: &[f64]) -> Result<LegendreInverse> {
    spec.check_args(x, omega)?;
    spec.check_valid_at(x)?;
    let (v, iterations) = legendre_inverse_generic(spec, x, omega)?;
    let back = legendre_generic(spec, x, &v);
    let residual: f64 = back
        .iter()
        .zip(omega)
        .map(|(b, w)| (b - w).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(LegendreInverse { v, residual, iterations })
}

/// Dual norm `F*(x, w) = F(x, l^{-1}(x, w))`, extended by `F*(x, 0) = 0`.
pub fn f_star_generic<S: Scalar>(spec: &MetricSpec, x: &[S], omega: &[S]) -> Result<S> {
    if omega.iter().all(|c| c.re() == 0.0 && c.amax() == 0.0) {
        return Ok(S::zero());
    }
    let (v, _) = legendre_inverse_generic(spec, x, omega)?;
    Ok(spec.norm(x, &v))
}

/// Validated f64 dual norm.
pub fn eval_f_star(spec: &MetricSpec, x: &[f64], omega: &[f64]) -> Result<f64> {
    spec.check_args(x, omega)?;
    spec.check_valid_at(x)?;
    f_star_generic(spec, x, omega)
}

/// Dual fundamental tensor `g*(x, w) = g(x, l^{-1}(x, w))^{-1}`, row-major.
pub fn g_star_generic<S: Scalar>(spec: &MetricSpec, x: &[S], omega: &[S]) -> Result<Vec<S>> {
    let (v, _) = legendre_inverse_generic(spec, x, omega)?;
    if v.iter().all(|c| c.re() == 0.0) {
        return Err(Error::DegenerateDirection);
    }
    let g = spec.g_matrix(x, &v);
    linalg::invert(&g, spec.dim())
}

/// Dual tensor at a covector, with the preimage it was computed at and the
/// condition number of the primal tensor that was inverted.
#[derive(Debug, Clone)]
pub struct DualTensor {
    pub x: Vec<f64>,
    pub omega: Vec<f64>,
    pub g_star: nalgebra::DMatrix<f64>,
    pub preimage: Vec<f64>,
    pub condition: f64,
}

/// Maximum condition number of the fundamental tensor accepted when
/// inverting it for the dual tensor.
const MAX_TENSOR_CONDITION: f64 = 1e12;

pub fn dual_fundamental_tensor(spec: &MetricSpec, x: &[f64], omega: &[f64]) -> Result<DualTensor> {
    spec.check_args(x, omega)?;
    spec.check_valid_at(x)?;
    if omega.iter().all(|&c| c == 0.0) {
        return Err(Error::DegenerateDirection);
    }
    let (v, _) = legendre_inverse_generic(spec, x, omega)?;
    let g = spec.g_matrix(x, &v);
    let gm = linalg::to_dmatrix(&g, spec.dim());
    let condition = linalg::spd_condition(&gm);
    if !(condition < MAX_TENSOR_CONDITION) {
        return Err(Error::IllConditioned(format!(
            "fundamental tensor condition {condition:.3e} at the preimage of {omega:?}"
        )));
    }
    let inv = linalg::invert(&g, spec.dim())?;
    Ok(DualTensor {
        x: x.to_vec(),
        omega: omega.to_vec(),
        g_star: linalg::to_dmatrix(&inv, spec.dim()),
        preimage: v,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{hessian_of, Dual};
    use crate::metric::{default_samples, CovectorField, MatrixField};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn randers_affine() -> MetricSpec {
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Affine {
            constant: vec![0.3, 0.0],
            linear: DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]),
        };
        MetricSpec::randers(a, b, &default_samples(2)).unwrap()
    }

    #[test]
    fn euclidean_legendre_is_identity() {
        let spec = MetricSpec::euclidean(3);
        let v = [0.3, -1.2, 0.5];
        let l = legendre(&spec, &[0.0; 3], &v).unwrap();
        for k in 0..3 {
            assert!((l[k] - v[k]).abs() < 1e-15);
        }
        let inv = legendre_inverse(&spec, &[0.0; 3], &v).unwrap();
        for k in 0..3 {
            assert!((inv.v[k] - v[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn riemannian_dual_norm_uses_inverse_matrix() {
        // A = diag(1, 4): F*(w) = sqrt(w A^{-1} w), so F*((0, 2)) = 1.
        let a = MatrixField::Constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        let fs = eval_f_star(&spec, &[0.1, 0.1], &[0.0, 2.0]).unwrap();
        assert!((fs - 1.0).abs() < 1e-10);
    }

    #[test]
    fn randers_round_trip_and_euler_identity() {
        let spec = randers_affine();
        let x = [0.4, -0.2];
        let omega = [0.7, -1.1];
        let inv = legendre_inverse(&spec, &x, &omega).unwrap();
        assert!(inv.residual <= 1e-10 * (1.0 + linalg::norm(&omega)));
        // w(v) = F*(w)^2 at the preimage, and F(v) = F*(w).
        let fs = eval_f_star(&spec, &x, &omega).unwrap();
        let pairing = linalg::dot(&omega, &inv.v);
        assert!((pairing - fs * fs).abs() < 1e-9);
        assert!((spec.norm(&x, &inv.v) - fs).abs() < 1e-10);
    }

    #[test]
    fn randers_drift_shifts_the_legendre_pairing() {
        // At v = (1, 0) with b = (0.5, 0): F(v) = 1.5 and w = l(v) obeys
        // w(v) = F^2(v) = 2.25.
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Constant(vec![0.5, 0.0]);
        let spec = MetricSpec::randers(a, b, &default_samples(2)).unwrap();
        let omega = legendre(&spec, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((linalg::dot(&omega, &[1.0, 0.0]) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn dual_norm_matches_brute_force_support_function() {
        // F*(w) = max { w(v) : F(v) = 1 }, scanned over a dense fan.
        let spec = randers_affine();
        let x = [0.25, 0.6];
        let omega = [0.9, -0.4];
        let fs = eval_f_star(&spec, &x, &omega).unwrap();
        let n = 100_000;
        let mut best = f64::NEG_INFINITY;
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let d = [th.cos(), th.sin()];
            let f = spec.norm(&x, &d);
            best = best.max(linalg::dot(&omega, &d) / f);
        }
        assert!((fs - best).abs() < 1e-6, "newton {fs} vs sweep {best}");
    }

    #[test]
    fn inverse_is_one_homogeneous() {
        let spec = randers_affine();
        let x = [0.0, 0.5];
        let omega = [0.4, 0.9];
        let scaled: Vec<f64> = omega.iter().map(|c| c * 7.3).collect();
        let v1 = legendre_inverse(&spec, &x, &omega).unwrap().v;
        let v2 = legendre_inverse(&spec, &x, &scaled).unwrap().v;
        for k in 0..2 {
            assert!((v2[k] - 7.3 * v1[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_covector_maps_to_zero() {
        let spec = randers_affine();
        let inv = legendre_inverse(&spec, &[0.1, 0.1], &[0.0, 0.0]).unwrap();
        assert_eq!(inv.v, vec![0.0, 0.0]);
        assert_eq!(eval_f_star(&spec, &[0.1, 0.1], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            dual_fundamental_tensor(&spec, &[0.1, 0.1], &[0.0, 0.0]),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn dual_tensor_inverts_the_primal_tensor() {
        let spec = randers_affine();
        let x = [0.3, 0.1];
        let omega = [1.1, 0.6];
        let dt = dual_fundamental_tensor(&spec, &x, &omega).unwrap();
        let g = spec.g_matrix(&x, &dt.preimage);
        let prod = linalg::to_dmatrix(&g, 2) * &dt.g_star;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dual_tensor_is_half_hessian_of_dual_energy() {
        // Differentiates F*^2 twice straight through the Newton solve and
        // compares with the matrix-inverse route: two independent paths to
        // the same tensor.
        let spec = randers_affine();
        let x = [0.2, -0.3];
        let omega = [0.8, 0.5];
        let dt = dual_fundamental_tensor(&spec, &x, &omega).unwrap();
        let xs: Vec<Dual<Dual<f64>>> = crate::dual::lift_slice(&x);
        let h = hessian_of(
            |w| {
                let fs = f_star_generic(&spec, &xs, w).unwrap();
                fs * fs
            },
            &omega,
        );
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (0.5 * h[i * 2 + j] - dt.g_star[(i, j)]).abs() < 1e-6,
                    "entry ({i},{j}): hessian {} vs inverse {}",
                    0.5 * h[i * 2 + j],
                    dt.g_star[(i, j)]
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_residual_is_tiny(
            wx in -3.0f64..3.0,
            wy in -3.0f64..3.0,
            px in -0.9f64..0.9,
            py in -0.9f64..0.9,
        ) {
            prop_assume!(wx.abs() + wy.abs() > 1e-3);
            let spec = randers_affine();
            let omega = [wx, wy];
            let inv = legendre_inverse(&spec, &[px, py], &omega).unwrap();
            prop_assert!(inv.residual <= 1e-10 * (1.0 + linalg::norm(&omega)));
        }
    }
}
