//! Sampled verification of the core identity stack.
//!
//! Every identity here is forced by the definitions: positive
//! 1-homogeneity of `F` propagates to 0-homogeneity of `g`, 2-homogeneity
//! of the spray, 1-homogeneity of the nonlinear connection and
//! 2-homogeneity of the Riemann endomorphism; the Euler identities
//! `l(x,v) . v = F^2 = v' g(x,v) v` restate that homogeneity through the
//! vertical derivatives; the Legendre map must round-trip through its
//! Newton inverse; and the dual tensor must invert the primal one.
//!
//! The suite draws random `(x, v, lambda)` triples, evaluates each
//! identity in relative form, and reports the worst error with the
//! witnessing sample. It is the library half of the `verify-core` task.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::legendre::{f_star_generic, g_star_generic, legendre, legendre_inverse};
use crate::linalg;
use crate::metric::MetricSpec;
use crate::spray::{nonlinear_connection_generic, riemann_generic, spray_generic};

/// Legendre round-trip: `|l^{-1}(x, l(x,v)) - v|` relative to `1 + |v|`.
pub const TOL_LEGENDRE_ROUND_TRIP: f64 = 1e-9;
/// Dual norm identity `F*(x, l(x,v)) = F(x,v)`, relative.
pub const TOL_F_STAR_IDENTITY: f64 = 1e-9;
/// Entrywise `g*(x, l(x,v)) g(x,v) = Id`.
pub const TOL_G_STAR_PRODUCT: f64 = 1e-8;
/// Homogeneity of `F`, `g` and the Euler identities: these evaluate the
/// same polynomials twice, so only rounding separates the sides.
pub const TOL_ALGEBRAIC: f64 = 1e-10;
/// Homogeneity of `G`, `N` and `R^i_k`: computed through nested dual
/// towers (depth 4 for the curvature), which amplifies rounding.
pub const TOL_SPRAY_SCALE: f64 = 1e-7;

/// One verified identity: its worst relative error over the sample set
/// and the sample that attained it.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub witness_x: Vec<f64>,
    pub witness_v: Vec<f64>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct CoreIdentityReport {
    pub samples: usize,
    pub checks: Vec<CheckResult>,
    /// Smallest fundamental-tensor eigenvalue seen; must stay positive.
    pub min_g_eigenvalue: f64,
    pub passed: bool,
}

impl CoreIdentityReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    max_error: f64,
    witness_x: Vec<f64>,
    witness_v: Vec<f64>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Tracker {
        Tracker { name, tolerance, max_error: 0.0, witness_x: Vec::new(), witness_v: Vec::new() }
    }

    fn record(&mut self, err: f64, x: &[f64], v: &[f64]) {
        if !err.is_finite() || err > self.max_error || self.witness_x.is_empty() {
            self.max_error = if err.is_finite() { err } else { f64::INFINITY };
            self.witness_x = x.to_vec();
            self.witness_v = v.to_vec();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            max_error: self.max_error,
            tolerance: self.tolerance,
            witness_x: self.witness_x,
            witness_v: self.witness_v,
        }
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff.abs() / (1.0 + scale.abs())
}

fn max_rel_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| rel(p - q, *q))
        .fold(0.0, f64::max)
}

/// Runs the identity suite over `samples` random `(x, v)` pairs drawn
/// uniformly from `[lo, hi]` (base) and the unit box (fibre), with a
/// fresh scale factor per sample.
pub fn core_identity_suite(
    spec: &MetricSpec,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed: u64,
) -> Result<CoreIdentityReport> {
    let m = spec.dim();
    if lo.len() != m || hi.len() != m {
        return Err(Error::invalid("sample box dimension mismatch"));
    }
    if samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut f_hom = Tracker::new("f_homogeneity", TOL_ALGEBRAIC);
    let mut g_hom = Tracker::new("g_homogeneity", TOL_ALGEBRAIC);
    let mut euler_l = Tracker::new("euler_legendre", TOL_ALGEBRAIC);
    let mut euler_g = Tracker::new("euler_fundamental", TOL_ALGEBRAIC);
    let mut spray_hom = Tracker::new("spray_homogeneity", TOL_SPRAY_SCALE);
    let mut conn_hom = Tracker::new("connection_homogeneity", TOL_SPRAY_SCALE);
    let mut riem_hom = Tracker::new("riemann_homogeneity", TOL_SPRAY_SCALE);
    let mut round_trip = Tracker::new("legendre_round_trip", TOL_LEGENDRE_ROUND_TRIP);
    let mut f_star = Tracker::new("f_star_identity", TOL_F_STAR_IDENTITY);
    let mut g_star = Tracker::new("g_star_product", TOL_G_STAR_PRODUCT);
    let mut min_eig = f64::INFINITY;

    for _ in 0..samples {
        let x: Vec<f64> = (0..m).map(|i| rng.gen_range(lo[i]..hi[i])).collect();
        let mut v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if linalg::norm(&v) < 0.1 {
            v[0] += 1.0;
        }
        let lambda: f64 = rng.gen_range(0.5..2.0);
        let vs: Vec<f64> = v.iter().map(|c| lambda * c).collect();
        spec.check_valid_at(&x)?;

        let f = spec.norm(&x, &v);
        let fs = spec.norm(&x, &vs);
        f_hom.record(rel(fs - lambda * f, lambda * f), &x, &v);

        let g = spec.g_matrix(&x, &v);
        let gs = spec.g_matrix(&x, &vs);
        g_hom.record(max_rel_slice(&gs, &g), &x, &v);

        let ell = legendre(spec, &x, &v)?;
        euler_l.record(rel(linalg::dot(&ell, &v) - f * f, f * f), &x, &v);
        let gvv: f64 = (0..m)
            .map(|i| (0..m).map(|j| g[i * m + j] * v[i] * v[j]).sum::<f64>())
            .sum();
        euler_g.record(rel(gvv - f * f, f * f), &x, &v);

        let eig = linalg::min_eigenvalue(&linalg::to_dmatrix(&g, m));
        min_eig = min_eig.min(eig);

        let spray = spray_generic(spec, &x, &v)?;
        let sprays = spray_generic(spec, &x, &vs)?;
        let scaled: Vec<f64> = spray.iter().map(|c| lambda * lambda * c).collect();
        spray_hom.record(max_rel_slice(&sprays, &scaled), &x, &v);

        let conn = nonlinear_connection_generic(spec, &x, &v)?;
        let conns = nonlinear_connection_generic(spec, &x, &vs)?;
        let scaled: Vec<f64> = conn.iter().map(|c| lambda * c).collect();
        conn_hom.record(max_rel_slice(&conns, &scaled), &x, &v);

        let riem = riemann_generic(spec, &x, &v)?;
        let riems = riemann_generic(spec, &x, &vs)?;
        let scaled: Vec<f64> = riem.iter().map(|c| lambda * lambda * c).collect();
        riem_hom.record(max_rel_slice(&riems, &scaled), &x, &v);

        let inv = legendre_inverse(spec, &x, &ell)?;
        let rt = inv
            .v
            .iter()
            .zip(&v)
            .map(|(a, b)| rel(a - b, *b))
            .fold(0.0, f64::max);
        round_trip.record(rt, &x, &v);

        let fstar = f_star_generic(spec, &x, &ell)?;
        f_star.record(rel(fstar - f, f), &x, &v);

        let gst = g_star_generic(spec, &x, &ell)?;
        let mut prod_err = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += gst[i * m + k] * g[k * m + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                prod_err = prod_err.max((acc - target).abs());
            }
        }
        g_star.record(prod_err, &x, &v);
    }

    let checks = vec![
        f_hom.finish(),
        g_hom.finish(),
        euler_l.finish(),
        euler_g.finish(),
        spray_hom.finish(),
        conn_hom.finish(),
        riem_hom.finish(),
        round_trip.finish(),
        f_star.finish(),
        g_star.finish(),
    ];
    let passed = checks.iter().all(|c| c.passed()) && min_eig > 0.0;
    Ok(CoreIdentityReport { samples, checks, min_g_eigenvalue: min_eig, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{
        default_samples, CovectorField, DiffeoSpec, MatrixField, MinkowskiNorm,
    };
    use nalgebra::DMatrix;

    fn box2() -> (Vec<f64>, Vec<f64>) {
        (vec![-0.6, -0.6], vec![0.6, 0.6])
    }

    #[test]
    fn euclidean_suite_is_exact_to_rounding() {
        let (lo, hi) = box2();
        let report =
            core_identity_suite(&MetricSpec::euclidean(2), &lo, &hi, 50, 7).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.min_g_eigenvalue > 0.9);
        let rt = report.check("legendre_round_trip").unwrap();
        assert!(rt.max_error < 1e-12);
    }

    #[test]
    fn all_five_families_pass_the_suite() {
        let (lo, hi) = box2();
        let sphere = MetricSpec::riemannian(
            MatrixField::SpaceForm { dim: 2, curvature: 1.0 },
            &default_samples(2),
        )
        .unwrap();
        let randers = MetricSpec::randers(
            MatrixField::Constant(DMatrix::identity(2, 2)),
            CovectorField::Affine {
                constant: vec![0.3, 0.0],
                linear: DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]),
            },
            &default_samples(2),
        )
        .unwrap();
        let mink = MetricSpec::locally_minkowski(MinkowskiNorm::Randers {
            a: DMatrix::identity(2, 2),
            b: vec![0.5, 0.0],
        })
        .unwrap();
        let shear = MetricSpec::pullback(
            mink.clone(),
            DiffeoSpec::QuadraticShear { dim: 2, i: 0, j: 1, c: 0.25 },
            &default_samples(2),
        )
        .unwrap();
        for spec in [MetricSpec::euclidean(2), sphere, randers, mink, shear] {
            let report = core_identity_suite(&spec, &lo, &hi, 60, 11).unwrap();
            for check in &report.checks {
                assert!(
                    check.passed(),
                    "{} failed: {} > {} at x={:?} v={:?}",
                    check.name,
                    check.max_error,
                    check.tolerance,
                    check.witness_x,
                    check.witness_v
                );
            }
            assert!(report.min_g_eigenvalue > 0.0);
        }
    }

    #[test]
    fn witness_points_at_the_worst_sample() {
        let (lo, hi) = box2();
        let report =
            core_identity_suite(&MetricSpec::euclidean(2), &lo, &hi, 30, 3).unwrap();
        for check in &report.checks {
            assert_eq!(check.witness_x.len(), 2);
            assert_eq!(check.witness_v.len(), 2);
        }
    }

    #[test]
    fn rejects_empty_sampling() {
        let (lo, hi) = box2();
        assert!(core_identity_suite(&MetricSpec::euclidean(2), &lo, &hi, 0, 1).is_err());
    }
}
