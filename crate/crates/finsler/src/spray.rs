//! Spray coefficients, the nonlinear connection, and Riemann curvature.
//!
//! The geodesic spray of a Finsler metric is
//!
//! ```text
//! G^i(x, y) = 1/4 g^{ij}(x, y) ( d^2F^2/dx^k dy^j y^k - dF^2/dx^j ),
//! ```
//!
//! the nonlinear connection is `N^i_j = dG^i/dy^j`, and the Riemann
//! curvature in its spray form is
//!
//! ```text
//! R^i_k = 2 dG^i/dx^k - y^j d^2G^i/dx^j dy^k
//!         + 2 G^j d^2G^i/dy^j dy^k - dG^i/dy^j dG^j/dy^k.
//! ```
//!
//! For a Riemannian metric `G^i = 1/2 gamma^i_jk y^j y^k` with the
//! Levi-Civita Christoffel symbols, so every classical identity is
//! recovered; for a locally Minkowski metric the spray vanishes
//! identically. All formulas are evaluated by stacking dual levels on the
//! energy kernel, so each term is an exact derivative.

use nalgebra::DMatrix;

use crate::dual::{consts, seed, Dual, Scalar};
use crate::error::{Error, Result};
use crate::fields::PolyVectorField;
use crate::linalg;
use crate::metric::MetricSpec;

/// Spray coefficients `G^i(x, y)`, generic over the scalar type.
/// Requires a primally nonzero `y`.
pub fn spray_generic<S: Scalar>(spec: &MetricSpec, x: &[S], y: &[S]) -> Result<Vec<S>> {
    let m = spec.dim();
    let g = spec.g_matrix(x, y);
    let ginv = linalg::invert(&g, m)?;

    // dF^2/dx^j.
    let yd = consts(y);
    let xgrad: Vec<S> = (0..m).map(|j| spec.f2(&seed(x, j), &yd).du).collect();

    // c_j = d^2F^2/dx^k dy^j y^k - dF^2/dx^j.
    let mut c = vec![S::zero(); m];
    for j in 0..m {
        let mut acc = S::zero();
        for k in 0..m {
            let mut x2: Vec<Dual<Dual<S>>> = x
                .iter()
                .map(|&v| Dual::constant(Dual::constant(v)))
                .collect();
            x2[k].du = Dual::constant(S::one());
            let mut y2: Vec<Dual<Dual<S>>> = y
                .iter()
                .map(|&v| Dual::constant(Dual::constant(v)))
                .collect();
            y2[j].re.du = S::one();
            acc += spec.f2(&x2, &y2).du.du * y[k];
        }
        c[j] = acc - xgrad[j];
    }

    Ok((0..m)
        .map(|i| {
            let mut acc = S::zero();
            for j in 0..m {
                acc += ginv[i * m + j] * c[j];
            }
            acc.scale(0.25)
        })
        .collect())
}

/// Nonlinear connection `N^i_j(x, y) = dG^i/dy^j`, row-major.
pub fn nonlinear_connection_generic<S: Scalar>(
    spec: &MetricSpec,
    x: &[S],
    y: &[S],
) -> Result<Vec<S>> {
    let m = spec.dim();
    let xd = consts(x);
    let mut n = vec![S::zero(); m * m];
    for j in 0..m {
        let gj = spray_generic(spec, &xd, &seed(y, j))?;
        for i in 0..m {
            n[i * m + j] = gj[i].du;
        }
    }
    Ok(n)
}

/// Spray and nonlinear connection at one point of the slit tangent bundle.
#[derive(Debug, Clone)]
pub struct SprayData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Spray coefficients `G^i`.
    pub g: Vec<f64>,
    /// Nonlinear connection `N^i_j`.
    pub n: DMatrix<f64>,
}

pub fn spray(spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<SprayData> {
    spec.check_args(x, y)?;
    spec.check_valid_at(x)?;
    if linalg::norm(y) == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let g = spray_generic(spec, x, y)?;
    let n = nonlinear_connection_generic(spec, x, y)?;
    Ok(SprayData {
        x: x.to_vec(),
        y: y.to_vec(),
        g,
        n: linalg::to_dmatrix(&n, spec.dim()),
    })
}

/// Riemann curvature `R^i_k(x, y)` in spray form, row-major.
pub fn riemann_generic<S: Scalar>(spec: &MetricSpec, x: &[S], y: &[S]) -> Result<Vec<S>> {
    let m = spec.dim();
    let g = spray_generic(spec, x, y)?;

    // First derivatives.
    let mut dgdx = vec![S::zero(); m * m]; // [i][k]
    for k in 0..m {
        let gk = spray_generic(spec, &seed(x, k), &consts(y))?;
        for i in 0..m {
            dgdx[i * m + k] = gk[i].du;
        }
    }
    let mut dgdy = vec![S::zero(); m * m]; // [i][j]
    for j in 0..m {
        let gj = spray_generic(spec, &consts(x), &seed(y, j))?;
        for i in 0..m {
            dgdy[i * m + j] = gj[i].du;
        }
    }

    // Mixed and pure second derivatives.
    let lift2 = |v: &[S]| -> Vec<Dual<Dual<S>>> {
        v.iter()
            .map(|&c| Dual::constant(Dual::constant(c)))
            .collect()
    };
    let mut d2gdxdy = vec![S::zero(); m * m * m]; // [i][j][k] = d2 G^i / dx^j dy^k
    for j in 0..m {
        for k in 0..m {
            let mut x2 = lift2(x);
            x2[j].du = Dual::constant(S::one());
            let mut y2 = lift2(y);
            y2[k].re.du = S::one();
            let gv = spray_generic(spec, &x2, &y2)?;
            for i in 0..m {
                d2gdxdy[(i * m + j) * m + k] = gv[i].du.du;
            }
        }
    }
    let mut d2gdydy = vec![S::zero(); m * m * m]; // [i][j][k], symmetric in (j, k)
    for j in 0..m {
        for k in 0..=j {
            let mut y2 = lift2(y);
            y2[j].du = Dual::constant(S::one());
            y2[k].re.du = S::one();
            let gv = spray_generic(spec, &lift2(x), &y2)?;
            for i in 0..m {
                d2gdydy[(i * m + j) * m + k] = gv[i].du.du;
                d2gdydy[(i * m + k) * m + j] = gv[i].du.du;
            }
        }
    }

    let mut r = vec![S::zero(); m * m];
    for i in 0..m {
        for k in 0..m {
            let mut acc = dgdx[i * m + k].scale(2.0);
            for j in 0..m {
                acc -= y[j] * d2gdxdy[(i * m + j) * m + k];
                acc += g[j].scale(2.0) * d2gdydy[(i * m + j) * m + k];
                acc -= dgdy[i * m + j] * dgdy[j * m + k];
            }
            r[i * m + k] = acc;
        }
    }
    Ok(r)
}

/// Riemann curvature and Ricci scalar at one flagpole.
#[derive(Debug, Clone)]
pub struct CurvatureData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `R^i_k`, the Jacobi-operator form of the curvature.
    pub r: DMatrix<f64>,
    /// Ricci scalar `R^i_i`.
    pub ricci: f64,
}

pub fn riemann_curvature(spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<CurvatureData> {
    spec.check_args(x, y)?;
    spec.check_valid_at(x)?;
    if linalg::norm(y) == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let r = riemann_generic(spec, x, y)?;
    let m = spec.dim();
    let ricci = (0..m).map(|i| r[i * m + i]).sum();
    Ok(CurvatureData {
        x: x.to_vec(),
        y: y.to_vec(),
        r: linalg::to_dmatrix(&r, m),
        ricci,
    })
}

/// Berwald-type connection coefficients `Gamma^i_jk(x) = d^2 G^i/dy^j dy^k`
/// evaluated at the reference fibre vector `y_ref`; flat `m^3` layout
/// `[(i*m + j)*m + k]`. For Berwald metrics this is independent of `y_ref`.
pub fn berwald_gamma_generic<S: Scalar>(
    spec: &MetricSpec,
    x: &[S],
    y_ref: &[f64],
) -> Result<Vec<S>> {
    let m = spec.dim();
    let mut out = vec![S::zero(); m * m * m];
    for j in 0..m {
        for k in 0..=j {
            let mut y2: Vec<Dual<Dual<S>>> = y_ref
                .iter()
                .map(|&c| Dual::constant(Dual::constant(S::lift(c))))
                .collect();
            y2[j].du = Dual::constant(S::one());
            y2[k].re.du = S::one();
            let x2: Vec<Dual<Dual<S>>> = x
                .iter()
                .map(|&c| Dual::constant(Dual::constant(c)))
                .collect();
            let gv = spray_generic(spec, &x2, &y2)?;
            for i in 0..m {
                out[(i * m + j) * m + k] = gv[i].du.du;
                out[(i * m + k) * m + j] = gv[i].du.du;
            }
        }
    }
    Ok(out)
}

/// Connection data for covariant differentiation along the fibre.
#[derive(Debug, Clone)]
pub enum ConnectionData {
    /// The full nonlinear connection of a metric.
    Nonlinear(MetricSpec),
    /// The linear connection `N^i_j(x, y) = Gamma^i_jk(x) y^k` of a metric
    /// already established to be Berwald; `y_ref` picks the fibre vector
    /// the coefficients are extracted at.
    BerwaldLinear { spec: MetricSpec, y_ref: Vec<f64> },
}

impl ConnectionData {
    pub fn dim(&self) -> usize {
        match self {
            ConnectionData::Nonlinear(s) => s.dim(),
            ConnectionData::BerwaldLinear { spec, .. } => spec.dim(),
        }
    }

    /// `N^i_j(x, y)`, row-major.
    pub fn connection_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self {
            ConnectionData::Nonlinear(spec) => nonlinear_connection_generic(spec, x, y),
            ConnectionData::BerwaldLinear { spec, y_ref } => {
                let m = spec.dim();
                let gamma = berwald_gamma_generic(spec, x, y_ref)?;
                let mut n = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            n[i * m + j] += gamma[(i * m + j) * m + k] * y[k];
                        }
                    }
                }
                Ok(n)
            }
        }
    }
}

/// Covariant derivative `D_y V = (dV^i(y) + V^j(x) N^i_j(x, y)) d_i`,
/// extended by zero at `y = 0`.
pub fn covariant_derivative(
    conn: &ConnectionData,
    field: &PolyVectorField,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let m = conn.dim();
    if field.dim() != m || x.len() != m || y.len() != m {
        return Err(Error::invalid("dimension mismatch in covariant derivative"));
    }
    if linalg::norm(y) == 0.0 {
        return Ok(vec![0.0; m]);
    }
    let mut out = field.directional(x, y);
    let n = conn.connection_at(x, y)?;
    let v = field.eval(x);
    for i in 0..m {
        for j in 0..m {
            out[i] += v[j] * n[i * m + j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PolyField;
    use crate::metric::{
        default_samples, CovectorField, DiffeoSpec, MatrixField, MetricSpec, MinkowskiNorm,
    };
    use nalgebra::DMatrix;

    /// diag(1, (1 + 0.1 x^1)^2), whose nonzero Christoffel symbols are
    /// gamma^1_22 = -0.1 (1 + 0.1 x^1) and gamma^2_12 = 0.1 / (1 + 0.1 x^1).
    fn stretched() -> MetricSpec {
        let a = MatrixField::DiagonalAffineSq {
            terms: vec![(1.0, 0.0, 0), (1.0, 0.1, 0)],
        };
        MetricSpec::riemannian(a, &default_samples(2)).unwrap()
    }

    fn randers_affine() -> MetricSpec {
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Affine {
            constant: vec![0.3, 0.0],
            linear: DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]),
        };
        MetricSpec::randers(a, b, &default_samples(2)).unwrap()
    }

    #[test]
    fn riemannian_spray_matches_christoffel_oracle() {
        let spec = stretched();
        let x = [0.3, -0.2];
        let y = [0.7, 1.1];
        let w = 1.0 + 0.1 * x[0];
        let s = spray(&spec, &x, &y).unwrap();
        // G^1 = 1/2 gamma^1_22 (y^2)^2, G^2 = gamma^2_12 y^1 y^2.
        let g1 = -0.05 * w * y[1] * y[1];
        let g2 = 0.1 / w * y[0] * y[1];
        assert!((s.g[0] - g1).abs() < 1e-12, "{} vs {g1}", s.g[0]);
        assert!((s.g[1] - g2).abs() < 1e-12, "{} vs {g2}", s.g[1]);
        // N^i_j = dG^i/dy^j = gamma^i_jk y^k.
        assert!((s.n[(0, 1)] - (-0.1 * w * y[1])).abs() < 1e-12);
        assert!((s.n[(1, 0)] - 0.1 / w * y[1]).abs() < 1e-12);
        assert!((s.n[(1, 1)] - 0.1 / w * y[0]).abs() < 1e-12);
        assert!(s.n[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn locally_minkowski_spray_vanishes_identically() {
        let norm = MinkowskiNorm::Randers {
            a: DMatrix::identity(2, 2),
            b: vec![0.5, 0.0],
        };
        let spec = MetricSpec::locally_minkowski(norm).unwrap();
        let s = spray(&spec, &[0.4, -0.9], &[1.3, 0.2]).unwrap();
        assert_eq!(s.g, vec![0.0, 0.0]);
        let c = riemann_curvature(&spec, &[0.4, -0.9], &[1.3, 0.2]).unwrap();
        assert_eq!(c.ricci, 0.0);
    }

    #[test]
    fn spray_homogeneity_ladder() {
        // G is 2-homogeneous, N is 1-homogeneous, R is 2-homogeneous in y.
        let spec = randers_affine();
        let x = [0.2, 0.5];
        let y = [0.9, -0.4];
        let lam = 2.7;
        let yl: Vec<f64> = y.iter().map(|c| c * lam).collect();
        let s1 = spray(&spec, &x, &y).unwrap();
        let s2 = spray(&spec, &x, &yl).unwrap();
        for i in 0..2 {
            assert!((s2.g[i] - lam * lam * s1.g[i]).abs() < 1e-9 * lam * lam);
            for j in 0..2 {
                assert!((s2.n[(i, j)] - lam * s1.n[(i, j)]).abs() < 1e-9 * lam);
            }
        }
        let r1 = riemann_curvature(&spec, &x, &y).unwrap();
        let r2 = riemann_curvature(&spec, &x, &yl).unwrap();
        assert!((r2.ricci - lam * lam * r1.ricci).abs() < 1e-9 * lam * lam * (1.0 + r1.ricci.abs()));
    }

    #[test]
    fn sphere_has_constant_positive_curvature() {
        // Round sphere, curvature 1: the Ricci scalar is (m - 1) F^2.
        let a = MatrixField::SpaceForm { dim: 2, curvature: 1.0 };
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        for (x, y) in [
            ([0.0, 0.0], [1.0, 0.0]),
            ([0.3, -0.5], [0.4, 1.2]),
            ([0.8, 0.1], [-2.0, 0.7]),
        ] {
            let c = riemann_curvature(&spec, &x, &y).unwrap();
            let f2 = spec.f2(&x, &y);
            assert!(
                (c.ricci / f2 - 1.0).abs() < 1e-9,
                "ricci/F^2 = {} at {x:?}",
                c.ricci / f2
            );
        }
    }

    #[test]
    fn pullback_of_flat_metric_stays_flat() {
        // A curvilinear image of a Minkowski norm has nonzero spray but
        // identically vanishing curvature.
        let norm = MinkowskiNorm::Randers {
            a: DMatrix::identity(2, 2),
            b: vec![0.4, 0.1],
        };
        let inner = MetricSpec::locally_minkowski(norm).unwrap();
        let diffeo = DiffeoSpec::QuadraticShear { dim: 2, i: 0, j: 1, c: 0.3 };
        let spec = MetricSpec::pullback(inner, diffeo, &default_samples(2)).unwrap();
        let x = [0.4, 0.6];
        let y = [0.8, -0.3];
        let s = spray(&spec, &x, &y).unwrap();
        assert!(s.g.iter().any(|c| c.abs() > 1e-6), "shear should bend geodesics");
        let c = riemann_curvature(&spec, &x, &y).unwrap();
        assert!(c.r.iter().all(|e| e.abs() < 1e-7), "curvature {:?}", c.r);
    }

    #[test]
    fn covariant_derivative_matches_levi_civita_oracle() {
        let spec = stretched();
        let x = [0.5, 0.3];
        let y = [1.1, -0.6];
        let w = 1.0 + 0.1 * x[0];
        // V = (x^2, (x^1)^2).
        let field = PolyVectorField::new(vec![
            PolyField::coordinate(2, 1),
            PolyField::new(2, vec![(1.0, vec![2, 0])]).unwrap(),
        ])
        .unwrap();
        let conn = ConnectionData::Nonlinear(spec);
        let d = covariant_derivative(&conn, &field, &x, &y).unwrap();
        let v = [x[1], x[0] * x[0]];
        // Classical formula: dV^i(y) + gamma^i_jk V^j y^k.
        let expect0 = y[1] + (-0.1 * w) * v[1] * y[1];
        let expect1 = 2.0 * x[0] * y[0] + 0.1 / w * (v[0] * y[1] + v[1] * y[0]);
        assert!((d[0] - expect0).abs() < 1e-8, "{} vs {expect0}", d[0]);
        assert!((d[1] - expect1).abs() < 1e-8, "{} vs {expect1}", d[1]);
    }

    #[test]
    fn covariant_derivative_extends_by_zero() {
        let conn = ConnectionData::Nonlinear(randers_affine());
        let field = PolyVectorField::new(vec![
            PolyField::coordinate(2, 0),
            PolyField::coordinate(2, 1),
        ])
        .unwrap();
        let d = covariant_derivative(&conn, &field, &[0.2, 0.2], &[0.0, 0.0]).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn berwald_linear_connection_agrees_on_berwald_metrics() {
        // A Riemannian metric is Berwald: the linear connection built from
        // gamma must reproduce the nonlinear one at every fibre vector.
        let spec = stretched();
        let x = [0.1, 0.8];
        let y = [0.6, 0.9];
        let nl = ConnectionData::Nonlinear(spec.clone());
        let bl = ConnectionData::BerwaldLinear { spec, y_ref: vec![1.0, 0.3] };
        let n1 = nl.connection_at(&x, &y).unwrap();
        let n2 = bl.connection_at(&x, &y).unwrap();
        for k in 0..4 {
            assert!((n1[k] - n2[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_fibre_vector_is_rejected() {
        let spec = randers_affine();
        assert!(matches!(
            spray(&spec, &[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::DegenerateDirection)
        ));
    }
}
