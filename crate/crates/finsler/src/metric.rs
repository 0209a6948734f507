//! Finsler metric specifications and the fundamental tensor.
//!
//! A metric is described declaratively by [`MetricSpec`], and the only thing
//! the rest of the crate ever evaluates is the energy `F^2(x, v)` through
//! [`MetricSpec::f2`], generically over the scalar type. Every tensor the
//! crate produces is an exact derivative of that one kernel.
//!
//! The fundamental tensor at a nonzero fibre vector v is
//! `g_ij(x, v) = 1/2 d^2 F^2 / dv^i dv^j`, positive definite by strong
//! convexity; for Riemannian data it reduces to the metric matrix itself.

use nalgebra::DMatrix;

use crate::dual::{lift_slice, Dual, Scalar};
use crate::error::{Error, Result};
use crate::linalg;

/// A smooth field of symmetric positive definite matrices `A(x)`.
#[derive(Debug, Clone)]
pub enum MatrixField {
    /// The same SPD matrix at every point.
    Constant(DMatrix<f64>),
    /// Constant-curvature space form `A(x) = I / (1 + k |x|^2 / 4)^2`.
    /// For `k > 0` this is the round sphere of curvature `k` in
    /// stereographic coordinates; `k < 0` gives hyperbolic space on the
    /// ball of radius `2 / sqrt(-k)`.
    SpaceForm { dim: usize, curvature: f64 },
    /// Diagonal matrix with entries `(a_i + b_i x^{j_i})^2`, one
    /// `(a_i, b_i, j_i)` triple per coordinate. Positive while
    /// `a_i + b_i x^{j_i} > 0`.
    DiagonalAffineSq { terms: Vec<(f64, f64, usize)> },
}

impl MatrixField {
    pub fn dim(&self) -> usize {
        match self {
            MatrixField::Constant(a) => a.nrows(),
            MatrixField::SpaceForm { dim, .. } => *dim,
            MatrixField::DiagonalAffineSq { terms } => terms.len(),
        }
    }

    /// Entries of `A(x)`, row-major.
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let m = self.dim();
        match self {
            MatrixField::Constant(a) => {
                let mut out = vec![S::zero(); m * m];
                for i in 0..m {
                    for j in 0..m {
                        out[i * m + j] = S::lift(a[(i, j)]);
                    }
                }
                out
            }
            MatrixField::SpaceForm { curvature, .. } => {
                let mut r2 = S::zero();
                for &xi in x {
                    r2 += xi * xi;
                }
                let denom = S::one() + r2.scale(curvature / 4.0);
                let s = (denom * denom).recip();
                let mut out = vec![S::zero(); m * m];
                for i in 0..m {
                    out[i * m + i] = s;
                }
                out
            }
            MatrixField::DiagonalAffineSq { terms } => {
                let mut out = vec![S::zero(); m * m];
                for (i, &(a, b, j)) in terms.iter().enumerate() {
                    let e = S::lift(a) + x[j].scale(b);
                    out[i * m + i] = e * e;
                }
                out
            }
        }
    }
}

/// A smooth covector field `b(x)`, the drift term of a Randers metric.
#[derive(Debug, Clone)]
pub enum CovectorField {
    Constant(Vec<f64>),
    /// `b_i(x) = c_i + sum_j L_ij x^j`.
    Affine { constant: Vec<f64>, linear: DMatrix<f64> },
}

impl CovectorField {
    pub fn dim(&self) -> usize {
        match self {
            CovectorField::Constant(c) => c.len(),
            CovectorField::Affine { constant, .. } => constant.len(),
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match self {
            CovectorField::Constant(c) => lift_slice(c),
            CovectorField::Affine { constant, linear } => (0..constant.len())
                .map(|i| {
                    let mut acc = S::lift(constant[i]);
                    for (j, &xj) in x.iter().enumerate() {
                        acc += xj.scale(linear[(i, j)]);
                    }
                    acc
                })
                .collect(),
        }
    }
}

/// A diffeomorphism with exact inverse and Jacobian, used for pullbacks.
#[derive(Debug, Clone)]
pub enum DiffeoSpec {
    Identity(usize),
    /// `x -> M x` for invertible `M`.
    Linear(DMatrix<f64>),
    /// `x^i -> x^i + c (x^j)^2` with `i != j`; the inverse is exact
    /// because coordinate `j` is untouched.
    QuadraticShear { dim: usize, i: usize, j: usize, c: f64 },
}

impl DiffeoSpec {
    pub fn dim(&self) -> usize {
        match self {
            DiffeoSpec::Identity(m) => *m,
            DiffeoSpec::Linear(m) => m.nrows(),
            DiffeoSpec::QuadraticShear { dim, .. } => *dim,
        }
    }

    pub fn forward<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match self {
            DiffeoSpec::Identity(_) => x.to_vec(),
            DiffeoSpec::Linear(m) => {
                let n = m.nrows();
                (0..n)
                    .map(|i| {
                        let mut acc = S::zero();
                        for (j, &xj) in x.iter().enumerate() {
                            acc += xj.scale(m[(i, j)]);
                        }
                        acc
                    })
                    .collect()
            }
            DiffeoSpec::QuadraticShear { i, j, c, .. } => {
                let mut out = x.to_vec();
                out[*i] += (x[*j] * x[*j]).scale(*c);
                out
            }
        }
    }

    pub fn inverse<S: Scalar>(&self, y: &[S]) -> Result<Vec<S>> {
        match self {
            DiffeoSpec::Identity(_) => Ok(y.to_vec()),
            DiffeoSpec::Linear(m) => {
                let n = m.nrows();
                let flat: Vec<f64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
                let inv = linalg::invert(&flat, n)
                    .map_err(|_| Error::PullbackDegenerate("singular linear map".into()))?;
                Ok((0..n)
                    .map(|i| {
                        let mut acc = S::zero();
                        for (j, &yj) in y.iter().enumerate() {
                            acc += yj.scale(inv[i * n + j]);
                        }
                        acc
                    })
                    .collect())
            }
            DiffeoSpec::QuadraticShear { i, j, c, .. } => {
                let mut out = y.to_vec();
                let shift = (y[*j] * y[*j]).scale(*c);
                out[*i] -= shift;
                Ok(out)
            }
        }
    }

    /// Jacobian `d(forward)^i / dx^j`, row-major.
    pub fn jacobian<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let m = self.dim();
        let mut jac = vec![S::zero(); m * m];
        match self {
            DiffeoSpec::Identity(_) => {
                for i in 0..m {
                    jac[i * m + i] = S::one();
                }
            }
            DiffeoSpec::Linear(mat) => {
                for i in 0..m {
                    for j in 0..m {
                        jac[i * m + j] = S::lift(mat[(i, j)]);
                    }
                }
            }
            DiffeoSpec::QuadraticShear { i, j, c, .. } => {
                for k in 0..m {
                    jac[k * m + k] = S::one();
                }
                jac[i * m + j] += x[*j].scale(2.0 * c);
            }
        }
        jac
    }

    /// Round-trip and Jacobian-regularity check over sample points.
    pub fn validate(&self, samples: &[Vec<f64>]) -> Result<()> {
        for x in samples {
            if x.len() != self.dim() {
                return Err(Error::invalid(format!(
                    "diffeo sample has dimension {}, expected {}",
                    x.len(),
                    self.dim()
                )));
            }
            let y = self.forward(x);
            let back = self.inverse(&y)?;
            let err: f64 = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if err > 1e-10 {
                return Err(Error::PullbackDegenerate(format!(
                    "inverse round-trip error {err:.3e} at {x:?}"
                )));
            }
            let jac = self.jacobian(x);
            let d = linalg::det(&jac, self.dim());
            if d.abs() < 1e-10 {
                return Err(Error::PullbackDegenerate(format!(
                    "Jacobian determinant {d:.3e} at {x:?}"
                )));
            }
        }
        Ok(())
    }
}

/// An x-independent Minkowski norm on the fibre.
#[derive(Debug, Clone)]
pub enum MinkowskiNorm {
    /// `F(v) = sqrt(v^T A v)`.
    Quadratic(DMatrix<f64>),
    /// `F(v) = sqrt(v^T A v) + b . v` with `|b|_{A^{-1}} < 1`.
    Randers { a: DMatrix<f64>, b: Vec<f64> },
}

impl MinkowskiNorm {
    pub fn dim(&self) -> usize {
        match self {
            MinkowskiNorm::Quadratic(a) => a.nrows(),
            MinkowskiNorm::Randers { a, .. } => a.nrows(),
        }
    }
}

/// The metric families the workbench understands.
#[derive(Debug, Clone)]
pub enum MetricKind {
    Euclidean,
    Riemannian { a: MatrixField },
    /// `F = sqrt(v^T A(x) v) + b(x) . v`, strongly convex iff the drift
    /// satisfies `|b(x)|_{A(x)^{-1}} < 1` everywhere.
    Randers { a: MatrixField, b: CovectorField },
    LocallyMinkowski { norm: MinkowskiNorm },
    /// `F(x, v) = F_inner(phi(x), d phi(x) v)`.
    Pullback { inner: Box<MetricSpec>, diffeo: DiffeoSpec },
    /// `F(x, v) = F_inner(s x, v)`: the base point is zoomed toward the
    /// origin, fibres untouched. This is the substitution behind the
    /// small-ball rescaling experiment, not a coordinate change.
    XScaled { inner: Box<MetricSpec>, scale: f64 },
}

/// A validated Finsler metric specification.
#[derive(Debug, Clone)]
pub struct MetricSpec {
    kind: MetricKind,
    dim: usize,
}

/// Lattice of sample points covering the box `[lo, hi]`, `per_axis` points
/// per coordinate; used for constructor-time validity sampling.
pub fn lattice_samples(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    assert_eq!(lo.len(), hi.len());
    assert!(per_axis >= 2);
    let m = lo.len();
    let total = per_axis.pow(m as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut x = vec![0.0; m];
        let mut rest = flat;
        for k in 0..m {
            let idx = rest % per_axis;
            rest /= per_axis;
            let t = idx as f64 / (per_axis - 1) as f64;
            x[k] = lo[k] + t * (hi[k] - lo[k]);
        }
        out.push(x);
    }
    out
}

/// Default validation samples: a 5-per-axis lattice on `[-1, 1]^dim`.
pub fn default_samples(dim: usize) -> Vec<Vec<f64>> {
    lattice_samples(&vec![-1.0; dim], &vec![1.0; dim], 5)
}

impl MetricSpec {
    pub fn euclidean(dim: usize) -> MetricSpec {
        MetricSpec { kind: MetricKind::Euclidean, dim }
    }

    /// Riemannian metric from a matrix field, SPD-checked on `samples`.
    pub fn riemannian(a: MatrixField, samples: &[Vec<f64>]) -> Result<MetricSpec> {
        let dim = a.dim();
        let spec = MetricSpec { kind: MetricKind::Riemannian { a }, dim };
        spec.check_on_samples(samples)?;
        Ok(spec)
    }

    /// Randers metric; strong convexity `|b|_{A^{-1}} < 1` is checked
    /// eagerly at every sample point.
    pub fn randers(a: MatrixField, b: CovectorField, samples: &[Vec<f64>]) -> Result<MetricSpec> {
        let dim = a.dim();
        if b.dim() != dim {
            return Err(Error::invalid(format!(
                "drift dimension {} does not match matrix dimension {dim}",
                b.dim()
            )));
        }
        let spec = MetricSpec { kind: MetricKind::Randers { a, b }, dim };
        spec.check_on_samples(samples)?;
        Ok(spec)
    }

    pub fn locally_minkowski(norm: MinkowskiNorm) -> Result<MetricSpec> {
        let dim = norm.dim();
        let spec = MetricSpec { kind: MetricKind::LocallyMinkowski { norm }, dim };
        spec.check_valid_at(&vec![0.0; dim])?;
        Ok(spec)
    }

    /// Pullback of `inner` along `diffeo`; the diffeomorphism is validated
    /// on the sample set first.
    pub fn pullback(inner: MetricSpec, diffeo: DiffeoSpec, samples: &[Vec<f64>]) -> Result<MetricSpec> {
        if diffeo.dim() != inner.dim {
            return Err(Error::invalid(format!(
                "diffeo dimension {} does not match metric dimension {}",
                diffeo.dim(),
                inner.dim
            )));
        }
        diffeo.validate(samples)?;
        let dim = inner.dim;
        Ok(MetricSpec {
            kind: MetricKind::Pullback { inner: Box::new(inner), diffeo },
            dim,
        })
    }

    /// The zoomed metric `F_s(x, v) = F(s x, v)` used by the small-ball
    /// rescaling experiment. Validity is inherited from `inner`.
    pub fn x_scaled(inner: MetricSpec, scale: f64) -> MetricSpec {
        let dim = inner.dim;
        MetricSpec {
            kind: MetricKind::XScaled { inner: Box::new(inner), scale },
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    /// True when `F(x, -v) = F(x, v)` holds structurally (no drift term).
    pub fn is_reversible(&self) -> bool {
        match &self.kind {
            MetricKind::Euclidean | MetricKind::Riemannian { .. } => true,
            MetricKind::Randers { .. } => false,
            MetricKind::LocallyMinkowski { norm } => {
                matches!(norm, MinkowskiNorm::Quadratic(_))
            }
            MetricKind::Pullback { inner, .. } | MetricKind::XScaled { inner, .. } => {
                inner.is_reversible()
            }
        }
    }

    /// The energy `F^2(x, v)`. Smooth in both arguments away from `v = 0`;
    /// for drift-free families it is smooth everywhere. No validity
    /// checking happens here: this is the hot kernel everything
    /// differentiates through.
    pub fn f2<S: Scalar>(&self, x: &[S], v: &[S]) -> S {
        match &self.kind {
            MetricKind::Euclidean => linalg::dot(v, v),
            MetricKind::Riemannian { a } => {
                let mat = a.eval(x);
                linalg::dot(v, &linalg::mat_vec(&mat, v))
            }
            MetricKind::Randers { a, b } => {
                let mat = a.eval(x);
                let alpha = linalg::dot(v, &linalg::mat_vec(&mat, v)).sqrt();
                let beta = linalg::dot(&b.eval(x), v);
                let f = alpha + beta;
                f * f
            }
            MetricKind::LocallyMinkowski { norm } => match norm {
                MinkowskiNorm::Quadratic(a) => {
                    let flat = constant_matrix::<S>(a);
                    linalg::dot(v, &linalg::mat_vec(&flat, v))
                }
                MinkowskiNorm::Randers { a, b } => {
                    let flat = constant_matrix::<S>(a);
                    let alpha = linalg::dot(v, &linalg::mat_vec(&flat, v)).sqrt();
                    let beta = linalg::dot(&lift_slice::<S>(b), v);
                    let f = alpha + beta;
                    f * f
                }
            },
            MetricKind::Pullback { inner, diffeo } => {
                let y = diffeo.forward(x);
                let jac = diffeo.jacobian(x);
                let w = linalg::mat_vec(&jac, v);
                inner.f2(&y, &w)
            }
            MetricKind::XScaled { inner, scale } => {
                let sx: Vec<S> = x.iter().map(|&c| c.scale(*scale)).collect();
                inner.f2(&sx, v)
            }
        }
    }

    /// `F(x, v)`, the norm itself.
    pub fn norm<S: Scalar>(&self, x: &[S], v: &[S]) -> S {
        self.f2(x, v).sqrt()
    }

    /// Validated scalar evaluation of `F`. Checks argument dimensions and
    /// pointwise metric validity (SPD matrix part, Randers drift norm).
    pub fn eval_f(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.check_args(x, v)?;
        self.check_valid_at(x)?;
        if v.iter().all(|&c| c == 0.0) {
            return Ok(0.0);
        }
        Ok(self.norm(x, v))
    }

    pub(crate) fn check_args(&self, x: &[f64], v: &[f64]) -> Result<()> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::invalid(format!(
                "expected dimension {}, got point {} / vector {}",
                self.dim,
                x.len(),
                v.len()
            )));
        }
        Ok(())
    }

    /// Pointwise validity: the matrix part must be SPD and a Randers drift
    /// must satisfy `|b|_{A^{-1}} < 1` at `x`.
    pub fn check_valid_at(&self, x: &[f64]) -> Result<()> {
        match &self.kind {
            MetricKind::Euclidean => Ok(()),
            MetricKind::Riemannian { a } => check_spd(&a.eval(x), self.dim, x),
            MetricKind::Randers { a, b } => {
                let mat = a.eval(x);
                check_spd(&mat, self.dim, x)?;
                check_drift(&mat, &b.eval(x), x)
            }
            MetricKind::LocallyMinkowski { norm } => match norm {
                MinkowskiNorm::Quadratic(a) => check_spd(&flatten(a), self.dim, x),
                MinkowskiNorm::Randers { a, b } => {
                    let flat = flatten(a);
                    check_spd(&flat, self.dim, x)?;
                    check_drift(&flat, b, x)
                }
            },
            MetricKind::Pullback { inner, diffeo } => {
                let y = diffeo.forward(x);
                let jac = diffeo.jacobian(x);
                if linalg::det(&jac, self.dim).abs() < 1e-10 {
                    return Err(Error::PullbackDegenerate(format!(
                        "Jacobian singular at {x:?}"
                    )));
                }
                inner.check_valid_at(&y)
            }
            MetricKind::XScaled { inner, scale } => {
                let sx: Vec<f64> = x.iter().map(|c| c * scale).collect();
                inner.check_valid_at(&sx)
            }
        }
    }

    fn check_on_samples(&self, samples: &[Vec<f64>]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::invalid("empty sample set for metric validation"));
        }
        for x in samples {
            if x.len() != self.dim {
                return Err(Error::invalid(format!(
                    "sample has dimension {}, metric has dimension {}",
                    x.len(),
                    self.dim
                )));
            }
            self.check_valid_at(x)?;
        }
        Ok(())
    }

    /// Fundamental tensor entries `g_ij(x, v)`, row-major, by two nested
    /// fibre derivatives of the energy. Assumes `v != 0`.
    pub fn g_matrix<S: Scalar>(&self, x: &[S], v: &[S]) -> Vec<S> {
        let m = self.dim;
        let x2: Vec<Dual<Dual<S>>> = x
            .iter()
            .map(|&c| Dual::constant(Dual::constant(c)))
            .collect();
        let mut g = vec![S::zero(); m * m];
        for i in 0..m {
            for j in 0..=i {
                let mut v2: Vec<Dual<Dual<S>>> = v
                    .iter()
                    .map(|&c| Dual::constant(Dual::constant(c)))
                    .collect();
                v2[i].du.re = S::one();
                v2[j].re.du = S::one();
                let val = self.f2(&x2, &v2).du.du.scale(0.5);
                g[i * m + j] = val;
                g[j * m + i] = val;
            }
        }
        g
    }

    /// If the energy is exactly quadratic in `v`, `F^2 = v^T Q(x) v`,
    /// returns `Q(x)`; `None` for genuinely non-Riemannian families.
    pub fn quadratic_part<S: Scalar>(&self, x: &[S]) -> Option<Vec<S>> {
        match &self.kind {
            MetricKind::Euclidean => {
                let m = self.dim;
                let mut q = vec![S::zero(); m * m];
                for i in 0..m {
                    q[i * m + i] = S::one();
                }
                Some(q)
            }
            MetricKind::Riemannian { a } => Some(a.eval(x)),
            MetricKind::Randers { .. } => None,
            MetricKind::LocallyMinkowski { norm } => match norm {
                MinkowskiNorm::Quadratic(a) => Some(constant_matrix::<S>(a)),
                MinkowskiNorm::Randers { .. } => None,
            },
            MetricKind::Pullback { inner, diffeo } => {
                let y = diffeo.forward(x);
                let q = inner.quadratic_part(&y)?;
                let jac = diffeo.jacobian(x);
                let m = self.dim;
                // J^T Q J
                let mut out = vec![S::zero(); m * m];
                for i in 0..m {
                    for j in 0..m {
                        let mut acc = S::zero();
                        for p in 0..m {
                            for q_ in 0..m {
                                acc += jac[p * m + i] * q[p * m + q_] * jac[q_ * m + j];
                            }
                        }
                        out[i * m + j] = acc;
                    }
                }
                Some(out)
            }
            MetricKind::XScaled { inner, scale } => {
                let sx: Vec<S> = x.iter().map(|&c| c.scale(*scale)).collect();
                inner.quadratic_part(&sx)
            }
        }
    }
}

fn flatten(a: &DMatrix<f64>) -> Vec<f64> {
    let m = a.nrows();
    (0..m * m).map(|k| a[(k / m, k % m)]).collect()
}

fn constant_matrix<S: Scalar>(a: &DMatrix<f64>) -> Vec<S> {
    let m = a.nrows();
    (0..m * m).map(|k| S::lift(a[(k / m, k % m)])).collect()
}

fn check_spd(mat: &[f64], m: usize, x: &[f64]) -> Result<()> {
    if mat.iter().any(|e| !e.is_finite()) {
        return Err(Error::MetricInvalid(format!(
            "matrix part has non-finite entries at {x:?}"
        )));
    }
    for i in 0..m {
        for j in 0..i {
            if (mat[i * m + j] - mat[j * m + i]).abs() > 1e-12 {
                return Err(Error::MetricInvalid(format!(
                    "matrix part not symmetric at {x:?}"
                )));
            }
        }
    }
    let eig = linalg::min_eigenvalue(&linalg::to_dmatrix(mat, m));
    if eig <= 0.0 {
        return Err(Error::MetricInvalid(format!(
            "matrix part has minimum eigenvalue {eig:.3e} at {x:?}"
        )));
    }
    Ok(())
}

fn check_drift(mat: &[f64], b: &[f64], x: &[f64]) -> Result<()> {
    let z = linalg::solve(mat, b)
        .map_err(|_| Error::MetricInvalid(format!("singular matrix part at {x:?}")))?;
    let norm2 = linalg::dot(b, &z);
    if norm2 >= 1.0 - 1e-12 {
        return Err(Error::MetricInvalid(format!(
            "Randers drift has |b|_A = {:.6} >= 1 at {x:?}",
            norm2.sqrt()
        )));
    }
    Ok(())
}

/// Fundamental tensor at a point of the slit tangent bundle, with its
/// spectral floor for quick ellipticity inspection.
#[derive(Debug, Clone)]
pub struct FundamentalTensor {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub g: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

/// Computes `g_ij(x, v) = 1/2 d^2 F^2 / dv^i dv^j` and verifies it is
/// positive definite. Errors on `v = 0`, where the tensor is undefined.
pub fn fundamental_tensor(spec: &MetricSpec, x: &[f64], v: &[f64]) -> Result<FundamentalTensor> {
    spec.check_args(x, v)?;
    spec.check_valid_at(x)?;
    if linalg::norm(v) == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let g = spec.g_matrix(x, v);
    let mat = linalg::to_dmatrix(&g, spec.dim());
    let min_eigenvalue = linalg::min_eigenvalue(&mat);
    if min_eigenvalue <= 0.0 {
        return Err(Error::MetricInvalid(format!(
            "fundamental tensor not positive definite at x = {x:?}, v = {v:?} \
             (min eigenvalue {min_eigenvalue:.3e})"
        )));
    }
    Ok(FundamentalTensor { x: x.to_vec(), v: v.to_vec(), g: mat, min_eigenvalue })
}

/// Builds the pullback metric `(phi^* F)(x, v) = F(phi(x), d phi(x) v)`.
pub fn pullback_metric(
    inner: MetricSpec,
    diffeo: DiffeoSpec,
    samples: &[Vec<f64>],
) -> Result<MetricSpec> {
    MetricSpec::pullback(inner, diffeo, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randers_affine() -> MetricSpec {
        // b(x) = (0.3 + 0.1 x^2, 0): x-dependent drift, |b| <= 0.4 on the box.
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Affine {
            constant: vec![0.3, 0.0],
            linear: DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]),
        };
        MetricSpec::randers(a, b, &default_samples(2)).unwrap()
    }

    #[test]
    fn euclidean_norm_is_pythagorean() {
        let spec = MetricSpec::euclidean(2);
        assert_eq!(spec.eval_f(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn riemannian_norm_uses_matrix() {
        let a = MatrixField::Constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        let f = spec.eval_f(&[0.2, -0.3], &[1.0, 1.0]).unwrap();
        assert!((f - 5.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn randers_norm_is_asymmetric() {
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Constant(vec![0.5, 0.0]);
        let spec = MetricSpec::randers(a, b, &default_samples(2)).unwrap();
        assert!((spec.eval_f(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!((spec.eval_f(&[0.0, 0.0], &[-1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn randers_with_unit_drift_is_rejected() {
        let a = MatrixField::Constant(DMatrix::identity(2, 2));
        let b = CovectorField::Constant(vec![1.0, 0.0]);
        assert!(matches!(
            MetricSpec::randers(a, b, &default_samples(2)),
            Err(Error::MetricInvalid(_))
        ));
    }

    #[test]
    fn hyperbolic_space_form_fails_outside_its_ball() {
        // curvature -4 blows up on |x| = 1; the default lattice hits
        // (1, 0) exactly, so the sampled validation must reject it.
        let a = MatrixField::SpaceForm { dim: 2, curvature: -4.0 };
        assert!(MetricSpec::riemannian(a, &default_samples(2)).is_err());
        // Restricted to a safe box it is a perfectly good metric.
        let a = MatrixField::SpaceForm { dim: 2, curvature: -4.0 };
        let safe = lattice_samples(&[-0.4, -0.4], &[0.4, 0.4], 5);
        assert!(MetricSpec::riemannian(a, &safe).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = MetricSpec::euclidean(2);
        assert!(matches!(
            spec.eval_f(&[0.0, 0.0, 0.0], &[1.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fundamental_tensor_of_riemannian_is_the_matrix() {
        let a = MatrixField::Constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        let ft = fundamental_tensor(&spec, &[0.1, 0.2], &[0.3, -0.7]).unwrap();
        assert!((ft.g[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((ft.g[(0, 1)] - 0.5).abs() < 1e-12);
        assert!((ft.g[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(ft.min_eigenvalue > 0.0);
    }

    #[test]
    fn fundamental_tensor_rejects_zero_vector() {
        let spec = MetricSpec::euclidean(2);
        assert!(matches!(
            fundamental_tensor(&spec, &[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn fundamental_tensor_matches_finite_differences() {
        // Independent check of the dual-number Hessian on a genuinely
        // non-quadratic, x-dependent family.
        let spec = randers_affine();
        let x = [0.3, -0.4];
        let v = [0.8, 0.5];
        let g = spec.g_matrix(&x, &v);
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut fd = 0.0;
                for (si, wi) in [(1.0, 1.0), (-1.0, -1.0)] {
                    for (sj, wj) in [(1.0, 1.0), (-1.0, -1.0)] {
                        let mut vp = v;
                        vp[i] += si * h;
                        vp[j] += sj * h;
                        fd += wi * wj * spec.f2(&x, &vp);
                    }
                }
                let fd = 0.5 * fd / (4.0 * h * h);
                assert!(
                    (g[i * 2 + j] - fd).abs() < 1e-5,
                    "entry ({i},{j}): dual {} vs fd {}",
                    g[i * 2 + j],
                    fd
                );
            }
        }
    }

    #[test]
    fn euler_relation_g_v_v_is_f2() {
        // 2-homogeneity forces g_v(v, v) = F^2(v).
        let spec = randers_affine();
        let x = [0.2, 0.4];
        let v = [1.3, -0.6];
        let g = spec.g_matrix(&x, &v);
        let gvv = linalg::dot(&v, &linalg::mat_vec(&g, &v));
        let f2 = spec.f2(&x, &v);
        assert!((gvv - f2).abs() < 1e-12 * f2);
    }

    #[test]
    fn fundamental_tensor_is_zero_homogeneous() {
        let spec = randers_affine();
        let x = [0.1, 0.7];
        let v = [0.4, 1.1];
        let v3: Vec<f64> = v.iter().map(|c| c * 3.7).collect();
        let g1 = spec.g_matrix(&x, &v);
        let g2 = spec.g_matrix(&x, &v3);
        for k in 0..4 {
            assert!((g1[k] - g2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn pullback_tensor_congruence() {
        // g_pull(x, v) = J^T g(phi x, J v) J, exactly as matrices.
        let inner = randers_affine();
        let diffeo = DiffeoSpec::QuadraticShear { dim: 2, i: 0, j: 1, c: 0.2 };
        let spec = MetricSpec::pullback(inner.clone(), diffeo.clone(), &default_samples(2)).unwrap();
        let x = [0.3, 0.5];
        let v = [0.9, -0.2];
        let g_pull = spec.g_matrix(&x, &v);
        let y = diffeo.forward(&x);
        let jac = diffeo.jacobian(&x);
        let w = linalg::mat_vec(&jac, &v);
        let g_inner = inner.g_matrix(&y, &w);
        for i in 0..2 {
            for j in 0..2 {
                let mut expect = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        expect += jac[p * 2 + i] * g_inner[p * 2 + q] * jac[q * 2 + j];
                    }
                }
                assert!((g_pull[i * 2 + j] - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn quadratic_part_tracks_pullback_and_scaling() {
        let a = MatrixField::DiagonalAffineSq {
            terms: vec![(1.0, 0.0, 0), (1.0, 0.1, 0)],
        };
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        let scaled = MetricSpec::x_scaled(spec, 0.5);
        let q = scaled.quadratic_part(&[1.0, 0.3]).unwrap();
        // At x = (1, 0.3) the zoomed field sees (0.5, 0.15): entry (1 + 0.05)^2.
        assert!((q[3] - 1.05_f64.powi(2)).abs() < 1e-14);
    }

    #[test]
    fn space_form_matches_stereographic_sphere() {
        let a = MatrixField::SpaceForm { dim: 2, curvature: 1.0 };
        let spec = MetricSpec::riemannian(a, &default_samples(2)).unwrap();
        // At the origin the round metric is Euclidean.
        assert!((spec.eval_f(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        // At |x|^2 = 4 the conformal factor is 1/4.
        let f = spec.eval_f(&[2.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn diffeo_round_trip_and_jacobian() {
        let d = DiffeoSpec::QuadraticShear { dim: 2, i: 1, j: 0, c: 0.3 };
        d.validate(&default_samples(2)).unwrap();
        let x = [0.7, -0.2];
        let jac = d.jacobian(&x);
        assert_eq!(jac, vec![1.0, 0.0, 2.0 * 0.3 * 0.7, 1.0]);
        let y = d.forward(&x);
        let back = d.inverse(&y).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-15);
        assert!((back[1] - x[1]).abs() < 1e-15);
    }

    #[test]
    fn reversibility_flag() {
        assert!(MetricSpec::euclidean(3).is_reversible());
        assert!(!randers_affine().is_reversible());
    }
}
