//! Calculus of the nonlinear Laplacian: volume forms, the coefficient map
//! `A(x, w) = sigma(x) * l^{-1}(x, w)`, gradients, the divergence-form
//! Laplacian, Dirichlet energy, and a sampling audit of the structure
//! conditions (growth, uniform ellipticity on rays, monotonicity).
//!
//! The operator is `Delta f = (1/sigma) div( A(x, df) )`. Away from
//! critical points of `f` it is quasi-linear elliptic; at `df = 0` the
//! coefficients are undefined and the divergence is estimated by symmetric
//! differencing, flagged as such.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::berwald::AveragedMetric;
use crate::dual::{consts, seed, Scalar};
use crate::error::{Error, Result};
use crate::fields::PolyField;
use crate::grid::{Grid, GridField, QuadRule};
use crate::legendre::{f_star_generic, legendre_inverse_generic};
use crate::linalg;
use crate::metric::MetricSpec;

/// Step for the symmetric-difference fallback of the Laplacian at
/// critical points. The composed flux is Lipschitz but not differentiable
/// there, so the step is kept well above rounding noise.
const DEGENERATE_FD_STEP: f64 = 1e-4;

/// Pairs closer than this are skipped in the monotonicity audit: the
/// difference quotient is dominated by Newton solver noise below it.
const MONOTONE_PAIR_FLOOR: f64 = 1e-9;

/// Density of the volume form `mu = sigma dx^1 ... dx^m`.
#[derive(Debug, Clone)]
pub enum VolumeForm {
    /// `sigma = 1`.
    Lebesgue,
    /// `sigma = sqrt(det A(x))` for a metric whose `F^2` is a quadratic
    /// form `v' A(x) v` (Riemannian, or a pullback of one).
    SqrtDetMetric(MetricSpec),
    /// `sigma = sqrt(det h(x))` for the indicatrix-averaged metric.
    SqrtDetAveraged(AveragedMetric),
}

impl VolumeForm {
    pub fn sqrt_det_metric(spec: MetricSpec) -> Result<VolumeForm> {
        let origin = vec![0.0; spec.dim()];
        if spec.quadratic_part(&origin).is_none() {
            return Err(Error::invalid(
                "sqrt-det volume form needs a metric with quadratic F^2; \
                 use the averaged-metric volume form for genuinely Finslerian norms",
            ));
        }
        Ok(VolumeForm::SqrtDetMetric(spec))
    }

    pub fn sqrt_det_averaged(avg: AveragedMetric) -> VolumeForm {
        VolumeForm::SqrtDetAveraged(avg)
    }

    /// `sigma(x) > 0`, at any scalar type.
    pub fn density<S: Scalar>(&self, x: &[S]) -> Result<S> {
        let value = match self {
            VolumeForm::Lebesgue => S::one(),
            VolumeForm::SqrtDetMetric(spec) => {
                let a = spec
                    .quadratic_part(x)
                    .ok_or_else(|| Error::invalid("metric lost its quadratic part"))?;
                linalg::det(&a, spec.dim()).sqrt()
            }
            VolumeForm::SqrtDetAveraged(avg) => {
                let h = avg.eval_generic(x)?;
                linalg::det(&h, avg.spec().dim()).sqrt()
            }
        };
        if !value.re().is_finite() || value.re() <= 0.0 {
            return Err(Error::MetricInvalid(format!(
                "volume density is not positive ({})",
                value.re()
            )));
        }
        Ok(value)
    }

    /// Exact differential of the density, by one dual pass per axis.
    pub fn density_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..x.len())
            .map(|i| Ok(self.density(&seed(x, i))?.du))
            .collect()
    }
}

/// A scalar function the calculus operations accept: either closed-form
/// polynomial data with exact derivatives, or nodal values on a grid with
/// stencil derivatives.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Polynomial(PolyField),
    Grid(GridField),
}

impl ScalarField {
    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Polynomial(p) => p.dim(),
            ScalarField::Grid(_) => 2,
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            ScalarField::Polynomial(p) => Ok(p.eval(x)),
            ScalarField::Grid(f) => {
                let node = f
                    .grid
                    .locate_node(x)
                    .ok_or_else(|| Error::invalid("grid fields are defined at grid nodes"))?;
                Ok(f.values[node])
            }
        }
    }

    /// `df(x)` where computable: exact for polynomials, centered stencil
    /// for grid fields (which therefore need a clean neighborhood).
    pub fn differential(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScalarField::Polynomial(p) => Ok(p.grad(x)),
            ScalarField::Grid(f) => {
                let node = f
                    .grid
                    .locate_node(x)
                    .ok_or_else(|| Error::invalid("grid fields are defined at grid nodes"))?;
                let g = f.gradient_at_node(node).ok_or_else(|| {
                    Error::invalid("differential needs a full centered stencil at the node")
                })?;
                Ok(g.to_vec())
            }
        }
    }
}

/// The coefficient map of the Laplacian in local coordinates,
/// `A^i(x, w) = sigma(x) * (1/2) dF*^2/dw_i (x, w)`, which equals
/// `sigma(x) * l^{-1}(x, w)` by convex duality.
#[derive(Debug, Clone)]
pub struct AMap {
    spec: MetricSpec,
    vol: VolumeForm,
}

impl AMap {
    pub fn new(spec: MetricSpec, vol: VolumeForm) -> AMap {
        AMap { spec, vol }
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn volume(&self) -> &VolumeForm {
        &self.vol
    }

    /// `A(x, w)`; zero at `w = 0` by continuous extension.
    pub fn eval_generic<S: Scalar>(&self, x: &[S], omega: &[S]) -> Result<Vec<S>> {
        let sigma = self.vol.density(x)?;
        let (v, _) = legendre_inverse_generic(&self.spec, x, omega)?;
        Ok(v.into_iter().map(|c| c * sigma).collect())
    }

    pub fn eval(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        self.spec.check_valid_at(x)?;
        self.eval_generic(x, omega)
    }

    /// `dA/dw` at `(x, w)`, row-major `[i][j] = dA^i/dw_j`. Equals
    /// `sigma(x) g*(x, w)`, so it is symmetric positive definite for
    /// `w != 0`.
    pub fn d_omega(&self, x: &[f64], omega: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.spec.dim();
        let mut out = vec![0.0; m * m];
        for j in 0..m {
            let a = self.eval_generic(&consts(x), &seed(omega, j))?;
            for i in 0..m {
                out[i * m + j] = a[i].du;
            }
        }
        Ok(linalg::to_dmatrix(&out, m))
    }

    /// `dA/dx` at `(x, w)`, row-major `[i][k] = dA^i/dx^k`.
    pub fn d_x(&self, x: &[f64], omega: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.spec.dim();
        let mut out = vec![0.0; m * m];
        for k in 0..m {
            let a = self.eval_generic(&seed(x, k), &consts(omega))?;
            for i in 0..m {
                out[i * m + k] = a[i].du;
            }
        }
        Ok(linalg::to_dmatrix(&out, m))
    }
}

/// The Finsler gradient `l^{-1}(x, df)`; zero where `df = 0`.
pub fn gradient(spec: &MetricSpec, f: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::invalid("gradient point dimension mismatch"));
    }
    spec.check_valid_at(x)?;
    let df = f.differential(x)?;
    let (v, _) = legendre_inverse_generic(spec, x, &df)?;
    Ok(v)
}

/// A Laplacian value together with the flag marking the symmetric-FD
/// fallback taken at critical points, where the quasi-linear coefficients
/// are undefined.
#[derive(Debug, Clone, Copy)]
pub struct LaplacianValue {
    pub value: f64,
    pub degenerate_fallback: bool,
}

/// `Delta f(x) = (1/sigma) d_i A^i(x, df(x))` for closed-form fields, or
/// the conservative face-flux divergence for grid fields.
pub fn laplacian(
    spec: &MetricSpec,
    vol: &VolumeForm,
    f: &ScalarField,
    x: &[f64],
) -> Result<LaplacianValue> {
    if x.len() != spec.dim() {
        return Err(Error::invalid("laplacian point dimension mismatch"));
    }
    spec.check_valid_at(x)?;
    match f {
        ScalarField::Polynomial(p) => laplacian_closed_form(spec, vol, p, x),
        ScalarField::Grid(gf) => laplacian_grid(spec, vol, gf, x),
    }
}

fn laplacian_closed_form(
    spec: &MetricSpec,
    vol: &VolumeForm,
    p: &PolyField,
    x: &[f64],
) -> Result<LaplacianValue> {
    let m = spec.dim();
    if p.dim() != m {
        return Err(Error::invalid("field dimension mismatch"));
    }
    let amap = AMap::new(spec.clone(), vol.clone());
    let df = p.grad(x);
    let sigma = vol.density(x)?;
    if linalg::norm(&df) == 0.0 {
        // The composed flux x -> A(x, df(x)) is continuous but its
        // derivative is undefined here; symmetric differencing still
        // converges to the divergence when the flux is C^1 around x.
        let h = DEGENERATE_FD_STEP;
        let mut div = 0.0;
        for i in 0..m {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let ap = amap.eval_generic(&xp, &p.grad(&xp))?;
            let am = amap.eval_generic(&xm, &p.grad(&xm))?;
            div += (ap[i] - am[i]) / (2.0 * h);
        }
        return Ok(LaplacianValue { value: div / sigma, degenerate_fallback: true });
    }
    let mut div = 0.0;
    for i in 0..m {
        let xd = seed(x, i);
        let dfd = p.grad(&xd);
        let a = amap.eval_generic(&xd, &dfd)?;
        div += a[i].du;
    }
    Ok(LaplacianValue { value: div / sigma, degenerate_fallback: false })
}

/// Conservative face-flux divergence on the lattice: for each axis, the
/// flux `A(x_face, df_face)` is evaluated at the two face midpoints with
/// the normal derivative one-sided across the face (second order at the
/// midpoint) and the tangential derivative averaged from the centered
/// stencils of the face's end nodes.
fn laplacian_grid(
    spec: &MetricSpec,
    vol: &VolumeForm,
    gf: &GridField,
    x: &[f64],
) -> Result<LaplacianValue> {
    let grid = &gf.grid;
    let node = grid
        .locate_node(x)
        .ok_or_else(|| Error::invalid("grid Laplacian is defined at grid nodes"))?;
    if !grid.clean_stencil(node, 1) {
        return Err(Error::invalid(
            "grid Laplacian needs the full 3x3 neighborhood of the node",
        ));
    }
    let amap = AMap::new(spec.clone(), vol.clone());
    let (i0, j0) = grid.lattice_of(node);
    let h = grid.h;
    let value = |di: i64, dj: i64| -> f64 { gf.values[grid.node_at(i0 + di, j0 + dj).unwrap()] };
    let pos = grid.nodes[node];

    // Flux through the face on `axis` in direction `side` (+1 or -1).
    let face_flux = |axis: usize, side: i64| -> Result<f64> {
        let (di, dj) = if axis == 0 { (side, 0) } else { (0, side) };
        let near = value(0, 0);
        let far = value(di, dj);
        let normal = (far - near) * side as f64 / h[axis];
        let t_axis = 1 - axis;
        let centered = |bi: i64, bj: i64| -> f64 {
            let (ti, tj) = if t_axis == 0 { (1, 0) } else { (0, 1) };
            (value(bi + ti, bj + tj) - value(bi - ti, bj - tj)) / (2.0 * h[t_axis])
        };
        let tangential = 0.5 * (centered(0, 0) + centered(di, dj));
        let mut omega = [0.0; 2];
        omega[axis] = normal;
        omega[t_axis] = tangential;
        let mut xf = pos;
        xf[axis] += 0.5 * side as f64 * h[axis];
        let a = amap.eval(&xf, &omega)?;
        Ok(a[axis])
    };

    let mut div = 0.0;
    for axis in 0..2 {
        let plus = face_flux(axis, 1)?;
        let minus = face_flux(axis, -1)?;
        div += (plus - minus) / h[axis];
    }
    let sigma = vol.density(&pos[..])?;
    Ok(LaplacianValue { value: div / sigma, degenerate_fallback: false })
}

/// `E(f) = 1/2 integral F*^2(x, df) sigma dx` over the grid's cells with
/// 3x3 Gauss quadrature per cell.
pub fn dirichlet_energy(
    spec: &MetricSpec,
    vol: &VolumeForm,
    f: &ScalarField,
    grid: &Grid,
) -> Result<f64> {
    energy_with_rule(spec, vol, f, grid, EnergyRule::Gauss3)
}

/// Richardson-style refinement check for the energy quadrature: the same
/// integrand on a 6x6 tensor Gauss rule per cell. `delta` bounds the
/// 3x3-rule quadrature error empirically.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRefinement {
    pub coarse: f64,
    pub refined: f64,
    pub delta: f64,
}

pub fn dirichlet_energy_refined(
    spec: &MetricSpec,
    vol: &VolumeForm,
    f: &ScalarField,
    grid: &Grid,
) -> Result<EnergyRefinement> {
    let coarse = energy_with_rule(spec, vol, f, grid, EnergyRule::Gauss3)?;
    let refined = energy_with_rule(spec, vol, f, grid, EnergyRule::Gauss6)?;
    Ok(EnergyRefinement { coarse, refined, delta: (coarse - refined).abs() })
}

enum EnergyRule {
    Gauss3,
    Gauss6,
}

fn energy_with_rule(
    spec: &MetricSpec,
    vol: &VolumeForm,
    f: &ScalarField,
    grid: &Grid,
    rule: EnergyRule,
) -> Result<f64> {
    if spec.dim() != 2 {
        return Err(Error::invalid("energy quadrature runs on 2-D grids"));
    }
    if let ScalarField::Grid(gf) = f {
        if gf.grid.node_count() != grid.node_count() {
            return Err(Error::invalid("grid field does not live on the given grid"));
        }
    }
    let mut total = 0.0;
    for cell in 0..grid.cells.len() {
        let pts = match rule {
            EnergyRule::Gauss3 => grid.cell_quad(cell, QuadRule::Gauss3),
            EnergyRule::Gauss6 => grid.cell_quad_tensor(cell, 6),
        };
        let corners = grid.cells[cell];
        for qp in pts {
            let df = match f {
                ScalarField::Polynomial(p) => p.grad(&qp.x),
                ScalarField::Grid(gf) => {
                    let mut d = vec![0.0; 2];
                    for (a, &node) in corners.iter().enumerate() {
                        d[0] += qp.grad[a][0] * gf.values[node];
                        d[1] += qp.grad[a][1] * gf.values[node];
                    }
                    d
                }
            };
            let fs2 = f_star_generic(spec, &qp.x, &df)?;
            let sigma = vol.density(&qp.x[..])?;
            total += 0.5 * fs2 * fs2 * sigma * qp.weight;
        }
    }
    Ok(total)
}

/// One witnessed failure of a structure condition.
#[derive(Debug, Clone)]
pub struct StructureViolation {
    pub condition: &'static str,
    pub x: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega2: Option<Vec<f64>>,
    pub value: f64,
}

/// Empirical structure constants of the coefficient map over a sample:
/// extremal statistics, the smallest constant consistent with them, and
/// any outright violations (non-positive ellipticity or monotonicity).
#[derive(Debug, Clone)]
pub struct StructureReport {
    /// `max` of the five normalized constants below; `C = 1` exactly for
    /// the euclidean metric with Lebesgue volume.
    pub constant: f64,
    /// `sup |A(x,w)| / |w|`.
    pub growth_value: f64,
    /// `sup |dA/dx(x,w)| / |w|` (spectral norm).
    pub growth_x: f64,
    /// `sup |dA/dw(x,w)|` (spectral norm; scale-free by 0-homogeneity).
    pub growth_omega: f64,
    /// `sup 1 / min-eig dA/dw`: uniform ellipticity constant.
    pub ellipticity: f64,
    /// `sup |w2-w1|^2 / (A(x,w2)-A(x,w1))(w2-w1)`, antipodal rays included.
    pub monotonicity: f64,
    pub samples: usize,
    pub violations: Vec<StructureViolation>,
}

/// Samples the structure conditions of `A` on `samples` points of the box
/// `[lo, hi]^m` with covector magnitudes log-uniform in `[1e-2, 1e2]`.
/// Every fourth pair is antipodal (`w2 = -lambda w1`), the case the
/// monotonicity condition covers only by a continuity argument.
pub fn verify_structure_conditions(
    spec: &MetricSpec,
    vol: &VolumeForm,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed_value: u64,
) -> Result<StructureReport> {
    let m = spec.dim();
    if lo.len() != m || hi.len() != m || lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::invalid("structure-condition box is empty or mismatched"));
    }
    if samples == 0 {
        return Err(Error::invalid("structure-condition audit needs samples >= 1"));
    }
    let amap = AMap::new(spec.clone(), vol.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let mut report = StructureReport {
        constant: 0.0,
        growth_value: 0.0,
        growth_x: 0.0,
        growth_omega: 0.0,
        ellipticity: 0.0,
        monotonicity: 0.0,
        samples,
        violations: Vec::new(),
    };
    let mut min_eig = f64::INFINITY;
    let mut min_mono = f64::INFINITY;

    for k in 0..samples {
        let x: Vec<f64> = (0..m).map(|i| rng.gen_range(lo[i]..hi[i])).collect();
        let omega = random_covector(&mut rng, m);
        let omega2 = if k % 4 == 0 {
            let lambda: f64 = 2f64.powf(rng.gen_range(-1.0..1.0));
            omega.iter().map(|c| -lambda * c).collect::<Vec<f64>>()
        } else {
            random_covector(&mut rng, m)
        };

        let a1 = amap.eval(&x, &omega)?;
        let wnorm = linalg::norm(&omega);
        report.growth_value = report.growth_value.max(linalg::norm(&a1) / wnorm);

        let dx = amap.d_x(&x, &omega)?;
        report.growth_x = report.growth_x.max(linalg::spectral_norm(&dx) / wnorm);

        let dw = amap.d_omega(&x, &omega)?;
        report.growth_omega = report.growth_omega.max(linalg::spectral_norm(&dw));
        let sym = (&dw + dw.transpose()) * 0.5;
        let eig = linalg::min_eigenvalue(&sym);
        if eig <= 0.0 {
            report.violations.push(StructureViolation {
                condition: "ellipticity",
                x: x.clone(),
                omega: omega.clone(),
                omega2: None,
                value: eig,
            });
        }
        min_eig = min_eig.min(eig);

        let diff: Vec<f64> = omega2.iter().zip(&omega).map(|(b, a)| b - a).collect();
        let dnorm = linalg::norm(&diff);
        if dnorm > MONOTONE_PAIR_FLOOR {
            let a2 = amap.eval(&x, &omega2)?;
            let da: Vec<f64> = a2.iter().zip(&a1).map(|(b, a)| b - a).collect();
            let pairing = linalg::dot(&da, &diff) / (dnorm * dnorm);
            if pairing <= 0.0 || !pairing.is_finite() {
                report.violations.push(StructureViolation {
                    condition: "monotonicity",
                    x: x.clone(),
                    omega: omega.clone(),
                    omega2: Some(omega2.clone()),
                    value: pairing,
                });
            }
            min_mono = min_mono.min(pairing);
        }
    }

    report.ellipticity = if min_eig > 0.0 { 1.0 / min_eig } else { f64::INFINITY };
    report.monotonicity = if min_mono > 0.0 { 1.0 / min_mono } else { f64::INFINITY };
    report.constant = report
        .growth_value
        .max(report.growth_x)
        .max(report.growth_omega)
        .max(report.ellipticity)
        .max(report.monotonicity);
    Ok(report)
}

/// Direction uniform on the sphere (Box-Muller normals), magnitude
/// log-uniform over four decades centered at 1.
fn random_covector(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..m)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = linalg::norm(&v);
        if n < 1e-8 {
            continue;
        }
        let mag = 10f64.powf(rng.gen_range(-2.0..2.0));
        for c in v.iter_mut() {
            *c *= mag / n;
        }
        return v;
    }
}
