//! Berwald detection, the indicatrix-averaged Riemannian metric, and the
//! curvature identities that tie the two geometries together.
//!
//! A metric is Berwald when its spray is quadratic in the fibre variable,
//! i.e. `Gamma^i_jk(x) = d^2 G^i / dy^j dy^k` does not depend on `y`. For
//! such metrics the averaged Riemannian metric
//!
//! ```text
//! h_ij(x) = ( integral over the indicatrix of g_ij(x, y) dlambda ) / lambda(S_x)
//! ```
//!
//! has Levi-Civita connection equal to the Berwald connection, the linear
//! curvature tensor `R^i_jkl` built from `Gamma` contracts back to the
//! spray curvature, and the Ricci tensor of `h` agrees with
//! `1/2 d^2 R / dy dy` of the Finsler Ricci scalar. Each of those
//! statements is checkable here to quadrature accuracy, provided the
//! averaging measure `dlambda` is the one induced by the fundamental
//! tensor (see [`IndicatrixMeasure`] for why the plain Euclidean surface
//! measure does not work).

use nalgebra::DMatrix;

use crate::dual::{consts, lift_slice, seed, Dual, Scalar};
use crate::error::{Error, Result};
use crate::fields::PolyField;
use crate::linalg;
use crate::metric::MetricSpec;
use crate::spray::{berwald_gamma_generic, nonlinear_connection_generic, riemann_generic};

/// Fibre vectors used to probe `y`-dependence of `Gamma`. A fixed fan keeps
/// every Berwald decision deterministic; the directions avoid coordinate
/// axes and mutual parallelism.
const PROBE_DIRECTIONS_2D: [[f64; 2]; 6] = [
    [1.0, 0.37],
    [-0.62, 1.0],
    [0.9, -0.83],
    [-1.0, -0.41],
    [0.15, 1.0],
    [1.0, 1.0],
];
const PROBE_DIRECTIONS_3D: [[f64; 3]; 6] = [
    [1.0, 0.37, -0.21],
    [-0.62, 1.0, 0.43],
    [0.9, -0.83, 1.0],
    [-1.0, -0.41, 0.27],
    [0.15, 1.0, -0.88],
    [1.0, 1.0, 1.0],
];

fn probe_directions(m: usize) -> Vec<Vec<f64>> {
    match m {
        2 => PROBE_DIRECTIONS_2D.iter().map(|d| d.to_vec()).collect(),
        3 => PROBE_DIRECTIONS_3D.iter().map(|d| d.to_vec()).collect(),
        _ => {
            // Deterministic fan for higher dimensions: shifted axis sums.
            let mut out = Vec::new();
            for k in 0..2 * m {
                let mut d = vec![0.23; m];
                d[k % m] = if k < m { 1.0 } else { -1.0 };
                out.push(d);
            }
            out
        }
    }
}

/// Reference fibre vector the Berwald coefficients are extracted at.
fn reference_fibre(m: usize) -> Vec<f64> {
    (0..m).map(|k| [1.0, 0.37, 0.73, -0.52][k % 4]).collect()
}

/// Outcome of the Berwald test: the worst deviation of the would-be
/// connection coefficients across probe fibre vectors and sample points.
#[derive(Debug, Clone)]
pub struct BerwaldReport {
    pub berwald: bool,
    /// `max |Gamma(x, y) - Gamma(x, y_ref)|` over all probes.
    pub max_residual: f64,
    pub tol: f64,
    /// Witness `(x, y)` of the worst deviation.
    pub witness: (Vec<f64>, Vec<f64>),
}

/// Tests whether the spray is quadratic in `y` by comparing
/// `d^2 G / dy dy` across a fixed fan of fibre vectors at each sample
/// point.
pub fn is_berwald(spec: &MetricSpec, sample_xs: &[Vec<f64>], tol: f64) -> Result<BerwaldReport> {
    if sample_xs.is_empty() {
        return Err(Error::invalid("Berwald test needs at least one sample point"));
    }
    let m = spec.dim();
    let y_ref = reference_fibre(m);
    let mut max_residual = 0.0;
    let mut witness = (sample_xs[0].clone(), y_ref.clone());
    for x in sample_xs {
        spec.check_valid_at(x)?;
        let base = berwald_gamma_generic(spec, x, &y_ref)?;
        for y in probe_directions(m) {
            let probe = berwald_gamma_generic(spec, x, &y)?;
            for k in 0..base.len() {
                let dev = (base[k] - probe[k]).abs();
                if dev > max_residual {
                    max_residual = dev;
                    witness = (x.clone(), y.clone());
                }
            }
        }
    }
    Ok(BerwaldReport {
        berwald: max_residual <= tol,
        max_residual,
        tol,
        witness,
    })
}

fn require_berwald(spec: &MetricSpec, sample_xs: &[Vec<f64>], tol: f64) -> Result<()> {
    let report = is_berwald(spec, sample_xs, tol)?;
    if !report.berwald {
        return Err(Error::NotBerwald { residual: report.max_residual, tol });
    }
    Ok(())
}

/// Quadrature nodes on the indicatrix `{ y : F(x, y) = 1 }` with weights
/// for the induced (Lebesgue surface) measure.
#[derive(Debug, Clone)]
pub struct IndicatrixQuadrature {
    pub x: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Which surface measure the indicatrix weights approximate.
///
/// `Lebesgue` is the hypersurface measure the coordinate Lebesgue measure
/// induces (Euclidean arc length or area of the parametrized surface).
/// `FundamentalTensor` measures tangent vectors of the indicatrix with
/// `g(x, y)` itself. The distinction matters for averaging: a linear map
/// that preserves `F` also preserves `g` congruently, so the
/// `FundamentalTensor` measure is equivariant under such maps and the
/// resulting averaged metric of a Berwald structure is parallel; the
/// Lebesgue surface measure distorts direction-dependently under linear
/// maps and its average is not parallel in general.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatrixMeasure {
    Lebesgue,
    FundamentalTensor,
}

/// Generic indicatrix rule: defers to a periodic midpoint rule on the
/// circle (spectrally accurate) and a Gauss-Legendre x periodic product
/// rule on the 2-sphere. Nodes are `u / F(x, u)` over direction fans `u`;
/// weights carry the exact surface speed obtained by differentiating the
/// parametrization with one extra dual level, so they stay exact when `x`
/// itself is a dual value (differentiation under the integral sign).
pub fn indicatrix_generic<S: Scalar>(
    spec: &MetricSpec,
    x: &[S],
    n: usize,
    measure: IndicatrixMeasure,
) -> Result<(Vec<Vec<S>>, Vec<S>)> {
    if n < 16 {
        return Err(Error::invalid("indicatrix quadrature needs at least 16 nodes per axis"));
    }
    let m = spec.dim();
    match m {
        2 => {
            let xd = consts(x);
            let mut nodes = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            let dth = 2.0 * std::f64::consts::PI / n as f64;
            for q in 0..n {
                let th = (q as f64 + 0.5) * dth;
                let thd: Dual<S> = Dual::new(S::lift(th), S::one());
                let u = [thd.cos(), thd.sin()];
                let f = spec.norm(&xd, &u);
                let y = [u[0] / f, u[1] / f];
                let node = vec![y[0].re, y[1].re];
                let t = [y[0].du, y[1].du];
                let speed = match measure {
                    IndicatrixMeasure::Lebesgue => (t[0] * t[0] + t[1] * t[1]).sqrt(),
                    IndicatrixMeasure::FundamentalTensor => {
                        let g = spec.g_matrix(x, &node);
                        let mut q = S::zero();
                        for i in 0..2 {
                            for j in 0..2 {
                                q += t[i] * g[i * 2 + j] * t[j];
                            }
                        }
                        q.sqrt()
                    }
                };
                nodes.push(node);
                weights.push(speed.scale(dth));
            }
            Ok((nodes, weights))
        }
        3 => {
            let (tq, tw) = linalg::gauss_legendre(n);
            let nphi = 2 * n;
            let dphi = 2.0 * std::f64::consts::PI / nphi as f64;
            let mut nodes = Vec::with_capacity(n * nphi);
            let mut weights = Vec::with_capacity(n * nphi);
            for (ti, &t) in tq.iter().enumerate() {
                let theta = 0.5 * std::f64::consts::PI * (t + 1.0);
                let wtheta = 0.5 * std::f64::consts::PI * tw[ti];
                for p in 0..nphi {
                    let phi = (p as f64 + 0.5) * dphi;
                    // Tangent vectors by two independent dual passes.
                    let eval = |dth: f64, dph: f64| -> Vec<Dual<S>> {
                        let thd: Dual<S> = Dual::new(S::lift(theta), S::lift(dth));
                        let phd: Dual<S> = Dual::new(S::lift(phi), S::lift(dph));
                        let u = [thd.sin() * phd.cos(), thd.sin() * phd.sin(), thd.cos()];
                        let xd = consts(x);
                        let f = spec.norm(&xd, &u);
                        vec![u[0] / f, u[1] / f, u[2] / f]
                    };
                    let yt = eval(1.0, 0.0);
                    let yp = eval(0.0, 1.0);
                    let node: Vec<S> = yt.iter().map(|c| c.re).collect();
                    let t_th: Vec<S> = yt.iter().map(|c| c.du).collect();
                    let t_ph: Vec<S> = yp.iter().map(|c| c.du).collect();
                    let area = match measure {
                        IndicatrixMeasure::Lebesgue => {
                            let cx = t_th[1] * t_ph[2] - t_th[2] * t_ph[1];
                            let cy = t_th[2] * t_ph[0] - t_th[0] * t_ph[2];
                            let cz = t_th[0] * t_ph[1] - t_th[1] * t_ph[0];
                            (cx * cx + cy * cy + cz * cz).sqrt()
                        }
                        IndicatrixMeasure::FundamentalTensor => {
                            // Gram determinant of the tangent frame in g.
                            let g = spec.g_matrix(x, &node);
                            let pair = |a: &[S], b: &[S]| {
                                let mut acc = S::zero();
                                for i in 0..3 {
                                    for j in 0..3 {
                                        acc += a[i] * g[i * 3 + j] * b[j];
                                    }
                                }
                                acc
                            };
                            let g00 = pair(&t_th, &t_th);
                            let g01 = pair(&t_th, &t_ph);
                            let g11 = pair(&t_ph, &t_ph);
                            (g00 * g11 - g01 * g01).sqrt()
                        }
                    };
                    nodes.push(node);
                    weights.push(area.scale(wtheta * dphi));
                }
            }
            Ok((nodes, weights))
        }
        _ => Err(Error::invalid(format!(
            "indicatrix quadrature supports dimensions 2 and 3, not {m}"
        ))),
    }
}

pub fn indicatrix_quadrature(spec: &MetricSpec, x: &[f64], n: usize) -> Result<IndicatrixQuadrature> {
    if x.len() != spec.dim() {
        return Err(Error::invalid("sample point dimension mismatch"));
    }
    spec.check_valid_at(x)?;
    let (nodes, weights) = indicatrix_generic(spec, x, n, IndicatrixMeasure::Lebesgue)?;
    Ok(IndicatrixQuadrature { x: x.to_vec(), nodes, weights })
}

/// The indicatrix-averaged Riemannian metric of a Finsler structure.
#[derive(Debug, Clone)]
pub struct AveragedMetric {
    spec: MetricSpec,
    pub nodes: usize,
}

impl AveragedMetric {
    pub fn new(spec: MetricSpec, nodes: usize) -> Result<AveragedMetric> {
        if spec.dim() > 3 {
            return Err(Error::invalid(
                "averaged metrics are limited to dimensions 2 and 3 by the quadrature",
            ));
        }
        if nodes < 16 {
            return Err(Error::invalid("averaged metrics need at least 16 quadrature nodes"));
        }
        Ok(AveragedMetric { spec, nodes })
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    /// `h_ij(x)`: the fundamental tensor averaged over the indicatrix,
    /// row-major. The average uses the surface measure induced by `g`
    /// itself (see [`IndicatrixMeasure`]), the normalization under which
    /// the average of a Berwald structure is parallel for its linear
    /// connection. Works at any scalar type, so derivatives of `h`
    /// differentiate under the integral sign.
    pub fn eval_generic<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let m = self.spec.dim();
        let (nodes, weights) =
            indicatrix_generic(&self.spec, x, self.nodes, IndicatrixMeasure::FundamentalTensor)?;
        let mut acc = vec![S::zero(); m * m];
        let mut total = S::zero();
        for (y, w) in nodes.iter().zip(&weights) {
            let g = self.spec.g_matrix(x, y);
            for k in 0..m * m {
                acc[k] += g[k] * *w;
            }
            total += *w;
        }
        let inv = total.recip();
        for a in acc.iter_mut() {
            *a *= inv;
        }
        Ok(acc)
    }

    /// SPD-checked f64 evaluation.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.spec.check_valid_at(x)?;
        let h = self.eval_generic(x)?;
        let mat = linalg::to_dmatrix(&h, self.spec.dim());
        if linalg::min_eigenvalue(&mat) <= 0.0 {
            return Err(Error::MetricInvalid(format!(
                "averaged metric lost positivity at {x:?}"
            )));
        }
        Ok(mat)
    }

    /// Levi-Civita Christoffel symbols of `h`, flat `m^3` layout, generic.
    pub fn levi_civita_generic<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let m = self.spec.dim();
        let h = self.eval_generic(x)?;
        let hinv = linalg::invert(&h, m)?;
        // dh[l] = d h / d x^l as a flat matrix.
        let mut dh = Vec::with_capacity(m);
        for l in 0..m {
            let hd = self.eval_generic(&seed(x, l))?;
            dh.push(hd.iter().map(|e| e.du).collect::<Vec<S>>());
        }
        let mut gamma = vec![S::zero(); m * m * m];
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let mut acc = S::zero();
                    for l in 0..m {
                        let sym = dh[j][l * m + k] + dh[k][l * m + j] - dh[l][j * m + k];
                        acc += hinv[i * m + l] * sym;
                    }
                    gamma[(i * m + j) * m + k] = acc.scale(0.5);
                }
            }
        }
        Ok(gamma)
    }
}

/// Curvature tensor `R^i_jkl` of a linear, x-only connection:
///
/// ```text
/// R^i_jkl = d_k Gamma^i_jl - d_l Gamma^i_jk
///           + Gamma^m_jl Gamma^i_mk - Gamma^m_jk Gamma^i_ml.
/// ```
///
/// `gamma` must return the flat `m^3` coefficient array at dual points.
pub fn curvature_from_gamma<F>(m: usize, x: &[f64], gamma: F) -> Result<Vec<f64>>
where
    F: Fn(&[Dual<f64>]) -> Result<Vec<Dual<f64>>>,
{
    let mut dgam: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut g0: Vec<f64> = Vec::new();
    for dir in 0..m {
        let gd = gamma(&seed(x, dir))?;
        if dir == 0 {
            g0 = gd.iter().map(|c| c.re).collect();
        }
        dgam.push(gd.iter().map(|c| c.du).collect());
    }
    let idx = |i: usize, j: usize, k: usize| (i * m + j) * m + k;
    let mut r = vec![0.0; m * m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let mut acc = dgam[k][idx(i, j, l)] - dgam[l][idx(i, j, k)];
                    for mm in 0..m {
                        acc += g0[idx(mm, j, l)] * g0[idx(i, mm, k)]
                            - g0[idx(mm, j, k)] * g0[idx(i, mm, l)];
                    }
                    r[((i * m + j) * m + k) * m + l] = acc;
                }
            }
        }
    }
    Ok(r)
}

/// The linear curvature tensor of a Berwald metric, `R^i_jkl`, flat `m^4`.
#[derive(Debug, Clone)]
pub struct ChernCurvature {
    pub m: usize,
    pub data: Vec<f64>,
}

impl ChernCurvature {
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let m = self.m;
        self.data[((i * m + j) * m + k) * m + l]
    }
}

/// Builds `R^i_jkl` from the Berwald connection. Gated on the Berwald test
/// at the evaluation point.
pub fn chern_from_berwald(spec: &MetricSpec, x: &[f64], berwald_tol: f64) -> Result<ChernCurvature> {
    let m = spec.dim();
    require_berwald(spec, &[x.to_vec()], berwald_tol)?;
    let y_ref = reference_fibre(m);
    let data = curvature_from_gamma(m, x, |xd| berwald_gamma_generic(spec, xd, &y_ref))?;
    Ok(ChernCurvature { m, data })
}

/// Deviation report for the Szabo property: on a Berwald metric the
/// Levi-Civita connection of the averaged metric must coincide with the
/// Berwald connection.
#[derive(Debug, Clone)]
pub struct SzaboReport {
    pub max_deviation: f64,
    pub berwald_residual: f64,
    /// Sample point and index triple of the worst deviation.
    pub witness: (Vec<f64>, [usize; 3]),
}

pub fn szabo_check(
    spec: &MetricSpec,
    nodes: usize,
    sample_xs: &[Vec<f64>],
    berwald_tol: f64,
) -> Result<SzaboReport> {
    let report = is_berwald(spec, sample_xs, berwald_tol)?;
    if !report.berwald {
        return Err(Error::NotBerwald { residual: report.max_residual, tol: berwald_tol });
    }
    let m = spec.dim();
    let avg = AveragedMetric::new(spec.clone(), nodes)?;
    let y_ref = reference_fibre(m);
    let mut max_deviation = 0.0;
    let mut witness = (sample_xs[0].clone(), [0usize; 3]);
    for x in sample_xs {
        let lc = avg.levi_civita_generic(x)?;
        let bw = berwald_gamma_generic(spec, x, &y_ref)?;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let dev = (lc[(i * m + j) * m + k] - bw[(i * m + j) * m + k]).abs();
                    if dev > max_deviation {
                        max_deviation = dev;
                        witness = (x.clone(), [i, j, k]);
                    }
                }
            }
        }
    }
    Ok(SzaboReport {
        max_deviation,
        berwald_residual: report.max_residual,
        witness,
    })
}

/// Pairwise deviations between three independent computations of the
/// Ricci tensor of a Berwald metric.
#[derive(Debug, Clone)]
pub struct RicciReport {
    /// `1/2 d^2 R/dy dy` (spray route) vs `R^m_amb` from the Berwald
    /// connection.
    pub spray_vs_chern: f64,
    /// Spray route vs the Ricci tensor of the averaged metric.
    pub spray_vs_averaged: f64,
    pub chern_vs_averaged: f64,
    /// Deviation of the spray-route Hessian across two base fibre vectors;
    /// near zero because the Ricci scalar of a Berwald metric is quadratic
    /// in `y`.
    pub y_independence: f64,
    pub max_deviation: f64,
}

/// Ricci tensor by `1/2 d^2/dy^a dy^b` of the spray Ricci scalar at `y0`.
fn ricci_from_spray(spec: &MetricSpec, x: &[f64], y0: &[f64]) -> Result<Vec<f64>> {
    let m = spec.dim();
    let xd: Vec<Dual<Dual<f64>>> = lift_slice(x);
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..=a {
            let mut yd: Vec<Dual<Dual<f64>>> = lift_slice(y0);
            yd[a].du.re = 1.0;
            yd[b].re.du = 1.0;
            let r = riemann_generic(spec, &xd, &yd)?;
            let mut tr = Dual::constant(Dual::constant(0.0));
            for i in 0..m {
                tr += r[i * m + i];
            }
            let v = 0.5 * tr.du.du;
            out[a * m + b] = v;
            out[b * m + a] = v;
        }
    }
    Ok(out)
}

/// Cross-validates the Ricci tensor of a Berwald metric along three routes:
/// the `y`-Hessian of the spray Ricci scalar, the contraction of the
/// Berwald curvature tensor, and the Ricci tensor of the averaged metric
/// computed from its own Christoffel symbols.
pub fn ricci_identity_check(
    spec: &MetricSpec,
    nodes: usize,
    sample_xs: &[Vec<f64>],
    berwald_tol: f64,
) -> Result<RicciReport> {
    let report = is_berwald(spec, sample_xs, berwald_tol)?;
    if !report.berwald {
        return Err(Error::NotBerwald { residual: report.max_residual, tol: berwald_tol });
    }
    let m = spec.dim();
    let avg = AveragedMetric::new(spec.clone(), nodes)?;
    let y0 = reference_fibre(m);
    let y1: Vec<f64> = y0.iter().rev().map(|c| 0.8 * c + 0.31).collect();

    let mut dev_sc: f64 = 0.0;
    let mut dev_sa: f64 = 0.0;
    let mut dev_ca: f64 = 0.0;
    let mut dev_y: f64 = 0.0;
    for x in sample_xs {
        let q0 = ricci_from_spray(spec, x, &y0)?;
        let q1 = ricci_from_spray(spec, x, &y1)?;
        let chern = chern_from_berwald(spec, x, berwald_tol)?;
        let mut ric_chern = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                for mm in 0..m {
                    ric_chern[a * m + b] += chern.get(mm, a, mm, b);
                }
            }
        }
        let ric_avg_t = curvature_from_gamma(m, x, |xd| avg.levi_civita_generic(xd))?;
        let mut ric_avg = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                for mm in 0..m {
                    ric_avg[a * m + b] += ric_avg_t[((mm * m + a) * m + mm) * m + b];
                }
            }
        }
        for k in 0..m * m {
            dev_y = dev_y.max((q0[k] - q1[k]).abs());
            dev_sc = dev_sc.max((q0[k] - ric_chern[k]).abs());
            dev_sa = dev_sa.max((q0[k] - ric_avg[k]).abs());
            dev_ca = dev_ca.max((ric_chern[k] - ric_avg[k]).abs());
        }
    }
    Ok(RicciReport {
        spray_vs_chern: dev_sc,
        spray_vs_averaged: dev_sa,
        chern_vs_averaged: dev_ca,
        y_independence: dev_y,
        max_deviation: dev_sc.max(dev_sa).max(dev_ca),
    })
}

/// Both faces of the horizontal Laplacian of a Berwald metric at `(x, y)`:
/// the `g`-trace of the horizontal Hessian and the divergence form
/// `(det g)^{-1/2} delta_i ( sqrt(det g) g^{ij} d_j f )`, which agree for
/// Berwald metrics.
#[derive(Debug, Clone)]
pub struct HorizontalLaplacian {
    pub trace_form: f64,
    pub divergence_form: f64,
}

pub fn horizontal_laplacian(
    spec: &MetricSpec,
    f: &PolyField,
    x: &[f64],
    y: &[f64],
    berwald_tol: f64,
) -> Result<HorizontalLaplacian> {
    let m = spec.dim();
    if f.dim() != m || x.len() != m || y.len() != m {
        return Err(Error::invalid("dimension mismatch in horizontal Laplacian"));
    }
    if linalg::norm(y) == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    require_berwald(spec, &[x.to_vec()], berwald_tol)?;

    // Trace form: g^{ij} ( Hess f_ij - Gamma^k_ij d_k f ).
    let g = spec.g_matrix(x, y);
    let ginv = linalg::invert(&g, m)?;
    let gamma = berwald_gamma_generic(spec, x, &reference_fibre(m))?;
    let grad_f = f.grad(x);
    let hess_f = f.hessian(x);
    let mut trace_form = 0.0;
    for i in 0..m {
        for j in 0..m {
            let mut t = hess_f[i * m + j];
            for k in 0..m {
                t -= gamma[(k * m + i) * m + j] * grad_f[k];
            }
            trace_form += ginv[i * m + j] * t;
        }
    }

    // Divergence form with the horizontal derivative
    // delta/dx^i = d/dx^i - N^l_i d/dy^l applied to
    // W^i = sqrt(det g) g^{ij} d_j f.
    let w = |xd: &[Dual<f64>], yd: &[Dual<f64>]| -> Result<Vec<Dual<f64>>> {
        let g = spec.g_matrix(xd, yd);
        let ginv = linalg::invert(&g, m)?;
        let det = linalg::det(&g, m).sqrt();
        let gf = f.grad(xd);
        Ok((0..m)
            .map(|i| {
                let mut acc = Dual::constant(0.0);
                for j in 0..m {
                    acc += ginv[i * m + j] * gf[j];
                }
                acc * det
            })
            .collect())
    };
    let n = nonlinear_connection_generic(spec, x, y)?;
    let mut div = 0.0;
    for i in 0..m {
        let wx = w(&seed(x, i), &consts(y))?;
        div += wx[i].du;
    }
    for l in 0..m {
        let wy = w(&consts(x), &seed(y, l))?;
        for i in 0..m {
            div -= n[l * m + i] * wy[i].du;
        }
    }
    let det = linalg::det(&g, m).sqrt();
    Ok(HorizontalLaplacian {
        trace_form,
        divergence_form: div / det,
    })
}
