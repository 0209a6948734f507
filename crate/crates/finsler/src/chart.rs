//! Harmonic coordinate charts: Dirichlet energy minimization for the
//! nonlinear Laplacian, chart assembly with Jacobian certification, and
//! the ball-rescaling experiment.
//!
//! A harmonic chart is the map `Phi = (u^1, ..., u^m)` whose components
//! solve the Dirichlet problems `Delta u^i = 0` with boundary data `x^i`
//! on a small ball. On the discrete level each `u^i` minimizes the energy
//!
//! ```text
//! E(u) = 1/2 * sum_cells sum_q w_q F*^2(x_q, du(x_q)) sigma(x_q)
//! ```
//!
//! over interior nodal values. The minimizer is found by nonlinear
//! conjugate gradients (which tolerates the `du = 0` kink of `F*^2`)
//! followed by Newton steps with the exact quasi-linear Hessian
//! `sigma g*(du)`, valid once no quadrature point is degenerate.
//!
//! Shrinking the ball makes the metric look constant: rescaled to the
//! unit ball, the chart's Jacobian at the center converges to the
//! identity. `rescaling_experiment` measures that decay.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::berwald::AveragedMetric;
use crate::calculus::{ScalarField, VolumeForm};
use crate::error::{Error, Result};
use crate::fields::PolyField;
use crate::grid::{Grid, GridField, QuadRule};
use crate::legendre::legendre_inverse_generic;
use crate::linalg;
use crate::metric::MetricSpec;

/// First-order optimality target: infinity norm of the discrete energy
/// gradient over interior nodes.
pub const ENERGY_GRAD_TOL: f64 = 1e-8;

/// Jacobian certification threshold: nodes with `|det DPhi| >= DELTA_DET`
/// count as invertible when measuring the certified sub-ball.
pub const DELTA_DET: f64 = 0.1;

const MAX_NCG_ITER: usize = 200;
const MAX_NEWTON_ITER: usize = 60;
/// NCG hands over to Newton at this relative gradient reduction.
const NCG_HANDOVER: f64 = 1e-3;
/// Quadrature points with `|du|` below this count as degenerate for the
/// Hessian (the quasi-linear coefficients are undefined at du = 0).
const DEGENERATE_DU: f64 = 1e-12;

/// One cell's precomputed quadrature data for assembly.
struct CellData {
    nodes: [usize; 4],
    /// (position, weight, physical shape gradients, sigma).
    qps: Vec<([f64; 2], f64, [[f64; 2]; 4], f64)>,
}

struct Assembly {
    spec: MetricSpec,
    cells: Vec<CellData>,
    /// Interior slot of each node, or usize::MAX.
    slot: Vec<usize>,
    interior: Vec<usize>,
}

impl Assembly {
    fn new(spec: &MetricSpec, vol: &VolumeForm, grid: Arc<Grid>) -> Result<Assembly> {
        let mut cells = Vec::with_capacity(grid.cells.len());
        for c in 0..grid.cells.len() {
            let mut qps = Vec::with_capacity(4);
            for qp in grid.cell_quad(c, QuadRule::Gauss2) {
                let sigma = vol.density(&qp.x[..])?;
                qps.push((qp.x, qp.weight, qp.grad, sigma));
            }
            cells.push(CellData { nodes: grid.cells[c], qps });
        }
        let mut slot = vec![usize::MAX; grid.node_count()];
        for (k, &node) in grid.interior.iter().enumerate() {
            slot[node] = k;
        }
        Ok(Assembly {
            spec: spec.clone(),
            cells,
            slot,
            interior: grid.interior.clone(),
        })
    }

    fn du_at(&self, cell: &CellData, q: usize, u: &[f64]) -> [f64; 2] {
        let (_, _, grad, _) = cell.qps[q];
        let mut du = [0.0; 2];
        for a in 0..4 {
            let v = u[cell.nodes[a]];
            du[0] += grad[a][0] * v;
            du[1] += grad[a][1] * v;
        }
        du
    }

    /// Total discrete energy. Cell contributions are computed in
    /// parallel and reduced in cell order, so the sum is reproducible.
    fn energy(&self, u: &[f64]) -> Result<f64> {
        let parts: Result<Vec<f64>> = self
            .cells
            .par_iter()
            .map(|cell| {
                let mut acc = 0.0;
                for q in 0..cell.qps.len() {
                    let (x, w, _, sigma) = cell.qps[q];
                    let du = self.du_at(cell, q, u);
                    let fs = crate::legendre::f_star_generic(&self.spec, &x[..], &du[..])?;
                    acc += 0.5 * fs * fs * sigma * w;
                }
                Ok(acc)
            })
            .collect();
        Ok(parts?.into_iter().sum())
    }

    /// Gradient of the energy with respect to interior nodal values.
    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let parts: Result<Vec<[f64; 4]>> = self
            .cells
            .par_iter()
            .map(|cell| {
                let mut local = [0.0; 4];
                for q in 0..cell.qps.len() {
                    let (x, w, grad, sigma) = cell.qps[q];
                    let du = self.du_at(cell, q, u);
                    let (v, _) = legendre_inverse_generic(&self.spec, &x[..], &du[..])?;
                    for a in 0..4 {
                        local[a] += sigma * w * (v[0] * grad[a][0] + v[1] * grad[a][1]);
                    }
                }
                Ok(local)
            })
            .collect();
        let parts = parts?;
        let mut g = vec![0.0; self.interior.len()];
        for (cell, local) in self.cells.iter().zip(&parts) {
            for a in 0..4 {
                let s = self.slot[cell.nodes[a]];
                if s != usize::MAX {
                    g[s] += local[a];
                }
            }
        }
        Ok(g)
    }

    /// Assembles the quasi-linear stiffness `sigma grad(phi)' g*(du)
    /// grad(phi)` over interior pairs, skipping degenerate points.
    fn hessian(&self, u: &[f64]) -> Result<(linalg::Csr, usize)> {
        let parts: Result<Vec<(Vec<(usize, usize, f64)>, usize)>> = self
            .cells
            .par_iter()
            .map(|cell| {
                let mut local = Vec::with_capacity(16 * cell.qps.len());
                let mut degenerate = 0usize;
                for q in 0..cell.qps.len() {
                    let (x, w, grad, sigma) = cell.qps[q];
                    let du = self.du_at(cell, q, u);
                    if linalg::norm(&du) < DEGENERATE_DU {
                        degenerate += 1;
                        continue;
                    }
                    let (v, _) = legendre_inverse_generic(&self.spec, &x[..], &du[..])?;
                    let g = self.spec.g_matrix(&x[..], &v);
                    let gstar = linalg::invert(&g, 2)?;
                    for a in 0..4 {
                        let sa = self.slot[cell.nodes[a]];
                        if sa == usize::MAX {
                            continue;
                        }
                        for b in 0..4 {
                            let sb = self.slot[cell.nodes[b]];
                            if sb == usize::MAX {
                                continue;
                            }
                            let mut acc = 0.0;
                            for i in 0..2 {
                                for j in 0..2 {
                                    acc += grad[a][i] * gstar[i * 2 + j] * grad[b][j];
                                }
                            }
                            local.push((sa, sb, sigma * w * acc));
                        }
                    }
                }
                Ok((local, degenerate))
            })
            .collect();
        let mut triplets = Vec::new();
        let mut degenerate = 0;
        for (local, d) in parts? {
            triplets.extend(local);
            degenerate += d;
        }
        let mut csr = linalg::Csr::from_triplets(self.interior.len(), triplets);
        if degenerate > 0 {
            // Keep the system positive definite where coefficients were
            // undefined: a tiny diagonal shift in stiffness scale.
            let scale = csr.diagonal().iter().fold(0.0f64, |m, d| m.max(*d));
            let shift = 1e-8 * (1.0 + scale);
            for r in 0..csr.n {
                for k in csr.row_ptr[r]..csr.row_ptr[r + 1] {
                    if csr.cols[k] == r {
                        csr.vals[k] += shift;
                    }
                }
            }
        }
        Ok((csr, degenerate))
    }

    fn scatter(&self, u: &mut [f64], delta: &[f64], step: f64) {
        for (k, &node) in self.interior.iter().enumerate() {
            u[node] += step * delta[k];
        }
    }
}

/// A converged Dirichlet solve: the field, its energy, the final
/// optimality residual, and solver diagnostics.
#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub field: GridField,
    pub energy: f64,
    /// Infinity norm of the interior energy gradient at the solution.
    pub residual: f64,
    pub ncg_iterations: usize,
    pub newton_iterations: usize,
    /// Quadrature points with du = 0 in the final Hessian assembly.
    pub degenerate_points: usize,
}

fn boundary_values(grid: &Grid, boundary: &ScalarField) -> Result<Vec<f64>> {
    match boundary {
        ScalarField::Polynomial(p) => {
            if p.dim() != 2 {
                return Err(Error::invalid("boundary data must be 2-D"));
            }
            Ok(grid.nodes.iter().map(|x| p.eval(&x[..])).collect())
        }
        ScalarField::Grid(f) => {
            if f.grid.node_count() != grid.node_count() {
                return Err(Error::invalid("boundary grid field lives on a different grid"));
            }
            Ok(f.values.clone())
        }
    }
}

/// Minimizes the discrete Dirichlet energy over interior nodes with the
/// given boundary data, to first-order optimality `ENERGY_GRAD_TOL`.
pub fn solve_dirichlet(
    spec: &MetricSpec,
    vol: &VolumeForm,
    grid: Arc<Grid>,
    boundary: &ScalarField,
) -> Result<DirichletSolution> {
    if spec.dim() != 2 {
        return Err(Error::invalid("the chart solver is 2-D"));
    }
    let asm = Assembly::new(spec, vol, grid.clone())?;
    if asm.interior.is_empty() {
        return Err(Error::invalid("grid has no interior nodes"));
    }
    // Initial guess: the nodal extension of the boundary data, which is
    // also the natural competitor for the energy certificate.
    let mut u = boundary_values(&grid, boundary)?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("boundary data is not finite"));
    }

    let mut g = asm.gradient(&u)?;
    let g0_inf = inf_norm(&g);
    let mut ncg_iterations = 0;
    let handover = (NCG_HANDOVER * (1.0 + g0_inf)).max(ENERGY_GRAD_TOL);

    // Phase 1: Polak-Ribiere conjugate gradients with restarts; robust
    // while some cells may still sit at the du = 0 kink.
    let mut dir: Vec<f64> = g.iter().map(|c| -c).collect();
    let mut energy = asm.energy(&u)?;
    while inf_norm(&g) > handover && ncg_iterations < MAX_NCG_ITER {
        let slope = linalg::dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|c| -c).collect();
        }
        let slope = linalg::dot(&g, &dir).min(0.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = u.clone();
            asm.scatter(&mut trial, &dir, step);
            let e_trial = asm.energy(&trial)?;
            if e_trial <= energy + 1e-4 * step * slope {
                u = trial;
                energy = e_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // line search exhausted: hand over to Newton
        }
        let g_new = asm.gradient(&u)?;
        let beta = {
            let num: f64 = g_new.iter().zip(&g).map(|(n, o)| n * (n - o)).sum();
            let den: f64 = linalg::dot(&g, &g);
            (num / den).max(0.0)
        };
        dir = g_new.iter().zip(&dir).map(|(gn, d)| -gn + beta * d).collect();
        g = g_new;
        ncg_iterations += 1;
    }

    // Phase 2: Newton on the smooth regime.
    let mut newton_iterations = 0;
    let mut degenerate_points = 0;
    while inf_norm(&g) > ENERGY_GRAD_TOL {
        if newton_iterations >= MAX_NEWTON_ITER {
            return Err(Error::NoConvergence {
                iterations: ncg_iterations + newton_iterations,
                residual: inf_norm(&g),
            });
        }
        let (h, degen) = asm.hessian(&u)?;
        degenerate_points = degen;
        let rhs: Vec<f64> = g.iter().map(|c| -c).collect();
        let (delta, _) = linalg::pcg(&h, &rhs, 1e-12, 40 * asm.interior.len() + 100)?;
        let slope = linalg::dot(&g, &delta);
        let mut step = 1.0;
        // Backtrack only while the predicted decrease is measurable above
        // rounding of the energy; tiny slopes mean the step is a pure
        // polish of an already converged primal state.
        if slope < -1e-13 * (1.0 + energy.abs()) {
            for _ in 0..40 {
                let mut trial = u.clone();
                asm.scatter(&mut trial, &delta, step);
                let e_trial = asm.energy(&trial)?;
                if e_trial <= energy + 1e-4 * step * slope {
                    break;
                }
                step *= 0.5;
            }
        }
        asm.scatter(&mut u, &delta, step);
        energy = asm.energy(&u)?;
        g = asm.gradient(&u)?;
        newton_iterations += 1;
    }

    Ok(DirichletSolution {
        field: GridField::new(grid, u)?,
        energy,
        residual: inf_norm(&g),
        ncg_iterations,
        newton_iterations,
        degenerate_points,
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Weak-form residual of a solved field against one discrete test
/// function vanishing on the boundary: `sum_b dE/du_b eta_b`.
pub fn weak_form_pairing(
    spec: &MetricSpec,
    vol: &VolumeForm,
    solution: &GridField,
    eta: &[f64],
) -> Result<f64> {
    let asm = Assembly::new(spec, vol, solution.grid.clone())?;
    if eta.len() != asm.interior.len() {
        return Err(Error::invalid("test function must give one value per interior node"));
    }
    let g = asm.gradient(&solution.values)?;
    Ok(linalg::dot(&g, eta))
}

/// Discrete H^1 norm of an interior-node test function (zero on the
/// boundary), by the same quadrature the energy uses.
pub fn h1_norm(grid: &Grid, eta: &[f64]) -> Result<f64> {
    if eta.len() != grid.interior.len() {
        return Err(Error::invalid("test function must give one value per interior node"));
    }
    let mut full = vec![0.0; grid.node_count()];
    for (k, &node) in grid.interior.iter().enumerate() {
        full[node] = eta[k];
    }
    let mut total = 0.0;
    for c in 0..grid.cells.len() {
        for qp in grid.cell_quad(c, QuadRule::Gauss2) {
            let mut val = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for a in 0..4 {
                let v = full[grid.cells[c][a]];
                val += qp.shape[a] * v;
                dx += qp.grad[a][0] * v;
                dy += qp.grad[a][1] * v;
            }
            total += qp.weight * (val * val + dx * dx + dy * dy);
        }
    }
    Ok(total.sqrt())
}

/// A solved harmonic chart with its Jacobian field and certification.
#[derive(Debug, Clone)]
pub struct HarmonicChart {
    pub grid: Arc<Grid>,
    pub fields: Vec<GridField>,
    /// `DPhi[i][j] = du^i/dx^j` by centered differences; `None` where the
    /// stencil is incomplete (near the projected rim).
    pub jacobians: Vec<Option<DMatrix<f64>>>,
    pub dets: Vec<Option<f64>>,
    /// Largest radius such that every node inside with a Jacobian has
    /// `|det| >= delta_det`.
    pub certified_radius: f64,
    pub delta_det: f64,
    pub solutions: Vec<DirichletSolution>,
}

impl HarmonicChart {
    /// Jacobian at the node closest to the origin.
    pub fn center_jacobian(&self) -> Result<&DMatrix<f64>> {
        let center = self
            .grid
            .locate_node(&[0.0, 0.0])
            .ok_or_else(|| Error::ChartDegenerate("grid has no center node".into()))?;
        self.jacobians[center]
            .as_ref()
            .ok_or_else(|| Error::ChartDegenerate("no centered stencil at the origin".into()))
    }
}

/// Solves the `m` Dirichlet problems with coordinate boundary data and
/// assembles the chart.
pub fn build_chart(
    spec: &MetricSpec,
    vol: &VolumeForm,
    grid: Arc<Grid>,
    delta_det: f64,
) -> Result<HarmonicChart> {
    if delta_det <= 0.0 {
        return Err(Error::invalid("certification threshold must be positive"));
    }
    let mut fields = Vec::new();
    let mut solutions = Vec::new();
    for i in 0..2 {
        let data = ScalarField::Polynomial(PolyField::coordinate(2, i));
        let sol = solve_dirichlet(spec, vol, grid.clone(), &data)?;
        fields.push(sol.field.clone());
        solutions.push(sol);
    }

    let n = grid.node_count();
    let mut jacobians = Vec::with_capacity(n);
    let mut dets = Vec::with_capacity(n);
    for node in 0..n {
        let rows: Vec<Option<[f64; 2]>> =
            fields.iter().map(|f| f.gradient_at_node(node)).collect();
        if rows.iter().all(|r| r.is_some()) {
            let mut j = DMatrix::zeros(2, 2);
            for (i, row) in rows.iter().enumerate() {
                let row = row.unwrap();
                j[(i, 0)] = row[0];
                j[(i, 1)] = row[1];
            }
            dets.push(Some(j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)]));
            jacobians.push(Some(j));
        } else {
            jacobians.push(None);
            dets.push(None);
        }
    }

    // Certified sub-ball: walk nodes outward from the origin and stop at
    // the first Jacobian below threshold.
    let mut r_bad = f64::INFINITY;
    let mut r_good: f64 = -1.0;
    for node in 0..n {
        let p = grid.nodes[node];
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if let Some(d) = dets[node] {
            if d.abs() >= delta_det {
                r_good = r_good.max(r);
            } else {
                r_bad = r_bad.min(r);
            }
        }
    }
    if r_good < 0.0 {
        return Err(Error::ChartDegenerate(
            "no node has a complete Jacobian stencil".into(),
        ));
    }
    let certified_radius = if r_bad.is_infinite() {
        r_good
    } else {
        // Largest certified radius strictly inside the first violation.
        let mut best: f64 = -1.0;
        for node in 0..n {
            let p = grid.nodes[node];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if r < r_bad && dets[node].is_some() {
                best = best.max(r);
            }
        }
        best
    };
    if certified_radius < 0.0 {
        return Err(Error::ChartDegenerate(format!(
            "Jacobian determinant falls below {delta_det} at the chart center"
        )));
    }
    Ok(HarmonicChart {
        grid,
        fields,
        jacobians,
        dets,
        certified_radius,
        delta_det,
        solutions,
    })
}

/// One row of the rescaling experiment.
///
/// `deviation` is the L2 norm of `DPhi_tilde - Id` over the whole
/// rescaled ball, the quantity with a provable first-order rate in the
/// ball radius. The pointwise deviation at the exact center
/// superconverges on a reflection-symmetric grid (the first-order
/// corrector is even, so its gradient vanishes at 0) and is reported
/// separately as `center_deviation`.
#[derive(Debug, Clone, Copy)]
pub struct RescalingRow {
    pub eps: f64,
    /// `|DPhi_tilde - Id|` in L2 over the rescaled ball.
    pub deviation: f64,
    /// `|DPhi_tilde(0) - Id|` in spectral norm at the center node.
    pub center_deviation: f64,
    pub det_center: f64,
}

#[derive(Debug, Clone)]
pub struct RescalingTable {
    pub rows: Vec<RescalingRow>,
    /// Log-log least-squares slope of deviation against eps, when every
    /// deviation is resolvable above roundoff.
    pub slope: Option<f64>,
}

/// L2 norm of `DPhi - Id` over the grid, by the assembly quadrature.
fn dphi_l2_deviation(grid: &Grid, fields: &[GridField]) -> f64 {
    let mut total = 0.0;
    for c in 0..grid.cells.len() {
        for qp in grid.cell_quad(c, QuadRule::Gauss2) {
            for (i, field) in fields.iter().enumerate() {
                let mut du = [0.0; 2];
                for a in 0..4 {
                    let v = field.values[grid.cells[c][a]];
                    du[0] += qp.grad[a][0] * v;
                    du[1] += qp.grad[a][1] * v;
                }
                du[i] -= 1.0;
                total += qp.weight * (du[0] * du[0] + du[1] * du[1]);
            }
        }
    }
    total.sqrt()
}

/// The volume form matching `MetricSpec::x_scaled(spec, eps)`: metric-derived
/// densities are rebuilt from the scaled spec, Lebesgue is unchanged.
pub fn rescale_volume(vol: &VolumeForm, eps: f64) -> Result<VolumeForm> {
    Ok(match vol {
        VolumeForm::Lebesgue => VolumeForm::Lebesgue,
        VolumeForm::SqrtDetMetric(spec) => {
            VolumeForm::sqrt_det_metric(MetricSpec::x_scaled(spec.clone(), eps))?
        }
        VolumeForm::SqrtDetAveraged(avg) => VolumeForm::sqrt_det_averaged(AveragedMetric::new(
            MetricSpec::x_scaled(avg.spec().clone(), eps),
            avg.nodes,
        )?),
    })
}

/// Solves the rescaled chart problems on the unit ball for each `eps`:
/// the metric is evaluated at `eps * x`, boundary data stays `x^i`. The
/// L2 deviation of the chart Jacobian from the identity must decay like
/// the ball radius.
pub fn rescaling_experiment(
    spec: &MetricSpec,
    vol: &VolumeForm,
    eps_list: &[f64],
    n: usize,
) -> Result<RescalingTable> {
    if eps_list.is_empty() {
        return Err(Error::invalid("rescaling needs at least one radius"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|&e| e <= 0.0) {
        return Err(Error::invalid("radii must be positive and strictly decreasing"));
    }
    let grid = Arc::new(Grid::disk(1.0, n)?);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let spec_eps = MetricSpec::x_scaled(spec.clone(), eps);
        let vol_eps = rescale_volume(vol, eps)?;
        let chart = build_chart(&spec_eps, &vol_eps, grid.clone(), DELTA_DET)?;
        let j = chart.center_jacobian()?;
        let center = linalg::spectral_norm(&(j - DMatrix::identity(2, 2)));
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        let dev = dphi_l2_deviation(&grid, &chart.fields);
        rows.push(RescalingRow {
            eps,
            deviation: dev,
            center_deviation: center,
            det_center: det,
        });
    }
    let slope = if rows.iter().all(|r| r.deviation > 1e-13) {
        let xs: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.deviation.ln()).collect();
        let nf = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / nf;
        let my = ys.iter().sum::<f64>() / nf;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(RescalingTable { rows, slope })
}
