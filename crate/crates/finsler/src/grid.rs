//! Structured 2-D grids: rectangles and origin-centered disks.
//!
//! Both shapes share one lattice layout. The disk keeps every lattice cell
//! whose four corners lie in the closed ball and then projects the rim
//! nodes radially onto the circle, so Dirichlet data is imposed exactly on
//! the curved boundary while the bulk of the mesh stays perfectly Cartesian.
//! Cells are treated isoparametrically (bilinear geometry), which makes the
//! stretched rim cells exact quadrature domains rather than approximations.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;

#[derive(Debug, Clone)]
pub enum DomainShape {
    /// Axis-aligned rectangle `[lo, hi]`.
    Rect { lo: [f64; 2], hi: [f64; 2] },
    /// Disk of the given radius centered at the origin.
    Disk { radius: f64 },
}

/// A structured quadrilateral mesh with lattice bookkeeping.
#[derive(Debug, Clone)]
pub struct Grid {
    pub shape: DomainShape,
    /// Lattice spacing per axis (equal for disks).
    pub h: [f64; 2],
    /// Node coordinates; rim nodes of a disk are projected onto the circle.
    pub nodes: Vec<[f64; 2]>,
    /// Cells as corner node ids in SW, SE, NE, NW order.
    pub cells: Vec<[usize; 4]>,
    pub is_boundary: Vec<bool>,
    /// True for nodes whose coordinates were moved off the lattice.
    pub is_projected: Vec<bool>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    lattice: Vec<(i64, i64)>,
    origin: [f64; 2],
    index: HashMap<(i64, i64), usize>,
}

/// Tensor Gauss rules used on the reference square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    /// 2x2: exact for the bilinear stiffness terms, used by the solver.
    Gauss2,
    /// 3x3: used for energy and norm reporting.
    Gauss3,
}

impl QuadRule {
    fn order(self) -> usize {
        match self {
            QuadRule::Gauss2 => 2,
            QuadRule::Gauss3 => 3,
        }
    }
}

/// One quadrature point of a cell: physical position, weight including the
/// Jacobian determinant, and the values and physical gradients of the four
/// bilinear shape functions.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub weight: f64,
    pub shape: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

fn shape_values(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn shape_grads_ref(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

impl Grid {
    /// Uniform rectangle mesh with `nx x ny` cells; every edge node is
    /// boundary.
    pub fn rect(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Grid> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid("rectangle grids need at least 2 cells per axis"));
        }
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::invalid("rectangle has empty extent"));
        }
        let h = [(hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64];
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut lattice = Vec::new();
        let mut index = HashMap::new();
        let mut is_boundary = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let id = nodes.len();
                nodes.push([lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]]);
                lattice.push((i as i64, j as i64));
                index.insert((i as i64, j as i64), id);
                is_boundary.push(i == 0 || j == 0 || i == nx || j == ny);
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let sw = j * (nx + 1) + i;
                cells.push([sw, sw + 1, sw + nx + 2, sw + nx + 1]);
            }
        }
        let is_projected = vec![false; nodes.len()];
        Ok(Self::finish(
            DomainShape::Rect { lo, hi },
            h,
            lo,
            nodes,
            cells,
            is_boundary,
            is_projected,
            lattice,
            index,
        ))
    }

    /// Disk mesh with `n` cells across the diameter (`n` even, at least 8).
    /// Retains lattice cells whose corners lie in the closed ball and
    /// projects rim nodes radially onto the circle.
    pub fn disk(radius: f64, n: usize) -> Result<Grid> {
        if radius <= 0.0 {
            return Err(Error::invalid("disk radius must be positive"));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::invalid("disk grids need an even cell count of at least 8"));
        }
        let h = 2.0 * radius / n as f64;
        let origin = [-radius, -radius];
        let inside = |i: i64, j: i64| -> bool {
            let x = -radius + i as f64 * h;
            let y = -radius + j as f64 * h;
            (x * x + y * y).sqrt() <= radius * (1.0 + 1e-12)
        };
        // Cells with all four corners inside the closed ball.
        let mut keep = vec![vec![false; n]; n];
        for j in 0..n as i64 {
            for i in 0..n as i64 {
                keep[j as usize][i as usize] =
                    inside(i, j) && inside(i + 1, j) && inside(i, j + 1) && inside(i + 1, j + 1);
            }
        }
        let kept_cell = |i: i64, j: i64| -> bool {
            i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n && keep[j as usize][i as usize]
        };
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut is_boundary = Vec::new();
        let mut is_projected = Vec::new();
        for j in 0..=n as i64 {
            for i in 0..=n as i64 {
                let touches = kept_cell(i - 1, j - 1)
                    || kept_cell(i, j - 1)
                    || kept_cell(i - 1, j)
                    || kept_cell(i, j);
                if !touches {
                    continue;
                }
                let interior = kept_cell(i - 1, j - 1)
                    && kept_cell(i, j - 1)
                    && kept_cell(i - 1, j)
                    && kept_cell(i, j);
                let mut p = [-radius + i as f64 * h, -radius + j as f64 * h];
                let mut projected = false;
                if !interior {
                    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    debug_assert!(r > 0.5 * radius, "rim node unexpectedly close to center");
                    let scale = radius / r;
                    if (scale - 1.0).abs() > 1e-14 {
                        projected = true;
                    }
                    p = [p[0] * scale, p[1] * scale];
                }
                let id = nodes.len();
                nodes.push(p);
                lattice.push((i, j));
                index.insert((i, j), id);
                is_boundary.push(!interior);
                is_projected.push(projected);
            }
        }
        let mut cells = Vec::new();
        for j in 0..n as i64 {
            for i in 0..n as i64 {
                if kept_cell(i, j) {
                    cells.push([
                        index[&(i, j)],
                        index[&(i + 1, j)],
                        index[&(i + 1, j + 1)],
                        index[&(i, j + 1)],
                    ]);
                }
            }
        }
        let grid = Self::finish(
            DomainShape::Disk { radius },
            [h, h],
            origin,
            nodes,
            cells,
            is_boundary,
            is_projected,
            lattice,
            index,
        );
        grid.check_cells_regular()?;
        Ok(grid)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        shape: DomainShape,
        h: [f64; 2],
        origin: [f64; 2],
        nodes: Vec<[f64; 2]>,
        cells: Vec<[usize; 4]>,
        is_boundary: Vec<bool>,
        is_projected: Vec<bool>,
        lattice: Vec<(i64, i64)>,
        index: HashMap<(i64, i64), usize>,
    ) -> Grid {
        let interior = (0..nodes.len()).filter(|&k| !is_boundary[k]).collect();
        let boundary = (0..nodes.len()).filter(|&k| is_boundary[k]).collect();
        Grid {
            shape,
            h,
            nodes,
            cells,
            is_boundary,
            is_projected,
            interior,
            boundary,
            lattice,
            origin,
            index,
        }
    }

    /// Rejects meshes whose projected rim cells folded over.
    fn check_cells_regular(&self) -> Result<()> {
        for c in 0..self.cells.len() {
            for qp in self.cell_quad(c, QuadRule::Gauss2) {
                if qp.weight <= 0.0 {
                    return Err(Error::invalid(format!(
                        "cell {c} is degenerate after rim projection (non-positive Jacobian)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Node id at a lattice position, if that node exists in the mesh.
    pub fn node_at(&self, i: i64, j: i64) -> Option<usize> {
        self.index.get(&(i, j)).copied()
    }

    pub fn lattice_of(&self, node: usize) -> (i64, i64) {
        self.lattice[node]
    }

    /// Lattice neighbor `(di, dj)` away, if present.
    pub fn neighbor(&self, node: usize, di: i64, dj: i64) -> Option<usize> {
        let (i, j) = self.lattice[node];
        self.node_at(i + di, j + dj)
    }

    /// True when every node within Chebyshev distance `radius` exists and
    /// sits exactly on the lattice: the prerequisite for centered finite
    /// differences at `node`.
    pub fn clean_stencil(&self, node: usize, radius: i64) -> bool {
        let (i, j) = self.lattice[node];
        for dj in -radius..=radius {
            for di in -radius..=radius {
                match self.node_at(i + di, j + dj) {
                    Some(k) if !self.is_projected[k] => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// Finds the node sitting at `x`, tolerating rounding of half a
    /// relative ulp of the spacing; projected rim nodes are matched by
    /// their moved coordinates.
    pub fn locate_node(&self, x: &[f64]) -> Option<usize> {
        let i = ((x[0] - self.origin[0]) / self.h[0]).round() as i64;
        let j = ((x[1] - self.origin[1]) / self.h[1]).round() as i64;
        let tol = 1e-9 * self.h[0].max(self.h[1]);
        // Projected nodes moved by up to one spacing; scan a 3x3 patch.
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(k) = self.node_at(i + di, j + dj) {
                    let p = self.nodes[k];
                    if (p[0] - x[0]).abs() <= tol && (p[1] - x[1]).abs() <= tol {
                        return Some(k);
                    }
                }
            }
        }
        None
    }

    /// Quadrature points of one cell under the isoparametric bilinear map.
    pub fn cell_quad(&self, cell: usize, rule: QuadRule) -> Vec<QuadPoint> {
        self.cell_quad_tensor(cell, rule.order())
    }

    /// Same isoparametric quadrature with an `n x n` tensor Gauss rule,
    /// for refinement checks beyond the named rules.
    pub fn cell_quad_tensor(&self, cell: usize, n: usize) -> Vec<QuadPoint> {
        let ids = self.cells[cell];
        let xs: Vec<[f64; 2]> = ids.iter().map(|&k| self.nodes[k]).collect();
        let (pts, wts) = gauss_legendre(n);
        let mut out = Vec::with_capacity(pts.len() * pts.len());
        for (b, &eta) in pts.iter().enumerate() {
            for (a, &xi) in pts.iter().enumerate() {
                let shape = shape_values(xi, eta);
                let gref = shape_grads_ref(xi, eta);
                let mut x = [0.0; 2];
                let mut jac = [[0.0; 2]; 2]; // dx_k / dxi_l
                for c in 0..4 {
                    for k in 0..2 {
                        x[k] += shape[c] * xs[c][k];
                        jac[k][0] += gref[c][0] * xs[c][k];
                        jac[k][1] += gref[c][1] * xs[c][k];
                    }
                }
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let inv = [
                    [jac[1][1] / det, -jac[0][1] / det],
                    [-jac[1][0] / det, jac[0][0] / det],
                ];
                let mut grad = [[0.0; 2]; 4];
                for c in 0..4 {
                    // Physical gradient: J^{-T} grad_ref.
                    grad[c][0] = inv[0][0] * gref[c][0] + inv[1][0] * gref[c][1];
                    grad[c][1] = inv[0][1] * gref[c][0] + inv[1][1] * gref[c][1];
                }
                out.push(QuadPoint {
                    x,
                    weight: wts[a] * wts[b] * det,
                    shape,
                    grad,
                });
            }
        }
        out
    }

    /// Total mesh area by quadrature.
    pub fn area(&self) -> f64 {
        (0..self.cells.len())
            .map(|c| {
                self.cell_quad(c, QuadRule::Gauss2)
                    .iter()
                    .map(|q| q.weight)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Nodal values of a scalar field over a shared grid.
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<GridField> {
        if values.len() != grid.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(GridField { grid, values })
    }

    /// Samples a closed-form function at every node.
    pub fn project(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> GridField {
        let values = grid.nodes.iter().map(|p| f(p)).collect();
        GridField { grid, values }
    }

    /// Centered lattice gradient; `None` off clean stencils.
    pub fn gradient_at_node(&self, node: usize) -> Option<[f64; 2]> {
        let g = &self.grid;
        if !g.clean_stencil(node, 1) {
            return None;
        }
        let (i, j) = g.lattice_of(node);
        let v = |di: i64, dj: i64| self.values[g.node_at(i + di, j + dj).unwrap()];
        Some([
            (v(1, 0) - v(-1, 0)) / (2.0 * g.h[0]),
            (v(0, 1) - v(0, -1)) / (2.0 * g.h[1]),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_counts_and_boundary() {
        let g = Grid::rect([0.0, 0.0], [1.0, 2.0], 4, 8).unwrap();
        assert_eq!(g.node_count(), 5 * 9);
        assert_eq!(g.cells.len(), 32);
        assert_eq!(g.boundary.len(), 2 * 5 + 2 * 9 - 4);
        assert_eq!(g.interior.len(), 3 * 7);
        assert!((g.h[0] - 0.25).abs() < 1e-15);
        assert!((g.h[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn shape_functions_partition_unity() {
        let s = shape_values(0.3, -0.7);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Kronecker property at the corners.
        let s = shape_values(-1.0, -1.0);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1] + s[2] + s[3], 0.0);
    }

    #[test]
    fn quadrature_integrates_bilinear_exactly() {
        // integral of x*y over [0,1]^2 = 1/4, exact for any Gauss rule.
        let g = Grid::rect([0.0, 0.0], [1.0, 1.0], 3, 3).unwrap();
        for rule in [QuadRule::Gauss2, QuadRule::Gauss3] {
            let total: f64 = (0..g.cells.len())
                .flat_map(|c| g.cell_quad(c, rule))
                .map(|q| q.weight * q.x[0] * q.x[1])
                .sum();
            assert!((total - 0.25).abs() < 1e-14, "{rule:?}: {total}");
        }
    }

    #[test]
    fn quadrature_gradients_differentiate_nodal_fields() {
        // The FE gradient of the nodal interpolant of x + 2y is (1, 2).
        let g = Grid::rect([0.0, 0.0], [1.0, 1.0], 2, 2).unwrap();
        let vals: Vec<f64> = g.nodes.iter().map(|p| p[0] + 2.0 * p[1]).collect();
        for qp in g.cell_quad(0, QuadRule::Gauss2) {
            let mut grad = [0.0, 0.0];
            for c in 0..4 {
                let v = vals[g.cells[0][c]];
                grad[0] += qp.grad[c][0] * v;
                grad[1] += qp.grad[c][1] * v;
            }
            assert!((grad[0] - 1.0).abs() < 1e-13);
            assert!((grad[1] - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn disk_boundary_sits_on_the_circle() {
        let g = Grid::disk(0.75, 16).unwrap();
        assert!(!g.boundary.is_empty());
        for &b in &g.boundary {
            let p = g.nodes[b];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.75).abs() < 1e-12, "boundary node at radius {r}");
        }
        for &i in &g.interior {
            let p = g.nodes[i];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(r < 0.75);
        }
    }

    #[test]
    fn disk_area_converges_to_pi_r_squared() {
        let exact = std::f64::consts::PI * 0.25;
        let coarse = (Grid::disk(0.5, 16).unwrap().area() - exact).abs();
        let fine = (Grid::disk(0.5, 32).unwrap().area() - exact).abs();
        assert!(coarse / exact < 0.01, "coarse error {coarse:.3e}");
        assert!(fine < coarse, "refinement must reduce the area defect");
    }

    #[test]
    fn disk_center_node_exists_with_clean_stencil() {
        let g = Grid::disk(1.0, 16).unwrap();
        let c = g.locate_node(&[0.0, 0.0]).expect("center node");
        assert!(g.clean_stencil(c, 2));
        assert!(!g.is_boundary[c]);
    }

    #[test]
    fn locate_node_finds_projected_rim_nodes() {
        let g = Grid::disk(1.0, 16).unwrap();
        for &b in &g.boundary {
            let p = g.nodes[b];
            assert_eq!(g.locate_node(&[p[0], p[1]]), Some(b));
        }
    }

    #[test]
    fn grid_field_gradient_is_centered() {
        let g = Arc::new(Grid::rect([0.0, 0.0], [1.0, 1.0], 8, 8).unwrap());
        let f = GridField::project(g.clone(), |p| p[0] * p[0] + 3.0 * p[1]);
        let node = g.node_at(4, 4).unwrap();
        let grad = f.gradient_at_node(node).unwrap();
        // Centered differences are exact on quadratics.
        assert!((grad[0] - 2.0 * g.nodes[node][0]).abs() < 1e-12);
        assert!((grad[1] - 3.0).abs() < 1e-12);
        // Boundary nodes have no clean stencil.
        let corner = g.node_at(0, 0).unwrap();
        assert!(f.gradient_at_node(corner).is_none());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::rect([0.0, 0.0], [0.0, 1.0], 4, 4).is_err());
        assert!(Grid::disk(1.0, 7).is_err());
        assert!(Grid::disk(-1.0, 16).is_err());
    }
}
