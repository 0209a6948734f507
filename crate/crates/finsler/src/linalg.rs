//! Small dense linear algebra over generic scalars, plus f64 spectral
//! helpers backed by nalgebra.
//!
//! The geometry kernels solve m x m systems (m = 2 or 3) whose entries are
//! nested dual numbers, so the elimination routines here are generic over
//! [`Scalar`]. Pivoting compares primal magnitudes only: the factorization
//! then takes the same branch for a dual matrix as for its primal part,
//! which is exactly what differentiating through a solve requires.

use nalgebra::{DMatrix, DVector};

use crate::dual::Scalar;
use crate::error::{Error, Result};

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Row-major matrix-vector product for an `m x m` matrix stored flat.
pub fn mat_vec<S: Scalar>(a: &[S], x: &[S]) -> Vec<S> {
    let m = x.len();
    debug_assert_eq!(a.len(), m * m);
    (0..m).map(|i| dot(&a[i * m..(i + 1) * m], x)).collect()
}

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting
/// on primal magnitude. `a` is row-major `m x m` and is destroyed; `b`
/// holds the solution on return.
pub fn solve_in_place<S: Scalar>(a: &mut [S], b: &mut [S]) -> Result<()> {
    let m = b.len();
    debug_assert_eq!(a.len(), m * m);
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col * m + col].re().abs();
        for row in col + 1..m {
            let mag = a[row * m + col].re().abs();
            if mag > best {
                best = mag;
                piv = row;
            }
        }
        if best == 0.0 {
            return Err(Error::IllConditioned(format!(
                "zero pivot in column {col} of a {m}x{m} solve"
            )));
        }
        if piv != col {
            for k in 0..m {
                a.swap(col * m + k, piv * m + k);
            }
            b.swap(col, piv);
        }
        let inv = a[col * m + col].recip();
        for row in col + 1..m {
            let factor = a[row * m + col] * inv;
            a[row * m + col] = S::zero();
            for k in col + 1..m {
                let t = factor * a[col * m + k];
                a[row * m + k] -= t;
            }
            let t = factor * b[col];
            b[row] -= t;
        }
    }
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in col + 1..m {
            acc -= a[col * m + k] * b[k];
        }
        b[col] = acc / a[col * m + col];
    }
    Ok(())
}

/// Solves `A x = b` without destroying the inputs.
pub fn solve<S: Scalar>(a: &[S], b: &[S]) -> Result<Vec<S>> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    solve_in_place(&mut a, &mut x)?;
    Ok(x)
}

/// Matrix inverse via elimination against the identity, row-major.
pub fn invert<S: Scalar>(a: &[S], m: usize) -> Result<Vec<S>> {
    debug_assert_eq!(a.len(), m * m);
    let mut cols = Vec::with_capacity(m);
    for j in 0..m {
        let mut e = vec![S::zero(); m];
        e[j] = S::one();
        let mut work = a.to_vec();
        solve_in_place(&mut work, &mut e)?;
        cols.push(e);
    }
    let mut out = vec![S::zero(); m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = cols[j][i];
        }
    }
    Ok(out)
}

/// Determinant via LU with primal-magnitude pivoting.
pub fn det<S: Scalar>(a: &[S], m: usize) -> S {
    debug_assert_eq!(a.len(), m * m);
    let mut a = a.to_vec();
    let mut sign = 1.0;
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col * m + col].re().abs();
        for row in col + 1..m {
            let mag = a[row * m + col].re().abs();
            if mag > best {
                best = mag;
                piv = row;
            }
        }
        if best == 0.0 {
            return S::zero();
        }
        if piv != col {
            for k in 0..m {
                a.swap(col * m + k, piv * m + k);
            }
            sign = -sign;
        }
        let inv = a[col * m + col].recip();
        for row in col + 1..m {
            let factor = a[row * m + col] * inv;
            for k in col..m {
                let t = factor * a[col * m + k];
                a[row * m + k] -= t;
            }
        }
    }
    let mut d = S::lift(sign);
    for i in 0..m {
        d *= a[i * m + i];
    }
    d
}

/// Row-major flat storage to a nalgebra matrix.
pub fn to_dmatrix(a: &[f64], m: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, m, a)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ev
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a)[0]
}

/// Compressed sparse rows, the storage for assembled stiffness matrices.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets, summing duplicates. The
    /// sort is stable on (row, col), so assembly order does not change
    /// the result bit for bit.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Csr {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] == r {
                    d[r] = self.vals[k];
                }
            }
        }
        d
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD systems. Returns the
/// solution and the iteration count.
pub fn pcg(a: &Csr, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut d = a.diagonal();
    for v in d.iter_mut() {
        if *v <= 0.0 {
            return Err(Error::IllConditioned(
                "stiffness diagonal is not positive".into(),
            ));
        }
        *v = 1.0 / *v;
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::IllConditioned(format!(
                "conjugate gradients met a non-positive curvature direction (p'Ap = {pap})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= rel_tol * b_norm {
            return Ok((x, it + 1));
        }
        z = r.iter().zip(&d).map(|(ri, di)| ri * di).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: norm(&r) / b_norm })
}

/// Spectral norm (largest singular value) of a general matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let ev = sym_eigenvalues(&gram);
    ev[ev.len() - 1].max(0.0).sqrt()
}

/// Spectral condition number of an SPD matrix.
pub fn spd_condition(a: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(a);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Dense SPD solve for the chart Newton step; falls back to LU when the
/// Cholesky factorization fails on a marginally indefinite matrix.
pub fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let lu_input = a.clone();
    if let Some(chol) = a.cholesky() {
        return Ok(chol.solve(&b));
    }
    lu_input
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::IllConditioned("singular Newton system".into()))
}

/// Gauss-Legendre nodes and weights on [-1, 1], any order >= 1.
///
/// Newton iteration on the Legendre polynomial from the Chebyshev-based
/// initial guess; converges to machine precision in a handful of steps.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_eval(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_eval(n, x);
        nodes[n - 1 - k] = x;
        weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and its derivative by the three-term recurrence.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual;

    #[test]
    fn solve_matches_known_system() {
        // [2 1; 1 3] x = [3; 5] has x = (4/5, 7/5).
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn solve_needs_pivoting() {
        // Zero in the leading position forces a row swap.
        let a = [0.0, 1.0, 1.0, 0.0];
        let x = solve(&a, &[2.0, 3.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(
            solve(&a, &[1.0, 1.0]),
            Err(crate::error::Error::IllConditioned(_))
        ));
    }

    #[test]
    fn determinant_and_inverse() {
        let a = [1.0, 2.0, 0.0, 3.0, 1.0, 2.0, 0.0, 1.0, 1.0];
        // det = 1(1-2) - 2(3-0) + 0 = -7.
        assert!((det(&a, 3) + 7.0).abs() < 1e-13);
        let inv = invert(&a, 3).unwrap();
        let prod = mat_vec(&inv, &[1.0, 3.0, 0.0]);
        // A^{-1} applied to the first column of A gives e_0.
        assert!((prod[0] - 1.0).abs() < 1e-13);
        assert!(prod[1].abs() < 1e-13);
        assert!(prod[2].abs() < 1e-13);
    }

    #[test]
    fn solve_differentiates_through() {
        // x(t) solves [t 1; 1 2] x = [1; 0]; x0(t) = 2/(2t - 1),
        // dx0/dt = -4/(2t - 1)^2 = -4/9 at t = 2.
        let t = Dual::<f64>::variable(2.0);
        let a = [t, Dual::one(), Dual::one(), Dual::lift(2.0)];
        let x = solve(&a, &[Dual::one(), Dual::zero()]).unwrap();
        assert!((x[0].re - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[0].du + 4.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn dual_determinant() {
        // det [t 0; 0 t] = t^2, derivative 2t.
        let t = Dual::<f64>::variable(3.0);
        let a = [t, Dual::zero(), Dual::zero(), t];
        let d = det(&a, 2);
        assert!((d.re - 9.0).abs() < 1e-14);
        assert!((d.du - 6.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_helpers() {
        let a = to_dmatrix(&[2.0, 0.0, 0.0, 0.5], 2);
        assert!((min_eigenvalue(&a) - 0.5).abs() < 1e-14);
        assert!((spd_condition(&a) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Order n is exact through degree 2n - 1.
        for n in [1usize, 2, 3, 5, 8, 16, 33] {
            let (xs, ws) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let val: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| w * x.powi(deg as i32))
                .sum();
            assert!(val.abs() < 1e-13, "odd power {deg} at order {n}");
            let even = (deg - 1) as i32;
            let val: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| w * x.powi(even))
                .sum();
            let exact = 2.0 / (even as f64 + 1.0);
            assert!(
                (val - exact).abs() < 1e-12,
                "even power {even} at order {n}: {val} vs {exact}"
            );
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        let (_, ws) = gauss_legendre(24);
        let total: f64 = ws.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn csr_merges_duplicates_and_multiplies() {
        let a = Csr::from_triplets(
            3,
            vec![(0, 0, 1.0), (0, 0, 1.0), (1, 1, 3.0), (2, 0, 4.0), (0, 2, 5.0)],
        );
        assert_eq!(a.diagonal(), vec![2.0, 3.0, 0.0]);
        let y = a.mul_vec(&[1.0, 1.0, 1.0]);
        assert_eq!(y, vec![7.0, 3.0, 4.0]);
    }

    #[test]
    fn pcg_solves_a_discrete_laplacian() {
        // Tridiagonal 1-D Laplacian; compare against the dense solver.
        let n = 40;
        let mut t = Vec::new();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            t.push((i, i, 2.0));
            dense[i * n + i] = 2.0;
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
                dense[i * n + i + 1] = -1.0;
                dense[(i + 1) * n + i] = -1.0;
            }
        }
        let a = Csr::from_triplets(n, t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x, iters) = pcg(&a, &b, 1e-12, 500).unwrap();
        let x_dense = solve(&dense, &b).unwrap();
        assert!(iters <= n + 2, "CG must converge within n iterations, took {iters}");
        for i in 0..n {
            assert!((x[i] - x_dense[i]).abs() < 1e-8);
        }
    }
}
