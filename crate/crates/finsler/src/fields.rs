//! Closed-form polynomial fields used as test functions, boundary data,
//! and vector fields for covariant differentiation.
//!
//! Polynomials differentiate symbolically (termwise), so their gradients
//! and Hessians are exact at every scalar type without spending dual
//! nesting depth.

use crate::dual::Scalar;
use crate::error::{Error, Result};

/// `sum_k c_k * prod_i x_i^{e_ki}` over a fixed dimension.
#[derive(Debug, Clone)]
pub struct PolyField {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl PolyField {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<PolyField> {
        for (_, exps) in &terms {
            if exps.len() != dim {
                return Err(Error::invalid(format!(
                    "monomial exponent tuple {exps:?} does not match dimension {dim}"
                )));
            }
        }
        Ok(PolyField { dim, terms })
    }

    pub fn constant(dim: usize, c: f64) -> PolyField {
        PolyField { dim, terms: vec![(c, vec![0; dim])] }
    }

    /// The coordinate function `x^k`.
    pub fn coordinate(dim: usize, k: usize) -> PolyField {
        let mut exps = vec![0; dim];
        exps[k] = 1;
        PolyField { dim, terms: vec![(1.0, exps)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut acc = S::zero();
        for (c, exps) in &self.terms {
            let mut t = S::lift(*c);
            for (k, &e) in exps.iter().enumerate() {
                if e > 0 {
                    t *= x[k].powi(e as i32);
                }
            }
            acc += t;
        }
        acc
    }

    /// Exact symbolic partial derivative.
    pub fn partial(&self, j: usize) -> PolyField {
        let terms = self
            .terms
            .iter()
            .filter(|(_, exps)| exps[j] > 0)
            .map(|(c, exps)| {
                let mut e = exps.clone();
                let p = e[j];
                e[j] -= 1;
                (c * p as f64, e)
            })
            .collect();
        PolyField { dim: self.dim, terms }
    }

    pub fn grad<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        (0..self.dim).map(|j| self.partial(j).eval(x)).collect()
    }

    /// Row-major Hessian, exact.
    pub fn hessian<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let m = self.dim;
        let mut h = vec![S::zero(); m * m];
        for i in 0..m {
            let pi = self.partial(i);
            for j in 0..=i {
                let v = pi.partial(j).eval(x);
                h[i * m + j] = v;
                h[j * m + i] = v;
            }
        }
        h
    }
}

/// A polynomial vector field, one component per coordinate.
#[derive(Debug, Clone)]
pub struct PolyVectorField {
    pub components: Vec<PolyField>,
}

impl PolyVectorField {
    pub fn new(components: Vec<PolyField>) -> Result<PolyVectorField> {
        if components.is_empty() {
            return Err(Error::invalid("vector field needs at least one component"));
        }
        let dim = components[0].dim();
        if components.len() != dim || components.iter().any(|c| c.dim() != dim) {
            return Err(Error::invalid(
                "vector field components must match the coordinate dimension",
            ));
        }
        Ok(PolyVectorField { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Directional derivative `dV^i(y) = sum_k dV^i/dx^k y^k`, exact.
    pub fn directional<S: Scalar>(&self, x: &[S], y: &[S]) -> Vec<S> {
        self.components
            .iter()
            .map(|c| {
                let g = c.grad(x);
                crate::linalg::dot(&g, y)
            })
            .collect()
    }
}
