//! Forward-mode automatic differentiation with nestable dual numbers.
//!
//! Every geometric quantity in this crate is an exact derivative of the
//! energy function F^2(x, v): the fundamental tensor is a second fibre
//! derivative, spray coefficients mix base and fibre derivatives, and the
//! curvature operators stack four to six derivatives on top of that. All of
//! them are computed by evaluating one generic kernel on [`Dual`] scalars,
//! so there is a single source of truth and no finite-difference noise.
//!
//! [`Dual<T>`] carries one derivative direction: `re + du * eps` with
//! `eps^2 = 0`. Nesting (`Dual<Dual<f64>>`, three deep, ...) yields exact
//! higher-order and mixed partials; a value of nesting depth d stores 2^d
//! floats and stays `Copy`, so deep nests allocate nothing. Multi-variable
//! gradients and Hessians are taken by re-running the kernel with different
//! seed directions, which is cheap at the dimensions (2 and 3) this crate
//! targets.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar types the geometric kernels are generic over: `f64` at the bottom,
/// [`Dual<S>`] for every derivative level stacked on top.
///
/// Branch decisions (pivoting, line searches, convergence tests) must use
/// [`Scalar::re`] or [`Scalar::amax`] so that a kernel takes the same path
/// for a dual argument as for its primal part; that is what makes a Newton
/// solve differentiable by running it on dual inputs.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// Embeds a constant: every derivative coefficient is zero.
    fn lift(c: f64) -> Self;

    /// The innermost primal value, with every derivative stripped.
    fn re(self) -> f64;

    /// Largest absolute value over all jet coefficients. Convergence tests
    /// on this quantity make Newton-type iterations converge the derivative
    /// coefficients, not just the primal point.
    fn amax(self) -> f64;

    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::lift(0.0)
    }

    fn one() -> Self {
        Self::lift(1.0)
    }

    /// Multiplication by an `f64` constant.
    fn scale(self, c: f64) -> Self {
        self * Self::lift(c)
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    /// Integer power by binary exponentiation (exact chain rule, no `ln`).
    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut acc = Self::one();
        let mut base = self;
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            k >>= 1;
        }
        acc
    }
}

impl Scalar for f64 {
    fn lift(c: f64) -> Self {
        c
    }

    fn re(self) -> f64 {
        self
    }

    fn amax(self) -> f64 {
        self.abs()
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }

    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// First-order jet `re + du * eps`, `eps^2 = 0`, over any [`Scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Dual { re, du }
    }

    /// A value that does not vary in this derivative direction.
    pub fn constant(re: T) -> Self {
        Dual { re, du: T::zero() }
    }

    /// A variable seeded with derivative 1 in this direction.
    pub fn variable(re: T) -> Self {
        Dual { re, du: T::one() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.du + rhs.du)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.du - rhs.du)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.re * rhs.du + self.du * rhs.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Dual::new(q, (self.du - q * rhs.du) / rhs.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn lift(c: f64) -> Self {
        Dual::constant(T::lift(c))
    }

    fn re(self) -> f64 {
        self.re.re()
    }

    fn amax(self) -> f64 {
        self.re.amax().max(self.du.amax())
    }

    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        // d sqrt = du / (2 sqrt); undefined at 0, as is the true derivative.
        Dual::new(r, self.du / r.scale(2.0))
    }

    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }

    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.du * self.re.sin()))
    }
}

/// Lifts an `f64` slice into any scalar type as constants.
pub fn lift_slice<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&c| S::lift(c)).collect()
}

/// Wraps a slice as dual constants: nothing varies.
pub fn consts<S: Scalar>(xs: &[S]) -> Vec<Dual<S>> {
    xs.iter().map(|&x| Dual::constant(x)).collect()
}

/// Wraps a slice as dual constants with coordinate `k` seeded as the
/// variable, for one pass of a partial derivative in direction `e_k`.
pub fn seed<S: Scalar>(xs: &[S], k: usize) -> Vec<Dual<S>> {
    let mut out = consts(xs);
    out[k].du = S::one();
    out
}

/// Wraps a slice as dual values varying along an arbitrary direction.
pub fn seed_dir<S: Scalar>(xs: &[S], dir: &[S]) -> Vec<Dual<S>> {
    xs.iter()
        .zip(dir)
        .map(|(&x, &d)| Dual::new(x, d))
        .collect()
}

/// Extracts primal parts from a dual slice.
pub fn primal<S: Scalar>(xs: &[Dual<S>]) -> Vec<S> {
    xs.iter().map(|d| d.re).collect()
}

/// Extracts derivative parts from a dual slice.
pub fn tangent<S: Scalar>(xs: &[Dual<S>]) -> Vec<S> {
    xs.iter().map(|d| d.du).collect()
}

/// Gradient of a scalar kernel by `m` seeded passes.
pub fn gradient_of<S, F>(f: F, at: &[S]) -> Vec<S>
where
    S: Scalar,
    F: Fn(&[Dual<S>]) -> Dual<S>,
{
    (0..at.len()).map(|k| f(&seed(at, k)).du).collect()
}

/// Dense symmetric Hessian of a scalar kernel by nested passes over the
/// upper triangle (row-major `m x m` output).
pub fn hessian_of<S, F>(f: F, at: &[S]) -> Vec<S>
where
    S: Scalar,
    F: Fn(&[Dual<Dual<S>>]) -> Dual<Dual<S>>,
{
    let m = at.len();
    let inner = consts(at);
    let mut h = vec![S::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut args = consts(&inner);
            args[i].re.du = S::one();
            args[j].du = Dual::new(S::one(), S::zero());
            let v = f(&args).du.du;
            h[i * m + j] = v;
            h[j * m + i] = v;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64>;
    type D2 = Dual<Dual<f64>>;

    #[test]
    fn first_derivative_of_square() {
        let x = D1::variable(3.0);
        let y = x * x;
        assert_eq!(y.re, 9.0);
        assert_eq!(y.du, 6.0);
    }

    #[test]
    fn quotient_rule() {
        // d/dx (1/x) = -1/x^2 at x = 4.
        let x = D1::variable(4.0);
        let y = x.recip();
        assert!((y.re - 0.25).abs() < 1e-15);
        assert!((y.du + 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn sqrt_chain_rule() {
        // d/dx sqrt(x^2 + 1) = x / sqrt(x^2 + 1) at x = 2.
        let x = D1::variable(2.0);
        let y = (x * x + D1::one()).sqrt();
        let expect = 2.0 / 5.0_f64.sqrt();
        assert!((y.re - 5.0_f64.sqrt()).abs() < 1e-15);
        assert!((y.du - expect).abs() < 1e-15);
    }

    #[test]
    fn trig_derivatives() {
        let x = D1::variable(0.7);
        assert!((x.sin().du - 0.7_f64.cos()).abs() < 1e-15);
        assert!((x.cos().du + 0.7_f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn mixed_partial_via_nesting() {
        // f(x, y) = x^2 y^3, d^2 f / dx dy = 6 x y^2 = 108 at (2, 3).
        let x = D2::new(Dual::variable(2.0), Dual::constant(0.0));
        let y = D2::new(Dual::constant(3.0), Dual::constant(1.0));
        let f = x * x * y * y * y;
        assert!((f.du.du - 108.0).abs() < 1e-12);
    }

    #[test]
    fn fourth_derivative_of_quartic() {
        // Four nested levels on x^4 must give exactly 4! = 24.
        type D4 = Dual<Dual<Dual<Dual<f64>>>>;
        let mut x = D4::lift(1.5);
        x.du = <Dual<Dual<Dual<f64>>>>::one();
        x.re.du = <Dual<Dual<f64>>>::one();
        x.re.re.du = <Dual<f64>>::one();
        x.re.re.re.du = 1.0;
        let y = x.powi(4);
        assert!((y.du.du.du.du - 24.0).abs() < 1e-12);
    }

    #[test]
    fn negative_powers() {
        // d/dx x^-3 = -3 x^-4 at x = 2.
        let x = D1::variable(2.0);
        let y = x.powi(-3);
        assert!((y.re - 0.125).abs() < 1e-15);
        assert!((y.du + 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_and_hessian_drivers() {
        // f(x) = x0^2 x1 + x1^3.
        let at = [2.0, 3.0];
        let g = gradient_of(|x| x[0] * x[0] * x[1] + x[1].powi(3), &at);
        assert!((g[0] - 12.0).abs() < 1e-12);
        assert!((g[1] - 31.0).abs() < 1e-12);
        let h = hessian_of(|x| x[0] * x[0] * x[1] + x[1].powi(3), &at);
        assert!((h[0] - 6.0).abs() < 1e-12); // 2 x1
        assert!((h[1] - 4.0).abs() < 1e-12); // 2 x0
        assert!((h[2] - 4.0).abs() < 1e-12);
        assert!((h[3] - 18.0).abs() < 1e-12); // 6 x1
    }

    #[test]
    fn amax_covers_whole_jet() {
        let d = D2::new(Dual::new(1.0, -7.0), Dual::new(0.5, 3.0));
        assert_eq!(d.amax(), 7.0);
        assert_eq!(d.re(), 1.0);
    }

    #[test]
    fn directional_seeding() {
        // Derivative of |x|^2 along direction (1, 2) at (3, 4) is 2 x . d = 22.
        let args = seed_dir(&[3.0, 4.0], &[1.0, 2.0]);
        let f = args[0] * args[0] + args[1] * args[1];
        assert!((f.du - 22.0).abs() < 1e-15);
    }
}
