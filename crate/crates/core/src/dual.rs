//! Forward-mode automatic differentiation with dual numbers.
//!
//! [`Dual<N>`] carries a value together with its partial derivatives with
//! respect to `N` independent variables. Numerical kernels are written once
//! against the [`Real`] trait and evaluated either on plain `f64` or on duals.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn recip(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Real for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn recip(self) -> Self {
        f64::recip(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// A dual number `value + Σ grad[i] εᵢ` with `εᵢ εⱼ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn new(value: f64, grad: [f64; N]) -> Self {
        Self { value, grad }
    }

    /// The `index`-th independent variable evaluated at `value`.
    pub fn variable(value: f64, index: usize) -> Self {
        let mut grad = [0.0; N];
        grad[index] = 1.0;
        Self { value, grad }
    }

    /// Seeds every coordinate of `point` as an independent variable.
    pub fn variables(point: &[f64; N]) -> [Self; N] {
        let mut out = [Self::constant(0.0); N];
        for (i, v) in point.iter().enumerate() {
            out[i] = Self::variable(*v, i);
        }
        out
    }

    // f(value) with f'(value) = slope
    #[inline]
    fn chain(self, value: f64, slope: f64) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= slope;
        }
        Self { value, grad }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g += r;
        }
        Self {
            value: self.value + rhs.value,
            grad,
        }
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut grad = [0.0; N];
        for (i, g) in grad.iter_mut().enumerate() {
            *g = self.grad[i] * rhs.value + self.value * rhs.grad[i];
        }
        Self {
            value: self.value * rhs.value,
            grad,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Self {
            value: self.value + rhs,
            grad: self.grad,
        }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Self {
            value: self.value - rhs,
            grad: self.grad,
        }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.value * rhs, rhs)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.chain(self.value / rhs, 1.0 / rhs)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn constant(value: f64) -> Self {
        Self {
            value,
            grad: [0.0; N],
        }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.value.ln_1p(), 1.0 / (1.0 + self.value))
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sinh(self) -> Self {
        self.chain(self.value.sinh(), self.value.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.value.cosh(), self.value.sinh())
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.chain(r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        self.chain(self.value.powi(n), f64::from(n) * self.value.powi(n - 1))
    }
}

/// `ln Σ exp(terms)` without overflow. Returns `-∞` for an empty slice.
pub fn log_sum_exp<S: Real>(terms: &[S]) -> S {
    let max = terms
        .iter()
        .map(Real::value)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return S::constant(max);
    }
    let mut acc = S::constant(0.0);
    for &t in terms {
        acc += (t - max).exp();
    }
    acc.ln() + max
}

#[cfg(test)]
mod tests {
    use super::*;

    fn composite<S: Real>(x: S, y: S) -> S {
        let r = (x * x + y * y + 1.0).sqrt();
        (x * r).sinh() / (y.cosh() + 2.0) + (r.ln_1p() * x).exp() - y.powi(3).recip() * 0.1
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let (x0, y0) = (0.37, 1.21);
        let [x, y] = Dual::<2>::variables(&[x0, y0]);
        let d = composite(x, y);
        let h = 1e-6;
        let fx = (composite(x0 + h, y0) - composite(x0 - h, y0)) / (2.0 * h);
        let fy = (composite(x0, y0 + h) - composite(x0, y0 - h)) / (2.0 * h);
        assert!((d.value - composite(x0, y0)).abs() < 1e-14);
        assert!((d.grad[0] - fx).abs() < 1e-8 * fx.abs().max(1.0));
        assert!((d.grad[1] - fy).abs() < 1e-8 * fy.abs().max(1.0));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        let d = log_sum_exp(&[Dual::<1>::variable(0.3, 0), Dual::constant(-0.2)]);
        let w = 0.3f64.exp() / (0.3f64.exp() + (-0.2f64).exp());
        assert!((d.grad[0] - w).abs() < 1e-15);
    }
}
