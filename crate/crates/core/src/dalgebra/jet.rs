//! Order-one truncated polynomials with a compile-time number of variables.
//!
//! `Jet<N>` carries the same information as a [`TPoly`](super::TPoly) over an
//! `Algebra::new(N, 1)`, but lives on the stack. Hot loops that only need
//! gradients (shooting Jacobians, training) use it instead of the general
//! type.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::series::{sigmoid, softplus};
use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(value: f64) -> Self {
        Jet { value, grad: [0.0; N] }
    }

    /// The `i`-th independent variable, expanded around `value`.
    ///
    /// Panics if `i >= N`.
    pub fn variable(i: usize, value: f64) -> Self {
        let mut grad = [0.0; N];
        grad[i] = 1.0;
        Jet { value, grad }
    }

    // Chain rule for a univariate function with value `f` and slope `df`.
    fn chain(&self, f: f64, df: f64) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= df;
        }
        Jet { value: f, grad }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.value += rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.value -= rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = self.grad[i] * rhs.value + self.value * rhs.grad[i];
        }
        Jet { value: self.value * rhs.value, grad }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = (self.grad[i] - q * rhs.grad[i]) / rhs.value;
        }
        Jet { value: q, grad }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.value * rhs, rhs)
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.chain(self.value / rhs, 1.0 / rhs)
    }
}

impl<const N: usize> Scalar for Jet<N> {
    fn value(&self) -> f64 {
        self.value
    }
    fn constant_like(&self, c: f64) -> Self {
        Jet::constant(c)
    }
    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s)
    }
    fn tanh(&self) -> Self {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn softplus(&self) -> Self {
        self.chain(softplus(self.value), sigmoid(self.value))
    }
    fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r)
    }
    fn powf(&self, p: f64) -> Self {
        self.chain(self.value.powf(p), p * self.value.powf(p - 1.0))
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        self.value += a * x.value;
        for (g, xg) in self.grad.iter_mut().zip(x.grad) {
            *g += a * xg;
        }
    }
    fn scale(&mut self, a: f64) {
        self.value *= a;
        for g in self.grad.iter_mut() {
            *g *= a;
        }
    }
}
