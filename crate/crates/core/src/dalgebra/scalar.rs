use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::series::softplus;
use super::TPoly;

/// The scalar algebra that dynamics, networks and integrators are generic over.
///
/// Implemented for `f64` (plain evaluation) and [`TPoly`] (evaluation with
/// derivatives). `value` exposes the constant part, which is what step-size
/// control and branching decisions look at.
pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;

    /// A constant living in the same algebra as `self`.
    fn constant_like(&self, c: f64) -> Self;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tanh(&self) -> Self;
    fn softplus(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powf(&self, p: f64) -> Self;

    /// Clamps by the constant part: inside `[lo, hi]` the value passes
    /// through unchanged, outside it is replaced by the bound (all derivatives
    /// zero).
    fn clamp(&self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v < lo {
            self.constant_like(lo)
        } else if v > hi {
            self.constant_like(hi)
        } else {
            self.clone()
        }
    }

    /// `self += a * x`
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self = self.clone() + x.clone() * a;
    }

    /// `self *= a`
    fn scale(&mut self, a: f64) {
        *self = self.clone() * a;
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant_like(&self, c: f64) -> f64 {
        c
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> f64 {
        f64::ln(*self)
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn tanh(&self) -> f64 {
        f64::tanh(*self)
    }
    fn softplus(&self) -> f64 {
        softplus(*self)
    }
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn powf(&self, p: f64) -> f64 {
        f64::powf(*self, p)
    }
    fn add_scaled(&mut self, a: f64, x: &f64) {
        *self += a * x;
    }
    fn scale(&mut self, a: f64) {
        *self *= a;
    }
}

impl Scalar for TPoly {
    fn value(&self) -> f64 {
        self.constant_part()
    }
    fn constant_like(&self, c: f64) -> TPoly {
        TPoly::constant(self.algebra(), c)
    }
    fn exp(&self) -> TPoly {
        TPoly::exp(self)
    }
    fn ln(&self) -> TPoly {
        TPoly::ln(self)
    }
    fn sin(&self) -> TPoly {
        TPoly::sin(self)
    }
    fn cos(&self) -> TPoly {
        TPoly::cos(self)
    }
    fn tanh(&self) -> TPoly {
        TPoly::tanh(self)
    }
    fn softplus(&self) -> TPoly {
        TPoly::softplus(self)
    }
    fn sqrt(&self) -> TPoly {
        TPoly::sqrt(self)
    }
    fn powf(&self, p: f64) -> TPoly {
        TPoly::powf(self, p)
    }
    fn add_scaled(&mut self, a: f64, x: &TPoly) {
        TPoly::add_scaled(self, a, x);
    }
    fn scale(&mut self, a: f64) {
        for c in self.coeffs_mut() {
            *c *= a;
        }
    }
}
