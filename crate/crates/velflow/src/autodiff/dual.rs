//! Forward-mode dual numbers over any [`Scalar`].
//!
//! `Dual<f64>` gives plain Jacobian-vector products. `Dual<Var>` nests
//! forward mode over the reverse tape, which is what lets Hutchinson trace
//! probes stay differentiable with respect to network parameters without ever
//! materializing the Jacobian.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct Dual<R> {
    pub re: R,
    pub dx: R,
}

impl<R: Scalar> Dual<R> {
    /// Input with seed direction `dx`.
    pub fn seeded(re: R, dx: R) -> Self {
        Dual { re, dx }
    }

    /// Treat `re` as constant with respect to the direction.
    pub fn constant(re: R) -> Self {
        Dual { re, dx: re.lift(0.0) }
    }
}

impl<R: Scalar> Add for Dual<R> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual { re: self.re + rhs.re, dx: self.dx + rhs.dx }
    }
}

impl<R: Scalar> Sub for Dual<R> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual { re: self.re - rhs.re, dx: self.dx - rhs.dx }
    }
}

impl<R: Scalar> Mul for Dual<R> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual { re: self.re * rhs.re, dx: self.dx * rhs.re + self.re * rhs.dx }
    }
}

impl<R: Scalar> Div for Dual<R> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        Dual { re, dx: (self.dx - re * rhs.dx) / rhs.re }
    }
}

impl<R: Scalar> Neg for Dual<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, dx: -self.dx }
    }
}

impl<R: Scalar> Scalar for Dual<R> {
    fn value(self) -> f64 {
        self.re.value()
    }

    fn lift(self, c: f64) -> Self {
        Dual { re: self.re.lift(c), dx: self.re.lift(0.0) }
    }

    fn scale(self, c: f64) -> Self {
        Dual { re: self.re.scale(c), dx: self.dx.scale(c) }
    }

    fn add_const(self, c: f64) -> Self {
        Dual { re: self.re.add_const(c), dx: self.dx }
    }

    fn sub_from(self, c: f64) -> Self {
        Dual { re: self.re.sub_from(c), dx: -self.dx }
    }

    fn recip_const(self, c: f64) -> Self {
        let re = self.re.recip_const(c);
        Dual { re, dx: -(self.dx * re / self.re) }
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual { re: t, dx: self.dx * t.square().sub_from(1.0) }
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual { re: e, dx: self.dx * e }
    }

    fn ln(self) -> Self {
        Dual { re: self.re.ln(), dx: self.dx / self.re }
    }

    fn square(self) -> Self {
        Dual { re: self.re.square(), dx: (self.re * self.dx).scale(2.0) }
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual { re: s, dx: self.dx / s.scale(2.0) }
    }
}
