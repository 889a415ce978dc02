//! Reverse-mode automatic differentiation over scalar expression graphs, plus
//! the dense vector/matrix kernels the rest of the library builds on.
//!
//! Numeric kernels throughout the crate are generic over [`Scalar`], with
//! three instantiations:
//!
//! * `f64` — plain evaluation;
//! * [`Var`] — reverse mode on a [`Tape`], for gradients of training losses;
//! * [`Dual<R>`] — forward mode, for Jacobian-vector products; `Dual<Var>`
//!   nests the two when trace probes must stay differentiable.
//!
//! All arithmetic is 64-bit. The primitive set is add, sub, mul, div, neg,
//! tanh, exp, log, square, sqrt, plus the dot/sum reductions below; every
//! other special function in the crate (sigmoid, softplus, log-gamma, ...)
//! is composed from these.

mod dual;
mod params;
mod tape;

pub use dual::Dual;
pub use params::{LayerShape, ParamLayout, ParamVector};
pub use tape::{Tape, Var};

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::{Error, Result};

/// Differentiable scalar: the element type of every numeric kernel.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Primal value, used for branching, pivot selection, and diagnostics.
    fn value(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    /// `c * self`.
    fn scale(self, c: f64) -> Self;
    /// `self + c`.
    fn add_const(self, c: f64) -> Self;
    /// `c - self`.
    fn sub_from(self, c: f64) -> Self;
    /// `c / self`.
    fn recip_const(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn square(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        c * self
    }
    fn add_const(self, c: f64) -> Self {
        self + c
    }
    fn sub_from(self, c: f64) -> Self {
        c - self
    }
    fn recip_const(self, c: f64) -> Self {
        c / self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

// ---- reductions ----------------------------------------------------------

/// Sum of a non-empty slice, left to right.
pub fn sum<R: Scalar>(xs: &[R]) -> R {
    assert!(!xs.is_empty(), "sum of empty slice");
    xs[1..].iter().fold(xs[0], |acc, &x| acc + x)
}

/// Dot product of equal-length, non-empty slices.
pub fn dot<R: Scalar>(a: &[R], b: &[R]) -> R {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    assert!(!a.is_empty(), "dot of empty slices");
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Squared Euclidean norm of a non-empty slice.
pub fn sq_norm<R: Scalar>(xs: &[R]) -> R {
    assert!(!xs.is_empty(), "sq_norm of empty slice");
    let mut acc = xs[0].square();
    for &x in &xs[1..] {
        acc = acc + x.square();
    }
    acc
}

// ---- dense matrices -------------------------------------------------------

/// Dense row-major matrix over any scalar type.
#[derive(Clone, Debug)]
pub struct Mat<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Scalar> Mat<R> {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<R>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat<R>) -> Mat<R> {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        Mat::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = self.at(i, 0) * other.at(0, j);
            for k in 1..self.cols {
                acc = acc + self.at(i, k) * other.at(k, j);
            }
            acc
        })
    }

    pub fn matvec(&self, x: &[R]) -> Vec<R> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// In-place `diag(d) * self` (scales row i by `d[i]`).
    pub fn scale_rows(&mut self, d: &[R]) {
        assert_eq!(d.len(), self.rows, "scale_rows length mismatch");
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = self.at(i, j) * d[i];
                self.set(i, j, v);
            }
        }
    }

    pub fn trace(&self) -> R {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        let mut acc = self.at(0, 0);
        for i in 1..self.rows {
            acc = acc + self.at(i, i);
        }
        acc
    }

    /// Tr(MᵀM) = sum of squared entries.
    pub fn frobenius_sq(&self) -> R {
        sq_norm(&self.data)
    }

    /// Tr(M²) for square M.
    pub fn trace_of_square(&self) -> R {
        assert_eq!(self.rows, self.cols, "trace_of_square of non-square matrix");
        let n = self.rows;
        let mut acc = self.at(0, 0) * self.at(0, 0);
        let mut first = true;
        for i in 0..n {
            for j in 0..n {
                if first {
                    first = false;
                    continue;
                }
                acc = acc + self.at(i, j) * self.at(j, i);
            }
        }
        acc
    }
}

impl Mat<f64> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }
}

// ---- driver entry points --------------------------------------------------

/// Value and gradient of a scalar expression.
#[derive(Clone, Debug)]
pub struct GradResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Gradient of `f` at `x` by one reverse sweep.
///
/// The builder receives one [`Var`] per input, in order, and returns the
/// output variable. Deterministic for fixed `x`; any non-finite value during
/// the forward or backward pass is reported with the offending node kind.
pub fn grad<F>(f: F, x: &[f64]) -> Result<GradResult>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = tape.vars(x);
    let output = f(&tape, &vars)?;
    let adjoints = tape.backward(output)?;
    let grad = vars.iter().map(|v| adjoints[v.index()]).collect();
    Ok(GradResult { value: output.value(), grad })
}

/// Jacobian-vector product `(J g)(z) · w` by forward mode, at the cost of a
/// single evaluation of `g` and without materializing the Jacobian.
pub fn jvp<F>(g: F, z: &[f64], w: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(&[Dual<f64>]) -> Result<Vec<Dual<f64>>>,
{
    if z.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: w.len(),
            context: "jvp direction vs point",
        });
    }
    let inputs: Vec<Dual<f64>> =
        z.iter().zip(w).map(|(&re, &dx)| Dual::seeded(re, dx)).collect();
    let out = g(&inputs)?;
    Ok(out.into_iter().map(|d| d.dx).collect())
}
