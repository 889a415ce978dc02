//! Scalar reverse-mode tape.
//!
//! Operations push nodes onto an append-only Wengert list; each node caches
//! the local partial derivatives with respect to its operands, so the backward
//! sweep is a single reverse pass accumulating adjoints. Operand indices
//! always precede their consumers, which makes that pass topological by
//! construction.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Scalar;
use crate::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    op: &'static str,
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Recording tape for one scalar evaluation. Single-threaded; create one per
/// evaluation (they are cheap) and share read-only inputs across threads
/// instead.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<&'static str>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), first_non_finite: Cell::new(None) }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(n)), first_non_finite: Cell::new(None) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input (leaf) variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push("input", value, NONE, 0.0, NONE, 0.0)
    }

    /// Register a slice of inputs, preserving order.
    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant node: participates in the forward value but receives no
    /// adjoint of interest.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push("const", value, NONE, 0.0, NONE, 0.0)
    }

    fn push(&self, op: &'static str, val: f64, p0: u32, d0: f64, p1: u32, d1: f64) -> Var<'_> {
        if !val.is_finite() && self.first_non_finite.get().is_none() {
            self.first_non_finite.set(Some(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { op, parents: [p0, p1], partials: [d0, d1] });
        Var { tape: self, idx, val }
    }

    /// First operation that produced a non-finite forward value, if any.
    pub fn forward_fault(&self) -> Option<&'static str> {
        self.first_non_finite.get()
    }

    /// Reverse sweep from `output`. Returns one adjoint per tape node;
    /// callers slice out the entries of their input variables.
    pub fn backward(&self, output: Var<'_>) -> Result<Vec<f64>> {
        if let Some(op) = self.forward_fault() {
            return Err(Error::NonFinite { op, phase: "forward" });
        }
        let nodes = self.nodes.borrow();
        let mut adjoints: Vec<f64> = vec![0.0; nodes.len()];
        adjoints[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(Error::NonFinite { op: nodes[i].op, phase: "backward" });
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adjoints[p as usize] += a * node.partials[k];
                }
            }
        }
        Ok(adjoints)
    }
}

/// Handle to a tape node; cheap to copy, carries the cached forward value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn index(self) -> usize {
        self.idx as usize
    }

    fn unary(self, op: &'static str, val: f64, d: f64) -> Var<'t> {
        self.tape.push(op, val, self.idx, d, NONE, 0.0)
    }

    fn binary(self, op: &'static str, other: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        self.tape.push(op, val, self.idx, da, other.idx, db)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("add", rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("sub", rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("mul", rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let inv = 1.0 / rhs.val;
        self.binary("div", rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary("neg", -self.val, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }

    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn scale(self, c: f64) -> Self {
        self.unary("scale", c * self.val, c)
    }

    fn add_const(self, c: f64) -> Self {
        self.unary("add_const", self.val + c, 1.0)
    }

    fn sub_from(self, c: f64) -> Self {
        self.unary("sub_from", c - self.val, -1.0)
    }

    fn recip_const(self, c: f64) -> Self {
        let v = c / self.val;
        self.unary("recip_const", v, -v / self.val)
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary("tanh", t, 1.0 - t * t)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary("exp", e, e)
    }

    fn ln(self) -> Self {
        self.unary("log", self.val.ln(), 1.0 / self.val)
    }

    fn square(self) -> Self {
        self.unary("square", self.val * self.val, 2.0 * self.val)
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary("sqrt", s, 0.5 / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topological_order_holds() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = (x * x + x).tanh();
        let nodes = tape.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            for &p in &n.parents {
                if p != NONE {
                    assert!((p as usize) < i);
                }
            }
        }
        drop(nodes);
        assert!(y.value().is_finite());
    }

    #[test]
    fn every_reachable_node_gets_an_adjoint() {
        let tape = Tape::new();
        let x = tape.var(0.3);
        let y = tape.var(1.7);
        let out = x * y + y.exp();
        let adj = tape.backward(out).unwrap();
        assert_eq!(adj.len(), tape.len());
        // d out / dx = y, d out / dy = x + e^y
        assert!((adj[x.index()] - 1.7).abs() < 1e-15);
        assert!((adj[y.index()] - (0.3 + 1.7f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn forward_fault_names_the_op() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let _ = x.ln();
        let err = tape.backward(x).unwrap_err();
        match err {
            Error::NonFinite { op, phase } => {
                assert_eq!(op, "log");
                assert_eq!(phase, "forward");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
