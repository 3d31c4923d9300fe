//! Scalar recording tape for reverse-mode differentiation.
//!
//! Every primitive is smooth, so a graph that contains forward-mode input
//! Jacobian propagation (see [`crate::diff::net::eval_with_jacobian`]) stays
//! differentiable: the reverse pass picks up the second-order mixed terms
//! through the recorded tangent arithmetic automatically.
//!
//! Node ids are topologically ordered by construction, which makes the
//! backward pass a single reverse sweep over the op list. Tapes are cheap to
//! `clear` and reuse between samples; they are not shared across threads.

use crate::error::{CoreError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) u32);

#[derive(Clone, Copy, Debug)]
enum Op {
    /// Differentiable input (a network parameter). Adjoints of leaves are the
    /// gradients callers ask for.
    Leaf,
    /// Non-differentiated input (dataset values, physical constants).
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    /// a * b + c in one node; the workhorse of matrix-vector products.
    MulAdd(u32, u32, u32),
    Neg(u32),
    Square(u32),
    Sqrt(u32),
    Exp(u32),
    Ln(u32),
    Sin(u32),
    Cos(u32),
    Tanh(u32),
    Sigmoid(u32),
    Softplus(u32),
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            ops: Vec::with_capacity(n),
            vals: Vec::with_capacity(n),
        }
    }

    /// Drops all nodes but keeps the allocations for reuse.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.vals.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0 as usize]
    }

    fn push(&mut self, op: Op, val: f64) -> Var {
        let id = self.ops.len() as u32;
        self.ops.push(op);
        self.vals.push(val);
        Var(id)
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, v)
    }

    /// Constant node; its adjoint is computed but never read back.
    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Const, v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.0 as usize] + self.vals[b.0 as usize];
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.0 as usize] - self.vals[b.0 as usize];
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.0 as usize] * self.vals[b.0 as usize];
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.vals[a.0 as usize] / self.vals[b.0 as usize];
        self.push(Op::Div(a.0, b.0), v)
    }

    /// a * b + c.
    pub fn mul_add(&mut self, a: Var, b: Var, c: Var) -> Var {
        let v = self.vals[a.0 as usize] * self.vals[b.0 as usize] + self.vals[c.0 as usize];
        self.push(Op::MulAdd(a.0, b.0, c.0), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.vals[a.0 as usize];
        self.push(Op::Neg(a.0), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.vals[a.0 as usize];
        self.push(Op::Square(a.0), x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].sqrt();
        self.push(Op::Sqrt(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].ln();
        self.push(Op::Ln(a.0), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].sin();
        self.push(Op::Sin(a.0), v)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].cos();
        self.push(Op::Cos(a.0), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.vals[a.0 as usize].tanh();
        self.push(Op::Tanh(a.0), v)
    }

    pub fn sigmoid_node(&mut self, a: Var) -> Var {
        let v = sigmoid(self.vals[a.0 as usize]);
        self.push(Op::Sigmoid(a.0), v)
    }

    pub fn softplus_node(&mut self, a: Var) -> Var {
        let v = softplus(self.vals[a.0 as usize]);
        self.push(Op::Softplus(a.0), v)
    }

    /// Reverse sweep from `loss`, writing one adjoint per node into `adj`.
    ///
    /// `adj[i]` is d loss / d node_i. The buffer is resized and zeroed here,
    /// so it can be reused across calls without reallocation.
    pub fn backward_into(&self, loss: Var, adj: &mut Vec<f64>) -> Result<()> {
        let l = loss.0 as usize;
        if l >= self.ops.len() {
            return Err(CoreError::Contract(
                "backward: loss var is not on this tape".into(),
            ));
        }
        if !self.vals[l].is_finite() {
            return Err(CoreError::Numerical(format!(
                "backward: loss value is not finite ({})",
                self.vals[l]
            )));
        }
        adj.clear();
        adj.resize(self.ops.len(), 0.0);
        adj[l] = 1.0;
        let vals = &self.vals;
        for i in (0..=l).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * vals[b as usize];
                    adj[b as usize] += g * vals[a as usize];
                }
                Op::Div(a, b) => {
                    let inv_b = 1.0 / vals[b as usize];
                    adj[a as usize] += g * inv_b;
                    adj[b as usize] -= g * vals[i] * inv_b;
                }
                Op::MulAdd(a, b, c) => {
                    adj[a as usize] += g * vals[b as usize];
                    adj[b as usize] += g * vals[a as usize];
                    adj[c as usize] += g;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::Square(a) => adj[a as usize] += 2.0 * vals[a as usize] * g,
                Op::Sqrt(a) => adj[a as usize] += g * 0.5 / vals[i],
                Op::Exp(a) => adj[a as usize] += g * vals[i],
                Op::Ln(a) => adj[a as usize] += g / vals[a as usize],
                Op::Sin(a) => adj[a as usize] += g * vals[a as usize].cos(),
                Op::Cos(a) => adj[a as usize] -= g * vals[a as usize].sin(),
                Op::Tanh(a) => {
                    let y = vals[i];
                    adj[a as usize] += g * (1.0 - y * y);
                }
                Op::Sigmoid(a) => {
                    let y = vals[i];
                    adj[a as usize] += g * y * (1.0 - y);
                }
                Op::Softplus(a) => adj[a as usize] += g * sigmoid(vals[a as usize]),
            }
        }
        Ok(())
    }

    /// Convenience wrapper around [`Tape::backward_into`].
    pub fn backward(&self, loss: Var) -> Result<Vec<f64>> {
        let mut adj = Vec::new();
        self.backward_into(loss, &mut adj)?;
        Ok(adj)
    }
}
