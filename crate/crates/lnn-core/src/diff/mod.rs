//! Exact-derivative computation engine.
//!
//! The same numerical kernels (network evaluation, Jacobian propagation,
//! Euler-Lagrange assembly, losses) run in two modes through the [`Algebra`]
//! trait: [`PlainAlg`] computes plain `f64` values for inference, and
//! [`TapeAlg`] records the identical arithmetic on a [`Tape`] so that
//! [`Tape::backward_into`] yields exact parameter gradients. Writing the math
//! once keeps the two paths from drifting apart.

pub mod adam;
pub mod mlp;
pub mod net;
pub mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use mlp::{eval_jacobian_traced, eval_traced, grad_params, Activation, Mlp, ParamVector, TapeMlp};
pub use tape::{sigmoid, softplus, Tape, Var};

/// Scalar arithmetic abstracted over plain evaluation and tape recording.
pub trait Algebra {
    type S: Copy;

    /// Non-differentiated scalar.
    fn konst(&mut self, v: f64) -> Self::S;
    fn add(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn sub(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn mul(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn div(&mut self, a: Self::S, b: Self::S) -> Self::S;
    /// a * b + c.
    fn mul_add(&mut self, a: Self::S, b: Self::S, c: Self::S) -> Self::S;
    fn neg(&mut self, a: Self::S) -> Self::S;
    fn square(&mut self, a: Self::S) -> Self::S;
    fn sqrt(&mut self, a: Self::S) -> Self::S;
    fn tanh(&mut self, a: Self::S) -> Self::S;
    fn sigmoid(&mut self, a: Self::S) -> Self::S;
    fn softplus(&mut self, a: Self::S) -> Self::S;
    /// Current numeric value (for diagnostics; not differentiable).
    fn value(&self, a: Self::S) -> f64;

    fn zero(&mut self) -> Self::S {
        self.konst(0.0)
    }

    /// Dot product of equal-length slices; zero for empty input.
    fn dot(&mut self, a: &[Self::S], b: &[Self::S]) -> Self::S {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = self.zero();
        for (&x, &y) in a.iter().zip(b) {
            acc = self.mul_add(x, y, acc);
        }
        acc
    }
}

/// Direct `f64` evaluation.
#[derive(Clone, Copy, Default)]
pub struct PlainAlg;

impl Algebra for PlainAlg {
    type S = f64;

    #[inline]
    fn konst(&mut self, v: f64) -> f64 {
        v
    }
    #[inline]
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline]
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    #[inline]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    #[inline]
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    #[inline]
    fn mul_add(&mut self, a: f64, b: f64, c: f64) -> f64 {
        a * b + c
    }
    #[inline]
    fn neg(&mut self, a: f64) -> f64 {
        -a
    }
    #[inline]
    fn square(&mut self, a: f64) -> f64 {
        a * a
    }
    #[inline]
    fn sqrt(&mut self, a: f64) -> f64 {
        a.sqrt()
    }
    #[inline]
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    #[inline]
    fn sigmoid(&mut self, a: f64) -> f64 {
        tape::sigmoid(a)
    }
    #[inline]
    fn softplus(&mut self, a: f64) -> f64 {
        tape::softplus(a)
    }
    #[inline]
    fn value(&self, a: f64) -> f64 {
        a
    }
}

/// Recording evaluation: every operation becomes a tape node.
pub struct TapeAlg<'a> {
    pub tape: &'a mut Tape,
}

impl<'a> TapeAlg<'a> {
    pub fn new(tape: &'a mut Tape) -> Self {
        TapeAlg { tape }
    }
}

impl Algebra for TapeAlg<'_> {
    type S = Var;

    fn konst(&mut self, v: f64) -> Var {
        self.tape.constant(v)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        self.tape.add(a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        self.tape.sub(a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        self.tape.mul(a, b)
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        self.tape.div(a, b)
    }
    fn mul_add(&mut self, a: Var, b: Var, c: Var) -> Var {
        self.tape.mul_add(a, b, c)
    }
    fn neg(&mut self, a: Var) -> Var {
        self.tape.neg(a)
    }
    fn square(&mut self, a: Var) -> Var {
        self.tape.square(a)
    }
    fn sqrt(&mut self, a: Var) -> Var {
        self.tape.sqrt(a)
    }
    fn tanh(&mut self, a: Var) -> Var {
        self.tape.tanh(a)
    }
    fn sigmoid(&mut self, a: Var) -> Var {
        self.tape.sigmoid_node(a)
    }
    fn softplus(&mut self, a: Var) -> Var {
        self.tape.softplus_node(a)
    }
    fn value(&self, a: Var) -> f64 {
        self.tape.value(a)
    }
}
