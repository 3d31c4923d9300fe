//! Multilayer perceptrons with a fixed, portable parameter layout.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{self, LayerRef, NetRef};
use super::tape::{Tape, Var};
use super::{PlainAlg, TapeAlg};
use crate::error::{CoreError, Result};

/// Smooth activations only: training gradients differentiate through input
/// Jacobians, which needs twice-differentiable nonlinearities everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Softplus),
            t => Err(CoreError::Format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Flat parameter vector in canonical layer-major order: for each layer,
/// weights (row-major, out x in) then biases. The order is fixed so that
/// checkpoints are portable.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dense feed-forward network, `f64` throughout, final layer affine.
#[derive(Clone, Debug)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// Per layer, row-major (out_dim x in_dim).
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(CoreError::InvalidArchitecture(format!(
            "need at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(CoreError::InvalidArchitecture(format!(
            "zero-sized layer in {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Scaled-uniform init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// biases zero. Deterministic for a given seed.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-scale, scale);
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// All-zero parameters (useful for fixed-output nets in tests and for
    /// zero-initialized force estimators).
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let mut mlp = Self::init(layer_sizes, activation, 0)?;
        for w in &mut mlp.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(mlp)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Mutable access to the bias vector of the final layer. Lets tests and
    /// model builders construct constant-output networks (zero weights plus a
    /// chosen bias).
    pub fn final_bias_mut(&mut self) -> &mut [f64] {
        self.biases.last_mut().unwrap()
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, p: &ParamVector) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(CoreError::Shape {
                what: "set_params",
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wl = w.len();
            w.copy_from_slice(&p.0[off..off + wl]);
            off += wl;
            let bl = b.len();
            b.copy_from_slice(&p.0[off..off + bl]);
            off += bl;
        }
        Ok(())
    }

    /// Borrowed plain-`f64` view for the generic kernels.
    pub fn as_net_ref(&self) -> NetRef<'_, f64> {
        NetRef {
            sizes: &self.layer_sizes,
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| LayerRef { w, b })
                .collect(),
            activation: self.activation,
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.in_dim() {
            return Err(CoreError::Shape {
                what: "mlp input",
                expected: self.in_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Feed-forward evaluation.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        Ok(net::eval(&mut PlainAlg, &self.as_net_ref(), x))
    }

    /// Evaluation plus the exact input Jacobian, as nalgebra types.
    pub fn eval_jacobian(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_input(x.len())?;
        let (y, j) = net::eval_with_jacobian(&mut PlainAlg, &self.as_net_ref(), x);
        let rows = y.len();
        let cols = x.len();
        let jac = DMatrix::from_fn(rows, cols, |i, c| j[i][c]);
        Ok((DVector::from_vec(y), jac))
    }
}

/// An [`Mlp`] whose parameters have been bound to tape leaves.
///
/// Leaf ids are recorded in the canonical [`ParamVector`] order, so gradients
/// read back from tape adjoints line up with the flat layout.
pub struct TapeMlp {
    sizes: Vec<usize>,
    w: Vec<Vec<Var>>,
    b: Vec<Vec<Var>>,
    activation: Activation,
}

impl TapeMlp {
    pub fn bind(tape: &mut Tape, mlp: &Mlp) -> TapeMlp {
        let mut w = Vec::with_capacity(mlp.weights.len());
        let mut b = Vec::with_capacity(mlp.biases.len());
        for (wl, bl) in mlp.weights.iter().zip(&mlp.biases) {
            w.push(wl.iter().map(|&v| tape.leaf(v)).collect());
            b.push(bl.iter().map(|&v| tape.leaf(v)).collect());
        }
        TapeMlp {
            sizes: mlp.layer_sizes.clone(),
            w,
            b,
            activation: mlp.activation,
        }
    }

    pub fn as_net_ref(&self) -> NetRef<'_, Var> {
        NetRef {
            sizes: &self.sizes,
            layers: self
                .w
                .iter()
                .zip(&self.b)
                .map(|(w, b)| LayerRef { w, b })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.iter().map(Vec::len).sum::<usize>() + self.b.iter().map(Vec::len).sum::<usize>()
    }

    /// Gather d loss / d theta from a finished backward pass.
    pub fn param_grad(&self, adjoints: &[f64]) -> ParamVector {
        let mut g = Vec::with_capacity(self.n_params());
        for (wl, bl) in self.w.iter().zip(&self.b) {
            g.extend(wl.iter().map(|v| adjoints[v.0 as usize]));
            g.extend(bl.iter().map(|v| adjoints[v.0 as usize]));
        }
        ParamVector(g)
    }
}

/// Parameter gradients of a scalar `loss` recorded on `tape`, one
/// [`ParamVector`] per bound network.
pub fn grad_params(tape: &Tape, loss: Var, nets: &[&TapeMlp]) -> Result<Vec<ParamVector>> {
    let adj = tape.backward(loss)?;
    Ok(nets.iter().map(|n| n.param_grad(&adj)).collect())
}

/// Tape-recorded evaluation; thin wrapper used by losses and tests.
pub fn eval_traced(tape: &mut Tape, net: &TapeMlp, x: &[Var]) -> Vec<Var> {
    net::eval(&mut TapeAlg::new(tape), &net.as_net_ref(), x)
}

/// Tape-recorded evaluation with input Jacobian.
pub fn eval_jacobian_traced(tape: &mut Tape, net: &TapeMlp, x: &[Var]) -> (Vec<Var>, Vec<Vec<Var>>) {
    net::eval_with_jacobian(&mut TapeAlg::new(tape), &net.as_net_ref(), x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_follow_shapes() {
        let m = Mlp::init(&[2, 4, 1], Activation::Tanh, 7).unwrap();
        assert_eq!(m.n_params(), 4 * 2 + 4 + 1 * 4 + 1); // 17
        assert_eq!(m.params().len(), 17);
        let m = Mlp::init(&[1, 1], Activation::Tanh, 0).unwrap();
        assert_eq!(m.n_params(), 2);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Mlp::init(&[3, 8, 2], Activation::Tanh, 42).unwrap();
        let b = Mlp::init(&[3, 8, 2], Activation::Tanh, 42).unwrap();
        assert_eq!(a.params().0, b.params().0);
        let c = Mlp::init(&[3, 8, 2], Activation::Tanh, 43).unwrap();
        assert_ne!(a.params().0, c.params().0);
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        assert!(matches!(
            Mlp::init(&[], Activation::Tanh, 0),
            Err(CoreError::InvalidArchitecture(_))
        ));
        assert!(matches!(
            Mlp::init(&[3], Activation::Tanh, 0),
            Err(CoreError::InvalidArchitecture(_))
        ));
        assert!(matches!(
            Mlp::init(&[3, 0, 2], Activation::Tanh, 0),
            Err(CoreError::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let m = Mlp::zeros(&[3, 5, 2], Activation::Tanh).unwrap();
        let y = m.eval(&[0.3, -1.2, 7.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        let (_, j) = m.eval_jacobian(&[0.3, -1.2, 7.0]).unwrap();
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_affine_net() {
        let mut m = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        m.set_params(&ParamVector(vec![1.0, 0.0])).unwrap();
        assert_eq!(m.eval(&[3.0]).unwrap(), vec![3.0]);
        let (y, j) = m.eval_jacobian(&[3.0]).unwrap();
        assert_eq!(y[0], 3.0);
        assert_eq!(j[(0, 0)], 1.0); // affine net: J = W exactly
    }

    #[test]
    fn input_shape_is_checked() {
        let m = Mlp::init(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(m.eval(&[1.0]), Err(CoreError::Shape { .. })));
        assert!(matches!(
            m.eval_jacobian(&[1.0, 2.0, 3.0]),
            Err(CoreError::Shape { .. })
        ));
    }

    #[test]
    fn param_roundtrip() {
        let m = Mlp::init(&[2, 6, 3], Activation::Softplus, 9).unwrap();
        let p = m.params();
        let mut m2 = Mlp::zeros(&[2, 6, 3], Activation::Softplus).unwrap();
        m2.set_params(&p).unwrap();
        assert_eq!(m2.params().0, p.0);
    }
}
