//! Generic feed-forward kernels.
//!
//! The kernels are written once over [`Algebra`]; callers hand them a
//! [`NetRef`] view whose scalars are either `f64` (borrowed straight from an
//! [`crate::diff::Mlp`]) or tape [`crate::diff::Var`]s (bound parameters).

use super::mlp::Activation;
use super::Algebra;

/// Borrowed view of one dense layer. `w` is row-major with shape
/// `(out_dim, in_dim)`.
pub struct LayerRef<'a, S> {
    pub w: &'a [S],
    pub b: &'a [S],
}

/// Borrowed view of a whole network.
pub struct NetRef<'a, S> {
    pub sizes: &'a [usize],
    pub layers: Vec<LayerRef<'a, S>>,
    pub activation: Activation,
}

impl<S> NetRef<'_, S> {
    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

fn affine<A: Algebra>(alg: &mut A, layer: &LayerRef<A::S>, x: &[A::S], out_dim: usize) -> Vec<A::S> {
    let in_dim = x.len();
    let mut z = Vec::with_capacity(out_dim);
    for j in 0..out_dim {
        let row = &layer.w[j * in_dim..(j + 1) * in_dim];
        let mut acc = layer.b[j];
        for (v, xv) in row.iter().zip(x) {
            acc = alg.mul_add(*v, *xv, acc);
        }
        z.push(acc);
    }
    z
}

fn activate<A: Algebra>(alg: &mut A, act: Activation, z: A::S) -> A::S {
    match act {
        Activation::Tanh => alg.tanh(z),
        Activation::Softplus => alg.softplus(z),
    }
}

/// Derivative of the activation given its pre-activation `z` and output `a`.
fn activate_deriv<A: Algebra>(alg: &mut A, act: Activation, z: A::S, a: A::S) -> A::S {
    match act {
        Activation::Tanh => {
            // d tanh = 1 - tanh^2
            let one = alg.konst(1.0);
            let sq = alg.square(a);
            alg.sub(one, sq)
        }
        // d softplus = sigmoid
        Activation::Softplus => alg.sigmoid(z),
    }
}

/// Feed-forward evaluation. The final layer is affine (no activation).
pub fn eval<A: Algebra>(alg: &mut A, net: &NetRef<A::S>, x: &[A::S]) -> Vec<A::S> {
    debug_assert_eq!(x.len(), net.in_dim());
    let last = net.layers.len() - 1;
    let mut a = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = affine(alg, layer, &a, net.sizes[l + 1]);
        if l != last {
            for zi in z.iter_mut() {
                *zi = activate(alg, net.activation, *zi);
            }
        }
        a = z;
    }
    a
}

/// Evaluation together with the input Jacobian `J[i][j] = dy_i / dx_j`.
///
/// Forward-mode: one tangent column per input dimension rides along through
/// every layer. In recording mode the tangent arithmetic itself lands on the
/// tape, so a later reverse pass differentiates through the Jacobian exactly.
pub fn eval_with_jacobian<A: Algebra>(
    alg: &mut A,
    net: &NetRef<A::S>,
    x: &[A::S],
) -> (Vec<A::S>, Vec<Vec<A::S>>) {
    let n_in = net.in_dim();
    debug_assert_eq!(x.len(), n_in);
    let last = net.layers.len() - 1;

    let mut a = x.to_vec();
    // tang[j][c] = d a_j / d x_c; seeded with the identity, so the first
    // affine layer's tangent rows are just its weight rows.
    let mut tang: Vec<Vec<A::S>> = Vec::new();

    for (l, layer) in net.layers.iter().enumerate() {
        let out_dim = net.sizes[l + 1];
        let in_dim = a.len();
        let z = affine(alg, layer, &a, out_dim);

        let tz: Vec<Vec<A::S>> = if l == 0 {
            (0..out_dim)
                .map(|j| layer.w[j * in_dim..(j + 1) * in_dim].to_vec())
                .collect()
        } else {
            (0..out_dim)
                .map(|j| {
                    let row = &layer.w[j * in_dim..(j + 1) * in_dim];
                    (0..n_in)
                        .map(|c| {
                            let mut acc = alg.zero();
                            for (k, wv) in row.iter().enumerate() {
                                acc = alg.mul_add(*wv, tang[k][c], acc);
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        };

        if l == last {
            return (z, tz);
        }

        let mut act = Vec::with_capacity(out_dim);
        let mut ta = Vec::with_capacity(out_dim);
        for (j, &zj) in z.iter().enumerate() {
            let aj = activate(alg, net.activation, zj);
            let dj = activate_deriv(alg, net.activation, zj, aj);
            act.push(aj);
            ta.push(tz[j].iter().map(|&t| alg.mul(dj, t)).collect::<Vec<_>>());
        }
        a = act;
        tang = ta;
    }
    unreachable!("networks always have at least one layer");
}
