//! Euler-Lagrange assembly shared by inference and training.
//!
//! Everything here is generic over [`Algebra`], so the exact same arithmetic
//! runs on plain `f64` during planning and on the recording tape during
//! training. The gradient of a training loss therefore differentiates
//! through the full pipeline, including the Cholesky solve.
//!
//! Matrices are flat row-major `Vec<A::S>` with explicit dimension `n`; the
//! sizes here are tiny (n <= 3 for the desk systems) and the flat layout
//! keeps the tape free of bookkeeping nodes.

use crate::diff::net::{self, NetRef};
use crate::diff::Algebra;
use crate::error::{CoreError, Result};
use crate::probes;

/// Borrowed view of one LNN's pieces, valid for plain or traced scalars.
pub struct LnnRef<'a, S> {
    pub y_net: NetRef<'a, S>,
    pub v_net: NetRef<'a, S>,
    pub f_net: NetRef<'a, S>,
    pub epsilon: f64,
    pub n: usize,
    pub softplus_diag: bool,
}

/// Row-major index of lower-triangular entry (i, j), j <= i.
pub fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Number of lower-triangular entries for an n x n matrix.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Y(q) and its per-coordinate derivatives dY/dq_k, both n x n row-major
/// with zero upper triangles. The softplus reparameterization of the
/// diagonal (when enabled) is applied here, with its chain factor folded
/// into the derivatives.
pub fn y_and_grads<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
) -> (Vec<A::S>, Vec<Vec<A::S>>) {
    let n = lnn.n;
    let (raw, jac) = net::eval_with_jacobian(alg, &lnn.y_net, q);
    debug_assert_eq!(raw.len(), tri_len(n));

    let zero = alg.zero();
    let mut y = vec![zero; n * n];
    let mut dy = vec![vec![zero; n * n]; q.len()];
    for i in 0..n {
        for j in 0..=i {
            let idx = tri_index(i, j);
            if i == j && lnn.softplus_diag {
                y[i * n + j] = alg.softplus(raw[idx]);
                let chain = alg.sigmoid(raw[idx]);
                for (k, dyk) in dy.iter_mut().enumerate() {
                    dyk[i * n + j] = alg.mul(chain, jac[idx][k]);
                }
            } else {
                y[i * n + j] = raw[idx];
                for (k, dyk) in dy.iter_mut().enumerate() {
                    dyk[i * n + j] = jac[idx][k];
                }
            }
        }
    }
    (y, dy)
}

/// M = Y Y' + eps I.
pub fn mass_from_y<A: Algebra>(alg: &mut A, y: &[A::S], n: usize, epsilon: f64) -> Vec<A::S> {
    let zero = alg.zero();
    let mut m = vec![zero; n * n];
    let eps = alg.konst(epsilon);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = if i == j { eps } else { zero };
            // Lower-triangular Y: column index runs to min(i, j) = j.
            for l in 0..=j {
                acc = alg.mul_add(y[i * n + l], y[j * n + l], acc);
            }
            m[i * n + j] = acc;
            m[j * n + i] = acc;
        }
    }
    m
}

/// dM/dq_k = A Y' + Y A' for A = dY/dq_k.
fn dmass<A: Algebra>(alg: &mut A, y: &[A::S], a: &[A::S], n: usize) -> Vec<A::S> {
    let zero = alg.zero();
    let mut d = vec![zero; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = zero;
            for l in 0..n {
                acc = alg.mul_add(a[i * n + l], y[j * n + l], acc);
                acc = alg.mul_add(y[i * n + l], a[j * n + l], acc);
            }
            d[i * n + j] = acc;
            d[j * n + i] = acc;
        }
    }
    d
}

/// The pieces of the Euler-Lagrange equation at one (q, qd):
/// mass matrix, dL/dq, the mixed term [d(M qd)/dq] qd, and F.
pub struct ElParts<S> {
    pub mass: Vec<S>,
    pub dl_dq: Vec<S>,
    pub mixed: Vec<S>,
    pub force: Vec<S>,
}

pub fn el_parts<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
) -> ElParts<A::S> {
    let n = lnn.n;
    debug_assert_eq!(q.len(), n);
    debug_assert_eq!(qd.len(), n);

    let (y, dy) = y_and_grads(alg, lnn, q);
    let mass = mass_from_y(alg, &y, n, lnn.epsilon);

    let (_, v_jac) = net::eval_with_jacobian(alg, &lnn.v_net, q);
    let dv_dq = &v_jac[0];

    let zero = alg.zero();
    let half = alg.konst(0.5);
    let mut dl_dq = vec![zero; n];
    let mut mixed = vec![zero; n];
    for k in 0..n {
        let dk = dmass(alg, &y, &dy[k], n);
        // (D_k qd) enters both terms.
        let mut dk_qd = vec![zero; n];
        for i in 0..n {
            let row = &dk[i * n..(i + 1) * n];
            dk_qd[i] = alg.dot(row, qd);
        }
        // (dL/dq)_k = 0.5 qd' D_k qd - dV/dq_k.
        let quad = alg.dot(&dk_qd, qd);
        let half_quad = alg.mul(half, quad);
        dl_dq[k] = alg.sub(half_quad, dv_dq[k]);
        // mixed += D_k qd * qd_k.
        for i in 0..n {
            mixed[i] = alg.mul_add(dk_qd[i], qd[k], mixed[i]);
        }
    }

    let mut x = Vec::with_capacity(2 * n);
    x.extend_from_slice(q);
    x.extend_from_slice(qd);
    let force = net::eval(alg, &lnn.f_net, &x);

    ElParts {
        mass,
        dl_dq,
        mixed,
        force,
    }
}

/// Solve M x = rhs for symmetric positive-definite M by Cholesky.
pub fn cholesky_solve<A: Algebra>(
    alg: &mut A,
    m: &[A::S],
    n: usize,
    rhs: &[A::S],
) -> Result<Vec<A::S>> {
    probes::record_solve_call();
    let zero = alg.zero();
    let mut l = vec![zero; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                let prod = alg.mul(l[i * n + k], l[j * n + k]);
                sum = alg.sub(sum, prod);
            }
            if i == j {
                if alg.value(sum) <= 0.0 {
                    return Err(CoreError::Numerical(format!(
                        "Cholesky pivot {} is not positive: {}",
                        i,
                        alg.value(sum)
                    )));
                }
                l[i * n + j] = alg.sqrt(sum);
            } else {
                l[i * n + j] = alg.div(sum, l[j * n + j]);
            }
        }
    }
    // Forward substitution L z = rhs.
    let mut z = vec![zero; n];
    for i in 0..n {
        let mut sum = rhs[i];
        for k in 0..i {
            let prod = alg.mul(l[i * n + k], z[k]);
            sum = alg.sub(sum, prod);
        }
        z[i] = alg.div(sum, l[i * n + i]);
    }
    // Back substitution L' x = z.
    let mut x = vec![zero; n];
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in i + 1..n {
            let prod = alg.mul(l[k * n + i], x[k]);
            sum = alg.sub(sum, prod);
        }
        x[i] = alg.div(sum, l[i * n + i]);
    }
    Ok(x)
}

/// Forward dynamics: solve M qdd = dL/dq - [d(M qd)/dq] qd + F (+ tau).
///
/// `tau` is the generalized force B u already mapped into joint space; the
/// CoM variant passes `None` (its forces enter only through F).
pub fn forward_kernel<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
    tau: Option<&[A::S]>,
) -> Result<Vec<A::S>> {
    let n = lnn.n;
    let parts = el_parts(alg, lnn, q, qd);
    let mut rhs = Vec::with_capacity(n);
    for i in 0..n {
        let a = alg.sub(parts.dl_dq[i], parts.mixed[i]);
        let mut b = alg.add(a, parts.force[i]);
        if let Some(t) = tau {
            b = alg.add(b, t[i]);
        }
        rhs.push(b);
    }
    cholesky_solve(alg, &parts.mass, n, &rhs)
}

/// Inverse dynamics: tau = M qdd - dL/dq + [d(M qd)/dq] qd - F.
/// No factorization or solve anywhere on this path.
pub fn inverse_kernel<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
    qdd: &[A::S],
) -> Vec<A::S> {
    let n = lnn.n;
    let parts = el_parts(alg, lnn, q, qd);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let row = &parts.mass[i * n..(i + 1) * n];
        let m_qdd = alg.dot(row, qdd);
        let a = alg.sub(m_qdd, parts.dl_dq[i]);
        let b = alg.add(a, parts.mixed[i]);
        tau.push(alg.sub(b, parts.force[i]));
    }
    tau
}

/// L = 0.5 qd' M qd - V.
pub fn lagrangian_kernel<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
) -> A::S {
    let n = lnn.n;
    let (y, _) = {
        // Only the value of Y is needed here; reuse the plain eval.
        let raw = net::eval(alg, &lnn.y_net, q);
        let zero = alg.zero();
        let mut y = vec![zero; n * n];
        for i in 0..n {
            for j in 0..=i {
                let idx = tri_index(i, j);
                y[i * n + j] = if i == j && lnn.softplus_diag {
                    alg.softplus(raw[idx])
                } else {
                    raw[idx]
                };
            }
        }
        (y, ())
    };
    let mass = mass_from_y(alg, &y, n, lnn.epsilon);
    let zero = alg.zero();
    let mut quad = zero;
    for i in 0..n {
        let row = &mass[i * n..(i + 1) * n];
        let m_qd = alg.dot(row, qd);
        quad = alg.mul_add(qd[i], m_qd, quad);
    }
    let half = alg.konst(0.5);
    let kinetic = alg.mul(half, quad);
    let v = net::eval(alg, &lnn.v_net, q)[0];
    alg.sub(kinetic, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::PlainAlg;

    #[test]
    fn tri_indexing_is_row_major() {
        // n = 3: (0,0) (1,0) (1,1) (2,0) (2,1) (2,2).
        assert_eq!(tri_index(0, 0), 0);
        assert_eq!(tri_index(1, 0), 1);
        assert_eq!(tri_index(1, 1), 2);
        assert_eq!(tri_index(2, 0), 3);
        assert_eq!(tri_index(2, 2), 5);
        assert_eq!(tri_len(3), 6);
    }

    #[test]
    fn mass_from_identity_y() {
        let mut alg = PlainAlg;
        let y = vec![1.0, 0.0, 0.0, 1.0];
        let m = mass_from_y(&mut alg, &y, 2, 1e-6);
        assert_eq!(m, vec![1.0 + 1e-6, 0.0, 0.0, 1.0 + 1e-6]);
    }

    #[test]
    fn cholesky_solves_a_known_system() {
        let mut alg = PlainAlg;
        // M = [[4,2],[2,3]], rhs = [8, 7] -> x = [1.25, 1.5].
        let m = vec![4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&mut alg, &m, 2, &[8.0, 7.0]).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_input() {
        let mut alg = PlainAlg;
        let m = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_solve(&mut alg, &m, 2, &[1.0, 1.0]).is_err());
    }
}
