//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Self-contained on purpose: the diagonalized dynamics path is benchmarked
//! against the Cholesky path, so its cost must be this crate's own work, not
//! an opaque LAPACK call.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::probes;

/// Largest |M_ij - M_ji| accepted before the symmetry contract fails.
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigendecomposition M = P diag(lambda) P' with eigenvalues ascending and
/// eigenvectors in the columns of P.
pub fn eig_sym(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    probes::record_eig_call();
    let n = m.nrows();
    if m.ncols() != n {
        return Err(CoreError::Shape {
            what: "eig_sym input (square)",
            expected: n,
            got: m.ncols(),
        });
    }
    for i in 0..n {
        for j in i + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(CoreError::Contract(format!(
                    "eig_sym input not symmetric: |M[{i},{j}] - M[{j},{i}]| = {}",
                    (m[(i, j)] - m[(j, i)]).abs()
                )));
            }
        }
    }

    let mut a = m.clone();
    // Re-symmetrize so sub-tolerance asymmetry cannot bias the sweeps.
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut p = DMatrix::identity(n, n);

    let off = |a: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(1e-300);

    const MAX_SWEEPS: usize = 50;
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= 1e-30 * scale {
            break;
        }
        for piv_p in 0..n {
            for piv_q in piv_p + 1..n {
                let apq = a[(piv_p, piv_q)];
                if apq == 0.0 {
                    continue;
                }
                // Classic stable rotation: t = sign/( |theta| + sqrt(theta^2+1) ).
                let theta = (a[(piv_q, piv_q)] - a[(piv_p, piv_p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- J' A J on rows/columns p and q.
                for k in 0..n {
                    let akp = a[(k, piv_p)];
                    let akq = a[(k, piv_q)];
                    a[(k, piv_p)] = c * akp - s * akq;
                    a[(k, piv_q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(piv_p, k)];
                    let aqk = a[(piv_q, k)];
                    a[(piv_p, k)] = c * apk - s * aqk;
                    a[(piv_q, k)] = s * apk + c * aqk;
                }
                // Accumulate P <- P J.
                for k in 0..n {
                    let pkp = p[(k, piv_p)];
                    let pkq = p[(k, piv_q)];
                    p[(k, piv_p)] = c * pkp - s * pkq;
                    p[(k, piv_q)] = s * pkp + c * pkq;
                }
            }
        }
    }

    if off(&a) > 1e-18 * scale {
        return Err(CoreError::Numerical(
            "Jacobi sweeps did not converge".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite eigenvalues"));
    let lambda = DVector::from_fn(n, |i, _| a[(order[i], order[i])]);
    let mut p_sorted = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        p_sorted.set_column(dst, &p.column(src));
    }
    Ok((p_sorted, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_matrix() {
        let m = DMatrix::<f64>::identity(3, 3);
        let (p, lambda) = eig_sym(&m).unwrap();
        for i in 0..3 {
            assert_relative_eq!(lambda[i], 1.0, epsilon = 1e-12);
        }
        let ptp = p.transpose() * &p;
        assert!((ptp - DMatrix::identity(3, 3)).amax() <= 1e-12);
    }

    #[test]
    fn diagonal_matrix_sorted_ascending() {
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, 2.0]));
        let (_, lambda) = eig_sym(&m).unwrap();
        assert_relative_eq!(lambda[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(lambda[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_characteristic_polynomial() {
        // [[2,1],[1,2]]: det(M - tI) = (2-t)^2 - 1 = 0 => t in {1, 3}.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (p, lambda) = eig_sym(&m).unwrap();
        assert_relative_eq!(lambda[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(lambda[1], 3.0, epsilon = 1e-12);
        let rec = &p * DMatrix::from_diagonal(&lambda) * p.transpose();
        assert!((rec - m).amax() <= 1e-12);
    }

    #[test]
    fn non_symmetric_input_is_a_contract_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eig_sym(&m), Err(CoreError::Contract(_))));
    }

    #[test]
    fn eig_calls_are_counted() {
        let before = probes::eig_calls();
        let _ = eig_sym(&DMatrix::<f64>::identity(2, 2)).unwrap();
        assert_eq!(probes::eig_calls(), before + 1);
    }
}
