//! Cyclic Jacobi eigensolver for dense symmetric matrices.
//!
//! Each rotation annihilates one off-diagonal pair; sweeps repeat until the
//! off-diagonal Frobenius norm falls below `tol · ‖S‖_F`. Accumulating the
//! rotations yields an orthonormal eigenvector basis. Quadratic convergence
//! makes a handful of sweeps enough for the matrix sizes seen here.

use super::dense::Matrix;
use super::ClusterError;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector for `values[j]`.
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            sum += 2.0 * a[(p, q)] * a[(p, q)];
        }
    }
    sum.sqrt()
}

pub fn jacobi_eigen(s: &Matrix, tol: f64, max_sweeps: usize) -> Result<SymmetricEigen, ClusterError> {
    let n = s.rows();
    if s.cols() != n {
        return Err(ClusterError::InvalidParams(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            s.cols()
        )));
    }
    if s.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::InvalidParams("matrix has non-finite entries".into()));
    }
    let mut a = s.clone();
    let mut v = Matrix::identity(n);
    let threshold = tol * s.frobenius_norm();

    let mut converged = off_diagonal_norm(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = c * akp - sn * akq;
                    let new_kq = sn * akp + c * akq;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a) <= threshold;
    }
    if !converged {
        return Err(ClusterError::NoConvergence {
            sweeps,
            off_norm: off_diagonal_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for j in 0..n {
        if flip_sign(&vectors.column(j)) {
            for r in 0..n {
                vectors[(r, j)] = -vectors[(r, j)];
            }
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Sign convention: positive third moment, falling back to a positive
/// largest-magnitude component. Independent of row order except on exact ties.
fn flip_sign(col: &[f64]) -> bool {
    let cube: f64 = col.iter().map(|x| x * x * x).sum();
    if cube.abs() > 1e-12 {
        return cube < 0.0;
    }
    let mut best = 0.0f64;
    for &x in col {
        if x.abs() > best.abs() + 1e-12 {
            best = x;
        }
    }
    best < 0.0
}
