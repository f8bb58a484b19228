#![allow(dead_code)] // each test binary uses a subset of the oracles

//! Hand-rolled dense oracles for the integration suites: these stay
//! independent of the production solver paths (banded Cholesky and the
//! truncated-spectral eigensolver).

use nalgebra::{DMatrix, DVector};

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        assert!(m[(piv, col)].abs() > 0.0, "singular oracle system");
        if piv != col {
            m.swap_rows(piv, col);
            x.swap_rows(piv, col);
        }
        let d = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            if f != 0.0 {
                for c in col..n {
                    m[(r, c)] -= f * m[(col, c)];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for c in col + 1..n {
            s -= m[(col, c)] * x[c];
        }
        x[col] = s / m[(col, col)];
    }
    x
}

/// Cyclic Jacobi eigensolver for symmetric matrices; eigenvalues ascend.
pub fn jacobi_sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let fro = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * fro {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        values.push(m[(i, i)]);
        vectors.set_column(c, &v.column(i));
    }
    (values, vectors)
}

/// Generalized symmetric eigensolve `A v = lambda S v` for positive
/// definite `S`, built entirely on the Jacobi oracle. Eigenvalues ascend;
/// vectors are `S`-orthonormal.
pub fn jacobi_generalized(a: &DMatrix<f64>, s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let (d, q) = jacobi_sym_eigen(s);
    assert!(d[0] > 0.0, "oracle mass matrix must be positive definite");
    let mut w = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let scale = 1.0 / d[c].sqrt();
        w.set_column(c, &(q.column(c) * scale));
    }
    let b = w.transpose() * a * &w;
    let b = (&b + b.transpose()) * 0.5;
    let (values, y) = jacobi_sym_eigen(&b);
    (values, w * y)
}

/// Dense constrained solve: identity rows at fixed nodes, operator rows
/// elsewhere.
pub fn dirichlet_oracle(
    a_dense: &DMatrix<f64>,
    fixed: &[usize],
    bc: &DVector<f64>,
    rhs: Option<&DVector<f64>>,
) -> DVector<f64> {
    let n = a_dense.nrows();
    let mut sys = a_dense.clone();
    let mut b = match rhs {
        Some(r) => r.clone(),
        None => DVector::zeros(n),
    };
    for &i in fixed {
        for c in 0..n {
            sys[(i, c)] = if c == i { 1.0 } else { 0.0 };
        }
        b[i] = bc[i];
    }
    gauss_solve(&sys, &b)
}
