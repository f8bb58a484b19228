//! Shared dense/banded linear algebra kernels.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Cholesky factorization of a symmetric positive definite band matrix,
/// stored as the lower band only. Row `i` keeps columns `i-hbw..=i`.
pub struct BandedCholesky<T> {
    n: usize,
    hbw: usize,
    // l[i * (hbw + 1) + (j - i + hbw)] = L[i][j] for j in [i-hbw, i].
    l: Vec<T>,
}

impl<T: Real> BandedCholesky<T> {
    /// Factors from a row-entry accessor: `entry(i, j)` must return
    /// `A[i][j]` for `j <= i` within the band.
    pub fn factor(n: usize, hbw: usize, entry: impl Fn(usize, usize) -> T) -> Result<Self> {
        let w = hbw + 1;
        let mut l = vec![T::zero(); n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(hbw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(hbw));
                for k in k0..j {
                    s -= l[i * w + (k + hbw - i)] * l[j * w + (k + hbw - j)];
                }
                if j == i {
                    if s <= T::zero() {
                        return Err(Error::Solver {
                            what: format!("banded Cholesky pivot {i}"),
                            residual: crate::scalar::to_f64(s),
                        });
                    }
                    l[i * w + hbw] = s.sqrt();
                } else {
                    l[i * w + (j + hbw - i)] = s / l[j * w + hbw];
                }
            }
        }
        Ok(Self { n, hbw, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let w = self.hbw + 1;
        // Forward: L y = b.
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.hbw);
            let mut s = b[i];
            for j in j0..i {
                s -= self.l[i * w + (j + self.hbw - i)] * b[j];
            }
            b[i] = s / self.l[i * w + self.hbw];
        }
        // Backward: L^T x = y.
        for i in (0..self.n).rev() {
            let mut s = b[i];
            let jmax = (i + self.hbw).min(self.n - 1);
            for j in i + 1..=jmax {
                s -= self.l[j * w + (i + self.hbw - j)] * b[j];
            }
            b[i] = s / self.l[i * w + self.hbw];
        }
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Solves the symmetric generalized eigenproblem `A v = lambda S v` with
/// `S` positive definite, returning eigenvalues in ascending order and
/// `S`-orthonormal eigenvectors as matrix columns.
///
/// `S` receives a relative jitter of `1e-12 * trace(S)/n` on the diagonal
/// before factorization, so nearly singular Gram matrices reduce cleanly.
pub fn sym_generalized_eigen<T: Real>(
    a: &DMatrix<T>,
    s: &DMatrix<T>,
) -> Result<(Vec<T>, DMatrix<T>)> {
    sym_generalized_eigen_with(a, s, 1e-12)
}

/// As [`sym_generalized_eigen`], with an explicit relative jitter
/// (zero keeps `S` untouched).
pub fn sym_generalized_eigen_with<T: Real>(
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    jitter_rel: f64,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::InvalidArgument(
            "generalized eigenproblem needs square matrices of equal size".into(),
        ));
    }
    let jitter = real::<T>(jitter_rel) * s.trace() / real::<T>(n as f64);
    let mut s_reg = s.clone();
    for i in 0..n {
        s_reg[(i, i)] += jitter;
    }
    let chol = Cholesky::new(s_reg)
        .ok_or_else(|| Error::Eigen("mass matrix not positive definite after jitter".into()))?;
    let l = chol.l();

    // B = L^-1 A L^-T, symmetrized against roundoff.
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let z = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let b = (&z + z.transpose()) * real::<T>(0.5);

    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .expect("finite eigenvalues")
    });

    let mut values = Vec::with_capacity(n);
    let mut q = DMatrix::<T>::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx]);
        q.set_column(k, &eig.eigenvectors.column(idx));
    }
    // Back-transform: v = L^-T q.
    let vectors = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    Ok((values, vectors))
}

/// Generalized symmetric eigensolve restricted to the numerical range of
/// a positive semidefinite `S`: directions with `S`-eigenvalue at most
/// `rel_tol` times the largest are discarded instead of regularized, so a
/// rank-deficient Gram cannot pollute the genuine pairs. When the default
/// cut keeps fewer than `min_keep` directions, the cutoff relaxes toward
/// a machine-precision floor to honor the request on marginal but real
/// directions. Returns as many pairs as the range supports, ascending,
/// `S`-orthonormal.
pub fn sym_generalized_eigen_trunc<T: Real>(
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    rel_tol: f64,
    min_keep: usize,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::InvalidArgument(
            "generalized eigenproblem needs square matrices of equal size".into(),
        ));
    }
    let es = SymmetricEigen::new(s.clone());
    let dmax = es.eigenvalues.iter().fold(T::zero(), |acc, &d| acc.max(d));
    if !(dmax > T::zero()) {
        return Err(Error::Eigen("mass Gram has no positive directions".into()));
    }
    let mut cutoff = dmax * real::<T>(rel_tol);
    let kept_at = |cut: T| (0..n).filter(|&i| es.eigenvalues[i] > cut).count();
    if kept_at(cutoff) < min_keep {
        let floor = dmax * real::<T>(16.0 * f64::EPSILON);
        let mut sorted: Vec<T> = es.eigenvalues.iter().copied().collect();
        sorted.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
        if min_keep <= n && sorted[min_keep - 1] > floor {
            cutoff = sorted[min_keep - 1] * real::<T>(0.5);
        } else {
            cutoff = floor;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| es.eigenvalues[i] > cutoff).collect();
    let r = kept.len();
    let mut w = DMatrix::<T>::zeros(n, r);
    for (c, &i) in kept.iter().enumerate() {
        let scale = T::one() / es.eigenvalues[i].sqrt();
        w.set_column(c, &(es.eigenvectors.column(i) * scale));
    }
    let b = w.transpose() * a * &w;
    let b = (&b + b.transpose()) * real::<T>(0.5);
    let eb = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        eb.eigenvalues[i]
            .partial_cmp(&eb.eigenvalues[j])
            .expect("finite eigenvalues")
    });
    let mut values = Vec::with_capacity(r);
    let mut y = DMatrix::<T>::zeros(r, r);
    for (c, &i) in order.iter().enumerate() {
        values.push(eb.eigenvalues[i]);
        y.set_column(c, &eb.eigenvectors.column(i));
    }
    Ok((values, w * y))
}

/// Spectral (largest singular value) norm.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.max()
}

/// Numerical rank against a relative singular-value threshold.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>, rel_tol: T) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    if max <= T::zero() {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * max)
        .count()
}
