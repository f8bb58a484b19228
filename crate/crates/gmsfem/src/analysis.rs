//! Desk-scale empirical certificates of the deterministic approximation
//! bound for randomized snapshot spaces: for a sketch of the full snapshot
//! matrix, the constructed coefficient map's weighted-mass error is
//! bounded by `(||H^(-1) S|| + 1) ||T||` times the snapshot energy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::assembly::{assemble_mass, assemble_stiffness, Region, SparseOperator};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Neighborhood};
use crate::linalg::{spectral_norm, sym_generalized_eigen_with};
use crate::scalar::{real, to_f64, Real};
use crate::snapshot::{full_snapshots, nbhd_rng, SALT_LEMMA_SKETCH, SALT_LEMMA_TESTS};
use crate::spectral::snapshot_gram;

/// Relative eigenvalue threshold when trimming snapshot rows so both Gram
/// matrices stay safely definite.
const DEFINITE_TOL: f64 = 1e-8;

/// Snapshot matrix and simultaneous diagonalization of one neighborhood.
#[derive(Debug, Clone)]
pub struct LemmaOperands<T> {
    /// Trimmed full-snapshot rows on the neighborhood (m x n).
    pub psi: DMatrix<T>,
    /// `Psi A Psi^T`, definite after trimming.
    pub a_off: DMatrix<T>,
    /// `Psi M Psi^T` with the weighted mass.
    pub m_off: DMatrix<T>,
    /// Columns diagonalize both Grams: `U^T a_off U = I`,
    /// `U^T m_off U = diag(lambda_j^{-1})` with descending diagonal.
    pub u: DMatrix<T>,
    /// Eigenvalues ascending; `lambda[0]` would be zero for the constant
    /// direction, which the trimming removes.
    pub lambda: Vec<T>,
    /// `max |U^T a_off U - I|` entrywise.
    pub diag_residual_a: f64,
    /// Largest off-diagonal of `U^T m_off U`, scaled by its largest
    /// diagonal entry.
    pub diag_residual_m: f64,
}

impl<T: Real> LemmaOperands<T> {
    pub fn m(&self) -> usize {
        self.psi.nrows()
    }

    /// Spectral norm of the trailing block of `Lambda^(1/2)` for cutoff
    /// `k`; equals `lambda_{k+1}^{-1/2}`.
    pub fn trailing_block_norm(&self, k: usize) -> T {
        let mut best = T::zero();
        for j in k..self.m() {
            let v = (T::one() / self.lambda[j]).sqrt();
            if v > best {
                best = v;
            }
        }
        best
    }
}

/// Greedy selection of numerically independent rows (plain Gram-Schmidt
/// with a relative residual threshold), in row order.
fn independent_rows<T: Real>(rows: &DMatrix<T>, rel_tol: f64) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<T>> = Vec::new();
    let tol = real::<T>(rel_tol);
    for i in 0..rows.nrows() {
        let mut v: DVector<T> = rows.row(i).transpose();
        let norm0 = v.norm();
        if !(norm0 > T::zero()) {
            continue;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = v.dot(b);
                v -= b * c;
            }
        }
        let r = v.norm();
        if r > tol * norm0 {
            picked.push(i);
            basis.push(v / r);
        }
    }
    picked
}

/// Builds the trimmed snapshot matrix and its simultaneous
/// diagonalization for one neighborhood. Rows of the full snapshot sweep
/// (the constant excluded) are trimmed until both Gram matrices are
/// numerically definite; in particular the constant function, which is
/// always in the span of the delta-data sweep, leaves the space.
pub fn lemma_operands<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    weight: &CoefficientField<T>,
    nbhd: &Neighborhood,
) -> Result<LemmaOperands<T>> {
    let snaps = full_snapshots(geom, field, nbhd)?;
    // Drop the constant row: the bound concerns the raw harmonic sweep.
    let m0 = snaps.row_count() - 1;
    let n = snaps.rows.ncols();
    let mut raw = DMatrix::<T>::zeros(m0, n);
    let mut k = 0;
    for r in 0..snaps.row_count() {
        if r != snaps.constant_row {
            raw.row_mut(k).copy_from(&snaps.rows.row(r));
            k += 1;
        }
    }

    let region = Region::rect(geom, &nbhd.omega)?;
    let a_op = assemble_stiffness(geom, field, &region);
    let m_op = assemble_mass(geom, weight, &region);

    let mut selected = independent_rows(&raw, DEFINITE_TOL);
    loop {
        if selected.len() < 2 {
            return Err(Error::Eigen(
                "snapshot matrix collapsed while trimming for definiteness".into(),
            ));
        }
        let mut psi = DMatrix::<T>::zeros(selected.len(), n);
        for (i, &r) in selected.iter().enumerate() {
            psi.row_mut(i).copy_from(&raw.row(r));
        }
        let (a_off, m_off) = snapshot_gram(&psi, &a_op, &m_op);

        // If a Gram is numerically indefinite, discard the row carrying
        // the largest weight in the offending null combination (the
        // constant function is always such a combination of delta data).
        let null_row = |g: &DMatrix<T>| -> Option<usize> {
            let eig = nalgebra::SymmetricEigen::new(g.clone());
            let mut min_i = 0;
            let mut max = T::zero();
            let mut min = eig.eigenvalues[0];
            for (i, &v) in eig.eigenvalues.iter().enumerate() {
                if v > max {
                    max = v;
                }
                if v < min {
                    min = v;
                    min_i = i;
                }
            }
            if min > max * real::<T>(DEFINITE_TOL) {
                return None;
            }
            let combo = eig.eigenvectors.column(min_i);
            let mut worst = 0;
            for i in 0..combo.len() {
                if combo[i].abs() > combo[worst].abs() {
                    worst = i;
                }
            }
            Some(worst)
        };
        if let Some(i) = null_row(&a_off).or_else(|| null_row(&m_off)) {
            selected.remove(i);
            continue;
        }

        // Simultaneous diagonalization, jitter-free: columns normalized in
        // the a_off inner product, m_off diagonal descending.
        let (mu, w) = sym_generalized_eigen_with(&m_off, &a_off, 0.0)?;
        let m = selected.len();
        let mut u = DMatrix::<T>::zeros(m, m);
        let mut lambda = Vec::with_capacity(m);
        for j in 0..m {
            let src = m - 1 - j; // descending mu
            u.set_column(j, &w.column(src));
        }
        for j in 0..m {
            // Column j pairs with mu reversed, so this list is ascending.
            lambda.push(T::one() / mu[m - 1 - j]);
        }

        let i_res = {
            let g = u.transpose() * &a_off * &u;
            let mut worst = T::zero();
            for i in 0..m {
                for j in 0..m {
                    let target = if i == j { T::one() } else { T::zero() };
                    worst = worst.max((g[(i, j)] - target).abs());
                }
            }
            to_f64(worst)
        };
        let m_res = {
            let g = u.transpose() * &m_off * &u;
            let scale = (0..m).fold(T::zero(), |a, i| a.max(g[(i, i)].abs()));
            let mut worst = T::zero();
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        worst = worst.max(g[(i, j)].abs());
                    }
                }
            }
            to_f64(worst / scale)
        };

        return Ok(LemmaOperands {
            psi,
            a_off,
            m_off,
            u,
            lambda,
            diag_residual_a: i_res,
            diag_residual_m: m_res,
        });
    }
}

/// One test vector's outcome.
#[derive(Debug, Clone)]
pub struct CertTest<T> {
    /// Weighted-mass error of the constructed coefficient map.
    pub observed: T,
    /// Deterministic bound `(||H^(-1)S|| + 1) ||T|| ||xi^T Psi||_A`.
    pub bound: T,
    /// Optimal projection error onto the randomized span.
    pub optimal: T,
}

#[derive(Debug, Clone)]
pub struct BoundCertificate<T> {
    pub coarse_node: usize,
    pub k: usize,
    pub l: usize,
    pub m: usize,
    /// `(k+1)`-th ascending eigenvalue of the diagonalization.
    pub lambda_k1: T,
    /// Trailing-block norm `lambda_{k+1}^{-1/2}`.
    pub t_norm: T,
    /// `||H^(-1) S||` of the draw.
    pub hs_norm: T,
    /// Whether the sketch block `H` had full rank `k`.
    pub draw_ok: bool,
    pub tests: Vec<CertTest<T>>,
    pub max_ratio: f64,
    pub pass: bool,
    pub diag_residual_a: f64,
    pub diag_residual_m: f64,
}

/// Weighted-mass distance from `target` to the span of `rows`, through a
/// mass-orthonormal basis of the span (modified Gram-Schmidt with
/// reorthogonalization; nearly dependent rows do not enlarge the span).
/// Empty spans return the norm of the target.
pub fn best_approx_error<T: Real>(
    rows: &DMatrix<T>,
    m_op: &SparseOperator<T>,
    target: &DVector<T>,
) -> Result<T> {
    let m_norm = |v: &DVector<T>| {
        let mv = m_op.matvec(v);
        v.dot(&mv).max(T::zero()).sqrt()
    };
    let mut basis: Vec<(DVector<T>, DVector<T>)> = Vec::new(); // (b, M b)
    for i in 0..rows.nrows() {
        let mut v: DVector<T> = rows.row(i).transpose();
        let norm0 = m_norm(&v);
        if !(norm0 > T::zero()) {
            continue;
        }
        for _ in 0..2 {
            for (b, mb) in &basis {
                let c = v.dot(mb);
                v -= b * c;
            }
        }
        let r = m_norm(&v);
        if r > norm0 * real::<T>(1e-13) {
            let b = v / r;
            let mb = m_op.matvec(&b);
            basis.push((b, mb));
        }
    }
    let mut e = target.clone();
    for _ in 0..2 {
        for (b, mb) in &basis {
            let c = e.dot(mb);
            e -= b * c;
        }
    }
    Ok(m_norm(&e))
}

/// Runs the deterministic bound check on one neighborhood: draws the
/// Gaussian sketch, builds the proof's coefficient map, and compares
/// observed weighted-mass errors against the bound for `n_tests` random
/// coefficient vectors.
#[allow(clippy::too_many_arguments)]
pub fn lemma1_certificate<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    weight: &CoefficientField<T>,
    nbhd: &Neighborhood,
    k: usize,
    l: usize,
    seed: u64,
    n_tests: usize,
) -> Result<BoundCertificate<T>> {
    let ops = lemma_operands(geom, field, weight, nbhd)?;
    let m = ops.m();
    if k == 0 || k >= l || l > m {
        return Err(Error::InvalidArgument(format!(
            "cutoffs must satisfy 0 < k < l <= m; got k={k}, l={l}, m={m}"
        )));
    }
    let region = Region::rect(geom, &nbhd.omega)?;
    let m_op = assemble_mass(geom, weight, &region);

    // Gaussian sketch and the split of R U^{-T} into H and S.
    let mut rng = nbhd_rng(seed, nbhd.coarse_node as u64, SALT_LEMMA_SKETCH);
    let sketch = DMatrix::<T>::from_fn(l, m, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        real::<T>(g)
    });
    let u_inv_t = &ops.a_off * &ops.u; // U^{-T} from U^T a_off U = I
    let ru = &sketch * &u_inv_t;
    let h = ru.columns(0, k).into_owned();
    let s_blk = ru.columns(k, m - k).into_owned();

    let hth = h.transpose() * &h;
    let (draw_ok, h_pinv) = match nalgebra::Cholesky::new(hth) {
        Some(chol) => {
            let mut inv = DMatrix::<T>::identity(k, k);
            chol.solve_mut(&mut inv);
            (true, inv * h.transpose())
        }
        None => (false, DMatrix::zeros(k, l)),
    };

    let lambda_k1 = ops.lambda[k];
    let t_norm = ops.trailing_block_norm(k);
    if !draw_ok {
        return Ok(BoundCertificate {
            coarse_node: nbhd.coarse_node,
            k,
            l,
            m,
            lambda_k1,
            t_norm,
            hs_norm: T::zero(),
            draw_ok: false,
            tests: Vec::new(),
            max_ratio: f64::INFINITY,
            pass: false,
            diag_residual_a: ops.diag_residual_a,
            diag_residual_m: ops.diag_residual_m,
        });
    }
    let hs_norm = spectral_norm(&(&h_pinv * &s_blk));

    // Coefficient map: F = U^{-T} [H^(-1); 0], or the exact inverse when
    // the sketch is square.
    let exact = l == m;
    let f_map: DMatrix<T> = if exact {
        // xi^r = F^T xi with F = R^{-1} reproduces xi^T Psi exactly.
        sketch
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Eigen("square sketch not invertible".into()))?
    } else {
        let mut p = DMatrix::<T>::zeros(m, l);
        p.rows_mut(0, k).copy_from(&h_pinv);
        &u_inv_t * p
    };

    let psi_r = &sketch * &ops.psi;
    let mut rng_tests = nbhd_rng(seed, nbhd.coarse_node as u64, SALT_LEMMA_TESTS);
    let mut tests = Vec::with_capacity(n_tests);
    let mut max_ratio = 0.0f64;
    let mut pass = true;
    let slack = real::<T>(1e-8);
    for _ in 0..n_tests {
        let xi = DVector::<T>::from_fn(m, |_, _| {
            let g: f64 = rng_tests.sample(StandardNormal);
            real::<T>(g)
        });
        let w = ops.psi.transpose() * &xi;
        let xi_r = f_map.transpose() * &xi;
        let wr = psi_r.transpose() * &xi_r;
        let diff = &w - &wr;
        let observed = m_op.quad_form(&diff, &diff).max(T::zero()).sqrt();
        let energy = (xi.transpose() * &ops.a_off * &xi)[(0, 0)]
            .max(T::zero())
            .sqrt();
        let bound = (hs_norm + T::one()) * t_norm * energy;
        let optimal = best_approx_error(&psi_r, &m_op, &w)?;
        let w_scale = m_op.quad_form(&w, &w).max(T::zero()).sqrt();

        if observed > bound * (T::one() + slack) + slack * w_scale {
            pass = false;
        }
        if optimal > observed + slack * (w_scale + observed) {
            pass = false;
        }
        if bound > T::zero() {
            max_ratio = max_ratio.max(to_f64(observed / bound));
        }
        tests.push(CertTest {
            observed,
            bound,
            optimal,
        });
    }

    Ok(BoundCertificate {
        coarse_node: nbhd.coarse_node,
        k,
        l,
        m,
        lambda_k1,
        t_norm,
        hs_norm,
        draw_ok: true,
        tests,
        max_ratio,
        pass,
        diag_residual_a: ops.diag_residual_a,
        diag_residual_m: ops.diag_residual_m,
    })
}
