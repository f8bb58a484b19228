//! Local spectral model reduction: the generalized eigenproblem in each
//! snapshot space selects the offline basis per neighborhood.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_mass, assemble_stiffness, Region, SparseOperator};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Rect};
use crate::linalg::sym_generalized_eigen_trunc;
use crate::scalar::Real;
use crate::snapshot::{
    full_snapshots, random_snapshots, skin_snapshots, SnapshotMode, SnapshotSet,
};

/// Eigenpairs selected from one neighborhood's snapshot space, expanded to
/// fine-grid fields on the neighborhood nodes.
#[derive(Debug, Clone)]
pub struct OfflineBasis<T> {
    pub coarse_node: usize,
    pub rect: Rect,
    /// Kept eigenvalues, ascending. The first is (numerically) zero when
    /// the constant snapshot is present.
    pub eigenvalues: Vec<T>,
    /// Kept eigenvectors in snapshot coordinates (rows x kept).
    pub coeffs: DMatrix<T>,
    /// Kept modes expanded to neighborhood fields (kept x nodes); the rows
    /// are mass-orthonormal on the neighborhood.
    pub modes: DMatrix<T>,
    /// First excluded eigenvalue, absent when every mode was kept.
    pub excluded: Option<T>,
}

impl<T: Real> OfflineBasis<T> {
    pub fn mode_count(&self) -> usize {
        self.modes.nrows()
    }

    /// Constant-only basis (boundary coarse nodes, or `k_nb = 0`).
    pub fn constant_only(coarse_node: usize, rect: Rect) -> Self {
        let n = rect.node_count();
        OfflineBasis {
            coarse_node,
            rect,
            eigenvalues: vec![T::zero()],
            coeffs: DMatrix::from_element(1, 1, T::one()),
            modes: DMatrix::from_element(1, n, T::one()),
            excluded: None,
        }
    }

    /// Keeps the first `m` modes; the next eigenvalue becomes the excluded
    /// one. Equals a fresh reduction of the same snapshots with `m` modes.
    pub fn truncated(&self, m: usize) -> Result<OfflineBasis<T>> {
        if m == 0 || m > self.mode_count() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {m} of {} modes",
                self.mode_count()
            )));
        }
        Ok(OfflineBasis {
            coarse_node: self.coarse_node,
            rect: self.rect,
            eigenvalues: self.eigenvalues[..m].to_vec(),
            coeffs: self.coeffs.columns(0, m).into_owned(),
            modes: self.modes.rows(0, m).into_owned(),
            excluded: if m < self.mode_count() {
                Some(self.eigenvalues[m])
            } else {
                self.excluded
            },
        })
    }
}

/// Snapshot-space Gram matrices `Psi A Psi^T` and `Psi M Psi^T` for
/// operators assembled on the snapshot rectangle.
pub fn snapshot_gram<T: Real>(
    rows: &DMatrix<T>,
    a_op: &SparseOperator<T>,
    m_op: &SparseOperator<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let r = rows.nrows();
    let n = rows.ncols();
    debug_assert_eq!(a_op.n, n);
    let mut a_psit = DMatrix::zeros(n, r);
    let mut m_psit = DMatrix::zeros(n, r);
    for j in 0..r {
        let col: DVector<T> = rows.row(j).transpose();
        a_psit.set_column(j, &a_op.matvec(&col));
        m_psit.set_column(j, &m_op.matvec(&col));
    }
    let a_off = rows * a_psit;
    let s_off = rows * m_psit;
    // Symmetrize against roundoff from the two-sided product.
    let a_off = (&a_off + a_off.transpose()) * crate::scalar::real::<T>(0.5);
    let s_off = (&s_off + s_off.transpose()) * crate::scalar::real::<T>(0.5);
    (a_off, s_off)
}

/// Reduces a snapshot set to its `m_off` smallest generalized eigenpairs,
/// with stiffness and weighted mass preassembled on the snapshot rectangle.
pub fn offline_reduce_with<T: Real>(
    snaps: &SnapshotSet<T>,
    a_op: &SparseOperator<T>,
    m_op: &SparseOperator<T>,
    m_off: usize,
) -> Result<OfflineBasis<T>> {
    let r = snaps.row_count();
    if m_off == 0 || m_off > r {
        return Err(Error::InvalidArgument(format!(
            "m_off = {m_off} outside 1..={r} snapshot rows"
        )));
    }
    let (a_off, s_off) = snapshot_gram(&snaps.rows, a_op, m_op);
    // Snapshot rows may be linearly dependent (the constant row of a full
    // sweep is the sum of the delta rows, and restriction loses rank), so
    // the pencil is solved on the numerical range of the mass Gram.
    let (values, vectors) = sym_generalized_eigen_trunc(&a_off, &s_off, 1e-12, m_off)?;
    let genuine = values.len();
    if genuine < m_off {
        return Err(Error::Eigen(format!(
            "snapshot space of node {} holds only {genuine} independent modes, {m_off} requested",
            snaps.coarse_node
        )));
    }

    let coeffs = vectors.columns(0, m_off).into_owned();
    let modes = coeffs.transpose() * &snaps.rows;
    Ok(OfflineBasis {
        coarse_node: snaps.coarse_node,
        rect: snaps.rect,
        eigenvalues: values[..m_off].to_vec(),
        coeffs,
        modes,
        excluded: (m_off < genuine).then(|| values[m_off]),
    })
}

/// As [`offline_reduce_with`], but degrades to the numerically available
/// mode count instead of failing when the span is too degenerate for the
/// request (no oversampling next to the domain boundary, say).
pub fn offline_reduce_capped<T: Real>(
    snaps: &SnapshotSet<T>,
    a_op: &SparseOperator<T>,
    m_op: &SparseOperator<T>,
    m_off: usize,
) -> Result<OfflineBasis<T>> {
    let wanted = m_off.min(snaps.row_count());
    match offline_reduce_with(snaps, a_op, m_op, wanted) {
        Err(Error::Eigen(_)) => {
            let (a_off, s_off) = snapshot_gram(&snaps.rows, a_op, m_op);
            let (values, _) = sym_generalized_eigen_trunc(&a_off, &s_off, 1e-12, 1)?;
            offline_reduce_with(snaps, a_op, m_op, values.len().max(1))
        }
        other => other,
    }
}

/// Convenience wrapper that assembles the neighborhood operators itself.
pub fn offline_reduce<T: Real>(
    snaps: &SnapshotSet<T>,
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    weight: &CoefficientField<T>,
    m_off: usize,
) -> Result<OfflineBasis<T>> {
    let region = Region::rect(geom, &snaps.rect)?;
    let a_op = assemble_stiffness(geom, field, &region);
    let m_op = assemble_mass(geom, weight, &region);
    offline_reduce_with(snaps, &a_op, &m_op, m_off)
}

/// How snapshot sets are produced for the interior coarse nodes.
#[derive(Debug, Clone)]
pub struct ReductionPlan {
    pub mode: SnapshotMode,
    pub oversample_t: usize,
    pub k_nb: usize,
    pub p_bf: usize,
    pub seed: u64,
    pub skin_inner: usize,
    pub skin_outer: usize,
}

impl ReductionPlan {
    /// Local spectral modes kept per interior node: the requested count
    /// plus the constant.
    pub fn modes_per_interior_node(&self) -> usize {
        self.k_nb + 1
    }
}

/// Builds the offline basis of every coarse node: interior nodes run the
/// snapshot + reduction pipeline, boundary nodes keep the constant only.
pub fn reduce_all<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    weight: &CoefficientField<T>,
    plan: &ReductionPlan,
) -> Result<Vec<OfflineBasis<T>>> {
    (0..geom.coarse_node_count())
        .into_par_iter()
        .map(|cn| {
            if !geom.is_interior_coarse_node(cn) || plan.k_nb == 0 {
                return Ok(OfflineBasis::constant_only(cn, geom.neighborhood_rect(cn)));
            }
            let nbhd = geom.neighborhood_with_skin(
                cn,
                plan.oversample_t,
                plan.skin_inner,
                plan.skin_outer,
            )?;
            let snaps = match plan.mode {
                SnapshotMode::Full => full_snapshots(geom, field, &nbhd)?,
                SnapshotMode::Random => {
                    random_snapshots(geom, field, &nbhd, plan.k_nb, plan.p_bf, plan.seed)?
                }
                SnapshotMode::Skin => {
                    skin_snapshots(geom, field, weight, &nbhd, plan.k_nb + plan.p_bf)?
                }
            };
            let region = Region::rect(geom, &snaps.rect)?;
            let a_op = assemble_stiffness(geom, field, &region);
            let m_op = assemble_mass(geom, weight, &region);
            offline_reduce_capped(&snaps, &a_op, &m_op, plan.modes_per_interior_node())
        })
        .collect()
}

/// Total coarse dimension carried by a basis family.
pub fn total_dimension<T: Real>(bases: &[OfflineBasis<T>]) -> usize {
    bases.iter().map(|b| b.mode_count()).sum()
}
