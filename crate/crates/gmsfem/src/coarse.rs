//! Global coarse problem: multiscale basis functions (partition of unity
//! times offline modes), Galerkin assembly and solve, downscaling, and
//! error reports against the fine reference.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::assembly::{
    assemble_mass, assemble_stiffness, element_stiffness, Region, SparseOperator,
};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Rect};
use crate::pou::PartitionOfUnity;
use crate::scalar::{real, to_f64, Real};
use crate::spectral::OfflineBasis;

/// One multiscale basis function: values on its neighborhood rectangle.
#[derive(Debug, Clone)]
pub struct BasisField<T> {
    pub rect: Rect,
    pub values: DVector<T>,
}

impl<T: Real> BasisField<T> {
    #[inline]
    fn value(&self, ix: usize, iy: usize) -> T {
        if !self.rect.contains_node(ix, iy) {
            return T::zero();
        }
        let w = self.rect.ex1 - self.rect.ex0 + 1;
        self.values[(iy - self.rect.ey0) * w + (ix - self.rect.ex0)]
    }
}

/// Identifies a coarse degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseDof {
    pub coarse_node: usize,
    pub mode: usize,
}

#[derive(Debug, Clone)]
pub struct CoarseSpace<T> {
    pub dofs: Vec<CoarseDof>,
    pub fields: Vec<BasisField<T>>,
    /// Prescribed value for constrained dofs (boundary-node constants).
    pub dirichlet: Vec<Option<T>>,
    /// First dof index of each coarse node.
    pub node_offsets: Vec<usize>,
}

impl<T: Real> CoarseSpace<T> {
    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    pub fn dof_index(&self, coarse_node: usize, mode: usize) -> usize {
        self.node_offsets[coarse_node] + mode
    }

    /// Downscales coarse coefficients to a fine-grid field.
    pub fn downscale(&self, geom: &GridGeometry, coeffs: &DVector<T>) -> DVector<T> {
        let mut u = DVector::zeros(geom.fine_node_count());
        for (d, field) in self.fields.iter().enumerate() {
            let c = coeffs[d];
            if c == T::zero() {
                continue;
            }
            let w = field.rect.ex1 - field.rect.ex0 + 1;
            for iy in field.rect.ey0..=field.rect.ey1 {
                for ix in field.rect.ex0..=field.rect.ex1 {
                    u[geom.node_index(ix, iy)] +=
                        c * field.values[(iy - field.rect.ey0) * w + (ix - field.rect.ex0)];
                }
            }
        }
        u
    }
}

/// Multiplies each offline mode by its node's partition function and marks
/// boundary-node constants as Dirichlet dofs carrying `g` at the node.
pub fn build_coarse_space<T: Real>(
    geom: &GridGeometry,
    pou: &PartitionOfUnity<T>,
    bases: &[OfflineBasis<T>],
    g: impl Fn(f64, f64) -> T,
) -> Result<CoarseSpace<T>> {
    if bases.len() != geom.coarse_node_count() {
        return Err(Error::InvalidArgument(format!(
            "need one basis per coarse node: got {} of {}",
            bases.len(),
            geom.coarse_node_count()
        )));
    }
    let mut dofs = Vec::new();
    let mut fields = Vec::new();
    let mut dirichlet = Vec::new();
    let mut node_offsets = Vec::with_capacity(bases.len());

    for (cn, basis) in bases.iter().enumerate() {
        node_offsets.push(dofs.len());
        if basis.coarse_node != cn {
            return Err(Error::InvalidArgument(
                "bases must be indexed by coarse node".into(),
            ));
        }
        let chi = &pou.functions[cn];
        debug_assert_eq!(chi.rect, basis.rect);
        let interior = geom.is_interior_coarse_node(cn);
        for k in 0..basis.mode_count() {
            let mut values = DVector::zeros(basis.rect.node_count());
            for i in 0..values.len() {
                values[i] = chi.values[i] * basis.modes[(k, i)];
            }
            dofs.push(CoarseDof {
                coarse_node: cn,
                mode: k,
            });
            fields.push(BasisField {
                rect: basis.rect,
                values,
            });
            if !interior && k == 0 {
                let (x, y) = geom.node_position(geom.coarse_node_fine_node(cn));
                dirichlet.push(Some(g(x, y)));
            } else {
                dirichlet.push(None);
            }
        }
    }
    Ok(CoarseSpace {
        dofs,
        fields,
        dirichlet,
        node_offsets,
    })
}

#[derive(Debug, Clone)]
pub struct CoarseSolution<T> {
    pub coeffs: DVector<T>,
    pub u_h: DVector<T>,
    pub dim: usize,
}

/// Assembles the coarse Galerkin matrix by looping over fine elements,
/// block by block; only the four corner nodes of a coarse block carry
/// basis functions there.
fn assemble_coarse_matrix<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    space: &CoarseSpace<T>,
) -> DMatrix<T> {
    let dim = space.dim();
    let mut a = DMatrix::<T>::zeros(dim, dim);
    let (hx, hy) = geom.spacing();
    let (hx, hy) = (real::<T>(hx), real::<T>(hy));

    for by in 0..geom.coarse_ny {
        for bx in 0..geom.coarse_nx {
            // Dofs supported on this block, ascending.
            let mut block_dofs: Vec<usize> = Vec::new();
            for (cx, cy) in [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)] {
                let cn = geom.coarse_node_id(cx, cy);
                let start = space.node_offsets[cn];
                let end = if cn + 1 < space.node_offsets.len() {
                    space.node_offsets[cn + 1]
                } else {
                    dim
                };
                block_dofs.extend(start..end);
            }
            block_dofs.sort_unstable();

            let rect = geom.coarse_block_rect(bx, by);
            let nd = block_dofs.len();
            let mut vals = vec![[T::zero(); 4]; nd];
            let mut kv = vec![[T::zero(); 4]; nd];
            for ey in rect.ey0..rect.ey1 {
                for ex in rect.ex0..rect.ex1 {
                    let ke = element_stiffness(field.at(ex, ey), hx, hy);
                    let corners = [(ex, ey), (ex + 1, ey), (ex + 1, ey + 1), (ex, ey + 1)];
                    for (i, &d) in block_dofs.iter().enumerate() {
                        let f = &space.fields[d];
                        for (a4, &(ix, iy)) in corners.iter().enumerate() {
                            vals[i][a4] = f.value(ix, iy);
                        }
                        for a4 in 0..4 {
                            let mut s = T::zero();
                            for b4 in 0..4 {
                                s += ke[a4][b4] * vals[i][b4];
                            }
                            kv[i][a4] = s;
                        }
                    }
                    for i in 0..nd {
                        for j in i..nd {
                            let mut s = T::zero();
                            for a4 in 0..4 {
                                s += vals[i][a4] * kv[j][a4];
                            }
                            a[(block_dofs[i], block_dofs[j])] += s;
                        }
                    }
                }
            }
        }
    }
    // Mirror the upper triangle.
    for i in 0..dim {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    a
}

/// Solves the coarse Galerkin problem with the space's Dirichlet data and
/// nodal forcing `f`, then downscales to the fine grid.
pub fn solve_coarse<T: Real>(
    space: &CoarseSpace<T>,
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    f: impl Fn(f64, f64) -> T,
) -> Result<CoarseSolution<T>> {
    let dim = space.dim();
    let a = assemble_coarse_matrix(geom, field, space);

    // RHS (f, phi_j) through the unweighted fine mass matrix.
    let f_nodal = DVector::from_iterator(
        geom.fine_node_count(),
        (0..geom.fine_node_count()).map(|n| {
            let (x, y) = geom.node_position(n);
            f(x, y)
        }),
    );
    let mut b = DVector::<T>::zeros(dim);
    if f_nodal.iter().any(|v| *v != T::zero()) {
        let region = Region::full(geom);
        let ones = CoefficientField::uniform(geom, T::one());
        let mass = assemble_mass(geom, &ones, &region);
        let w = mass.matvec(&f_nodal);
        for (d, fld) in space.fields.iter().enumerate() {
            let mut s = T::zero();
            let wdt = fld.rect.ex1 - fld.rect.ex0 + 1;
            for iy in fld.rect.ey0..=fld.rect.ey1 {
                for ix in fld.rect.ex0..=fld.rect.ex1 {
                    s += fld.values[(iy - fld.rect.ey0) * wdt + (ix - fld.rect.ex0)]
                        * w[geom.node_index(ix, iy)];
                }
            }
            b[d] = s;
        }
    }

    // Partition dofs and reduce.
    let mut free = Vec::with_capacity(dim);
    let mut coeffs = DVector::<T>::zeros(dim);
    for (d, bc) in space.dirichlet.iter().enumerate() {
        match bc {
            Some(v) => coeffs[d] = *v,
            None => free.push(d),
        }
    }
    let nf = free.len();
    if nf > 0 {
        let mut a_ff = DMatrix::<T>::zeros(nf, nf);
        for (i, &di) in free.iter().enumerate() {
            for (j, &dj) in free.iter().enumerate() {
                a_ff[(i, j)] = a[(di, dj)];
            }
        }
        let mut b_f = DVector::<T>::zeros(nf);
        for (i, &di) in free.iter().enumerate() {
            let mut s = b[di];
            for (d, bc) in space.dirichlet.iter().enumerate() {
                if let Some(v) = bc {
                    s -= a[(di, d)] * *v;
                }
            }
            b_f[i] = s;
        }
        let chol = Cholesky::new(a_ff).ok_or(Error::SingularCoarse)?;
        let x = chol.solve(&b_f);
        for (i, &di) in free.iter().enumerate() {
            coeffs[di] = x[i];
        }
    }

    let u_h = space.downscale(geom, &coeffs);
    Ok(CoarseSolution { coeffs, u_h, dim })
}

/// Relative errors of a coarse solution in the weighted norms, as
/// percentages, with the offline dimension and the snapshot ratio.
#[derive(Debug, Clone)]
pub struct ErrorReport<T> {
    pub dim: usize,
    pub snapshot_ratio_pct: f64,
    pub l2_pct: T,
    pub h1_pct: T,
}

/// Share of: local solves performed per interior node over the full
/// snapshot count of an unclipped interior node, in percent.
pub fn snapshot_ratio_pct(geom: &GridGeometry, computed: usize, t: usize) -> f64 {
    let full = 4 * (2 * geom.fine_per_coarse + 2 * t);
    100.0 * computed as f64 / full as f64
}

/// Errors against the fine reference with preassembled norm matrices
/// (`a_op` for energy, `m_kappa` for the weighted L2 norm).
pub fn error_report_with<T: Real>(
    a_op: &SparseOperator<T>,
    m_kappa: &SparseOperator<T>,
    u_fine: &DVector<T>,
    u_h: &DVector<T>,
    dim: usize,
    snapshot_ratio_pct: f64,
) -> Result<ErrorReport<T>> {
    let diff = u_fine - u_h;
    let h1_ref = a_op.quad_form(u_fine, u_fine).sqrt();
    let l2_ref = m_kappa.quad_form(u_fine, u_fine).sqrt();
    if !(h1_ref > T::zero()) || !(l2_ref > T::zero()) {
        return Err(Error::InvalidArgument(
            "zero-norm reference solution".into(),
        ));
    }
    let hundred = real::<T>(100.0);
    Ok(ErrorReport {
        dim,
        snapshot_ratio_pct,
        l2_pct: hundred * m_kappa.quad_form(&diff, &diff).sqrt() / l2_ref,
        h1_pct: hundred * a_op.quad_form(&diff, &diff).sqrt() / h1_ref,
    })
}

pub fn error_report<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    u_fine: &DVector<T>,
    u_h: &DVector<T>,
    dim: usize,
    snapshot_ratio_pct: f64,
) -> Result<ErrorReport<T>> {
    let region = Region::full(geom);
    let a_op = assemble_stiffness(geom, field, &region);
    let m_kappa = assemble_mass(geom, field, &region);
    error_report_with(&a_op, &m_kappa, u_fine, u_h, dim, snapshot_ratio_pct)
}

impl<T: Real> ErrorReport<T> {
    pub fn l2(&self) -> f64 {
        to_f64(self.l2_pct)
    }

    pub fn h1(&self) -> f64 {
        to_f64(self.h1_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::fine_reference_solve;
    use crate::field::generate_channels;
    use crate::grid::build_geometry;
    use crate::pou::{build_pou, build_standard_pou, PouMode};
    use crate::snapshot::random_snapshots;
    use crate::snapshot::SnapshotMode;
    use crate::spectral::{offline_reduce, reduce_all, ReductionPlan};

    fn constants_plan() -> ReductionPlan {
        ReductionPlan {
            mode: SnapshotMode::Random,
            oversample_t: 1,
            k_nb: 0,
            p_bf: 0,
            seed: 1,
            skin_inner: 2,
            skin_outer: 3,
        }
    }

    #[test]
    fn constant_mode_is_partition_function() {
        let g = build_geometry(3, 3, 3).unwrap();
        let f = CoefficientField::uniform(&g, 1.0);
        let pou = build_standard_pou(&g);
        let bases = reduce_all(&g, &f, &f, &constants_plan()).unwrap();
        let space = build_coarse_space(&g, &pou, &bases, |x, y| x + y).unwrap();
        assert_eq!(space.dim(), g.coarse_node_count());
        for (d, fld) in space.fields.iter().enumerate() {
            let cn = space.dofs[d].coarse_node;
            for (i, &v) in fld.values.iter().enumerate() {
                assert!((v - pou.functions[cn].values[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_modes_sum_to_one() {
        let g = build_geometry(3, 2, 4).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e3, 2).unwrap();
        let pou = build_pou(&g, &f, PouMode::Multiscale).unwrap();
        let bases = reduce_all(&g, &f, &f, &constants_plan()).unwrap();
        let space = build_coarse_space(&g, &pou, &bases, |_, _| 0.0).unwrap();
        let ones = DVector::from_element(space.dim(), 1.0);
        let u = space.downscale(&g, &ones);
        for n in 0..g.fine_node_count() {
            assert!((u[n] - 1.0).abs() < 1e-9, "node {n}");
        }
    }

    #[test]
    fn basis_supported_in_neighborhood() {
        let g = build_geometry(4, 4, 2).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e3, 3).unwrap();
        let pou = build_standard_pou(&g);
        let nb = g.neighborhood(g.coarse_node_id(2, 2), 1).unwrap();
        let snaps = random_snapshots(&g, &f, &nb, 2, 1, 3).unwrap();
        let basis = offline_reduce(&snaps, &g, &f, &f, 3).unwrap();
        let mut bases: Vec<_> = (0..g.coarse_node_count())
            .map(|cn| OfflineBasis::constant_only(cn, g.neighborhood_rect(cn)))
            .collect();
        bases[g.coarse_node_id(2, 2)] = basis;
        let space = build_coarse_space(&g, &pou, &bases, |_, _| 0.0).unwrap();
        // Downscale a unit vector of one spectral mode; it must vanish
        // outside its neighborhood rectangle.
        let d = space.dof_index(g.coarse_node_id(2, 2), 2);
        let mut c = DVector::zeros(space.dim());
        c[d] = 1.0;
        let u = space.downscale(&g, &c);
        for n in 0..g.fine_node_count() {
            let (ix, iy) = g.node_coords(n);
            if !nb.omega.contains_node(ix, iy) {
                assert_eq!(u[n], 0.0, "leak at node {n}");
            }
        }
    }

    #[test]
    fn constant_kappa_exactness() {
        // kappa = 1, constants only, linear boundary data: the coarse
        // space reproduces the fine solution exactly.
        let g = build_geometry(4, 4, 4).unwrap();
        let f = CoefficientField::uniform(&g, 1.0);
        let pou = build_pou(&g, &f, PouMode::Multiscale).unwrap();
        let bases = reduce_all(&g, &f, &f, &constants_plan()).unwrap();
        let space = build_coarse_space(&g, &pou, &bases, |x, y| x + y).unwrap();
        let sol = solve_coarse(&space, &g, &f, |_, _| 0.0).unwrap();
        let u = fine_reference_solve(&g, &f, |_, _| 0.0, |x, y| x + y).unwrap();
        let report = error_report(&g, &f, &u, &sol.u_h, sol.dim, 0.0).unwrap();
        assert!(report.l2() <= 1e-7, "l2 {}", report.l2());
        assert!(report.h1() <= 1e-7, "h1 {}", report.h1());
    }

    #[test]
    fn boundary_trace_exact_for_linear_data() {
        let g = build_geometry(3, 3, 4).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e4, 6).unwrap();
        let pou = build_pou(&g, &f, PouMode::Multiscale).unwrap();
        let plan = ReductionPlan {
            k_nb: 2,
            p_bf: 1,
            ..constants_plan()
        };
        let bases = reduce_all(&g, &f, &f, &plan).unwrap();
        let space = build_coarse_space(&g, &pou, &bases, |x, y| x + y).unwrap();
        let sol = solve_coarse(&space, &g, &f, |_, _| 0.0).unwrap();
        for n in 0..g.fine_node_count() {
            let (ix, iy) = g.node_coords(n);
            if g.on_domain_boundary(ix, iy) {
                let (x, y) = g.node_position(n);
                assert!((sol.u_h[n] - (x + y)).abs() < 1e-9, "node {n}");
            }
        }
    }

    #[test]
    fn adding_modes_never_increases_energy_error() {
        let g = build_geometry(3, 3, 4).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e4, 9).unwrap();
        let pou = build_pou(&g, &f, PouMode::Multiscale).unwrap();
        let u = fine_reference_solve(&g, &f, |_, _| 0.0, |x, y| x + y).unwrap();

        // Shared snapshot sets; growing mode counts give nested spaces.
        let mut prev = f64::INFINITY;
        let mut bases_by_m: Vec<Vec<OfflineBasis<f64>>> = Vec::new();
        for m in 1..=4usize {
            let bases: Vec<OfflineBasis<f64>> = (0..g.coarse_node_count())
                .map(|cn| {
                    if g.is_interior_coarse_node(cn) {
                        let nb = g.neighborhood(cn, 1).unwrap();
                        let snaps = random_snapshots(&g, &f, &nb, 4, 2, 3).unwrap();
                        offline_reduce(&snaps, &g, &f, &f, m).unwrap()
                    } else {
                        OfflineBasis::constant_only(cn, g.neighborhood_rect(cn))
                    }
                })
                .collect();
            bases_by_m.push(bases);
        }
        for bases in &bases_by_m {
            let space = build_coarse_space(&g, &pou, bases, |x, y| x + y).unwrap();
            let sol = solve_coarse(&space, &g, &f, |_, _| 0.0).unwrap();
            let rep = error_report(&g, &f, &u, &sol.u_h, sol.dim, 0.0).unwrap();
            assert!(
                rep.h1() <= prev + 1e-9,
                "error went up: {} -> {}",
                prev,
                rep.h1()
            );
            prev = rep.h1();
        }
    }

    #[test]
    fn galerkin_beats_interpolant() {
        let g = build_geometry(3, 3, 3).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e3, 12).unwrap();
        let pou = build_pou(&g, &f, PouMode::Multiscale).unwrap();
        let bases = reduce_all(&g, &f, &f, &constants_plan()).unwrap();
        let space = build_coarse_space(&g, &pou, &bases, |x, y| x + y).unwrap();
        let sol = solve_coarse(&space, &g, &f, |_, _| 0.0).unwrap();
        let u = fine_reference_solve(&g, &f, |_, _| 0.0, |x, y| x + y).unwrap();

        // Interpolant candidate: nodal values of u at the coarse nodes.
        let mut c = DVector::zeros(space.dim());
        for (d, dof) in space.dofs.iter().enumerate() {
            if dof.mode == 0 {
                c[d] = u[g.coarse_node_fine_node(dof.coarse_node)];
            }
        }
        let v = space.downscale(&g, &c);
        let region = Region::full(&g);
        let a = assemble_stiffness(&g, &f, &region);
        let eh = {
            let d = &u - &sol.u_h;
            a.quad_form(&d, &d)
        };
        let ei = {
            let d = &u - &v;
            a.quad_form(&d, &d)
        };
        assert!(eh <= ei + 1e-12, "Galerkin {eh} vs interpolant {ei}");
    }

    #[test]
    fn trivial_error_reports() {
        let g = build_geometry(2, 2, 3).unwrap();
        let f: CoefficientField<f64> = generate_channels(&g, 1e3, 5).unwrap();
        let u = fine_reference_solve(&g, &f, |_, _| 0.0, |x, y| x + y).unwrap();
        let same = error_report(&g, &f, &u, &u, 1, 0.0).unwrap();
        assert_eq!(same.l2(), 0.0);
        assert_eq!(same.h1(), 0.0);
        let zero = DVector::zeros(g.fine_node_count());
        let all = error_report(&g, &f, &u, &zero, 1, 0.0).unwrap();
        assert!((all.l2() - 100.0).abs() < 1e-9);
        assert!((all.h1() - 100.0).abs() < 1e-9);
        // Zero reference rejected.
        assert!(error_report(&g, &f, &zero, &u, 1, 0.0).is_err());
    }

    #[test]
    fn benchmark_ratio_arithmetic() {
        let g = build_geometry(10, 10, 10).unwrap();
        let r = snapshot_ratio_pct(&g, 14, 3);
        assert!((r - 13.461538461538462).abs() < 1e-12);
    }
}
