//! Bilinear-quad finite element assembly on sub-regions of the fine grid,
//! plus Dirichlet elimination backed by a banded Cholesky factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Rect, Ring};
use crate::linalg::BandedCholesky;
use crate::scalar::{real, to_f64, Real};

/// Per-fine-node values of a discrete field on the full grid.
pub type FineSolution<T> = DVector<T>;

/// Relative residual target for every constrained solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// A set of fine elements with a local numbering of their nodes.
///
/// Nodes are ordered row-major by global index, so banded factorizations of
/// rectangle (and ring) regions stay narrow.
#[derive(Debug, Clone)]
pub struct Region {
    /// local index -> global fine-node id, ascending.
    pub nodes: Vec<usize>,
    /// global fine-element ids covered by the region, ascending.
    pub elements: Vec<usize>,
    lookup: Vec<i32>,
}

impl Region {
    fn from_parts(geom: &GridGeometry, elements: Vec<usize>) -> Self {
        let mut mark = vec![false; geom.fine_node_count()];
        for &e in &elements {
            let (ex, ey) = geom.element_coords(e);
            for (dx, dy) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
                mark[geom.node_index(ex + dx, ey + dy)] = true;
            }
        }
        let mut nodes = Vec::new();
        let mut lookup = vec![-1i32; geom.fine_node_count()];
        for (n, &m) in mark.iter().enumerate() {
            if m {
                lookup[n] = nodes.len() as i32;
                nodes.push(n);
            }
        }
        Region {
            nodes,
            elements,
            lookup,
        }
    }

    pub fn rect(geom: &GridGeometry, rect: &Rect) -> Result<Self> {
        if rect.is_empty() {
            return Err(Error::InvalidArgument("empty region".into()));
        }
        let mut elements = Vec::with_capacity(rect.element_count());
        for ey in rect.ey0..rect.ey1 {
            for ex in rect.ex0..rect.ex1 {
                elements.push(geom.element_index(ex, ey));
            }
        }
        Ok(Self::from_parts(geom, elements))
    }

    pub fn ring(geom: &GridGeometry, ring: &Ring) -> Result<Self> {
        let mut elements = Vec::new();
        for ey in ring.outer.ey0..ring.outer.ey1 {
            for ex in ring.outer.ex0..ring.outer.ex1 {
                if !ring.inner.contains_element(ex, ey) {
                    elements.push(geom.element_index(ex, ey));
                }
            }
        }
        if elements.is_empty() {
            return Err(Error::InvalidArgument("empty ring region".into()));
        }
        Ok(Self::from_parts(geom, elements))
    }

    pub fn full(geom: &GridGeometry) -> Self {
        Self::rect(geom, &geom.domain_rect()).expect("domain rect nonempty")
    }

    #[inline]
    pub fn local(&self, global: usize) -> Option<usize> {
        let v = self.lookup[global];
        (v >= 0).then_some(v as usize)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local values of a full-grid vector on this region.
    pub fn restrict<T: Real>(&self, full: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&n| full[n]))
    }
}

/// Symmetric sparse matrix over a region's local node numbering.
#[derive(Debug, Clone)]
pub struct SparseOperator<T> {
    pub n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<T>,
}

impl<T: Real> SparseOperator<T> {
    fn from_rows(mut rows: Vec<Vec<(u32, T)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut s = T::zero();
                while k < row.len() && row[k].0 == c {
                    s += row[k].1;
                    k += 1;
                }
                col.push(c);
                val.push(s);
            }
            row_ptr.push(col.len());
        }
        SparseOperator {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| (self.col[k] as usize, self.val[k]))
    }

    pub fn matvec(&self, x: &DVector<T>) -> DVector<T> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let mut s = T::zero();
            for (j, v) in self.row(i) {
                s += v * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// x^T A y.
    pub fn quad_form(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        let mut s = T::zero();
        for i in 0..self.n {
            let mut row = T::zero();
            for (j, v) in self.row(i) {
                row += v * y[j];
            }
            s += x[i] * row;
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn inf_norm(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.n {
            let s = self.row(i).fold(T::zero(), |acc, (_, v)| acc + v.abs());
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Exact symmetry check: every entry must equal its transpose bitwise.
    pub fn symmetry_defect(&self) -> T {
        let mut defect = T::zero();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let vt = self
                    .row(j)
                    .find(|&(c, _)| c == i)
                    .map(|(_, w)| w)
                    .unwrap_or_else(T::zero);
                let d = (v - vt).abs();
                if d > defect {
                    defect = d;
                }
            }
        }
        defect
    }
}

/// 4x4 bilinear stiffness matrix on an `hx` x `hy` rectangle with constant
/// coefficient, exact integration. Node order: SW, SE, NE, NW.
pub fn element_stiffness<T: Real>(kappa: T, hx: T, hy: T) -> [[T; 4]; 4] {
    let rx = kappa * hy / (hx * real::<T>(6.0));
    let ry = kappa * hx / (hy * real::<T>(6.0));
    const AX: [[f64; 4]; 4] = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    const AY: [[f64; 4]; 4] = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    let mut k = [[T::zero(); 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = rx * real::<T>(AX[a][b]) + ry * real::<T>(AY[a][b]);
        }
    }
    k
}

/// 4x4 bilinear mass matrix on an `hx` x `hy` rectangle with constant
/// weight, exact integration.
pub fn element_mass<T: Real>(weight: T, hx: T, hy: T) -> [[T; 4]; 4] {
    let scale = weight * hx * hy / real::<T>(36.0);
    const M: [[f64; 4]; 4] = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    let mut m = [[T::zero(); 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            m[a][b] = scale * real::<T>(M[a][b]);
        }
    }
    m
}

fn assemble<T: Real>(
    geom: &GridGeometry,
    region: &Region,
    element_matrix: impl Fn(usize) -> [[T; 4]; 4],
) -> SparseOperator<T> {
    let mut rows: Vec<Vec<(u32, T)>> = vec![Vec::with_capacity(12); region.len()];
    for &e in &region.elements {
        let (ex, ey) = geom.element_coords(e);
        let ids = [
            geom.node_index(ex, ey),
            geom.node_index(ex + 1, ey),
            geom.node_index(ex + 1, ey + 1),
            geom.node_index(ex, ey + 1),
        ];
        let local: Vec<usize> = ids
            .iter()
            .map(|&g| region.local(g).expect("element node inside region"))
            .collect();
        let ke = element_matrix(e);
        for a in 0..4 {
            for b in 0..4 {
                rows[local[a]].push((local[b] as u32, ke[a][b]));
            }
        }
    }
    SparseOperator::from_rows(rows)
}

/// Stiffness matrix of `a(u,v) = int kappa grad u . grad v` over the region.
pub fn assemble_stiffness<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    region: &Region,
) -> SparseOperator<T> {
    let (hx, hy) = geom.spacing();
    let (hx, hy) = (real::<T>(hx), real::<T>(hy));
    assemble(geom, region, |e| {
        element_stiffness(field.at_index(e), hx, hy)
    })
}

/// Weighted mass matrix of `int weight u v` over the region.
pub fn assemble_mass<T: Real>(
    geom: &GridGeometry,
    weight: &CoefficientField<T>,
    region: &Region,
) -> SparseOperator<T> {
    let (hx, hy) = geom.spacing();
    let (hx, hy) = (real::<T>(hx), real::<T>(hy));
    assemble(geom, region, |e| element_mass(weight.at_index(e), hx, hy))
}

/// Eliminates a set of constrained local nodes from an operator and keeps
/// the banded Cholesky factorization of the free block for repeated solves.
pub struct DirichletSolver<'a, T> {
    op: &'a SparseOperator<T>,
    free: Vec<usize>,
    free_of: Vec<i32>,
    fixed_mark: Vec<bool>,
    factor: Option<BandedCholesky<T>>,
}

impl<'a, T: Real> DirichletSolver<'a, T> {
    pub fn new(op: &'a SparseOperator<T>, fixed: &[usize]) -> Result<Self> {
        if fixed.is_empty() {
            return Err(Error::InvalidArgument(
                "Dirichlet solve needs a nonempty constrained node set".into(),
            ));
        }
        let mut fixed_mark = vec![false; op.n];
        for &i in fixed {
            if i >= op.n {
                return Err(Error::InvalidArgument(format!(
                    "constrained node {i} outside region of {} nodes",
                    op.n
                )));
            }
            fixed_mark[i] = true;
        }
        let mut free = Vec::with_capacity(op.n - fixed.len());
        let mut free_of = vec![-1i32; op.n];
        for i in 0..op.n {
            if !fixed_mark[i] {
                free_of[i] = free.len() as i32;
                free.push(i);
            }
        }

        let factor = if free.is_empty() {
            None
        } else {
            let mut hbw = 0usize;
            for (fi, &i) in free.iter().enumerate() {
                for (j, _) in op.row(i) {
                    if free_of[j] >= 0 {
                        hbw = hbw.max(fi.abs_diff(free_of[j] as usize));
                    }
                }
            }
            // Dense row lookup per free row keeps the factor build simple.
            let n_free = free.len();
            let mut band_rows = vec![T::zero(); n_free * (hbw + 1)];
            for (fi, &i) in free.iter().enumerate() {
                for (j, v) in op.row(i) {
                    let fj = free_of[j];
                    if fj >= 0 {
                        let fj = fj as usize;
                        if fj <= fi && fi - fj <= hbw {
                            band_rows[fi * (hbw + 1) + (fj + hbw - fi)] = v;
                        }
                    }
                }
            }
            Some(BandedCholesky::factor(n_free, hbw, |i, j| {
                band_rows[i * (hbw + 1) + (j + hbw - i)]
            })?)
        };

        Ok(Self {
            op,
            free,
            free_of,
            fixed_mark,
            factor,
        })
    }

    /// Solves with prescribed values on the constrained nodes and an
    /// optional volumetric right-hand side, returning the full local vector.
    ///
    /// `boundary_values` is read only at constrained positions.
    pub fn solve(
        &self,
        rhs: Option<&DVector<T>>,
        boundary_values: &DVector<T>,
    ) -> Result<DVector<T>> {
        let n = self.op.n;
        let mut x = DVector::<T>::zeros(n);
        for i in 0..n {
            if self.fixed_mark[i] {
                x[i] = boundary_values[i];
            }
        }
        if let Some(factor) = &self.factor {
            // Reduced RHS: b_free - A[free, fixed] * x_fixed.
            let coupling = self.op.matvec(&x);
            let mut b = DVector::<T>::zeros(self.free.len());
            for (fi, &i) in self.free.iter().enumerate() {
                let mut v = -coupling[i];
                if let Some(r) = rhs {
                    v += r[i];
                }
                b[fi] = v;
            }
            let b_norm = b.norm();
            let mut y = b.clone();
            factor.solve_in_place(y.as_mut_slice());
            for (fi, &i) in self.free.iter().enumerate() {
                x[i] = y[fi];
            }

            // Backward-error check of the reduced system.
            let full = self.op.matvec(&x);
            let mut r_norm_sq = T::zero();
            for &i in &self.free {
                let mut r = full[i];
                if let Some(rv) = rhs {
                    r -= rv[i];
                }
                r_norm_sq += r * r;
            }
            let scale = self.op.inf_norm() * y.norm() + b_norm;
            let resid = r_norm_sq.sqrt();
            let rel = if scale > T::zero() {
                resid / scale
            } else {
                resid
            };
            // The contract tolerance is calibrated for f64; narrower
            // scalars get a floor at their own precision.
            let tol = real::<T>(SOLVE_TOL).max(T::default_epsilon() * real::<T>(100.0));
            if !(rel <= tol) {
                return Err(Error::Solver {
                    what: "Dirichlet solve".into(),
                    residual: to_f64(rel),
                });
            }
        }
        Ok(x)
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, local: usize) -> bool {
        self.free_of[local] >= 0
    }
}

/// One-shot constrained solve; see [`DirichletSolver`] for the reusable form.
pub fn solve_dirichlet<T: Real>(
    op: &SparseOperator<T>,
    rhs: Option<&DVector<T>>,
    fixed: &[usize],
    boundary_values: &DVector<T>,
) -> Result<DVector<T>> {
    DirichletSolver::new(op, fixed)?.solve(rhs, boundary_values)
}

/// Fine-scale reference solve of the global Dirichlet problem with nodal
/// forcing `f` and boundary data `g`, both given as position functions.
pub fn fine_reference_solve<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    f: impl Fn(f64, f64) -> T,
    g: impl Fn(f64, f64) -> T,
) -> Result<FineSolution<T>> {
    let region = Region::full(geom);
    let stiffness = assemble_stiffness(geom, field, &region);

    let f_nodal = DVector::from_iterator(
        region.len(),
        region.nodes.iter().map(|&n| {
            let (x, y) = geom.node_position(n);
            f(x, y)
        }),
    );
    let nonzero_f = f_nodal.iter().any(|v| *v != T::zero());
    let rhs = if nonzero_f {
        let ones = CoefficientField::uniform(geom, T::one());
        let mass = assemble_mass(geom, &ones, &region);
        Some(mass.matvec(&f_nodal))
    } else {
        None
    };

    let mut fixed = Vec::new();
    let mut bc = DVector::<T>::zeros(region.len());
    for (li, &n) in region.nodes.iter().enumerate() {
        let (ix, iy) = geom.node_coords(n);
        if geom.on_domain_boundary(ix, iy) {
            fixed.push(li);
            let (x, y) = geom.node_position(n);
            bc[li] = g(x, y);
        }
    }
    solve_dirichlet(&stiffness, rhs.as_ref(), &fixed, &bc)
}
