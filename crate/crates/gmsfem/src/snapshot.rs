//! Snapshot spaces per coarse neighborhood: local solves on the
//! oversampled region with full delta-data, randomized Gaussian data, or
//! boundary modes from a skin-layer eigenproblem, restricted to the
//! target neighborhood.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::assembly::{assemble_mass, assemble_stiffness, DirichletSolver, Region};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Neighborhood};
use crate::linalg::{numerical_rank, sym_generalized_eigen};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotMode {
    Full,
    Random,
    Skin,
}

impl SnapshotMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SnapshotMode::Full => "full",
            SnapshotMode::Random => "random",
            SnapshotMode::Skin => "skin",
        }
    }
}

/// Snapshot vectors of one neighborhood, one per matrix row, on the fine
/// nodes of `omega` (row-major local numbering). Exactly one row is the
/// constant function.
#[derive(Debug, Clone)]
pub struct SnapshotSet<T> {
    pub coarse_node: usize,
    pub mode: SnapshotMode,
    pub rect: crate::grid::Rect,
    pub rows: DMatrix<T>,
    /// Row index of the constant snapshot.
    pub constant_row: usize,
    pub seed: u64,
    pub k_nb: usize,
    pub p_bf: usize,
    /// Random draws whose rows were not numerically independent.
    pub degenerate: bool,
    /// Worst scaled interior residual of the local harmonic solves.
    pub max_harmonic_residual: f64,
}

impl<T: Real> SnapshotSet<T> {
    pub fn row_count(&self) -> usize {
        self.rows.nrows()
    }

    /// Keeps the first `k_nb + p_bf` random (or skin) rows plus the
    /// constant; equals a fresh draw with the smaller counts.
    pub fn truncated(&self, k_nb: usize, p_bf: usize) -> Result<SnapshotSet<T>> {
        if self.mode == SnapshotMode::Full {
            return Err(Error::InvalidArgument(
                "full snapshot sets are not truncated by counts".into(),
            ));
        }
        let keep = k_nb + p_bf;
        if keep + 1 > self.row_count() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {keep}+1 rows of {}",
                self.row_count()
            )));
        }
        let n = self.rows.ncols();
        let mut rows = DMatrix::zeros(keep + 1, n);
        for r in 0..keep {
            rows.row_mut(r).copy_from(&self.rows.row(r));
        }
        rows.row_mut(keep)
            .copy_from(&self.rows.row(self.constant_row));
        Ok(SnapshotSet {
            coarse_node: self.coarse_node,
            mode: self.mode,
            rect: self.rect,
            rows,
            constant_row: keep,
            seed: self.seed,
            k_nb,
            p_bf,
            degenerate: self.degenerate,
            max_harmonic_residual: self.max_harmonic_residual,
        })
    }

    /// Plain-text dump: header line, then one row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.mode.as_str(),
            self.coarse_node,
            self.rows.nrows(),
            self.rows.ncols()
        );
        for r in 0..self.rows.nrows() {
            let line: Vec<String> = (0..self.rows.ncols())
                .map(|c| format!("{}", crate::scalar::to_f64(self.rows[(r, c)])))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Deterministic per-neighborhood RNG: the stream depends only on the
/// global seed, the coarse node id, and a purpose salt, never on
/// scheduling order.
pub fn nbhd_rng(seed: u64, coarse_node: u64, salt: u64) -> ChaCha8Rng {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    let a = splitmix(seed ^ 0xa076_1d64_78bd_642f);
    let b = splitmix(a ^ coarse_node);
    let c = splitmix(b ^ salt);
    let d = splitmix(c);
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&a.to_le_bytes());
    bytes[8..16].copy_from_slice(&b.to_le_bytes());
    bytes[16..24].copy_from_slice(&c.to_le_bytes());
    bytes[24..].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

pub const SALT_SNAPSHOT: u64 = 1;
pub const SALT_ENRICH_BASE: u64 = 0x1000;
pub const SALT_LEMMA_SKETCH: u64 = 2;
pub const SALT_LEMMA_TESTS: u64 = 3;

/// Shared machinery: region solver for local harmonic extensions.
struct LocalHarmonic<'a, T> {
    region: Region,
    stiffness: crate::assembly::SparseOperator<T>,
    fixed: Vec<usize>,
    geom: &'a GridGeometry,
}

impl<'a, T: Real> LocalHarmonic<'a, T> {
    fn new(
        geom: &'a GridGeometry,
        field: &CoefficientField<T>,
        rect: &crate::grid::Rect,
    ) -> Result<Self> {
        let region = Region::rect(geom, rect)?;
        let stiffness = assemble_stiffness(geom, field, &region);
        let mut fixed = Vec::new();
        for (li, &n) in region.nodes.iter().enumerate() {
            let (ix, iy) = geom.node_coords(n);
            if rect.on_node_boundary(ix, iy) {
                fixed.push(li);
            }
        }
        Ok(Self {
            region,
            stiffness,
            fixed,
            geom,
        })
    }

    fn solver(&self) -> Result<DirichletSolver<'_, T>> {
        DirichletSolver::new(&self.stiffness, &self.fixed)
    }

    /// Scaled interior residual of a computed local solution.
    fn interior_residual(&self, u: &DVector<T>) -> f64 {
        let r = self.stiffness.matvec(u);
        let mut fixed_mark = vec![false; self.region.len()];
        for &i in &self.fixed {
            fixed_mark[i] = true;
        }
        let mut worst = T::zero();
        for i in 0..self.region.len() {
            if !fixed_mark[i] && r[i].abs() > worst {
                worst = r[i].abs();
            }
        }
        let scale = self.stiffness.inf_norm() * u.amax() + real::<T>(f64::MIN_POSITIVE);
        crate::scalar::to_f64(worst / scale)
    }

    /// Restriction of a region vector to the nodes of `rect`.
    fn restrict_to(&self, rect: &crate::grid::Rect, u: &DVector<T>) -> DVector<T> {
        let nodes = self.geom.rect_nodes(rect);
        DVector::from_iterator(
            nodes.len(),
            nodes
                .iter()
                .map(|&n| u[self.region.local(n).expect("target inside solve region")]),
        )
    }
}

/// One harmonic solve per boundary data node with Kronecker-delta data,
/// restricted to the neighborhood; the constant row is prepended.
pub fn full_snapshots<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    nbhd: &Neighborhood,
) -> Result<SnapshotSet<T>> {
    let local = LocalHarmonic::new(geom, field, &nbhd.omega_plus)?;
    let solver = local.solver()?;
    let n_omega = nbhd.omega.node_count();
    let mut rows = DMatrix::zeros(nbhd.data_nodes.len() + 1, n_omega);
    for c in 0..n_omega {
        rows[(0, c)] = T::one();
    }
    let mut max_resid = 0.0f64;
    let mut bc = DVector::<T>::zeros(local.region.len());
    for (k, &data_node) in nbhd.data_nodes.iter().enumerate() {
        let li = local.region.local(data_node).expect("data node in region");
        bc[li] = T::one();
        let u = solver.solve(None, &bc)?;
        bc[li] = T::zero();
        max_resid = max_resid.max(local.interior_residual(&u));
        rows.row_mut(k + 1)
            .copy_from(&local.restrict_to(&nbhd.omega, &u).transpose());
    }
    Ok(SnapshotSet {
        coarse_node: nbhd.coarse_node,
        mode: SnapshotMode::Full,
        rect: nbhd.omega,
        rows,
        constant_row: 0,
        seed: 0,
        k_nb: 0,
        p_bf: 0,
        degenerate: false,
        max_harmonic_residual: max_resid,
    })
}

/// Harmonic extensions of i.i.d. standard Gaussian boundary data on the
/// oversampled region (zero forcing, zero on the global-boundary part),
/// restricted to the neighborhood: one draw per returned row, along with
/// the worst scaled interior residual.
pub fn random_harmonic_rows<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    nbhd: &Neighborhood,
    count: usize,
    seed: u64,
    salt: u64,
) -> Result<(DMatrix<T>, f64)> {
    let local = LocalHarmonic::new(geom, field, &nbhd.omega_plus)?;
    let solver = local.solver()?;
    let mut rng = nbhd_rng(seed, nbhd.coarse_node as u64, salt);

    let n_omega = nbhd.omega.node_count();
    let mut rows = DMatrix::zeros(count, n_omega);
    let mut max_resid = 0.0f64;
    for l in 0..count {
        let mut bc = DVector::<T>::zeros(local.region.len());
        for &data_node in &nbhd.data_nodes {
            let g: f64 = rng.sample(StandardNormal);
            bc[local.region.local(data_node).expect("data node in region")] = real::<T>(g);
        }
        let u = solver.solve(None, &bc)?;
        max_resid = max_resid.max(local.interior_residual(&u));
        rows.row_mut(l)
            .copy_from(&local.restrict_to(&nbhd.omega, &u).transpose());
    }
    Ok((rows, max_resid))
}

/// Draws `k_nb + p_bf` randomized snapshots and appends the constant row.
pub fn random_snapshots<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    nbhd: &Neighborhood,
    k_nb: usize,
    p_bf: usize,
    seed: u64,
) -> Result<SnapshotSet<T>> {
    if k_nb < 1 {
        return Err(Error::InvalidArgument("k_nb must be at least 1".into()));
    }
    let draws = k_nb + p_bf;
    let (random_rows, max_resid) =
        random_harmonic_rows(geom, field, nbhd, draws, seed, SALT_SNAPSHOT)?;
    let n_omega = nbhd.omega.node_count();
    let mut rows = DMatrix::zeros(draws + 1, n_omega);
    rows.rows_mut(0, draws).copy_from(&random_rows);
    for c in 0..n_omega {
        rows[(draws, c)] = T::one();
    }

    let degenerate = numerical_rank(&rows, real::<T>(1e-10)) < rows.nrows();
    Ok(SnapshotSet {
        coarse_node: nbhd.coarse_node,
        mode: SnapshotMode::Random,
        rect: nbhd.omega,
        rows,
        constant_row: draws,
        seed,
        k_nb,
        p_bf,
        degenerate,
        max_harmonic_residual: max_resid,
    })
}

/// Boundary modes from the skin-layer eigenproblem: the `count` smallest
/// eigenvectors of the strip stiffness/mass pencil are traced onto the
/// neighborhood boundary and extended harmonically inward; the constant
/// row is appended.
pub fn skin_snapshots<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    weight: &CoefficientField<T>,
    nbhd: &Neighborhood,
    count: usize,
) -> Result<SnapshotSet<T>> {
    if count < 1 {
        return Err(Error::InvalidArgument(
            "snapshot count must be at least 1".into(),
        ));
    }
    let strip = Region::ring(geom, &nbhd.skin)?;
    if count + 1 >= strip.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} skin modes from a strip of {} nodes",
            strip.len()
        )));
    }
    let a_strip = assemble_stiffness(geom, field, &strip).to_dense();
    let s_strip = assemble_mass(geom, weight, &strip).to_dense();
    let (_, vectors) = sym_generalized_eigen(&a_strip, &s_strip)?;

    // Harmonic extension into omega of each mode's boundary trace. The
    // strip's first eigenvector is the constant (zero eigenvalue), which
    // the explicit constant row already provides, so skip it.
    let local = LocalHarmonic::new(geom, field, &nbhd.omega)?;
    let solver = local.solver()?;
    let n_omega = nbhd.omega.node_count();
    let mut rows = DMatrix::zeros(count + 1, n_omega);
    let mut max_resid = 0.0f64;
    for k in 0..count {
        let mode = vectors.column(k + 1);
        let mut bc = DVector::<T>::zeros(local.region.len());
        for &li in &local.fixed {
            let global = local.region.nodes[li];
            let si = strip.local(global).ok_or_else(|| {
                Error::InvalidArgument("skin layer misses the neighborhood boundary".into())
            })?;
            bc[li] = mode[si];
        }
        let u = solver.solve(None, &bc)?;
        max_resid = max_resid.max(local.interior_residual(&u));
        rows.row_mut(k)
            .copy_from(&local.restrict_to(&nbhd.omega, &u).transpose());
    }
    for c in 0..n_omega {
        rows[(count, c)] = T::one();
    }
    Ok(SnapshotSet {
        coarse_node: nbhd.coarse_node,
        mode: SnapshotMode::Skin,
        rect: nbhd.omega,
        rows,
        constant_row: count,
        seed: 0,
        k_nb: count,
        p_bf: 0,
        degenerate: false,
        max_harmonic_residual: max_resid,
    })
}
