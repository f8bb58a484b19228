//! Partition-of-unity functions per coarse node (bilinear hats or their
//! coefficient-adapted harmonic counterparts) and the derived weighted
//! coefficient for mass matrices.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::assembly::{assemble_stiffness, DirichletSolver, Region};
use crate::error::Result;
use crate::field::CoefficientField;
use crate::grid::{GridGeometry, Rect};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PouMode {
    Standard,
    Multiscale,
}

/// One partition function: fine-node values on the node rectangle of the
/// coarse node's neighborhood, zero outside.
#[derive(Debug, Clone)]
pub struct PouFunction<T> {
    pub rect: Rect,
    pub values: DVector<T>,
}

impl<T: Real> PouFunction<T> {
    /// Value at a global fine node (zero outside the support).
    pub fn value_at(&self, geom: &GridGeometry, node: usize) -> T {
        let (ix, iy) = geom.node_coords(node);
        if !self.rect.contains_node(ix, iy) {
            return T::zero();
        }
        let w = self.rect.ex1 - self.rect.ex0 + 1;
        self.values[(iy - self.rect.ey0) * w + (ix - self.rect.ex0)]
    }
}

#[derive(Debug, Clone)]
pub struct PartitionOfUnity<T> {
    pub mode: PouMode,
    /// Indexed by coarse node id.
    pub functions: Vec<PouFunction<T>>,
}

impl<T: Real> PartitionOfUnity<T> {
    /// Sum of all partition functions at a fine node; should be one.
    pub fn sum_at(&self, geom: &GridGeometry, node: usize) -> T {
        self.functions
            .iter()
            .fold(T::zero(), |acc, f| acc + f.value_at(geom, node))
    }
}

/// Value of the bilinear hat of coarse node `(cx, cy)` at fine node
/// `(ix, iy)`: a product of per-axis hats with one-coarse-cell support.
fn hat_value<T: Real>(geom: &GridGeometry, cx: usize, cy: usize, ix: usize, iy: usize) -> T {
    let m = geom.fine_per_coarse as f64;
    let sx = 1.0 - (ix as f64 / m - cx as f64).abs();
    let sy = 1.0 - (iy as f64 / m - cy as f64).abs();
    if sx <= 0.0 || sy <= 0.0 {
        T::zero()
    } else {
        real::<T>(sx * sy)
    }
}

/// Standard piecewise-bilinear hats.
pub fn build_standard_pou<T: Real>(geom: &GridGeometry) -> PartitionOfUnity<T> {
    let functions = (0..geom.coarse_node_count())
        .map(|cn| {
            let (cx, cy) = geom.coarse_node_grid_coords(cn);
            let rect = geom.neighborhood_rect(cn);
            let (w, h) = rect.node_dims();
            let mut values = DVector::zeros(w * h);
            for iy in 0..h {
                for ix in 0..w {
                    values[iy * w + ix] = hat_value(geom, cx, cy, rect.ex0 + ix, rect.ey0 + iy);
                }
            }
            PouFunction { rect, values }
        })
        .collect();
    PartitionOfUnity {
        mode: PouMode::Standard,
        functions,
    }
}

/// Multiscale partition functions: on every coarse block, the hat boundary
/// data is extended harmonically with respect to the coefficient.
pub fn build_multiscale_pou<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
) -> Result<PartitionOfUnity<T>> {
    let mut pou = build_standard_pou(geom);

    // One local solve per coarse block, shared by its four corner hats.
    let blocks: Vec<(usize, usize)> = (0..geom.coarse_ny)
        .flat_map(|by| (0..geom.coarse_nx).map(move |bx| (bx, by)))
        .collect();

    let solved: Vec<Result<(usize, usize, Vec<DVector<T>>)>> = blocks
        .par_iter()
        .map(|&(bx, by)| {
            let rect = geom.coarse_block_rect(bx, by);
            let region = Region::rect(geom, &rect)?;
            let stiffness = assemble_stiffness(geom, field, &region);
            let mut fixed = Vec::new();
            for (li, &n) in region.nodes.iter().enumerate() {
                let (ix, iy) = geom.node_coords(n);
                if rect.on_node_boundary(ix, iy) {
                    fixed.push(li);
                }
            }
            let solver = DirichletSolver::new(&stiffness, &fixed)?;

            let corners = [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)];
            let mut solutions = Vec::with_capacity(4);
            for &(cx, cy) in &corners {
                let mut bc = DVector::zeros(region.len());
                for &li in &fixed {
                    let (ix, iy) = geom.node_coords(region.nodes[li]);
                    bc[li] = hat_value(geom, cx, cy, ix, iy);
                }
                solutions.push(solver.solve(None, &bc)?);
            }
            Ok((bx, by, solutions))
        })
        .collect();

    for item in solved {
        let (bx, by, solutions) = item?;
        let rect = geom.coarse_block_rect(bx, by);
        let region = Region::rect(geom, &rect)?;
        let corners = [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)];
        for (solution, &(cx, cy)) in solutions.iter().zip(&corners) {
            let f = &mut pou.functions[geom.coarse_node_id(cx, cy)];
            let w = f.rect.ex1 - f.rect.ex0 + 1;
            for (li, &n) in region.nodes.iter().enumerate() {
                let (ix, iy) = geom.node_coords(n);
                f.values[(iy - f.rect.ey0) * w + (ix - f.rect.ex0)] = solution[li];
            }
        }
    }
    pou.mode = PouMode::Multiscale;
    Ok(pou)
}

pub fn build_pou<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    mode: PouMode,
) -> Result<PartitionOfUnity<T>> {
    match mode {
        PouMode::Standard => Ok(build_standard_pou(geom)),
        PouMode::Multiscale => build_multiscale_pou(geom, field),
    }
}

/// Weighted coefficient `kappa_e * sum_i |grad chi_i|^2` with the gradient
/// of each partition function taken at the cell center.
pub fn weighted_kappa<T: Real>(
    geom: &GridGeometry,
    field: &CoefficientField<T>,
    pou: &PartitionOfUnity<T>,
) -> CoefficientField<T> {
    let (hx, hy) = geom.spacing();
    let (hx, hy) = (real::<T>(hx), real::<T>(hy));
    let two = real::<T>(2.0);
    let m = geom.fine_per_coarse;

    let mut values = Vec::with_capacity(geom.fine_element_count());
    for ey in 0..geom.fine_elems_y() {
        for ex in 0..geom.fine_elems_x() {
            // Only the four corner nodes of the containing coarse block
            // have support on this cell.
            let (bx, by) = (ex / m, ey / m);
            let mut grad_sq = T::zero();
            for (cx, cy) in [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)] {
                let f = &pou.functions[geom.coarse_node_id(cx, cy)];
                let sw = f.value_at(geom, geom.node_index(ex, ey));
                let se = f.value_at(geom, geom.node_index(ex + 1, ey));
                let ne = f.value_at(geom, geom.node_index(ex + 1, ey + 1));
                let nw = f.value_at(geom, geom.node_index(ex, ey + 1));
                let gx = ((se + ne) - (sw + nw)) / (two * hx);
                let gy = ((nw + ne) - (sw + se)) / (two * hy);
                grad_sq += gx * gx + gy * gy;
            }
            // Keeps the field invariant if every gradient underflows.
            let floor = real::<T>(f64::MIN_POSITIVE);
            values.push((field.at(ex, ey) * grad_sq).max(floor));
        }
    }
    CoefficientField::new(geom.fine_elems_x(), geom.fine_elems_y(), values)
        .expect("weighted kappa positive")
}
