//! Nested structured grids on the unit square and the per-coarse-node
//! index sets: neighborhoods, oversampled regions, and skin layers.

use crate::error::{Error, Result};

/// Half-open rectangle of fine elements, `ex0..ex1` by `ey0..ey1`.
///
/// The node rectangle spanned by these elements is `ex0..=ex1` by
/// `ey0..=ey1` in fine-node coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub ex0: usize,
    pub ey0: usize,
    pub ex1: usize,
    pub ey1: usize,
}

impl Rect {
    pub fn element_count(&self) -> usize {
        (self.ex1 - self.ex0) * (self.ey1 - self.ey0)
    }

    /// Nodes per axis of the spanned node rectangle.
    pub fn node_dims(&self) -> (usize, usize) {
        (self.ex1 - self.ex0 + 1, self.ey1 - self.ey0 + 1)
    }

    pub fn node_count(&self) -> usize {
        let (nx, ny) = self.node_dims();
        nx * ny
    }

    pub fn contains_element(&self, ex: usize, ey: usize) -> bool {
        ex >= self.ex0 && ex < self.ex1 && ey >= self.ey0 && ey < self.ey1
    }

    pub fn contains_node(&self, ix: usize, iy: usize) -> bool {
        ix >= self.ex0 && ix <= self.ex1 && iy >= self.ey0 && iy <= self.ey1
    }

    /// Is `(ix, iy)` on the boundary of the spanned node rectangle?
    pub fn on_node_boundary(&self, ix: usize, iy: usize) -> bool {
        self.contains_node(ix, iy)
            && (ix == self.ex0 || ix == self.ex1 || iy == self.ey0 || iy == self.ey1)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.ex0 <= other.ex0
            && self.ey0 <= other.ey0
            && self.ex1 >= other.ex1
            && self.ey1 >= other.ey1
    }

    /// Grows by `t` element layers on every side, clipped to `bounds`.
    pub fn grown(&self, t: usize, bounds: &Rect) -> Rect {
        Rect {
            ex0: self.ex0.saturating_sub(t).max(bounds.ex0),
            ey0: self.ey0.saturating_sub(t).max(bounds.ey0),
            ex1: (self.ex1 + t).min(bounds.ex1),
            ey1: (self.ey1 + t).min(bounds.ey1),
        }
    }

    /// Shrinks by `t` element layers on every side; may become empty.
    pub fn shrunk(&self, t: usize) -> Rect {
        let ex0 = self.ex0 + t;
        let ey0 = self.ey0 + t;
        Rect {
            ex0,
            ey0,
            ex1: self.ex1.saturating_sub(t).max(ex0),
            ey1: self.ey1.saturating_sub(t).max(ey0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ex0 >= self.ex1 || self.ey0 >= self.ey1
    }
}

/// Fine-element ring: elements of `outer` not interior to `inner`.
#[derive(Debug, Clone, Copy)]
pub struct Ring {
    pub outer: Rect,
    pub inner: Rect,
}

/// Structured coarse/fine grid pair on the unit square.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGeometry {
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub fine_per_coarse: usize,
}

impl GridGeometry {
    pub fn fine_elems_x(&self) -> usize {
        self.coarse_nx * self.fine_per_coarse
    }

    pub fn fine_elems_y(&self) -> usize {
        self.coarse_ny * self.fine_per_coarse
    }

    pub fn fine_nodes_x(&self) -> usize {
        self.fine_elems_x() + 1
    }

    pub fn fine_nodes_y(&self) -> usize {
        self.fine_elems_y() + 1
    }

    pub fn fine_node_count(&self) -> usize {
        self.fine_nodes_x() * self.fine_nodes_y()
    }

    pub fn fine_element_count(&self) -> usize {
        self.fine_elems_x() * self.fine_elems_y()
    }

    /// Fine mesh spacing per axis (unit square domain).
    pub fn spacing(&self) -> (f64, f64) {
        (
            1.0 / self.fine_elems_x() as f64,
            1.0 / self.fine_elems_y() as f64,
        )
    }

    pub fn coarse_node_count(&self) -> usize {
        (self.coarse_nx + 1) * (self.coarse_ny + 1)
    }

    pub fn interior_coarse_node_count(&self) -> usize {
        self.coarse_nx.saturating_sub(1) * self.coarse_ny.saturating_sub(1)
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.fine_nodes_x() && iy < self.fine_nodes_y());
        iy * self.fine_nodes_x() + ix
    }

    #[inline]
    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node % self.fine_nodes_x(), node / self.fine_nodes_x())
    }

    /// Physical position of a fine node.
    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_coords(node);
        let (hx, hy) = self.spacing();
        (ix as f64 * hx, iy as f64 * hy)
    }

    #[inline]
    pub fn element_index(&self, ex: usize, ey: usize) -> usize {
        debug_assert!(ex < self.fine_elems_x() && ey < self.fine_elems_y());
        ey * self.fine_elems_x() + ex
    }

    #[inline]
    pub fn element_coords(&self, elem: usize) -> (usize, usize) {
        (elem % self.fine_elems_x(), elem / self.fine_elems_x())
    }

    /// The whole domain as an element rectangle.
    pub fn domain_rect(&self) -> Rect {
        Rect {
            ex0: 0,
            ey0: 0,
            ex1: self.fine_elems_x(),
            ey1: self.fine_elems_y(),
        }
    }

    pub fn coarse_node_grid_coords(&self, coarse_node: usize) -> (usize, usize) {
        (
            coarse_node % (self.coarse_nx + 1),
            coarse_node / (self.coarse_nx + 1),
        )
    }

    pub fn coarse_node_id(&self, cx: usize, cy: usize) -> usize {
        debug_assert!(cx <= self.coarse_nx && cy <= self.coarse_ny);
        cy * (self.coarse_nx + 1) + cx
    }

    /// Fine-node index sitting at a coarse node.
    pub fn coarse_node_fine_node(&self, coarse_node: usize) -> usize {
        let (cx, cy) = self.coarse_node_grid_coords(coarse_node);
        self.node_index(cx * self.fine_per_coarse, cy * self.fine_per_coarse)
    }

    pub fn is_interior_coarse_node(&self, coarse_node: usize) -> bool {
        let (cx, cy) = self.coarse_node_grid_coords(coarse_node);
        cx > 0 && cx < self.coarse_nx && cy > 0 && cy < self.coarse_ny
    }

    /// Is a fine node on the global boundary?
    pub fn on_domain_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || ix == self.fine_elems_x() || iy == 0 || iy == self.fine_elems_y()
    }

    /// Fine-element rectangle of one coarse block.
    pub fn coarse_block_rect(&self, bx: usize, by: usize) -> Rect {
        let m = self.fine_per_coarse;
        Rect {
            ex0: bx * m,
            ey0: by * m,
            ex1: (bx + 1) * m,
            ey1: (by + 1) * m,
        }
    }

    /// Coarse blocks whose closure contains the coarse node, i.e. the
    /// blocks forming its neighborhood.
    pub fn blocks_around(&self, coarse_node: usize) -> Vec<(usize, usize)> {
        let (cx, cy) = self.coarse_node_grid_coords(coarse_node);
        let mut blocks = Vec::with_capacity(4);
        for by in cy.saturating_sub(1)..=cy.min(self.coarse_ny - 1) {
            for bx in cx.saturating_sub(1)..=cx.min(self.coarse_nx - 1) {
                blocks.push((bx, by));
            }
        }
        blocks
    }

    /// Neighborhood element rectangle of a coarse node (union of the
    /// adjacent coarse blocks; always a rectangle on a structured grid).
    pub fn neighborhood_rect(&self, coarse_node: usize) -> Rect {
        let (cx, cy) = self.coarse_node_grid_coords(coarse_node);
        let m = self.fine_per_coarse;
        Rect {
            ex0: cx.saturating_sub(1) * m,
            ey0: cy.saturating_sub(1) * m,
            ex1: (cx + 1).min(self.coarse_nx) * m,
            ey1: (cy + 1).min(self.coarse_ny) * m,
        }
    }

    pub fn neighborhood(&self, coarse_node: usize, t: usize) -> Result<Neighborhood> {
        self.neighborhood_with_skin(coarse_node, t, 2, 3)
    }

    /// Builds the neighborhood of a coarse node with oversampling width `t`
    /// (fine-element layers, clipped at the domain boundary) and a skin
    /// layer of `skin_inner` element layers inside the neighborhood plus
    /// `skin_outer` outside.
    pub fn neighborhood_with_skin(
        &self,
        coarse_node: usize,
        t: usize,
        skin_inner: usize,
        skin_outer: usize,
    ) -> Result<Neighborhood> {
        if coarse_node >= self.coarse_node_count() {
            return Err(Error::InvalidArgument(format!(
                "coarse node {coarse_node} out of range (have {})",
                self.coarse_node_count()
            )));
        }
        let domain = self.domain_rect();
        let omega = self.neighborhood_rect(coarse_node);
        let omega_plus = omega.grown(t, &domain);
        let skin = Ring {
            outer: omega.grown(skin_outer, &domain),
            inner: omega.shrunk(skin_inner),
        };

        // Rectangle-boundary nodes of the oversampled region, split into
        // nodes carrying snapshot data and nodes pinned to zero on the
        // global boundary.
        let mut boundary_nodes = Vec::new();
        let mut data_nodes = Vec::new();
        for iy in omega_plus.ey0..=omega_plus.ey1 {
            for ix in omega_plus.ex0..=omega_plus.ex1 {
                if omega_plus.on_node_boundary(ix, iy) {
                    let node = self.node_index(ix, iy);
                    boundary_nodes.push(node);
                    if !self.on_domain_boundary(ix, iy) {
                        data_nodes.push(node);
                    }
                }
            }
        }

        Ok(Neighborhood {
            coarse_node,
            interior: self.is_interior_coarse_node(coarse_node),
            omega,
            omega_plus,
            boundary_nodes,
            data_nodes,
            skin,
        })
    }

    /// Fine-node ids of a node rectangle, row-major.
    pub fn rect_nodes(&self, rect: &Rect) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(rect.node_count());
        for iy in rect.ey0..=rect.ey1 {
            for ix in rect.ex0..=rect.ex1 {
                nodes.push(self.node_index(ix, iy));
            }
        }
        nodes
    }
}

/// Builds the nested grid pair; every count must be at least one.
pub fn build_geometry(
    coarse_nx: usize,
    coarse_ny: usize,
    fine_per_coarse: usize,
) -> Result<GridGeometry> {
    if coarse_nx == 0 || coarse_ny == 0 || fine_per_coarse == 0 {
        return Err(Error::InvalidArgument(
            "grid counts must all be at least 1".into(),
        ));
    }
    Ok(GridGeometry {
        coarse_nx,
        coarse_ny,
        fine_per_coarse,
    })
}

/// All index sets attached to one coarse node.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub coarse_node: usize,
    pub interior: bool,
    /// Union of the coarse blocks touching the node.
    pub omega: Rect,
    /// `omega` extended by `t` fine layers, clipped at the domain boundary.
    pub omega_plus: Rect,
    /// All nodes on the rectangle boundary of `omega_plus`.
    pub boundary_nodes: Vec<usize>,
    /// Boundary nodes that carry snapshot data (excludes the global
    /// boundary, which is pinned to zero in local solves).
    pub data_nodes: Vec<usize>,
    /// Skin layer straddling the boundary of `omega`.
    pub skin: Ring,
}

impl Neighborhood {
    /// Number of local solves a full snapshot sweep performs.
    pub fn full_snapshot_count(&self) -> usize {
        self.data_nodes.len()
    }
}
