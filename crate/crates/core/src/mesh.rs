//! Uniform tensor-product grids, coarse/fine nesting and coarse neighborhoods.
//!
//! Nodes and elements are numbered row-major from the lower-left corner.
//! Element corners are listed counterclockwise from the lower-left one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod pou;
pub use pou::{partition_of_unity, PartitionOfUnity, PouMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

impl Default for Rect {
    fn default() -> Self {
        Rect::UNIT
    }
}

/// A block of `nx × ny` elements whose lower-left element is `(i0, j0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ElementWindow {
    pub i0: usize,
    pub j0: usize,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    nx: usize,
    ny: usize,
    domain: Rect,
}

pub fn build_fine_grid(nx: usize, ny: usize, domain: Rect) -> Result<StructuredGrid> {
    StructuredGrid::new(nx, ny, domain)
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, domain: Rect) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 elements per axis, got {nx}x{ny}")));
        }
        if !(domain.width() > 0.0 && domain.height() > 0.0) {
            return Err(Error::invalid("grid domain must have positive extent"));
        }
        Ok(Self { nx, ny, domain })
    }

    /// Like [`StructuredGrid::new`] but allows a single element per axis, as
    /// needed for one coarse block or a corner neighborhood.
    pub(crate) fn patch(nx: usize, ny: usize, domain: Rect) -> Self {
        assert!(nx >= 1 && ny >= 1);
        Self { nx, ny, domain }
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, Rect::UNIT)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn domain(&self) -> Rect {
        self.domain
    }
    pub fn hx(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.domain.height() / self.ny as f64
    }
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }
    pub fn n_interior_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    #[inline]
    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }
    pub fn node_coords(&self, n: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(n);
        [
            self.domain.x0 + i as f64 * self.hx(),
            self.domain.y0 + j as f64 * self.hy(),
        ]
    }
    #[inline]
    pub fn element(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }
    #[inline]
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = self.element_ij(e);
        let n0 = self.node(i, j);
        let up = self.nx + 1;
        [n0, n0 + 1, n0 + 1 + up, n0 + up]
    }
    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        let (i, j) = self.element_ij(e);
        [
            self.domain.x0 + i as f64 * self.hx(),
            self.domain.y0 + j as f64 * self.hy(),
        ]
    }
    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let o = self.element_origin(e);
        [o[0] + 0.5 * self.hx(), o[1] + 0.5 * self.hy()]
    }
    pub fn is_boundary_node(&self, n: usize) -> bool {
        let (i, j) = self.node_ij(n);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }
    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.n_nodes()).map(|n| self.is_boundary_node(n)).collect()
    }
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| !self.is_boundary_node(n)).collect()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|n| {
                let [x, y] = self.node_coords(n);
                f(x, y)
            })
            .collect()
    }

    /// The sub-grid covering `w`, with its own local numbering.
    pub fn subgrid(&self, w: ElementWindow) -> StructuredGrid {
        assert!(w.i0 + w.nx <= self.nx && w.j0 + w.ny <= self.ny, "window outside grid");
        let (hx, hy) = (self.hx(), self.hy());
        let x0 = self.domain.x0 + w.i0 as f64 * hx;
        let y0 = self.domain.y0 + w.j0 as f64 * hy;
        StructuredGrid::patch(
            w.nx,
            w.ny,
            Rect {
                x0,
                y0,
                x1: x0 + w.nx as f64 * hx,
                y1: y0 + w.ny as f64 * hy,
            },
        )
    }

    /// Global node ids of the window's nodes in the window's row-major order.
    pub fn window_nodes(&self, w: ElementWindow) -> Vec<usize> {
        let mut out = Vec::with_capacity((w.nx + 1) * (w.ny + 1));
        for j in w.j0..=w.j0 + w.ny {
            for i in w.i0..=w.i0 + w.nx {
                out.push(self.node(i, j));
            }
        }
        out
    }

    /// Global element ids of the window's elements in its row-major order.
    pub fn window_elements(&self, w: ElementWindow) -> Vec<usize> {
        let mut out = Vec::with_capacity(w.nx * w.ny);
        for j in w.j0..w.j0 + w.ny {
            for i in w.i0..w.i0 + w.nx {
                out.push(self.element(i, j));
            }
        }
        out
    }
}

/// Local node indices on the perimeter of an `nx × ny` element block,
/// counterclockwise starting at the lower-left corner.
pub fn perimeter_ccw(nx: usize, ny: usize) -> Vec<usize> {
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut out = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        out.push(node(i, 0));
    }
    for j in 0..ny {
        out.push(node(nx, j));
    }
    for i in (1..=nx).rev() {
        out.push(node(i, ny));
    }
    for j in (1..=ny).rev() {
        out.push(node(0, j));
    }
    out
}

/// A fine grid together with a coarse grid it refines.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseGrid {
    pub fine: StructuredGrid,
    pub coarse: StructuredGrid,
    /// Fine elements per coarse element along x and y.
    pub rx: usize,
    pub ry: usize,
}

pub fn build_coarse_grid(fine: &StructuredGrid, nc: usize) -> Result<CoarseGrid> {
    CoarseGrid::new(fine, nc, nc)
}

impl CoarseGrid {
    pub fn new(fine: &StructuredGrid, ncx: usize, ncy: usize) -> Result<Self> {
        if ncx == 0 || ncy == 0 || fine.nx % ncx != 0 || fine.ny % ncy != 0 {
            return Err(Error::invalid(format!(
                "fine grid {}x{} is not divisible into {ncx}x{ncy} coarse elements",
                fine.nx, fine.ny
            )));
        }
        let coarse = StructuredGrid::new(ncx, ncy, fine.domain)?;
        Ok(Self {
            fine: fine.clone(),
            coarse,
            rx: fine.nx / ncx,
            ry: fine.ny / ncy,
        })
    }

    pub fn coarse_of_fine_element(&self, e: usize) -> usize {
        let (i, j) = self.fine.element_ij(e);
        self.coarse.element(i / self.rx, j / self.ry)
    }

    pub fn fine_window_of(&self, ce: usize) -> ElementWindow {
        let (i, j) = self.coarse.element_ij(ce);
        ElementWindow {
            i0: i * self.rx,
            j0: j * self.ry,
            nx: self.rx,
            ny: self.ry,
        }
    }

    pub fn fine_elements_of(&self, ce: usize) -> Vec<usize> {
        self.fine.window_elements(self.fine_window_of(ce))
    }

    pub fn fine_node_of_coarse_node(&self, cn: usize) -> usize {
        let (i, j) = self.coarse.node_ij(cn);
        self.fine.node(i * self.rx, j * self.ry)
    }

    /// Coarse nodes in the domain interior, in increasing index order.
    pub fn interior_coarse_nodes(&self) -> Vec<usize> {
        self.coarse.interior_nodes()
    }

    pub fn neighborhood(&self, j: usize) -> Result<CoarseNeighborhood> {
        coarse_neighborhood(self, j)
    }
}

/// The union `ω_j` of coarse elements sharing coarse node `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseNeighborhood {
    pub center: usize,
    /// Member coarse elements in increasing index order.
    pub elements: Vec<usize>,
    /// Fine-element window covering the neighborhood.
    pub window: ElementWindow,
    /// Global fine node ids, row-major within the window.
    pub fine_nodes: Vec<usize>,
    /// Global fine node ids on `∂ω_j`, counterclockwise from the lower-left corner.
    pub boundary: Vec<usize>,
    /// Positions of `boundary` entries within `fine_nodes`.
    pub boundary_local: Vec<usize>,
}

impl CoarseNeighborhood {
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }
}

pub fn coarse_neighborhood(cg: &CoarseGrid, j: usize) -> Result<CoarseNeighborhood> {
    let c = &cg.coarse;
    if j >= c.n_nodes() {
        return Err(Error::invalid(format!("coarse node {j} out of range (0..{})", c.n_nodes())));
    }
    let (ci, cj) = c.node_ij(j);
    let i_lo = ci.saturating_sub(1);
    let i_hi = (ci + 1).min(c.nx);
    let j_lo = cj.saturating_sub(1);
    let j_hi = (cj + 1).min(c.ny);
    let mut elements = Vec::new();
    for ej in j_lo..j_hi {
        for ei in i_lo..i_hi {
            elements.push(c.element(ei, ej));
        }
    }
    let window = ElementWindow {
        i0: i_lo * cg.rx,
        j0: j_lo * cg.ry,
        nx: (i_hi - i_lo) * cg.rx,
        ny: (j_hi - j_lo) * cg.ry,
    };
    let fine_nodes = cg.fine.window_nodes(window);
    let boundary_local = perimeter_ccw(window.nx, window.ny);
    let boundary = boundary_local.iter().map(|&k| fine_nodes[k]).collect();
    Ok(CoarseNeighborhood {
        center: j,
        elements,
        window,
        fine_nodes,
        boundary,
        boundary_local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_counts() {
        let g = build_fine_grid(2, 2, Rect::UNIT).unwrap();
        assert_eq!((g.n_nodes(), g.n_elements(), g.interior_nodes().len()), (9, 4, 1));
        let g = build_fine_grid(3, 2, Rect::UNIT).unwrap();
        assert!((g.hx() - 1.0 / 3.0).abs() < 1e-15 && (g.hy() - 0.5).abs() < 1e-15);
        assert!(build_fine_grid(0, 4, Rect::UNIT).is_err());
        assert!(build_fine_grid(1, 4, Rect::UNIT).is_err());
    }

    #[test]
    fn test_problem_grid_interior_dofs() {
        let g = build_fine_grid(128, 128, Rect::UNIT).unwrap();
        assert_eq!(g.interior_nodes().len(), 16129);
        assert_eq!(2 * g.n_interior_nodes(), 32258);
    }

    #[test]
    fn coarse_grid_divisibility() {
        let f = StructuredGrid::unit_square(128).unwrap();
        let cg = build_coarse_grid(&f, 16).unwrap();
        assert!((cg.coarse.hx() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(cg.interior_coarse_nodes().len(), 225);
        let f4 = StructuredGrid::unit_square(4).unwrap();
        let cg4 = build_coarse_grid(&f4, 2).unwrap();
        assert_eq!(cg4.fine_elements_of(0).len(), 4);
        let f6 = StructuredGrid::unit_square(6).unwrap();
        assert!(build_coarse_grid(&f6, 4).is_err());
    }

    #[test]
    fn refinement_is_a_partition() {
        let f = StructuredGrid::new(12, 8, Rect::UNIT).unwrap();
        let cg = CoarseGrid::new(&f, 3, 2).unwrap();
        let mut seen = vec![0; f.n_elements()];
        for ce in 0..cg.coarse.n_elements() {
            for e in cg.fine_elements_of(ce) {
                seen[e] += 1;
                assert_eq!(cg.coarse_of_fine_element(e), ce);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn neighborhoods() {
        let f = StructuredGrid::unit_square(128).unwrap();
        let cg = build_coarse_grid(&f, 16).unwrap();
        let j = cg.coarse.node(5, 7);
        let nb = cg.neighborhood(j).unwrap();
        assert_eq!(nb.elements.len(), 4);
        assert_eq!((nb.window.nx, nb.window.ny), (16, 16));
        assert_eq!(nb.n_boundary(), 64);
        let corner = cg.neighborhood(0).unwrap();
        assert_eq!(corner.elements.len(), 1);
        let edge = cg.neighborhood(cg.coarse.node(3, 0)).unwrap();
        assert_eq!(edge.elements.len(), 2);
        for &ce in &nb.elements {
            let corners = cg.coarse.element_nodes(ce);
            assert!(corners.contains(&j));
        }
        assert!(cg.neighborhood(cg.coarse.n_nodes()).is_err());
    }

    #[test]
    fn perimeter_order_is_counterclockwise() {
        assert_eq!(perimeter_ccw(2, 1), vec![0, 1, 2, 5, 4, 3]);
    }
}
