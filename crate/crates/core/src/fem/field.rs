use crate::error::{Error, Result};
use crate::mesh::{ElementWindow, StructuredGrid};

/// A scalar coefficient on a structured grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Constant(f64),
    /// One value per element, used as-is at every quadrature point.
    Element(Vec<f64>),
    /// One value per node, interpolated bilinearly.
    Nodal(Vec<f64>),
    /// Elementwise factor times an interpolated nodal factor, e.g. `a(x) g(p)`.
    ElementNodal { element: Vec<f64>, nodal: Vec<f64> },
}

/// A vector coefficient, one scalar field per axis.
pub type VectorField = [Field; 2];

impl Field {
    pub fn zero() -> Self {
        Field::Constant(0.0)
    }

    pub fn check(&self, grid: &StructuredGrid) -> Result<()> {
        let (ne, nn) = (grid.n_elements(), grid.n_nodes());
        let ok = match self {
            Field::Constant(_) => true,
            Field::Element(v) => v.len() == ne,
            Field::Nodal(v) => v.len() == nn,
            Field::ElementNodal { element, nodal } => element.len() == ne && nodal.len() == nn,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("field length does not match the grid"))
        }
    }

    /// Value at a point of element `e` with corner nodes `nodes` and shape
    /// function values `shape` there.
    #[inline]
    pub fn at(&self, e: usize, nodes: &[usize; 4], shape: &[f64; 4]) -> f64 {
        match self {
            Field::Constant(c) => *c,
            Field::Element(v) => v[e],
            Field::Nodal(v) => interp(v, nodes, shape),
            Field::ElementNodal { element, nodal } => element[e] * interp(nodal, nodes, shape),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            Field::Constant(c) => *c == 0.0,
            Field::Element(v) | Field::Nodal(v) => v.iter().all(|x| *x == 0.0),
            Field::ElementNodal { element, nodal } => {
                element.iter().all(|x| *x == 0.0) || nodal.iter().all(|x| *x == 0.0)
            }
        }
    }

    /// Lower and upper bounds of the field over the grid (exact for the
    /// piecewise-bilinear representation).
    pub fn bounds(&self) -> (f64, f64) {
        let mm = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
        };
        match self {
            Field::Constant(c) => (*c, *c),
            Field::Element(v) | Field::Nodal(v) => mm(v),
            Field::ElementNodal { element, nodal } => {
                let (a0, a1) = mm(element);
                let (g0, g1) = mm(nodal);
                let c = [a0 * g0, a0 * g1, a1 * g0, a1 * g1];
                (
                    c.iter().copied().fold(f64::INFINITY, f64::min),
                    c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let (a, b) = self.bounds();
        a.is_finite() && b.is_finite()
    }

    /// The same field on the sub-grid `grid.subgrid(w)`.
    pub fn restrict(&self, grid: &StructuredGrid, w: ElementWindow) -> Field {
        let pick_e = |v: &[f64]| grid.window_elements(w).into_iter().map(|e| v[e]).collect();
        let pick_n = |v: &[f64]| grid.window_nodes(w).into_iter().map(|n| v[n]).collect();
        match self {
            Field::Constant(c) => Field::Constant(*c),
            Field::Element(v) => Field::Element(pick_e(v)),
            Field::Nodal(v) => Field::Nodal(pick_n(v)),
            Field::ElementNodal { element, nodal } => Field::ElementNodal {
                element: pick_e(element),
                nodal: pick_n(nodal),
            },
        }
    }

    /// Value at each element center.
    pub fn element_means(&self, grid: &StructuredGrid) -> Vec<f64> {
        let s = [0.25; 4];
        (0..grid.n_elements())
            .map(|e| self.at(e, &grid.element_nodes(e), &s))
            .collect()
    }
}

#[inline]
fn interp(v: &[f64], nodes: &[usize; 4], shape: &[f64; 4]) -> f64 {
    v[nodes[0]] * shape[0] + v[nodes[1]] * shape[1] + v[nodes[2]] * shape[2] + v[nodes[3]] * shape[3]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_matches_global_values() {
        let g = StructuredGrid::unit_square(4).unwrap();
        let nodal: Vec<f64> = (0..g.n_nodes()).map(|n| n as f64).collect();
        let elem: Vec<f64> = (0..g.n_elements()).map(|e| 10.0 + e as f64).collect();
        let f = Field::ElementNodal {
            element: elem,
            nodal,
        };
        let w = ElementWindow {
            i0: 1,
            j0: 2,
            nx: 2,
            ny: 2,
        };
        let sub = g.subgrid(w);
        let r = f.restrict(&g, w);
        r.check(&sub).unwrap();
        let s = [0.1, 0.2, 0.3, 0.4];
        let ge = g.element(2, 3);
        let le = sub.element(1, 1);
        assert_eq!(f.at(ge, &g.element_nodes(ge), &s), r.at(le, &sub.element_nodes(le), &s));
    }
}
