//! Q1 assembly on structured grids. All matrices produced by one
//! [`Assembler`] share the 9-point nodal sparsity pattern, explicit zeros
//! included, so factorizations can reuse their symbolic analysis.

use super::field::{Field, VectorField};
use super::quadrature::{q1_gradients, q1_values, QuadratureRule};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::mesh::StructuredGrid;

pub struct Assembler {
    grid: StructuredGrid,
    rule: QuadratureRule,
    pattern: CsrMatrix,
    slots: Vec<[usize; 16]>,
    /// Shape values at each quadrature point.
    phi: Vec<[f64; 4]>,
    /// Physical gradients at each quadrature point.
    dphi: Vec<[[f64; 2]; 4]>,
    /// Quadrature weight times the element Jacobian.
    wdet: Vec<f64>,
}

impl Assembler {
    pub fn new(grid: &StructuredGrid) -> Self {
        Self::with_rule(grid, QuadratureRule::default())
    }

    pub fn with_rule(grid: &StructuredGrid, rule: QuadratureRule) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut row_ptr = Vec::with_capacity(grid.n_nodes() + 1);
        let mut col_idx = Vec::with_capacity(9 * grid.n_nodes());
        row_ptr.push(0);
        for j in 0..=ny {
            for i in 0..=nx {
                for jj in j.saturating_sub(1)..=(j + 1).min(ny) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(nx) {
                        col_idx.push(grid.node(ii, jj));
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        let pattern = CsrMatrix::from_raw(grid.n_nodes(), grid.n_nodes(), row_ptr, col_idx, vec![0.0; nnz])
            .expect("structured pattern is valid");
        let slots = (0..grid.n_elements())
            .map(|e| {
                let nodes = grid.element_nodes(e);
                let mut s = [0usize; 16];
                for a in 0..4 {
                    for b in 0..4 {
                        s[4 * a + b] = pattern.find(nodes[a], nodes[b]).expect("pattern covers element");
                    }
                }
                s
            })
            .collect();
        let (hx, hy) = (grid.hx(), grid.hy());
        let phi = rule.points.iter().map(|p| q1_values(p[0], p[1])).collect();
        let dphi = rule
            .points
            .iter()
            .map(|p| {
                let g = q1_gradients(p[0], p[1]);
                g.map(|v| [v[0] / hx, v[1] / hy])
            })
            .collect();
        let wdet = rule.weights.iter().map(|w| w * hx * hy).collect();
        Self {
            grid: grid.clone(),
            rule,
            pattern,
            slots,
            phi,
            dphi,
            wdet,
        }
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// A zero matrix with the shared pattern.
    pub fn zero_matrix(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    fn assemble(&self, mut local: impl FnMut(usize, &mut [f64; 16]) -> Result<()>) -> Result<CsrMatrix> {
        let mut m = self.pattern.clone();
        let vals = m.values_mut();
        let mut loc = [0.0; 16];
        for (e, slots) in self.slots.iter().enumerate() {
            loc.fill(0.0);
            local(e, &mut loc)?;
            for k in 0..16 {
                vals[slots[k]] += loc[k];
            }
        }
        Ok(m)
    }

    /// `∫ k ∇u·∇v`.
    pub fn stiffness(&self, k: &Field) -> Result<CsrMatrix> {
        k.check(&self.grid)?;
        self.assemble(|e, loc| {
            let nodes = self.grid.element_nodes(e);
            for q in 0..self.phi.len() {
                let kv = k.at(e, &nodes, &self.phi[q]);
                if !(kv > 0.0 && kv.is_finite()) {
                    return Err(Error::invalid(format!("conductivity {kv} not positive in element {e}")));
                }
                let w = kv * self.wdet[q];
                let g = &self.dphi[q];
                for a in 0..4 {
                    for b in 0..4 {
                        loc[4 * a + b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
            Ok(())
        })
    }

    /// `∫ w u v`.
    pub fn mass(&self, w: &Field) -> Result<CsrMatrix> {
        w.check(&self.grid)?;
        self.mass_with(|e, nodes, phi| w.at(e, nodes, phi))
    }

    /// Weighted mass matrix with the weight supplied per quadrature point as
    /// `weight(element, corner nodes, shape values)`.
    pub fn mass_with(&self, weight: impl Fn(usize, &[usize; 4], &[f64; 4]) -> f64) -> Result<CsrMatrix> {
        self.mass_with_index(|e, q| weight(e, &self.grid.element_nodes(e), &self.phi[q]))
    }

    /// Weighted mass matrix with the weight given by element and quadrature
    /// point index.
    pub fn mass_with_index(&self, weight: impl Fn(usize, usize) -> f64) -> Result<CsrMatrix> {
        self.assemble(|e, loc| {
            for q in 0..self.phi.len() {
                let wv = weight(e, q);
                if !(wv >= 0.0 && wv.is_finite()) {
                    return Err(Error::invalid(format!("mass weight {wv} negative in element {e}")));
                }
                let w = wv * self.wdet[q];
                let p = &self.phi[q];
                for a in 0..4 {
                    for b in 0..4 {
                        loc[4 * a + b] += w * p[a] * p[b];
                    }
                }
            }
            Ok(())
        })
    }

    /// `∫ (b·∇u) v`; row index is the test function.
    pub fn convection(&self, b: &VectorField) -> Result<CsrMatrix> {
        b[0].check(&self.grid)?;
        b[1].check(&self.grid)?;
        if b[0].is_identically_zero() && b[1].is_identically_zero() {
            return Ok(self.zero_matrix());
        }
        self.assemble(|e, loc| {
            let nodes = self.grid.element_nodes(e);
            for q in 0..self.phi.len() {
                let (bx, by) = (b[0].at(e, &nodes, &self.phi[q]), b[1].at(e, &nodes, &self.phi[q]));
                if !(bx.is_finite() && by.is_finite()) {
                    return Err(Error::invalid(format!("non-finite convection field in element {e}")));
                }
                let g = &self.dphi[q];
                let p = &self.phi[q];
                let w = self.wdet[q];
                for a in 0..4 {
                    for c in 0..4 {
                        loc[4 * a + c] += w * p[a] * (bx * g[c][0] + by * g[c][1]);
                    }
                }
            }
            Ok(())
        })
    }

    /// Load vector `∫ f v`.
    pub fn load(&self, f: &Field) -> Result<Vec<f64>> {
        f.check(&self.grid)?;
        let mut out = vec![0.0; self.grid.n_nodes()];
        for e in 0..self.grid.n_elements() {
            let nodes = self.grid.element_nodes(e);
            for q in 0..self.phi.len() {
                let fv = f.at(e, &nodes, &self.phi[q]) * self.wdet[q];
                for a in 0..4 {
                    out[nodes[a]] += fv * self.phi[q][a];
                }
            }
        }
        Ok(out)
    }

    /// Shape values at quadrature point `q`.
    pub fn phi(&self, q: usize) -> &[f64; 4] {
        &self.phi[q]
    }

    /// Physical shape gradients at quadrature point `q`.
    pub fn dphi(&self, q: usize) -> &[[f64; 2]; 4] {
        &self.dphi[q]
    }

    /// Quadrature weight times Jacobian at point `q`.
    pub fn wdet(&self, q: usize) -> f64 {
        self.wdet[q]
    }

    pub fn n_qp(&self) -> usize {
        self.phi.len()
    }

    /// Gradient of the nodal field `u` at quadrature point `q` of element `e`.
    pub fn grad_at(&self, u: &[f64], e: usize, q: usize) -> [f64; 2] {
        let nodes = self.grid.element_nodes(e);
        let g = &self.dphi[q];
        let mut out = [0.0; 2];
        for a in 0..4 {
            out[0] += u[nodes[a]] * g[a][0];
            out[1] += u[nodes[a]] * g[a][1];
        }
        out
    }

    /// Value of the nodal field `u` at quadrature point `q` of element `e`.
    pub fn value_at(&self, u: &[f64], e: usize, q: usize) -> f64 {
        let nodes = self.grid.element_nodes(e);
        (0..4).map(|a| u[nodes[a]] * self.phi[q][a]).sum()
    }
}

pub fn assemble_stiffness(grid: &StructuredGrid, k: &Field) -> Result<CsrMatrix> {
    Assembler::new(grid).stiffness(k)
}

pub fn assemble_mass(grid: &StructuredGrid, w: &Field) -> Result<CsrMatrix> {
    Assembler::new(grid).mass(w)
}

pub fn assemble_convection(grid: &StructuredGrid, b: &VectorField) -> Result<CsrMatrix> {
    Assembler::new(grid).convection(b)
}

/// Blocks of the exchange form `(c (p_i − p_j), φ)`: the self block acting on
/// `p_i` and the cross block acting on `p_j`.
pub fn assemble_coupling(grid: &StructuredGrid, c: &Field) -> Result<(CsrMatrix, CsrMatrix)> {
    let m = Assembler::new(grid).mass(c)?;
    let mut cross = m.clone();
    cross.scale(-1.0);
    Ok((m, cross))
}
