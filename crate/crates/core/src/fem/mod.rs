//! Q1 finite elements on structured grids: quadrature, coefficient fields,
//! assembly, sparse direct solves and dense generalized eigensolves.

pub mod assemble;
pub mod eigen;
pub mod field;
pub mod quadrature;
pub mod solve;
pub mod sparse;

pub use assemble::{assemble_convection, assemble_coupling, assemble_mass, assemble_stiffness, Assembler};
pub use eigen::{generalized_eigs, Eigenpairs};
pub use field::{Field, VectorField};
pub use quadrature::QuadratureRule;
pub use solve::{solve_sparse, SparseLu};
pub use sparse::CsrMatrix;

use crate::error::Result;

/// Solves `A u = 0` at unmasked rows with `u = g` on masked rows, by lifting
/// and row/column elimination. Several data vectors share one factorization.
pub fn solve_dirichlet(a: &CsrMatrix, mask: &[bool], data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut ad = a.clone();
    ad.apply_dirichlet(mask);
    let mut lu = SparseLu::new();
    lu.factor(&ad)?;
    data.iter()
        .map(|g| {
            let ag = a.matvec(g);
            let rhs: Vec<f64> = (0..g.len()).map(|k| if mask[k] { g[k] } else { -ag[k] }).collect();
            lu.solve(&rhs)
        })
        .collect()
}
