//! Direct sparse solves through faer, with a cached symbolic factorization
//! for repeated solves on a fixed sparsity pattern.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Relative residual target of every direct solve.
pub const SOLVE_RTOL: f64 = 1e-10;
/// Normwise backward error accepted when the relative residual target lies
/// below what double precision can represent for the system at hand.
pub const BACKWARD_TOL: f64 = 64.0 * f64::EPSILON;
const MAX_REFINEMENT: usize = 4;

/// Sparse LU that keeps the symbolic analysis while the pattern is unchanged.
#[derive(Default)]
pub struct SparseLu {
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    symbolic: Option<SymbolicLu<usize>>,
    numeric: Option<Lu<usize, f64>>,
    matrix: Option<CsrMatrix>,
    inf_norm: f64,
}

impl SparseLu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, a: &CsrMatrix) -> Result<()> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid("LU of a non-square matrix"));
        }
        if a.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("matrix has non-finite entries".into()));
        }
        let (cp, ri, v) = a.to_csc_parts();
        let n = a.nrows();
        let reuse = matches!(&self.pattern, Some((p, r)) if *p == cp && *r == ri);
        if !reuse {
            let sym = SymbolicSparseColMatRef::new_checked(n, n, &cp, None, &ri);
            let s = SymbolicLu::try_new(sym)
                .map_err(|e| Error::SolverFailure(format!("symbolic LU: {e:?}")))?;
            self.symbolic = Some(s);
            self.pattern = Some((cp, ri));
        }
        let (cp, ri) = self.pattern.as_ref().unwrap();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, cp, None, ri);
        let mat = SparseColMatRef::new(sym, &v);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone().unwrap(), mat)
            .map_err(|e| Error::SolverFailure(format!("numeric LU: {e:?}")))?;
        self.numeric = Some(lu);
        self.inf_norm = (0..n)
            .map(|r| a.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        self.matrix = Some(a.clone());
        Ok(())
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let lu = self.numeric.as_ref().expect("factor before solve");
        let mut b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        lu.solve_in_place(b.as_mut());
        (0..rhs.len()).map(|i| b[(i, 0)]).collect()
    }

    /// Solves with the last factored matrix, refining until the relative
    /// residual meets [`SOLVE_RTOL`] or the normwise backward error
    /// `‖r‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞)` meets [`BACKWARD_TOL`].
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let a = self.matrix.as_ref().expect("factor before solve");
        if rhs.len() != a.nrows() {
            return Err(Error::invalid("right-hand side length mismatch"));
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let anorm = self.inf_norm;
        let binf = inf_norm(rhs);
        let mut x = self.raw_solve(rhs);
        for _ in 0..=MAX_REFINEMENT {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SolverFailure("singular matrix: non-finite solution".into()));
            }
            let ax = a.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
            let backward = inf_norm(&r) / (anorm * inf_norm(&x) + binf);
            if norm2(&r) <= SOLVE_RTOL * bnorm || backward <= BACKWARD_TOL {
                return Ok(x);
            }
            let dx = self.raw_solve(&r);
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
        }
        let ax = a.matvec(&x);
        let res = rhs.iter().zip(&ax).map(|(b, y)| (b - y).powi(2)).sum::<f64>().sqrt();
        Err(Error::SolverFailure(format!(
            "relative residual {:.3e} above {SOLVE_RTOL:e}",
            res / bnorm
        )))
    }
}

/// One-shot direct solve of `A x = rhs`.
pub fn solve_sparse(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut lu = SparseLu::new();
    lu.factor(a)?;
    lu.solve(rhs)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
