//! Small dense generalized symmetric eigenproblems `A v = λ S v`.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`, S-normalized.
    pub vectors: Mat<f64>,
}

fn symmetrize(m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// The `m` smallest eigenpairs of the symmetric pencil `(A, S)` with `S`
/// positive definite. Eigenvectors are S-orthonormal and signed so that their
/// largest-magnitude entry is positive.
pub fn generalized_eigs(a: &Mat<f64>, s: &Mat<f64>, m: usize) -> Result<Eigenpairs> {
    let n = a.nrows();
    if a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::invalid("eigenproblem matrices must be square and equally sized"));
    }
    if m > n {
        return Err(Error::invalid(format!("requested {m} eigenpairs of a {n}-dimensional pencil")));
    }
    if a.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).any(|v| !v.is_finite()) {
        return Err(Error::DecompositionFailure("non-finite entries in A".into()));
    }
    let s = symmetrize(s);
    let llt = s
        .llt(Side::Lower)
        .map_err(|e| Error::DecompositionFailure(format!("S is not positive definite: {e:?}")))?;
    let l = llt.L().to_owned();
    // C = L⁻¹ A L⁻ᵀ
    let mut w = symmetrize(a);
    solve_lower_triangular_in_place(l.as_ref(), w.as_mut(), Par::Seq);
    let mut c = w.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), Par::Seq);
    let c = symmetrize(&c);
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::DecompositionFailure(format!("symmetric eigensolver: {e:?}")))?;
    let lam = evd.S().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lam[i].total_cmp(&lam[j]));
    let order = &order[..m];
    let u = evd.U();
    let mut v = Mat::from_fn(n, m, |i, k| u[(i, order[k])]);
    solve_upper_triangular_in_place(l.transpose(), v.as_mut(), Par::Seq);
    for k in 0..m {
        let mut best = 0.0f64;
        for i in 0..n {
            if v[(i, k)].abs() > best.abs() {
                best = v[(i, k)];
            }
        }
        if best < 0.0 {
            for i in 0..n {
                v[(i, k)] = -v[(i, k)];
            }
        }
    }
    Ok(Eigenpairs {
        values: order.iter().map(|&i| lam[i]).collect(),
        vectors: v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_with_equal_matrices_has_unit_spectrum() {
        let s = Mat::from_fn(4, 4, |i, j| if i == j { 3.0 } else { 0.5 });
        let e = generalized_eigs(&s, &s, 4).unwrap();
        for v in e.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_case() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 3.0 - i as f64 } else { 0.0 });
        let s = Mat::<f64>::identity(3, 3);
        let e = generalized_eigs(&a, &s, 2).unwrap();
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
        assert!(e.vectors[(2, 0)] > 0.0);
    }

    #[test]
    fn indefinite_s_rejected() {
        let a = Mat::<f64>::identity(2, 2);
        let s = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(generalized_eigs(&a, &s, 1), Err(Error::DecompositionFailure(_))));
    }
}
