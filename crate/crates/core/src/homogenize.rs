//! Periodic unit-cell problems on `Y = [0,1]²`, effective tensors and the
//! integral coefficients of the homogenized dual-continuum system.
//!
//! Cell functions live in the quotient space of periodic functions modulo
//! constants; discretely we identify opposite edges, pin one node during
//! the solve and shift to zero mean afterwards.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::quadrature::{q1_gradients, q1_values};
use crate::fem::{CsrMatrix, QuadratureRule, SparseLu};
use crate::model::CellModel;

/// `2^m × 2^m` periodic Q1 mesh of the unit cell.
#[derive(Clone, Debug)]
pub struct UnitCellMesh {
    level: u32,
    n: usize,
    rule: QuadratureRule,
}

impl PartialEq for UnitCellMesh {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level
    }
}

/// Per-quadrature-point data of a reference element: values and gradients of
/// the four shape functions.
type ShapeTable = Vec<([f64; 4], [[f64; 2]; 4])>;

impl UnitCellMesh {
    pub fn new(level: u32) -> Result<Self> {
        if !(1..=12).contains(&level) {
            return Err(Error::invalid(format!("cell mesh level {level} outside 1..=12")));
        }
        Ok(Self {
            level,
            n: 1 << level,
            rule: QuadratureRule::gauss(3),
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Unknowns after periodic identification.
    pub fn n_dofs(&self) -> usize {
        self.n * self.n
    }

    /// Periodic node index; indices wrap.
    pub fn node(&self, i: usize, j: usize) -> usize {
        (i % self.n) + self.n * (j % self.n)
    }

    pub fn node_coords(&self, k: usize) -> [f64; 2] {
        [(k % self.n) as f64 * self.h(), (k / self.n) as f64 * self.h()]
    }

    /// Element `e = i + n j`, nodes counterclockwise from the lower left.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.n, e / self.n);
        [
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        ]
    }

    fn shapes(&self) -> ShapeTable {
        self.rule
            .points
            .iter()
            .map(|&[x, y]| (q1_values(x, y), q1_gradients(x, y)))
            .collect()
    }

    /// Calls `f(e, nodes, y, weight, phi, grad_phi)` at every quadrature
    /// point; gradients are physical.
    fn for_each_qp(&self, mut f: impl FnMut(usize, &[usize; 4], [f64; 2], f64, &[f64; 4], &[[f64; 2]; 4])) {
        let h = self.h();
        let shapes = self.shapes();
        for e in 0..self.n * self.n {
            let nodes = self.element_nodes(e);
            let (i, j) = ((e % self.n) as f64, (e / self.n) as f64);
            for (q, &[xi, eta]) in self.rule.points.iter().enumerate() {
                let (phi, dref) = &shapes[q];
                let mut g = [[0.0; 2]; 4];
                for a in 0..4 {
                    g[a] = [dref[a][0] / h, dref[a][1] / h];
                }
                let y = [(i + xi) * h, (j + eta) * h];
                f(e, &nodes, y, self.rule.weights[q] * h * h, phi, &g);
            }
        }
    }

    /// `∫_Y k ∇u·∇v`; errors on nonpositive or non-finite `k`.
    pub fn stiffness(&self, k: impl Fn([f64; 2]) -> f64) -> Result<CsrMatrix> {
        let mut trip = Vec::with_capacity(16 * self.n_dofs());
        let mut bad = None;
        self.for_each_qp(|_, nodes, y, w, _, g| {
            let kv = k(y);
            if !(kv > 0.0 && kv.is_finite()) {
                bad = Some((y, kv));
            }
            for a in 0..4 {
                for b in 0..4 {
                    trip.push((nodes[a], nodes[b], w * kv * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
                }
            }
        });
        if let Some((y, kv)) = bad {
            return Err(Error::invalid(format!("cell conductivity {kv} at y = {y:?}")));
        }
        CsrMatrix::from_triplets(self.n_dofs(), self.n_dofs(), &trip)
    }

    /// `∫_Y f φ_a` for every node.
    pub fn load(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        self.for_each_qp(|_, nodes, y, w, phi, _| {
            let fv = f(y);
            for a in 0..4 {
                out[nodes[a]] += w * fv * phi[a];
            }
        });
        out
    }

    /// `−∫_Y k e^dir·∇φ_a`, the right side of the cell problem for `N^dir`.
    pub fn flux_load(&self, k: impl Fn([f64; 2]) -> f64, dir: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        self.for_each_qp(|_, nodes, y, w, _, g| {
            let kv = k(y);
            for a in 0..4 {
                out[nodes[a]] -= w * kv * g[a][dir];
            }
        });
        out
    }

    /// `∫_Y f(y, u(y), ∇u(y))` for a nodal field `u` by quadrature.
    pub fn integrate_field(&self, u: &[f64], f: impl Fn([f64; 2], f64, [f64; 2]) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each_qp(|_, nodes, y, w, phi, g| {
            let mut v = 0.0;
            let mut gr = [0.0; 2];
            for a in 0..4 {
                let ua = u[nodes[a]];
                v += ua * phi[a];
                gr[0] += ua * g[a][0];
                gr[1] += ua * g[a][1];
            }
            s += w * f(y, v, gr);
        });
        s
    }

    /// `∫_Y f` by the mesh quadrature.
    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each_qp(|_, _, y, w, _, _| s += w * f(y));
        s
    }

    /// Cell average of a nodal field (exact for the Q1 interpolant on a
    /// periodic mesh).
    pub fn mean(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() / u.len() as f64
    }

    /// `‖∇u‖_{L²(Y)}`.
    pub fn gradient_norm(&self, u: &[f64]) -> f64 {
        self.integrate_field(u, |_, _, g| g[0] * g[0] + g[1] * g[1]).sqrt()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.n_dofs()).map(|k| f(self.node_coords(k))).collect()
    }

    /// Exact bilinear prolongation from the mesh one level coarser.
    pub fn prolongation_from_coarser(&self) -> Result<CsrMatrix> {
        if self.level < 2 {
            return Err(Error::invalid("no coarser periodic mesh below level 1"));
        }
        let nc = self.n / 2;
        let coarse = |i: usize, j: usize| (i % nc) + nc * (j % nc);
        let mut trip = Vec::with_capacity(4 * self.n_dofs());
        for j in 0..self.n {
            for i in 0..self.n {
                let row = self.node(i, j);
                let (ci, cj) = (i / 2, j / 2);
                let wx: &[(usize, f64)] = if i % 2 == 0 { &[(0, 1.0)] } else { &[(0, 0.5), (1, 0.5)] };
                let wy: &[(usize, f64)] = if j % 2 == 0 { &[(0, 1.0)] } else { &[(0, 0.5), (1, 0.5)] };
                for &(dx, ax) in wx {
                    for &(dy, ay) in wy {
                        trip.push((row, coarse(ci + dx, cj + dy), ax * ay));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs(), nc * nc, &trip)
    }
}

/// Solves the singular periodic system `a u = rhs` (kernel = constants) for
/// the mean-zero solution with respect to the nodal `weights` (the cell
/// average of the represented function is `Σ weights·u`). The right side is
/// made compatible by removing its component along the constant vector.
pub fn solve_periodic(a: &CsrMatrix, rhs: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if rhs.len() != n || weights.len() != n {
        return Err(Error::invalid("periodic solve: size mismatch"));
    }
    // The constant function's coefficient vector `z` spans the kernel; the
    // compatible right side is orthogonal to it.
    let z = kernel_vector(a)?;
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let zr: f64 = z.iter().zip(rhs).map(|(a, b)| a * b).sum();
    let mut b: Vec<f64> = rhs.iter().zip(&z).map(|(r, zi)| r - zr / zz * zi).collect();
    let pin = (0..n).max_by(|&i, &j| z[i].abs().total_cmp(&z[j].abs())).unwrap_or(0);
    let mut mask = vec![false; n];
    mask[pin] = true;
    let mut ap = a.clone();
    ap.apply_dirichlet(&mask);
    b[pin] = 0.0;
    let mut lu = SparseLu::new();
    lu.factor(&ap)?;
    let mut u = lu.solve(&b)?;
    // Shift by a multiple of the kernel vector to reach zero mean.
    let wz: f64 = weights.iter().zip(&z).map(|(a, b)| a * b).sum();
    let wu: f64 = weights.iter().zip(&u).map(|(a, b)| a * b).sum();
    if wz == 0.0 {
        return Err(Error::invalid("mean weights are orthogonal to constants"));
    }
    let s = wu / wz;
    u.iter_mut().zip(&z).for_each(|(x, zi)| *x -= s * zi);
    Ok(u)
}

/// Kernel direction of a periodic stiffness operator: the all-ones vector if
/// it annihilates it, otherwise an error.
fn kernel_vector(a: &CsrMatrix) -> Result<Vec<f64>> {
    let ones = vec![1.0; a.ncols()];
    let r = a.matvec(&ones);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    if r.iter().any(|v| v.abs() > 1e-9 * scale) {
        return Err(Error::invalid("operator does not annihilate constants"));
    }
    Ok(ones)
}

/// Handling of transfer functions whose cell average is not zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMeanPolicy {
    /// Reject with the measured mean.
    #[default]
    Strict,
    /// Subtract the cell average before solving.
    Subtract,
}

/// Tolerance on `|∫_Y Q|` under [`QMeanPolicy::Strict`].
pub const Q_MEAN_TOL: f64 = 1e-12;

fn checked_k(mesh: &UnitCellMesh, k: &(impl Fn([f64; 2]) -> f64 + ?Sized)) -> Result<CsrMatrix> {
    mesh.stiffness(k)
}

/// `N^dir`: `∫ k ∇N·∇φ = −∫ k e^dir·∇φ` for all periodic `φ`, mean zero.
pub fn solve_cell_n(mesh: &UnitCellMesh, k: impl Fn([f64; 2]) -> f64, dir: usize) -> Result<Vec<f64>> {
    if dir > 1 {
        return Err(Error::invalid(format!("direction {dir} out of range")));
    }
    let a = checked_k(mesh, &k)?;
    let rhs = mesh.flux_load(&k, dir);
    solve_periodic(&a, &rhs, &vec![1.0 / mesh.n_dofs() as f64; mesh.n_dofs()])
}

/// `M`: `∫ k ∇M·∇ψ = ∫ Q ψ` for all periodic `ψ`, mean zero.
pub fn solve_cell_m(
    mesh: &UnitCellMesh,
    k: impl Fn([f64; 2]) -> f64,
    q: impl Fn([f64; 2]) -> f64,
    policy: QMeanPolicy,
) -> Result<Vec<f64>> {
    let qmean = mesh.integrate(&q);
    if qmean.abs() > Q_MEAN_TOL && policy == QMeanPolicy::Strict {
        return Err(Error::invalid(format!(
            "transfer function has cell mean {qmean:.3e}; it must vanish"
        )));
    }
    let a = checked_k(mesh, &k)?;
    let rhs = mesh.load(|y| q(y) - qmean);
    solve_periodic(&a, &rhs, &vec![1.0 / mesh.n_dofs() as f64; mesh.n_dofs()])
}

/// Symmetrized effective tensor with the measured asymmetry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveTensor {
    pub k: [[f64; 2]; 2],
    /// `|K₁₂ − K₂₁| / max|K_ij|` before symmetrization.
    pub asymmetry: f64,
}

impl EffectiveTensor {
    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.k;
        let m = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [m - r, m + r]
    }
}

/// `K*_ij = ∫_Y k (δ_ij + ∂N^j/∂y_i)`.
pub fn effective_tensor(mesh: &UnitCellMesh, k: impl Fn([f64; 2]) -> f64, n: [&[f64]; 2]) -> EffectiveTensor {
    let mut raw = [[0.0; 2]; 2];
    for (j, nj) in n.iter().enumerate() {
        for (i, row) in raw.iter_mut().enumerate() {
            row[j] = mesh.integrate_field(nj, |y, _, g| k(y) * (if i == j { 1.0 } else { 0.0 } + g[i]));
        }
    }
    let scale = raw.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    let asymmetry = if scale > 0.0 { (raw[0][1] - raw[1][0]).abs() / scale } else { 0.0 };
    let off = 0.5 * (raw[0][1] + raw[1][0]);
    EffectiveTensor {
        k: [[raw[0][0], off], [off, raw[1][1]]],
        asymmetry,
    }
}

/// The six cell solutions at one macro point `p = (p₁, p₂)`.
#[derive(Clone, Debug)]
pub struct CellSolutions {
    pub p: [f64; 2],
    /// `n[j][i] = N^i_j`: continuum `j`, direction `i`.
    pub n: [[Vec<f64>; 2]; 2],
    /// `m[j] = M_j`.
    pub m: [Vec<f64>; 2],
}

/// Solves all cell problems of `model` at the macro point `p`.
pub fn solve_cells(
    mesh: &UnitCellMesh,
    model: &dyn CellModel,
    p: [f64; 2],
    policy: QMeanPolicy,
) -> Result<CellSolutions> {
    let n = |j: usize, i: usize| solve_cell_n(mesh, |y| model.k(j, y, p[j]), i);
    let m = |j: usize| solve_cell_m(mesh, |y| model.k(j, y, p[j]), |y| model.q(j, y, p), policy);
    Ok(CellSolutions {
        p,
        n: [[n(0, 0)?, n(0, 1)?], [n(1, 0)?, n(1, 1)?]],
        m: [m(0)?, m(1)?],
    })
}

/// Every integral coefficient of the homogenized system at one macro point.
/// Indices are zero-based: continuum `j`, partner `m`, derivative variable
/// `r`, direction `i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectiveCoefficients {
    pub p: [f64; 2],
    pub k_star: [EffectiveTensor; 2],
    /// `d[j] = ∫ k_j ∇M_j`, inside `div[d_j (p_m − p_j)]`.
    pub d: [[f64; 2]; 2],
    /// `g[j][m][i] = (−1)^{j+m−1} ∫ Q_j N^i_m` (one-based sign), multiplying `∂p_m/∂x_i`.
    pub g: [[[f64; 2]; 2]; 2],
    /// `t[j] = −∫ Q_j (M₁ + M₂)`, multiplying `(p_m − p_j)`.
    pub t: [f64; 2],
    /// `e[j][r][i] = ∫ ∂Q_j/∂p_r N^i_r`.
    pub e: [[[f64; 2]; 2]; 2],
    /// `f[j][r] = ∫ ∂Q_j/∂p_r M_r`.
    pub f: [[f64; 2]; 2],
    /// Convection vectors of the reduced system: `b*_jm = −g_jm`.
    pub b_star: [[[f64; 2]; 2]; 2],
    /// Transfer coefficients of the reduced system: `c*_j = t_j`.
    pub c_star: [f64; 2],
}

/// Evaluates the homogenized coefficients from solved cell problems.
pub fn homogenized_coefficients(
    mesh: &UnitCellMesh,
    model: &dyn CellModel,
    sol: &CellSolutions,
) -> Result<EffectiveCoefficients> {
    let nd = mesh.n_dofs();
    let sizes_ok = sol.n.iter().flatten().chain(sol.m.iter()).all(|v| v.len() == nd);
    if !sizes_ok {
        return Err(Error::invalid("cell solutions do not belong to this cell mesh"));
    }
    let p = sol.p;
    let k_star = [0, 1].map(|j| effective_tensor(mesh, |y| model.k(j, y, p[j]), [&sol.n[j][0], &sol.n[j][1]]));
    let d = [0, 1].map(|j| [0, 1].map(|i| mesh.integrate_field(&sol.m[j], |y, _, g| model.k(j, y, p[j]) * g[i])));
    let g = [0, 1].map(|j| {
        [0, 1].map(|m| {
            let sign = if (j + m) % 2 == 0 { -1.0 } else { 1.0 };
            [0, 1].map(|i| sign * mesh.integrate_field(&sol.n[m][i], |y, v, _| model.q(j, y, p) * v))
        })
    });
    let msum: Vec<f64> = sol.m[0].iter().zip(&sol.m[1]).map(|(a, b)| a + b).collect();
    let t = [0, 1].map(|j| -mesh.integrate_field(&msum, |y, v, _| model.q(j, y, p) * v));
    let e = [0, 1].map(|j| {
        [0, 1].map(|r| [0, 1].map(|i| mesh.integrate_field(&sol.n[r][i], |y, v, _| model.dq_dp(j, r, y, p) * v)))
    });
    let f = [0, 1].map(|j| [0, 1].map(|r| mesh.integrate_field(&sol.m[r], |y, v, _| model.dq_dp(j, r, y, p) * v)));
    let b_star = g.map(|gj| gj.map(|gjm| gjm.map(|x| -x)));
    Ok(EffectiveCoefficients {
        p,
        k_star,
        d,
        g,
        t,
        e,
        f,
        b_star,
        c_star: t,
    })
}

/// Cell solves plus coefficient evaluation over many macro points, in
/// parallel.
pub fn effective_table(
    mesh: &UnitCellMesh,
    model: &dyn CellModel,
    points: &[[f64; 2]],
    policy: QMeanPolicy,
) -> Result<Vec<EffectiveCoefficients>> {
    points
        .par_iter()
        .map(|&p| {
            let sol = solve_cells(mesh, model, p, policy)?;
            homogenized_coefficients(mesh, model, &sol)
        })
        .collect()
}

/// Whitespace-separated table, one row per macro point, with a header line.
pub fn format_effective_table(rows: &[EffectiveCoefficients]) -> String {
    let mut s = String::from(
        "p1 p2 K1_11 K1_12 K1_22 K2_11 K2_12 K2_22 b11_x b11_y b12_x b12_y b21_x b21_y b22_x b22_y c1 c2\n",
    );
    for r in rows {
        let mut v = vec![r.p[0], r.p[1]];
        for k in &r.k_star {
            v.extend([k.k[0][0], k.k[0][1], k.k[1][1]]);
        }
        for bj in &r.b_star {
            for bjm in bj {
                v.extend(bjm);
            }
        }
        v.extend(r.c_star);
        let line: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SmoothCellModel;
    use std::f64::consts::{PI, TAU};

    fn laminate(y: [f64; 2]) -> f64 {
        if y[0] < 0.5 { 1.0 } else { 4.0 }
    }

    #[test]
    fn constant_k_gives_zero_corrector_and_scalar_tensor() {
        let mesh = UnitCellMesh::new(3).unwrap();
        let n1 = solve_cell_n(&mesh, |_| 3.0, 0).unwrap();
        assert!(n1.iter().all(|v| v.abs() < 1e-12));
        let t = effective_tensor(&mesh, |_| 3.0, [&n1, &n1]);
        assert!((t.k[0][0] - 3.0).abs() < 1e-12 && t.k[0][1].abs() < 1e-12);
    }

    #[test]
    fn laminate_corrector_matches_one_dimensional_solve() {
        // 1D periodic oracle: k (1 + N') = K* constant, so N' = K*/k − 1,
        // piecewise linear with slopes 0.6 and −0.6.
        let mesh = UnitCellMesh::new(4).unwrap();
        let n1 = solve_cell_n(&mesh, laminate, 0).unwrap();
        let nn = mesh.n();
        let mut expected: Vec<f64> = (0..nn)
            .map(|i| {
                let y = i as f64 / nn as f64;
                if y <= 0.5 { 0.6 * y } else { 0.6 * (1.0 - y) }
            })
            .collect();
        let mean = expected.iter().sum::<f64>() / nn as f64;
        expected.iter_mut().for_each(|v| *v -= mean);
        for k in 0..mesh.n_dofs() {
            assert!((n1[k] - expected[k % nn]).abs() < 1e-12, "node {k}");
        }
        let n2 = solve_cell_n(&mesh, laminate, 1).unwrap();
        assert!(n2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sinusoidal_coefficient_gives_harmonic_mean() {
        let k = |y: [f64; 2]| 2.0 + (TAU * y[0]).sin();
        let mut errs = Vec::new();
        for level in [4, 5, 6] {
            let mesh = UnitCellMesh::new(level).unwrap();
            let n = [solve_cell_n(&mesh, k, 0).unwrap(), solve_cell_n(&mesh, k, 1).unwrap()];
            assert!(mesh.gradient_norm(&n[1]) < 1e-8);
            let t = effective_tensor(&mesh, k, [&n[0], &n[1]]);
            assert!((t.k[1][1] - 2.0).abs() < 1e-10);
            errs.push((t.k[0][0] - 3f64.sqrt()).abs());
        }
        // Second-order convergence of the Galerkin tensor.
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
        assert!(errs[2] < 1e-3, "{errs:?}");
    }

    #[test]
    fn cosine_transfer_has_closed_form_corrector() {
        let q = |y: [f64; 2]| (TAU * y[0]).cos();
        let mut errs = Vec::new();
        for level in [4, 5, 6] {
            let mesh = UnitCellMesh::new(level).unwrap();
            let m = solve_cell_m(&mesh, |_| 1.0, q, QMeanPolicy::Strict).unwrap();
            assert!(mesh.mean(&m).abs() < 1e-14);
            let exact = mesh.interpolate(|y| q(y) / (4.0 * PI * PI));
            errs.push(m.iter().zip(&exact).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())));
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
        let q2 = |y: [f64; 2]| (TAU * y[0]).sin() + (TAU * y[1]).sin();
        let mesh = UnitCellMesh::new(6).unwrap();
        let m = solve_cell_m(&mesh, |_| 1.0, q2, QMeanPolicy::Strict).unwrap();
        let exact = mesh.interpolate(|y| q2(y) / (4.0 * PI * PI));
        assert!(m.iter().zip(&exact).all(|(x, y)| (x - y).abs() < 2e-5));
    }

    #[test]
    fn nonzero_mean_transfer_is_rejected_unless_corrected() {
        let mesh = UnitCellMesh::new(3).unwrap();
        let err = solve_cell_m(&mesh, |_| 1.0, |_| 0.25, QMeanPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(ref m) if m.contains("2.500e-1")), "{err:?}");
        let m = solve_cell_m(&mesh, |_| 1.0, |_| 0.25, QMeanPolicy::Subtract).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn zero_transfer_removes_all_couplings() {
        let mesh = UnitCellMesh::new(4).unwrap();
        let model = crate::model::FnCellModel {
            k: |j: usize, y: [f64; 2], p: f64| 2.0 + (1.0 + p + j as f64) * 0.3 * (TAU * y[0]).sin(),
            q: |_: usize, _: [f64; 2], _: [f64; 2]| 0.0,
        };
        let sol = solve_cells(&mesh, &model, [0.2, 0.4], QMeanPolicy::Strict).unwrap();
        let c = homogenized_coefficients(&mesh, &model, &sol).unwrap();
        assert!(sol.m.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(c.c_star, [0.0, 0.0]);
        assert!(c.b_star.iter().flatten().flatten().all(|v| *v == 0.0));
        assert!(c.d.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_conductivity_kills_q_times_n_terms() {
        let mesh = UnitCellMesh::new(4).unwrap();
        let model = crate::model::FnCellModel {
            k: |_: usize, _: [f64; 2], _: f64| 1.5,
            q: |_: usize, y: [f64; 2], p: [f64; 2]| (1.0 + p[0]) * (TAU * y[0]).cos() + p[1] * (TAU * y[1]).sin(),
        };
        let sol = solve_cells(&mesh, &model, [0.3, -0.2], QMeanPolicy::Strict).unwrap();
        let c = homogenized_coefficients(&mesh, &model, &sol).unwrap();
        assert!(c.g.iter().flatten().flatten().all(|v| v.abs() < 1e-14));
        assert!(c.e.iter().flatten().flatten().all(|v| v.abs() < 1e-14));
        assert!(c.t.iter().all(|v| v.abs() > 1e-3));
    }

    #[test]
    fn coefficients_converge_under_refinement() {
        let model = SmoothCellModel;
        let p = [0.3, 0.6];
        let eval = |level| {
            let mesh = UnitCellMesh::new(level).unwrap();
            let sol = solve_cells(&mesh, &model, p, QMeanPolicy::Strict).unwrap();
            homogenized_coefficients(&mesh, &model, &sol).unwrap()
        };
        let (c, f) = (eval(5), eval(6));
        let flat = |x: &EffectiveCoefficients| {
            let mut v = vec![x.k_star[0].k[0][0], x.k_star[1].k[1][1], x.t[0], x.t[1]];
            v.extend(x.d.iter().flatten());
            v.extend(x.g.iter().flatten().flatten());
            v.extend(x.e.iter().flatten().flatten());
            v.extend(x.f.iter().flatten());
            v
        };
        let scale = flat(&f).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in flat(&c).iter().zip(flat(&f)) {
            assert!((a - b).abs() <= 0.01 * b.abs().max(1e-3 * scale), "{a} vs {b}");
        }
        assert!(f.k_star.iter().all(|t| t.asymmetry < 1e-8));
        assert_eq!(f.b_star[0][1], f.g[0][1].map(|x| -x));
    }

    #[test]
    fn prolongation_reproduces_bilinears_and_is_nested() {
        let fine = UnitCellMesh::new(4).unwrap();
        let coarse = UnitCellMesh::new(3).unwrap();
        let p = fine.prolongation_from_coarser().unwrap();
        let f = |y: [f64; 2]| (TAU * y[0]).cos() * (TAU * y[1]).sin();
        let uc = coarse.interpolate(f);
        let uf = p.matvec(&uc);
        for k in 0..coarse.n_dofs() {
            let [x, y] = coarse.node_coords(k);
            let kf = fine.node((x * 16.0).round() as usize, (y * 16.0).round() as usize);
            assert_eq!(uf[kf], uc[k]);
        }
        let ones = p.matvec(&vec![1.0; coarse.n_dofs()]);
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(UnitCellMesh::new(1).unwrap().prolongation_from_coarser().is_err());
    }

    #[test]
    fn table_is_parseable_text() {
        let mesh = UnitCellMesh::new(3).unwrap();
        let rows = effective_table(&mesh, &SmoothCellModel, &[[0.0, 0.0], [0.5, 1.0]], QMeanPolicy::Strict).unwrap();
        let text = format_effective_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split_whitespace().count(), lines[2].split_whitespace().count());
        let p2: f64 = lines[2].split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(p2, 1.0);
    }
}
