//! Offline multiscale spaces: uncoupled and coupled snapshots, local
//! spectral problems, partition-of-unity basis assembly, and the projected
//! coarse solve.
//!
//! Dual fine DOFs are stacked as `continuum * n_nodes + node`.

use std::io::Write as _;
use std::path::Path;

use faer::Mat;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{generalized_eigs, solve_dirichlet, Assembler, CsrMatrix, Field, QuadratureRule, SparseLu};
use crate::mesh::{partition_of_unity, CoarseGrid, CoarseNeighborhood, PartitionOfUnity, PouMode};
use crate::model::{eval_coefficients, CoefficientModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    Uncoupled,
    Coupled,
}

impl std::fmt::Display for BasisMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BasisMode::Uncoupled => "uncoupled",
            BasisMode::Coupled => "coupled",
        })
    }
}

impl std::str::FromStr for BasisMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncoupled" => Ok(BasisMode::Uncoupled),
            "coupled" => Ok(BasisMode::Coupled),
            _ => Err(Error::invalid(format!("unknown basis mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotKind {
    Uncoupled { continuum: usize },
    Coupled,
}

/// Local snapshot solutions on one neighborhood. Vectors live on the
/// neighborhood's window nodes (row-major); coupled vectors stack both
/// continua.
#[derive(Clone, Debug)]
pub struct SnapshotSpace {
    pub neighborhood: usize,
    pub kind: SnapshotKind,
    pub vectors: Vec<Vec<f64>>,
    /// For coupled snapshots, the continuum carrying the boundary spike.
    pub boundary_continuum: Vec<Option<usize>>,
}

impl SnapshotSpace {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Local problem data on one neighborhood.
struct LocalProblem {
    asm: Assembler,
    mask: Vec<bool>,
}

impl LocalProblem {
    fn new(cg: &CoarseGrid, nb: &CoarseNeighborhood) -> Self {
        let sub = cg.fine.subgrid(nb.window);
        let mut mask = vec![false; sub.n_nodes()];
        for &b in &nb.boundary_local {
            mask[b] = true;
        }
        Self {
            asm: Assembler::new(&sub),
            mask,
        }
    }
}

/// `−div(κ ∇φ) = 0` in `ω_j` with `φ = δ_k` on `∂ω_j`, one snapshot per
/// boundary fine node in counterclockwise order.
pub fn uncoupled_snapshots(
    cg: &CoarseGrid,
    nb: &CoarseNeighborhood,
    kappa: &Field,
    continuum: usize,
) -> Result<SnapshotSpace> {
    let lp = LocalProblem::new(cg, nb);
    let k = lp.asm.stiffness(&kappa.restrict(&cg.fine, nb.window))?;
    let n = lp.mask.len();
    let data: Vec<Vec<f64>> = nb
        .boundary_local
        .iter()
        .map(|&b| {
            let mut g = vec![0.0; n];
            g[b] = 1.0;
            g
        })
        .collect();
    let vectors = solve_dirichlet(&k, &lp.mask, &data)?;
    Ok(SnapshotSpace {
        neighborhood: nb.center,
        kind: SnapshotKind::Uncoupled { continuum },
        boundary_continuum: vec![None; vectors.len()],
        vectors,
    })
}

fn coupled_local_matrix(lp: &LocalProblem, k1: &Field, k2: &Field, cs: &Field) -> Result<CsrMatrix> {
    let a1 = lp.asm.stiffness(k1)?;
    let a2 = lp.asm.stiffness(k2)?;
    let m = lp.asm.mass(cs)?;
    let d1 = a1.add_scaled(1.0, &m, 1.0);
    let d2 = a2.add_scaled(1.0, &m, 1.0);
    let mut off = m;
    off.scale(-1.0);
    Ok(CsrMatrix::block2([[&d1, &off], [&off, &d2]]))
}

/// Coupled snapshots: `−div(κ₁∇φ₁) + c_s(φ₁−φ₂) = 0`,
/// `−div(κ₂∇φ₂) + c_s(φ₂−φ₁) = 0` with boundary data `δ_k e_r`. Ordered by
/// boundary node, then continuum `r`.
pub fn coupled_snapshots(
    cg: &CoarseGrid,
    nb: &CoarseNeighborhood,
    kappa: [&Field; 2],
    cs: &Field,
) -> Result<SnapshotSpace> {
    let (lo, _) = cs.bounds();
    if lo < 0.0 {
        return Err(Error::invalid("coupling coefficient must be nonnegative"));
    }
    let lp = LocalProblem::new(cg, nb);
    let w = nb.window;
    let a = coupled_local_matrix(
        &lp,
        &kappa[0].restrict(&cg.fine, w),
        &kappa[1].restrict(&cg.fine, w),
        &cs.restrict(&cg.fine, w),
    )?;
    let n = lp.mask.len();
    let mut mask = lp.mask.clone();
    mask.extend_from_slice(&lp.mask);
    let mut data = Vec::with_capacity(2 * nb.boundary_local.len());
    let mut which = Vec::with_capacity(2 * nb.boundary_local.len());
    for &b in &nb.boundary_local {
        for r in 0..2 {
            let mut g = vec![0.0; 2 * n];
            g[r * n + b] = 1.0;
            data.push(g);
            which.push(Some(r));
        }
    }
    let vectors = solve_dirichlet(&a, &mask, &data)?;
    Ok(SnapshotSpace {
        neighborhood: nb.center,
        kind: SnapshotKind::Coupled,
        vectors,
        boundary_continuum: which,
    })
}

/// Local eigenfunctions of one neighborhood, ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct LocalSpectrum {
    pub neighborhood: usize,
    pub kind: SnapshotKind,
    pub eigenvalues: Vec<f64>,
    /// Eigenfunctions on window nodes (stacked for coupled mode).
    pub functions: Vec<Vec<f64>>,
}

fn project(m: &CsrMatrix, basis: &[Vec<f64>]) -> Mat<f64> {
    let images: Vec<Vec<f64>> = basis.iter().map(|v| m.matvec(v)).collect();
    let n = basis.len();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = basis[i].iter().zip(&images[j]).map(|(a, b)| a * b).sum();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Projects the forms `a` and `s` (local matrices over the snapshot
/// vectors' DOFs) onto the snapshot space and returns the `m` smallest
/// eigenpairs, eigenfunctions expanded back onto the local DOFs.
pub fn spectral_decompose(space: &SnapshotSpace, a: &CsrMatrix, s: &CsrMatrix, m: usize) -> Result<LocalSpectrum> {
    if space.is_empty() {
        return Err(Error::invalid("empty snapshot space"));
    }
    if m > space.len() {
        return Err(Error::invalid(format!(
            "requested {m} eigenfunctions from {} snapshots",
            space.len()
        )));
    }
    let ap = project(a, &space.vectors);
    let sp = project(s, &space.vectors);
    let eig = generalized_eigs(&ap, &sp, m).map_err(|e| match e {
        Error::DecompositionFailure(msg) => {
            Error::DecompositionFailure(format!("neighborhood {}: {msg}", space.neighborhood))
        }
        other => other,
    })?;
    let len = space.vectors[0].len();
    let functions = (0..m)
        .map(|k| {
            let mut f = vec![0.0; len];
            for (c, v) in space.vectors.iter().enumerate() {
                let w = eig.vectors[(c, k)];
                f.iter_mut().zip(v).for_each(|(x, y)| *x += w * y);
            }
            f
        })
        .collect();
    Ok(LocalSpectrum {
        neighborhood: space.neighborhood,
        kind: space.kind,
        eigenvalues: eig.values,
        functions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmsfemConfig {
    pub mode: BasisMode,
    pub pou: PouMode,
    /// Also build basis functions at domain-boundary coarse nodes, on
    /// truncated neighborhoods.
    pub include_boundary_nodes: bool,
}

impl Default for GmsfemConfig {
    fn default() -> Self {
        Self {
            mode: BasisMode::Coupled,
            pou: PouMode::Multiscale,
            include_boundary_nodes: false,
        }
    }
}

/// Spectral data for every neighborhood, computed once at the largest
/// requested count and truncated for smaller spaces.
pub struct OfflineBasis {
    pub cg: CoarseGrid,
    pub cfg: GmsfemConfig,
    pub pou: [PartitionOfUnity; 2],
    /// Coupled: one spectrum per node. Uncoupled: two per node, continuum order.
    pub spectra: Vec<LocalSpectrum>,
    pub nodes: Vec<usize>,
}

/// Local spectral forms of continuum `i` on a neighborhood.
fn local_forms(
    cg: &CoarseGrid,
    nb: &CoarseNeighborhood,
    kappa: &Field,
    density: &[f64],
) -> Result<(CsrMatrix, CsrMatrix)> {
    let sub = cg.fine.subgrid(nb.window);
    let kl = kappa.restrict(&cg.fine, nb.window);
    let a = Assembler::new(&sub).stiffness(&kl)?;
    let asm3 = Assembler::with_rule(&sub, QuadratureRule::gauss(3));
    let nq = asm3.n_qp();
    let global_elems = cg.fine.window_elements(nb.window);
    let s = asm3.mass_with_index(|e, q| {
        let nodes = sub.element_nodes(e);
        kl.at(e, &nodes, asm3.phi(q)) * density[global_elems[e] * nq + q]
    })?;
    Ok((a, s))
}

impl OfflineBasis {
    /// Builds snapshots and spectra with coefficients frozen at `state`
    /// (the zero initial state by default), keeping `max_per_node`
    /// eigenfunctions per neighborhood and continuum (uncoupled) or per
    /// neighborhood (coupled).
    pub fn build(
        cg: &CoarseGrid,
        model: &CoefficientModel,
        state: Option<&[Vec<f64>; 2]>,
        cfg: &GmsfemConfig,
        max_per_node: usize,
    ) -> Result<Self> {
        let zeros = [vec![0.0; cg.fine.n_nodes()], vec![0.0; cg.fine.n_nodes()]];
        let p = state.unwrap_or(&zeros);
        let fc = eval_coefficients(model, &cg.fine, &p[0], &p[1])?;
        let pou = [
            partition_of_unity(cg, &fc.kappa[0], cfg.pou)?,
            partition_of_unity(cg, &fc.kappa[1], cfg.pou)?,
        ];
        let asm3 = Assembler::with_rule(&cg.fine, QuadratureRule::gauss(3));
        let density = [
            pou[0].gradient_energy_density(&asm3),
            pou[1].gradient_energy_density(&asm3),
        ];
        let nn = cg.fine.n_nodes();
        let c1 = nodal_values(&fc.c[0], nn)?;
        let c2 = nodal_values(&fc.c[1], nn)?;
        let cs = Field::Nodal(c1.iter().zip(&c2).map(|(x, y)| 0.5 * (x + y)).collect());
        let nodes: Vec<usize> = if cfg.include_boundary_nodes {
            (0..cg.coarse.n_nodes()).collect()
        } else {
            cg.interior_coarse_nodes()
        };
        let per_node: Vec<Result<Vec<LocalSpectrum>>> = nodes
            .par_iter()
            .map(|&j| {
                let nb = cg.neighborhood(j)?;
                let forms = [
                    local_forms(cg, &nb, &fc.kappa[0], &density[0])?,
                    local_forms(cg, &nb, &fc.kappa[1], &density[1])?,
                ];
                match cfg.mode {
                    BasisMode::Uncoupled => (0..2)
                        .map(|i| {
                            let snaps = uncoupled_snapshots(cg, &nb, &fc.kappa[i], i)?;
                            let m = max_per_node.min(snaps.len());
                            spectral_decompose(&snaps, &forms[i].0, &forms[i].1, m)
                        })
                        .collect(),
                    BasisMode::Coupled => {
                        let snaps = coupled_snapshots(cg, &nb, [&fc.kappa[0], &fc.kappa[1]], &cs)?;
                        let zero = forms[0].0.zeroed_like();
                        let a = CsrMatrix::block2([[&forms[0].0, &zero], [&zero, &forms[1].0]]);
                        let s = CsrMatrix::block2([[&forms[0].1, &zero], [&zero, &forms[1].1]]);
                        let m = max_per_node.min(snaps.len());
                        Ok(vec![spectral_decompose(&snaps, &a, &s, m)?])
                    }
                }
            })
            .collect();
        let mut spectra = Vec::new();
        for r in per_node {
            spectra.extend(r?);
        }
        Ok(Self {
            cg: cg.clone(),
            cfg: cfg.clone(),
            pou,
            spectra,
            nodes,
        })
    }

    /// Basis functions per node and continuum (uncoupled) or per node
    /// (coupled) needed for a table-convention dimension `dim`.
    pub fn per_node_for_dim(&self, dim: usize) -> Result<usize> {
        let groups = self.spectra.len();
        if groups == 0 || dim % groups != 0 {
            return Err(Error::invalid(format!(
                "dimension {dim} is not a multiple of {groups} local spectra"
            )));
        }
        Ok(dim / groups)
    }

    /// Assembles the offline space with `per_node` functions from every
    /// local spectrum.
    pub fn space(&self, per_node: usize) -> Result<MultiscaleSpace> {
        let fine = &self.cg.fine;
        let n = fine.n_nodes();
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut col = 0usize;
        let mut counts = Vec::with_capacity(self.spectra.len());
        for sp in &self.spectra {
            if per_node > sp.functions.len() {
                return Err(Error::invalid(format!(
                    "neighborhood {} has only {} eigenfunctions, {per_node} requested",
                    sp.neighborhood,
                    sp.functions.len()
                )));
            }
            let l = sp.neighborhood;
            let w = self.pou[0].window(l);
            let gnodes = fine.window_nodes(w);
            let nl = gnodes.len();
            for f in &sp.functions[..per_node] {
                let continua: &[usize] = match sp.kind {
                    SnapshotKind::Uncoupled { continuum } => {
                        if continuum == 0 {
                            &[0]
                        } else {
                            &[1]
                        }
                    }
                    SnapshotKind::Coupled => &[0, 1],
                };
                for &i in continua {
                    let chi = self.pou[i].patch(l);
                    let off = if matches!(sp.kind, SnapshotKind::Coupled) { i * nl } else { 0 };
                    for (k, &g) in gnodes.iter().enumerate() {
                        if fine.is_boundary_node(g) {
                            continue;
                        }
                        let v = chi[k] * f[off + k];
                        if v != 0.0 {
                            trip.push((i * n + g, col, v));
                        }
                    }
                }
                col += 1;
            }
            counts.push(per_node);
        }
        let r = CsrMatrix::from_triplets(2 * n, col, &trip)?;
        let scalar_columns = match self.cfg.mode {
            BasisMode::Coupled => 2 * col,
            BasisMode::Uncoupled => col,
        };
        let (r, dropped) = drop_dependent_columns(r, fine)?;
        if !dropped.is_empty() {
            warn!("dropped {} linearly dependent offline columns", dropped.len());
        }
        Ok(MultiscaleSpace {
            mode: self.cfg.mode,
            per_node: counts,
            dim: r.ncols(),
            scalar_columns,
            dropped,
            r,
        })
    }
}

fn nodal_values(f: &Field, n: usize) -> Result<Vec<f64>> {
    match f {
        Field::Constant(c) => Ok(vec![*c; n]),
        Field::Nodal(v) => Ok(v.clone()),
        _ => Err(Error::invalid("transfer coefficient must be constant or nodal")),
    }
}

/// Global offline space: `R` maps coarse coefficients to stacked fine
/// nodal values.
#[derive(Clone, Debug)]
pub struct MultiscaleSpace {
    pub mode: BasisMode,
    /// Functions kept per local spectrum.
    pub per_node: Vec<usize>,
    pub r: CsrMatrix,
    /// Number of coarse unknowns (table convention).
    pub dim: usize,
    /// Scalar fine-field columns: twice `dim` in coupled mode.
    pub scalar_columns: usize,
    /// Indices of columns removed as linearly dependent.
    pub dropped: Vec<usize>,
}

/// Convenience wrapper: build the offline basis and assemble the space with
/// `per_node` functions.
pub fn build_multiscale_space(
    cg: &CoarseGrid,
    model: &CoefficientModel,
    state: Option<&[Vec<f64>; 2]>,
    cfg: &GmsfemConfig,
    per_node: usize,
) -> Result<MultiscaleSpace> {
    OfflineBasis::build(cg, model, state, cfg, per_node)?.space(per_node)
}

/// Pivot floor of the unit-diagonal Gram matrix below which a column counts
/// as dependent (a sine of about 1e-6 to the span of the kept columns).
const DEPENDENCE_TOL: f64 = 1e-12;

/// Removes columns of `r` that are numerically dependent in the `L²` inner
/// product. Returns the pruned matrix and the removed column indices.
pub fn drop_dependent_columns(r: CsrMatrix, fine: &crate::mesh::StructuredGrid) -> Result<(CsrMatrix, Vec<usize>)> {
    let m1 = Assembler::new(fine).mass(&Field::Constant(1.0))?;
    let m = CsrMatrix::block2([[&m1, &m1.zeroed_like()], [&m1.zeroed_like(), &m1]]);
    let rt = r.transpose();
    let gram = rt.matmul(&m.matmul(&r));
    let n = gram.ncols();
    let diag = gram.diagonal();
    let zero_cols: Vec<usize> = (0..n).filter(|&k| !(diag[k] > 0.0)).collect();
    if zero_cols.is_empty() {
        // Scale to unit diagonal so the test is about angles, not norms.
        let s: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut g = gram.clone();
        for row in 0..n {
            let (cols, _) = g.row(row);
            let cols = cols.to_vec();
            let start = g.row_ptr()[row];
            for (k, c) in cols.into_iter().enumerate() {
                g.values_mut()[start + k] *= s[row] * s[c];
            }
        }
        let ok = g.with_faer_csc(|a| {
            a.sp_cholesky(faer::Side::Lower)
                .map(|llt| {
                    // A successful factorization can still hide tiny pivots;
                    // probe the conditioning with one solve.
                    use faer::prelude::*;
                    let b = Mat::<f64>::from_fn(n, 1, |_, _| 1.0);
                    let x = llt.solve(&b);
                    (0..n).all(|i| x[(i, 0)].is_finite() && x[(i, 0)].abs() < 1e12)
                })
                .unwrap_or(false)
        });
        if ok {
            return Ok((r, Vec::new()));
        }
    }
    // Greedy pivoted Cholesky on the unit-diagonal Gram matrix: keep the
    // column with the largest remaining pivot until what is left is noise.
    let g = gram.to_dense();
    let live: Vec<usize> = (0..n).filter(|&k| diag[k] > 0.0).collect();
    let nl = live.len();
    let sc: Vec<f64> = live.iter().map(|&k| 1.0 / diag[k].sqrt()).collect();
    let gs = |a: usize, b: usize| g[live[a]][live[b]] * sc[a] * sc[b];
    let mut resid = vec![1.0f64; nl];
    let mut l: Vec<Vec<f64>> = Vec::new();
    let mut picked: Vec<usize> = Vec::new();
    let mut used = vec![false; nl];
    loop {
        let best = (0..nl)
            .filter(|&k| !used[k])
            .max_by(|&a, &b| resid[a].total_cmp(&resid[b]));
        let Some(p) = best else { break };
        if resid[p] <= DEPENDENCE_TOL {
            break;
        }
        used[p] = true;
        let piv = resid[p].sqrt();
        let col: Vec<f64> = (0..nl)
            .map(|k| {
                if used[k] && k != p {
                    return 0.0;
                }
                let mut v = gs(k, p);
                for lc in &l {
                    v -= lc[k] * lc[p];
                }
                v / piv
            })
            .collect();
        for k in 0..nl {
            if !used[k] {
                resid[k] -= col[k] * col[k];
            }
        }
        l.push(col);
        picked.push(live[p]);
    }
    let mut keep = picked;
    keep.sort_unstable();
    let dropped: Vec<usize> = (0..n).filter(|k| keep.binary_search(k).is_err()).collect();
    let rows: Vec<usize> = (0..r.nrows()).collect();
    Ok((r.submatrix(&rows, &keep), dropped))
}

/// Solves `(Rᵀ A R) u_c = Rᵀ rhs` and returns `R u_c`.
pub fn coarse_solve_system(a: &CsrMatrix, rhs: &[f64], r: &CsrMatrix) -> Result<Vec<f64>> {
    let rt = r.transpose();
    let ac = rt.matmul(&a.matmul(r));
    let mut lu = SparseLu::new();
    lu.factor(&ac)?;
    let uc = lu.solve(&rt.matvec(rhs))?;
    Ok(r.matvec(&uc))
}

/// Writes the offline space: a header line
/// `dcflow-offline-space <fine nx> <fine ny> <coarse nx> <coarse ny> <mode> <rows> <cols>`,
/// then per column a line `<nnz>` followed by `<row index> <value>` lines.
pub fn write_space(path: &Path, cg: &CoarseGrid, space: &MultiscaleSpace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let rt = space.r.transpose();
    writeln!(
        f,
        "dcflow-offline-space {} {} {} {} {} {} {}",
        cg.fine.nx(),
        cg.fine.ny(),
        cg.coarse.nx(),
        cg.coarse.ny(),
        space.mode,
        space.r.nrows(),
        space.r.ncols()
    )?;
    for c in 0..rt.nrows() {
        let (rows, vals) = rt.row(c);
        writeln!(f, "{}", rows.len())?;
        for (r, v) in rows.iter().zip(vals) {
            writeln!(f, "{r} {v:?}")?;
        }
    }
    Ok(())
}

/// Reads a space written by [`write_space`]; returns the mode and `R`.
pub fn read_space(path: &Path) -> Result<(BasisMode, CsrMatrix)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty offline-space file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 8 || header[0] != "dcflow-offline-space" {
        return Err(Error::Parse("bad offline-space header".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("offline space: {e}")));
    let mode: BasisMode = header[5].parse()?;
    let (nrows, ncols) = (num(header[6])?, num(header[7])?);
    let mut trip = Vec::new();
    for c in 0..ncols {
        let cnt = num(lines.next().ok_or_else(|| Error::Parse("truncated offline space".into()))?.trim())?;
        for _ in 0..cnt {
            let l = lines.next().ok_or_else(|| Error::Parse("truncated offline space".into()))?;
            let mut it = l.split_whitespace();
            let r = num(it.next().unwrap_or(""))?;
            let v: f64 = it
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::Parse(format!("offline space value: {e}")))?;
            trip.push((r, c, v));
        }
    }
    Ok((mode, CsrMatrix::from_triplets(nrows, ncols, &trip)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_coarse_grid, StructuredGrid};
    use crate::model::CoefficientModel;
    use faer::prelude::*;

    fn setup() -> (CoarseGrid, CoefficientModel) {
        let fine = StructuredGrid::unit_square(24).unwrap();
        let cg = build_coarse_grid(&fine, 4).unwrap();
        let a1: Vec<f64> = (0..fine.n_elements())
            .map(|e| if fine.element_ij(e).1 == 9 { 1e4 } else { 10.0 })
            .collect();
        let a2: Vec<f64> = (0..fine.n_elements())
            .map(|e| if fine.element_ij(e).0 == 14 { 10.0 } else { 1.0 })
            .collect();
        (cg, CoefficientModel::linear(a1, a2, 50.0, [1.0, 1.0]))
    }

    fn kappas(cg: &CoarseGrid, model: &CoefficientModel) -> [Field; 2] {
        let z = vec![0.0; cg.fine.n_nodes()];
        eval_coefficients(model, &cg.fine, &z, &z).unwrap().kappa
    }

    /// Relative residual of projecting every column of `b` onto span(`a`).
    fn span_residual(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let n = a[0].len();
        let am = Mat::<f64>::from_fn(n, a.len(), |i, j| a[j][i]);
        let bm = Mat::<f64>::from_fn(n, b.len(), |i, j| b[j][i]);
        let x = am.qr().solve_lstsq(&bm);
        (&am * &x - &bm).norm_l2() / bm.norm_l2()
    }

    #[test]
    fn uncoupled_snapshots_hit_boundary_data_and_sum_to_one() {
        let (cg, model) = setup();
        let k = kappas(&cg, &model);
        let nb = cg.neighborhood(cg.interior_coarse_nodes()[4]).unwrap();
        let sp = uncoupled_snapshots(&cg, &nb, &k[0], 0).unwrap();
        assert_eq!(sp.len(), nb.boundary_local.len());
        for (m, v) in sp.vectors.iter().enumerate() {
            for (q, &b) in nb.boundary_local.iter().enumerate() {
                assert_eq!(v[b], if q == m { 1.0 } else { 0.0 });
            }
        }
        let n = sp.vectors[0].len();
        for i in 0..n {
            let s: f64 = sp.vectors.iter().map(|v| v[i]).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn coupled_snapshots_decouple_without_transfer() {
        let (cg, model) = setup();
        let k = kappas(&cg, &model);
        let nb = cg.neighborhood(cg.interior_coarse_nodes()[0]).unwrap();
        let cp = coupled_snapshots(&cg, &nb, [&k[0], &k[1]], &Field::Constant(0.0)).unwrap();
        let u = [
            uncoupled_snapshots(&cg, &nb, &k[0], 0).unwrap(),
            uncoupled_snapshots(&cg, &nb, &k[1], 1).unwrap(),
        ];
        let n = u[0].vectors[0].len();
        for (idx, v) in cp.vectors.iter().enumerate() {
            let (k_node, r) = (idx / 2, idx % 2);
            assert_eq!(cp.boundary_continuum[idx], Some(r));
            let other = 1 - r;
            assert!(v[other * n..(other + 1) * n].iter().all(|x| x.abs() < 1e-14));
            for i in 0..n {
                assert!((v[r * n + i] - u[r].vectors[k_node][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coupled_snapshots_with_transfer_mix_continua() {
        let (cg, model) = setup();
        let k = kappas(&cg, &model);
        let nb = cg.neighborhood(cg.interior_coarse_nodes()[0]).unwrap();
        let cp = coupled_snapshots(&cg, &nb, [&k[0], &k[1]], &Field::Constant(1e3)).unwrap();
        let n = cp.vectors[0].len() / 2;
        // Spike in continuum 1 leaks into continuum 2 through the transfer.
        let leak: f64 = cp.vectors[0][n..].iter().map(|x| x.abs()).sum();
        assert!(leak > 1e-3);
        // Boundary data (1,1) everywhere gives the constant pair.
        for i in 0..2 * n {
            let s: f64 = cp.vectors.iter().map(|v| v[i]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(coupled_snapshots(&cg, &nb, [&k[0], &k[1]], &Field::Constant(-1.0)).is_err());
    }

    #[test]
    fn local_spectrum_is_ascending_and_s_orthonormal() {
        let (cg, model) = setup();
        let k = kappas(&cg, &model);
        let asm3 = Assembler::with_rule(&cg.fine, QuadratureRule::gauss(3));
        let pou = partition_of_unity(&cg, &k[0], PouMode::Multiscale).unwrap();
        let density = pou.gradient_energy_density(&asm3);
        let nb = cg.neighborhood(cg.interior_coarse_nodes()[3]).unwrap();
        let (a, s) = local_forms(&cg, &nb, &k[0], &density).unwrap();
        let sp = uncoupled_snapshots(&cg, &nb, &k[0], 0).unwrap();
        let spec = spectral_decompose(&sp, &a, &s, 12).unwrap();
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!(spec.eigenvalues[0].abs() < 1e-8, "constant mode first");
        for i in 0..12 {
            let si = s.matvec(&spec.functions[i]);
            let ai = a.matvec(&spec.functions[i]);
            for j in 0..12 {
                let sij: f64 = si.iter().zip(&spec.functions[j]).map(|(x, y)| x * y).sum();
                assert!((sij - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8, "s({i},{j}) = {sij}");
            }
            let aii: f64 = ai.iter().zip(&spec.functions[i]).map(|(x, y)| x * y).sum();
            assert!((aii - spec.eigenvalues[i]).abs() < 1e-8 * (1.0 + spec.eigenvalues[i]));
        }
        assert!(spectral_decompose(&sp, &a, &s, sp.len() + 1).is_err());
    }

    #[test]
    fn coupled_space_spans_uncoupled_spaces_without_transfer() {
        let (cg, mut model) = setup();
        model.transfer = 0.0;
        let full = 4 * 2 * cg.rx;
        let cfg = |mode| GmsfemConfig { mode, ..Default::default() };
        let cb = OfflineBasis::build(&cg, &model, None, &cfg(BasisMode::Coupled), 2 * full).unwrap();
        let ub = OfflineBasis::build(&cg, &model, None, &cfg(BasisMode::Uncoupled), full).unwrap();
        for (t, &node) in cb.nodes.iter().enumerate() {
            let c = &cb.spectra[t].functions;
            let n = c[0].len() / 2;
            let mut u: Vec<Vec<f64>> = Vec::new();
            for (r, sp) in ub.spectra[2 * t..2 * t + 2].iter().enumerate() {
                assert_eq!(sp.neighborhood, node);
                for f in &sp.functions {
                    let mut v = vec![0.0; 2 * n];
                    v[r * n..(r + 1) * n].copy_from_slice(f);
                    u.push(v);
                }
            }
            assert!(span_residual(c, &u) < 1e-8);
            assert!(span_residual(&u, c) < 1e-8);
        }
    }

    #[test]
    fn dimension_bookkeeping() {
        let (cg, model) = setup();
        let cb = OfflineBasis::build(&cg, &model, None, &GmsfemConfig::default(), 3).unwrap();
        let cs = cb.space(3).unwrap();
        assert_eq!(cs.dim, 9 * 3);
        assert_eq!(cs.scalar_columns, 2 * 27);
        assert_eq!(cb.per_node_for_dim(27).unwrap(), 3);
        assert!(cb.per_node_for_dim(28).is_err());
        assert!(cb.space(4).is_err());
        let ub = OfflineBasis::build(
            &cg,
            &model,
            None,
            &GmsfemConfig { mode: BasisMode::Uncoupled, ..Default::default() },
            3,
        )
        .unwrap();
        assert_eq!(ub.space(2).unwrap().dim, 2 * 9 * 2);
        assert_eq!(ub.per_node_for_dim(36).unwrap(), 2);
        // Dirichlet rows stay empty.
        let n = cg.fine.n_nodes();
        for g in 0..n {
            if cg.fine.is_boundary_node(g) {
                assert!(cs.r.row(g).0.is_empty() && cs.r.row(n + g).0.is_empty());
            }
        }
    }

    #[test]
    fn dependent_columns_are_dropped() {
        let fine = StructuredGrid::unit_square(4).unwrap();
        let n = 2 * fine.n_nodes();
        let c = fine.node(2, 2);
        let d = fine.node(1, 2);
        let trip = vec![(c, 0, 1.0), (d, 1, 2.0), (c, 2, -3.0), (c, 3, 1.0), (d, 3, 1.0)];
        let r = CsrMatrix::from_triplets(n, 4, &trip).unwrap();
        let (kept, dropped) = drop_dependent_columns(r, &fine).unwrap();
        assert_eq!(kept.ncols(), 2);
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn offline_space_file_round_trip() {
        let (cg, model) = setup();
        let ms = build_multiscale_space(&cg, &model, None, &GmsfemConfig::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.txt");
        write_space(&path, &cg, &ms).unwrap();
        let (mode, r) = read_space(&path).unwrap();
        assert_eq!(mode, BasisMode::Coupled);
        assert_eq!(r.to_dense(), ms.r.to_dense());
        std::fs::write(&path, "garbage").unwrap();
        assert!(matches!(read_space(&path), Err(Error::Parse(_))));
    }
}
