//! Hierarchical solution of parametrized cell problems over dyadic
//! macrogrids of pressure points.
//!
//! Level 1 points are solved in the finest cell space `V_L`. A point at
//! level `l ≥ 2` reuses the stored solution at its nearest lower-level
//! ancestor `p'` and only solves for a correction in the coarser space
//! `V_{L+1−l}`:
//!
//! `∫ k_p ∇u^c·∇φ = −∫ (k_p − k_p') ∇ū(p')·∇φ + (ℓ_p − ℓ_p')(φ)`,
//! `ū(p) = u^c + ū(p')`,
//!
//! with `ℓ_p(φ) = −∫ k_p e^i·∇φ` for `N^i` and `ℓ_p(ψ) = ∫ Q_p ψ` for `M`.
//! The composite therefore satisfies the defining weak form at `p` for all
//! test functions of its own space.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::solve::norm2;
use crate::fem::CsrMatrix;
use crate::homogenize::{solve_periodic, QMeanPolicy, UnitCellMesh, Q_MEAN_TOL};
use crate::model::CellModel;

/// Dyadic hierarchy of macro points on `[a, b]` (one pressure) and
/// `[a, b]²` (a pressure pair).
#[derive(Clone, Debug, PartialEq)]
pub struct MacrogridHierarchy {
    pub a: f64,
    pub b: f64,
    pub depth: usize,
    /// `R_l` for `l = 1..=depth` (index `l − 1`).
    levels: Vec<Vec<f64>>,
}

/// `R₁ = {a, (a+b)/2, b}` and `R_l` = odd multiples of `(b−a)/2^l` for
/// `l ≥ 2`.
pub fn build_hierarchy(a: f64, b: f64, depth: usize) -> Result<MacrogridHierarchy> {
    if depth < 1 {
        return Err(Error::invalid("hierarchy depth must be at least 1"));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("invalid parameter interval [{a}, {b}]")));
    }
    if depth > 30 {
        return Err(Error::invalid(format!("hierarchy depth {depth} too large")));
    }
    let mut levels = vec![vec![a, 0.5 * (a + b), b]];
    for l in 2..=depth {
        let step = (b - a) / (1u64 << l) as f64;
        levels.push((0..1usize << (l - 1)).map(|k| a + (2 * k + 1) as f64 * step).collect());
    }
    Ok(MacrogridHierarchy { a, b, depth, levels })
}

fn same(x: f64, y: f64, scale: f64) -> bool {
    (x - y).abs() <= 1e-12 * scale
}

impl MacrogridHierarchy {
    /// `S₁^l = R_l`.
    pub fn level_1d(&self, l: usize) -> &[f64] {
        &self.levels[l - 1]
    }

    /// `S₂^l = R_l × R_l`, row-major in `(p₁, p₂)`.
    pub fn level_2d(&self, l: usize) -> Vec<[f64; 2]> {
        let r = &self.levels[l - 1];
        r.iter().flat_map(|&x| r.iter().map(move |&y| [x, y])).collect()
    }

    /// Level-tagged points of the given parameter dimension (1 or 2).
    pub fn points(&self, dim: usize) -> Vec<(usize, Vec<f64>)> {
        (1..=self.depth)
            .flat_map(|l| -> Vec<(usize, Vec<f64>)> {
                if dim == 1 {
                    self.level_1d(l).iter().map(|&x| (l, vec![x])).collect()
                } else {
                    self.level_2d(l).into_iter().map(|p| (l, p.to_vec())).collect()
                }
            })
            .collect()
    }

    /// `U₁,L`: all 1D points, sorted.
    pub fn union_1d(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.levels.iter().flatten().copied().collect();
        u.sort_by(f64::total_cmp);
        u
    }

    /// Number of points of the given parameter dimension at level `l`.
    pub fn level_size(&self, l: usize, dim: usize) -> usize {
        self.levels[l - 1].len().pow(dim as u32)
    }

    /// Nearest point on a level below `l`; ties go to the lexicographically
    /// smaller point.
    pub fn ancestor(&self, l: usize, p: &[f64]) -> Result<Vec<f64>> {
        if l < 2 || l > self.depth {
            return Err(Error::InvariantViolation(format!("level {l} has no ancestors")));
        }
        let scale = (self.b - self.a).powi(2);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for lo in 1..l {
            let cands: Vec<Vec<f64>> = match p.len() {
                1 => self.level_1d(lo).iter().map(|&x| vec![x]).collect(),
                2 => self.level_2d(lo).into_iter().map(|q| q.to_vec()).collect(),
                d => return Err(Error::invalid(format!("parameter dimension {d}"))),
            };
            for c in cands {
                let d: f64 = c.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum();
                let better = match &best {
                    None => true,
                    Some((bd, bp)) => {
                        if same(d, *bd, scale) {
                            c.iter().zip(bp).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
                        } else {
                            d < *bd
                        }
                    }
                };
                if better {
                    best = Some((d, c));
                }
            }
        }
        best.map(|(_, c)| c)
            .ok_or_else(|| Error::InvariantViolation(format!("no ancestor for {p:?} at level {l}")))
    }
}

/// Nested periodic cell spaces `V_1 ⊂ … ⊂ V_L` (`V_m` on a `2^m` mesh) with
/// prolongations into the finest space. Coarse operators are Galerkin
/// projections of finest-space operators, so nesting is exact.
#[derive(Clone, Debug)]
pub struct SpaceLadder {
    meshes: Vec<UnitCellMesh>,
    to_finest: Vec<CsrMatrix>,
}

impl SpaceLadder {
    pub fn new(depth: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::invalid("ladder depth must be at least 1"));
        }
        let meshes: Vec<UnitCellMesh> = (1..=depth as u32).map(UnitCellMesh::new).collect::<Result<_>>()?;
        let nl = meshes[depth - 1].n_dofs();
        let mut to_finest = vec![CsrMatrix::identity(nl)];
        for m in (1..depth).rev() {
            let step = meshes[m].prolongation_from_coarser()?;
            let p = to_finest[0].matmul(&step);
            to_finest.insert(0, p);
        }
        Ok(Self { meshes, to_finest })
    }

    pub fn depth(&self) -> usize {
        self.meshes.len()
    }

    pub fn mesh(&self, m: usize) -> &UnitCellMesh {
        &self.meshes[m - 1]
    }

    pub fn finest(&self) -> &UnitCellMesh {
        self.meshes.last().expect("nonempty ladder")
    }

    /// Prolongation `V_m → V_L`.
    pub fn prolongation(&self, m: usize) -> &CsrMatrix {
        &self.to_finest[m - 1]
    }

    /// `dim V_m = 4^m`.
    pub fn dofs(&self, m: usize) -> usize {
        self.meshes[m - 1].n_dofs()
    }
}

/// Which parametrized cell problem a table holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CellProblem {
    /// `N^direction_continuum(·, p_continuum)`, one pressure parameter.
    N { continuum: usize, direction: usize },
    /// `M_continuum(·, p₁, p₂)`, two pressure parameters.
    M { continuum: usize },
}

impl CellProblem {
    pub fn param_dim(&self) -> usize {
        match self {
            CellProblem::N { .. } => 1,
            CellProblem::M { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CellProblem::N { continuum, direction } => continuum < 2 && direction < 2,
            CellProblem::M { continuum } => continuum < 2,
        };
        if ok { Ok(()) } else { Err(Error::invalid(format!("invalid cell problem {self:?}"))) }
    }

    fn k_at(&self, model: &dyn CellModel, p: &[f64], y: [f64; 2]) -> f64 {
        match *self {
            CellProblem::N { continuum, .. } => model.k(continuum, y, p[0]),
            CellProblem::M { continuum } => model.k(continuum, y, p[continuum]),
        }
    }

    /// Finest-space operator and right side at `p`.
    fn system(
        &self,
        model: &dyn CellModel,
        mesh: &UnitCellMesh,
        p: &[f64],
        policy: QMeanPolicy,
    ) -> Result<(CsrMatrix, Vec<f64>)> {
        let a = mesh.stiffness(|y| self.k_at(model, p, y))?;
        let f = match *self {
            CellProblem::N { direction, .. } => mesh.flux_load(|y| self.k_at(model, p, y), direction),
            CellProblem::M { continuum } => {
                let pp = [p[0], p[1]];
                let q = |y| model.q(continuum, y, pp);
                let mean = mesh.integrate(q);
                if mean.abs() > Q_MEAN_TOL && policy == QMeanPolicy::Strict {
                    return Err(Error::invalid(format!(
                        "transfer function has cell mean {mean:.3e} at {p:?}; it must vanish"
                    )));
                }
                mesh.load(|y| q(y) - mean)
            }
        };
        Ok((a, f))
    }
}

/// One stored cell solution.
#[derive(Clone, Debug)]
pub struct HierEntry {
    pub point: Vec<f64>,
    pub level: usize,
    /// Index `m` of the space `V_m` the entry's last solve used.
    pub space: usize,
    /// Index of the ancestor entry the composite builds on.
    pub ancestor: Option<usize>,
    /// Nodal values in the finest space `V_L`.
    pub solution: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HierSolutionTable {
    pub problem: CellProblem,
    pub depth: usize,
    pub entries: Vec<HierEntry>,
}

impl HierSolutionTable {
    pub fn find(&self, p: &[f64]) -> Option<usize> {
        self.entries.iter().position(|e| e.point == p)
    }
}

fn mean_weights(ladder: &SpaceLadder, m: usize) -> Vec<f64> {
    let nl = ladder.finest().n_dofs();
    ladder.prolongation(m).matvec_transpose(&vec![1.0 / nl as f64; nl])
}

/// Solves `problem` at every macro point: level 1 in `V_L`, deeper levels by
/// correction in `V_{L+1−l}`. Levels run in order; points within a level run
/// in parallel.
pub fn hierarchical_cell_solve(
    model: &dyn CellModel,
    hierarchy: &MacrogridHierarchy,
    ladder: &SpaceLadder,
    problem: CellProblem,
    policy: QMeanPolicy,
) -> Result<HierSolutionTable> {
    problem.validate()?;
    let depth = hierarchy.depth;
    if ladder.depth() != depth {
        return Err(Error::invalid(format!(
            "ladder depth {} differs from hierarchy depth {depth}",
            ladder.depth()
        )));
    }
    let fine = ladder.finest();
    let dim = problem.param_dim();
    let mut entries: Vec<HierEntry> = Vec::new();
    for l in 1..=depth {
        let pts: Vec<Vec<f64>> = hierarchy.points(dim).into_iter().filter(|(lv, _)| *lv == l).map(|(_, p)| p).collect();
        let m = depth + 1 - l;
        let solved: Vec<Result<HierEntry>> = pts
            .par_iter()
            .map(|p| {
                let (a, f) = problem.system(model, fine, p, policy)?;
                if l == 1 {
                    let u = solve_periodic(&a, &f, &vec![1.0 / fine.n_dofs() as f64; fine.n_dofs()])?;
                    return Ok(HierEntry {
                        point: p.clone(),
                        level: 1,
                        space: depth,
                        ancestor: None,
                        solution: u,
                    });
                }
                let anc = hierarchy.ancestor(l, p)?;
                let idx = entries
                    .iter()
                    .position(|e| e.point == anc)
                    .ok_or_else(|| Error::InvariantViolation(format!("ancestor {anc:?} of {p:?} not solved")))?;
                let prev = &entries[idx];
                let (a_anc, f_anc) = problem.system(model, fine, &anc, policy)?;
                // F = −(A_p − A_p') ū(p') + (f_p − f_p'), in the finest space.
                let ap_u = a.matvec(&prev.solution);
                let aa_u = a_anc.matvec(&prev.solution);
                let rhs_fine: Vec<f64> = (0..f.len()).map(|k| -(ap_u[k] - aa_u[k]) + (f[k] - f_anc[k])).collect();
                let pm = ladder.prolongation(m);
                let am = pm.transpose().matmul(&a.matmul(pm));
                let rhs = pm.matvec_transpose(&rhs_fine);
                let uc = solve_periodic(&am, &rhs, &mean_weights(ladder, m))?;
                let corr = pm.matvec(&uc);
                Ok(HierEntry {
                    point: p.clone(),
                    level: l,
                    space: m,
                    ancestor: Some(idx),
                    solution: corr.iter().zip(&prev.solution).map(|(x, y)| x + y).collect(),
                })
            })
            .collect();
        for e in solved {
            entries.push(e?);
        }
    }
    Ok(HierSolutionTable { problem, depth, entries })
}

/// Reference table: every macro point solved directly in `V_L`.
pub fn full_cell_solve(
    model: &dyn CellModel,
    hierarchy: &MacrogridHierarchy,
    ladder: &SpaceLadder,
    problem: CellProblem,
    policy: QMeanPolicy,
) -> Result<HierSolutionTable> {
    problem.validate()?;
    let fine = ladder.finest();
    let w = vec![1.0 / fine.n_dofs() as f64; fine.n_dofs()];
    let entries = hierarchy
        .points(problem.param_dim())
        .par_iter()
        .map(|(l, p)| {
            let (a, f) = problem.system(model, fine, p, policy)?;
            Ok(HierEntry {
                point: p.clone(),
                level: *l,
                space: hierarchy.depth,
                ancestor: None,
                solution: solve_periodic(&a, &f, &w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HierSolutionTable {
        problem,
        depth: hierarchy.depth,
        entries,
    })
}

/// Residual of the defining weak form at entry `idx`, tested against its
/// own space `V_m`, relative to the finest-space load.
pub fn composite_residual(
    model: &dyn CellModel,
    ladder: &SpaceLadder,
    table: &HierSolutionTable,
    idx: usize,
    policy: QMeanPolicy,
) -> Result<f64> {
    let e = &table.entries[idx];
    let (a, f) = table.problem.system(model, ladder.finest(), &e.point, policy)?;
    let au = a.matvec(&e.solution);
    let r: Vec<f64> = au.iter().zip(&f).map(|(x, y)| x - y).collect();
    let pm = ladder.prolongation(e.space);
    let rm = pm.matvec_transpose(&r);
    // Coarse projections of the load can vanish by symmetry, so the scale is
    // taken in the finest space.
    let scale = norm2(&f).max(norm2(&au));
    let rn = norm2(&rm);
    Ok(if scale == 0.0 { rn } else { rn / scale })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolveMode {
    Hierarchical,
    Full,
}

/// Total cell unknowns: hierarchical `Σ_l |S^l|·dim V_{L+1−l}`, full
/// `|U|·dim V_L`.
pub fn dof_count(hierarchy: &MacrogridHierarchy, mode: SolveMode, param_dim: usize) -> usize {
    let depth = hierarchy.depth;
    let dofs = |m: usize| 1usize << (2 * m);
    (1..=depth)
        .map(|l| {
            let n = hierarchy.level_size(l, param_dim);
            match mode {
                SolveMode::Hierarchical => n * dofs(depth + 1 - l),
                SolveMode::Full => n * dofs(depth),
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelError {
    pub level: usize,
    pub points: usize,
    pub space_dofs: usize,
    /// Max over the level's points of `‖∇(reference − composite)‖_{L²(Y)}`.
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub depth: usize,
    pub levels: Vec<LevelError>,
    /// Smallest `C` with `err(l) ≤ C·l·2^{−L}` over levels `l ≥ 2` (level 1
    /// matches the reference exactly).
    pub fitted_c: f64,
}

pub fn convergence_report(
    table: &HierSolutionTable,
    reference: &HierSolutionTable,
    ladder: &SpaceLadder,
) -> Result<ConvergenceReport> {
    if table.depth != reference.depth || table.entries.len() != reference.entries.len() || table.problem != reference.problem {
        return Err(Error::invalid("tables cover different macrogrids"));
    }
    let fine = ladder.finest();
    let mut levels: Vec<LevelError> = (1..=table.depth)
        .map(|l| LevelError {
            level: l,
            points: 0,
            space_dofs: ladder.dofs(table.depth + 1 - l),
            max_error: 0.0,
        })
        .collect();
    for e in &table.entries {
        let r = reference
            .find(&e.point)
            .ok_or_else(|| Error::invalid(format!("reference lacks point {:?}", e.point)))?;
        let d: Vec<f64> = e.solution.iter().zip(&reference.entries[r].solution).map(|(a, b)| a - b).collect();
        let lv = &mut levels[e.level - 1];
        lv.points += 1;
        lv.max_error = lv.max_error.max(fine.gradient_norm(&d));
    }
    let eta = (0.5f64).powi(table.depth as i32);
    let fitted_c = levels
        .iter()
        .filter(|l| l.level >= 2)
        .map(|l| l.max_error / (l.level as f64 * eta))
        .fold(0.0, f64::max);
    Ok(ConvergenceReport {
        depth: table.depth,
        levels,
        fitted_c,
    })
}

/// One row of the benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub depth: usize,
    pub level: usize,
    pub points: usize,
    pub space_dofs: usize,
    pub max_error: f64,
    pub hierarchical_dofs: usize,
    pub full_dofs: usize,
    pub fitted_c: f64,
    pub hierarchical_seconds: f64,
    pub full_seconds: f64,
}

/// Runs hierarchical and full solves of `problem` for each depth.
pub fn benchmark(
    model: &dyn CellModel,
    a: f64,
    b: f64,
    depths: &[usize],
    problem: CellProblem,
    policy: QMeanPolicy,
) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for &depth in depths {
        let h = build_hierarchy(a, b, depth)?;
        let ladder = SpaceLadder::new(depth)?;
        let t0 = Instant::now();
        let table = hierarchical_cell_solve(model, &h, &ladder, problem, policy)?;
        let th = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let reference = full_cell_solve(model, &h, &ladder, problem, policy)?;
        let tf = t0.elapsed().as_secs_f64();
        let rep = convergence_report(&table, &reference, &ladder)?;
        let dim = problem.param_dim();
        for lv in rep.levels {
            rows.push(BenchmarkRow {
                depth,
                level: lv.level,
                points: lv.points,
                space_dofs: lv.space_dofs,
                max_error: lv.max_error,
                hierarchical_dofs: dof_count(&h, SolveMode::Hierarchical, dim),
                full_dofs: dof_count(&h, SolveMode::Full, dim),
                fitted_c: rep.fitted_c,
                hierarchical_seconds: th,
                full_seconds: tf,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnCellModel, SmoothCellModel};

    #[test]
    fn unit_interval_levels() {
        let h = build_hierarchy(0.0, 1.0, 3).unwrap();
        assert_eq!(h.level_1d(1), &[0.0, 0.5, 1.0]);
        assert_eq!(h.level_1d(2), &[0.25, 0.75]);
        assert_eq!(h.level_1d(3), &[0.125, 0.375, 0.625, 0.875]);
        let h2 = build_hierarchy(0.0, 1.0, 2).unwrap();
        assert_eq!(h2.union_1d(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(h.ancestor(2, &[0.25]).unwrap(), vec![0.0]);
        assert_eq!(h.ancestor(3, &[0.625]).unwrap(), vec![0.5]);
        assert_eq!(h.ancestor(3, &[0.375]).unwrap(), vec![0.25]);
        assert!(h.ancestor(1, &[0.0]).is_err());
        assert!(build_hierarchy(0.0, 1.0, 0).is_err());
        assert!(build_hierarchy(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn levels_partition_and_density() {
        for depth in 1..=6 {
            let h = build_hierarchy(-1.0, 2.0, depth).unwrap();
            let u = h.union_1d();
            assert_eq!(u.len(), (1 << depth) + 1);
            assert!(u.windows(2).all(|w| w[0] < w[1]), "levels are disjoint");
            let step = 3.0 / (1u64 << depth) as f64;
            for (k, x) in u.iter().enumerate() {
                assert!((x - (-1.0 + k as f64 * step)).abs() < 1e-12);
            }
            for dim in [1, 2] {
                for (l, p) in h.points(dim) {
                    if l == 1 {
                        continue;
                    }
                    let anc = h.ancestor(l, &p).unwrap();
                    let d: f64 = anc.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(d <= 2f64.sqrt() * 0.5f64.powi(l as i32 - 1) * 3.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        let h = build_hierarchy(0.0, 1.0, 3).unwrap();
        assert_eq!(dof_count(&h, SolveMode::Hierarchical, 1), 240);
        assert_eq!(dof_count(&h, SolveMode::Full, 1), 576);
        let h1 = build_hierarchy(0.0, 1.0, 1).unwrap();
        for d in [1, 2] {
            assert_eq!(dof_count(&h1, SolveMode::Hierarchical, d), dof_count(&h1, SolveMode::Full, d));
        }
        for depth in 2..=8 {
            let h = build_hierarchy(0.0, 1.0, depth).unwrap();
            for d in [1, 2] {
                assert!(dof_count(&h, SolveMode::Hierarchical, d) < dof_count(&h, SolveMode::Full, d));
            }
        }
    }

    #[test]
    fn ladder_is_nested() {
        let ladder = SpaceLadder::new(3).unwrap();
        assert_eq!(ladder.dofs(1), 4);
        assert_eq!(ladder.prolongation(3).nrows(), 64);
        let u1 = ladder.mesh(1).interpolate(|y| y[0] + 2.0 * y[1]);
        let u3 = ladder.prolongation(1).matvec(&u1);
        let c = ladder.mesh(1).node_coords(3);
        let k = ladder.finest().node((c[0] * 8.0) as usize, (c[1] * 8.0) as usize);
        assert_eq!(u3[k], u1[3]);
    }

    #[test]
    fn depth_one_matches_full_solve() {
        let h = build_hierarchy(0.0, 1.0, 1).unwrap();
        let ladder = SpaceLadder::new(1).unwrap();
        let pb = CellProblem::N { continuum: 0, direction: 0 };
        let t = hierarchical_cell_solve(&SmoothCellModel, &h, &ladder, pb, QMeanPolicy::Strict).unwrap();
        let r = full_cell_solve(&SmoothCellModel, &h, &ladder, pb, QMeanPolicy::Strict).unwrap();
        for (a, b) in t.entries.iter().zip(&r.entries) {
            assert_eq!(a.solution, b.solution);
        }
    }

    #[test]
    fn parameter_free_coefficient_needs_no_correction() {
        let model = FnCellModel {
            k: |_: usize, y: [f64; 2], _: f64| 2.0 + (std::f64::consts::TAU * y[0]).sin() * 0.5,
            q: |_: usize, y: [f64; 2], _: [f64; 2]| (std::f64::consts::TAU * y[1]).cos(),
        };
        let h = build_hierarchy(0.0, 1.0, 3).unwrap();
        let ladder = SpaceLadder::new(3).unwrap();
        for pb in [CellProblem::N { continuum: 1, direction: 0 }, CellProblem::M { continuum: 0 }] {
            let t = hierarchical_cell_solve(&model, &h, &ladder, pb, QMeanPolicy::Strict).unwrap();
            let r = full_cell_solve(&model, &h, &ladder, pb, QMeanPolicy::Strict).unwrap();
            let rep = convergence_report(&t, &r, &ladder).unwrap();
            assert!(rep.levels.iter().all(|l| l.max_error < 1e-12), "{rep:?}");
        }
    }

    #[test]
    fn composites_satisfy_their_weak_forms() {
        let h = build_hierarchy(0.0, 1.0, 3).unwrap();
        let ladder = SpaceLadder::new(3).unwrap();
        for pb in [CellProblem::N { continuum: 0, direction: 1 }, CellProblem::M { continuum: 1 }] {
            let t = hierarchical_cell_solve(&SmoothCellModel, &h, &ladder, pb, QMeanPolicy::Strict).unwrap();
            for i in 0..t.entries.len() {
                let r = composite_residual(&SmoothCellModel, &ladder, &t, i, QMeanPolicy::Strict).unwrap();
                assert!(r <= 1e-12, "entry {i}: {r}");
            }
            let rep = convergence_report(&t, &t, &ladder).unwrap();
            assert!(rep.levels.iter().all(|l| l.max_error == 0.0));
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let h = build_hierarchy(0.0, 1.0, 2).unwrap();
        let ladder = SpaceLadder::new(3).unwrap();
        let pb = CellProblem::N { continuum: 0, direction: 0 };
        assert!(hierarchical_cell_solve(&SmoothCellModel, &h, &ladder, pb, QMeanPolicy::Strict).is_err());
        let bad = CellProblem::N { continuum: 2, direction: 0 };
        assert!(full_cell_solve(&SmoothCellModel, &h, &ladder, bad, QMeanPolicy::Strict).is_err());
    }
}
