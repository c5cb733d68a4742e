//! Backward-Euler time stepping with Picard linearization over the fine
//! space or any projected subspace.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::solve::{dot, norm2};
use crate::fem::{Assembler, CsrMatrix, Field, SparseLu};
use crate::mesh::StructuredGrid;
use crate::model::{eval_coefficients, CoefficientModel};

/// Nodal pressure heads of both continua at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPressure {
    pub p: [Vec<f64>; 2],
    pub t: f64,
}

impl DualPressure {
    pub fn zeros(grid: &StructuredGrid) -> Self {
        Self {
            p: [vec![0.0; grid.n_nodes()], vec![0.0; grid.n_nodes()]],
            t: 0.0,
        }
    }

    /// Stacked dual vector `[p₁; p₂]`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.p[0].clone();
        v.extend_from_slice(&self.p[1]);
        v
    }

    pub fn from_stacked(v: &[f64], t: f64) -> Self {
        let n = v.len() / 2;
        Self {
            p: [v[..n].to_vec(), v[n..].to_vec()],
            t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// The converged solution of the previous step.
    #[default]
    Previous,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSteppingConfig {
    pub t_final: f64,
    pub tau: f64,
    pub delta0: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub initial_guess: InitialGuess,
}

impl Default for TimeSteppingConfig {
    fn default() -> Self {
        Self {
            t_final: 2.0,
            tau: 0.1,
            delta0: 1e-5,
            max_iterations: 50,
            initial_guess: InitialGuess::Previous,
        }
    }
}

impl TimeSteppingConfig {
    /// Number of steps `S` with `T = S τ`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.tau > 0.0) || !(self.t_final > 0.0) || !(self.delta0 > 0.0) || self.max_iterations == 0 {
            return Err(Error::invalid("time stepping needs T > 0, tau > 0, delta0 > 0 and max_iterations >= 1"));
        }
        let s = (self.t_final / self.tau).round();
        if (s * self.tau - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::invalid(format!(
                "T = {} is not an integer multiple of tau = {}",
                self.t_final, self.tau
            )));
        }
        Ok(s as usize)
    }
}

/// Record of one time step's Picard loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub step: usize,
    /// Number of linear solves `α` until the stopping rule passed.
    pub iterations: usize,
    /// Relative successive differences per continuum, one entry per iterate.
    pub differences: [Vec<f64>; 2],
    /// Relative residual of the nonlinear discrete system at the accepted iterate.
    pub residual: f64,
    pub wall_seconds: f64,
}

/// `‖new − old‖ / ‖old‖`, with `0/0 = 0` and `x/0 = ∞` for `x > 0`.
pub fn relative_difference(new: &[f64], old: &[f64]) -> f64 {
    let d = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let o = norm2(old);
    if o == 0.0 {
        if norm2(new) == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d / o
    }
}

/// True iff the relative successive difference is at most `delta0` for both
/// continua. A zero previous iterate passes only if the new one is zero too.
pub fn stopping_check(new: &[Vec<f64>; 2], old: &[Vec<f64>; 2], delta0: f64) -> bool {
    (0..2).all(|i| relative_difference(&new[i], &old[i]) <= delta0)
}

/// The space the linear systems are solved in.
pub enum Space {
    Fine,
    /// Galerkin projection through `R`, mapping coarse unknowns to stacked
    /// fine nodal values. Rows of Dirichlet nodes must be zero.
    Projected { r: CsrMatrix, rt: CsrMatrix },
}

impl Space {
    pub fn projected(r: CsrMatrix) -> Self {
        let rt = r.transpose();
        Space::Projected { r, rt }
    }

    pub fn dim(&self, grid: &StructuredGrid) -> usize {
        match self {
            Space::Fine => 2 * grid.n_interior_nodes(),
            Space::Projected { r, .. } => r.ncols(),
        }
    }
}

/// Fixed discretization data of the dual system on one grid.
pub struct DualDiscretization {
    pub grid: StructuredGrid,
    pub asm: Assembler,
    pub mass: CsrMatrix,
    /// Dirichlet flags over stacked dual DOFs.
    pub mask: Vec<bool>,
}

impl DualDiscretization {
    pub fn new(grid: &StructuredGrid) -> Result<Self> {
        let asm = Assembler::new(grid);
        let mass = asm.mass(&Field::Constant(1.0))?;
        let mut mask = grid.boundary_mask();
        mask.extend(grid.boundary_mask());
        Ok(Self {
            grid: grid.clone(),
            asm,
            mass,
            mask,
        })
    }

    /// Linearized block system with coefficients frozen at `iterate`:
    /// `A_ii = M/τ + K(κ_i) + C(b_ii) + M(c_i)`, `A_ij = C(b_ij) − M(c_i)`,
    /// `rhs_i = M p_s,i/τ + F_i`. No boundary conditions are applied.
    pub fn linear_system(
        &self,
        model: &CoefficientModel,
        previous: &DualPressure,
        iterate: &[Vec<f64>; 2],
        tau: f64,
    ) -> Result<(CsrMatrix, Vec<f64>)> {
        let fc = eval_coefficients(model, &self.grid, &iterate[0], &iterate[1])?;
        let mut blocks: Vec<Vec<CsrMatrix>> = Vec::with_capacity(2);
        for i in 0..2 {
            let k = self.asm.stiffness(&fc.kappa[i])?;
            let mc = self.asm.mass(&fc.c[i])?;
            let mut row = Vec::with_capacity(2);
            for j in 0..2 {
                let conv = self.asm.convection(&fc.b[i][j])?;
                let m = if i == j {
                    self.mass
                        .add_scaled(1.0 / tau, &k, 1.0)
                        .add_scaled(1.0, &conv, 1.0)
                        .add_scaled(1.0, &mc, 1.0)
                } else {
                    conv.add_scaled(1.0, &mc, -1.0)
                };
                row.push(m);
            }
            blocks.push(row);
        }
        let a = CsrMatrix::block2([[&blocks[0][0], &blocks[0][1]], [&blocks[1][0], &blocks[1][1]]]);
        let mut rhs = Vec::with_capacity(2 * self.grid.n_nodes());
        for i in 0..2 {
            let mp = self.mass.matvec(&previous.p[i]);
            let f = self.asm.load(&fc.f[i])?;
            rhs.extend(mp.iter().zip(&f).map(|(m, f)| m / tau + f));
        }
        Ok((a, rhs))
    }

    /// Relative residual of the nonlinear discrete system at `p`, measured in
    /// the space's test functions.
    pub fn nonlinear_residual(
        &self,
        model: &CoefficientModel,
        previous: &DualPressure,
        p: &[Vec<f64>; 2],
        tau: f64,
        space: &Space,
    ) -> Result<f64> {
        let (a, rhs) = self.linear_system(model, previous, p, tau)?;
        let mut x = p[0].clone();
        x.extend_from_slice(&p[1]);
        let ax = a.matvec(&x);
        let mut r: Vec<f64> = ax.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let mut b = rhs;
        match space {
            Space::Fine => {
                for (k, m) in self.mask.iter().enumerate() {
                    if *m {
                        r[k] = 0.0;
                        b[k] = 0.0;
                    }
                }
            }
            Space::Projected { rt, .. } => {
                r = rt.matvec(&r);
                b = rt.matvec(&b);
            }
        }
        let bn = norm2(&b);
        Ok(if bn == 0.0 { norm2(&r) } else { norm2(&r) / bn })
    }
}

/// Stateful stepper that keeps symbolic factorizations between solves.
pub struct PicardSolver<'a> {
    pub disc: &'a DualDiscretization,
    pub model: &'a CoefficientModel,
    pub space: &'a Space,
    pub cfg: TimeSteppingConfig,
    lu: SparseLu,
}

impl<'a> PicardSolver<'a> {
    pub fn new(
        disc: &'a DualDiscretization,
        model: &'a CoefficientModel,
        space: &'a Space,
        cfg: TimeSteppingConfig,
    ) -> Result<Self> {
        cfg.steps()?;
        model.validate(&disc.grid)?;
        if let Space::Projected { r, .. } = space {
            if r.nrows() != disc.mask.len() {
                return Err(Error::invalid("projection rows do not match the dual fine space"));
            }
        }
        Ok(Self {
            disc,
            model,
            space,
            cfg,
            lu: SparseLu::new(),
        })
    }

    fn solve_linear(&mut self, a: CsrMatrix, rhs: Vec<f64>) -> Result<Vec<f64>> {
        match self.space {
            Space::Fine => {
                let mut a = a;
                let mut rhs = rhs;
                a.apply_dirichlet(&self.disc.mask);
                for (k, m) in self.disc.mask.iter().enumerate() {
                    if *m {
                        rhs[k] = 0.0;
                    }
                }
                self.lu.factor(&a)?;
                self.lu.solve(&rhs)
            }
            Space::Projected { r, rt } => {
                let ac = rt.matmul(&a.matmul(r));
                let bc = rt.matvec(&rhs);
                self.lu.factor(&ac)?;
                let uc = self.lu.solve(&bc)?;
                Ok(r.matvec(&uc))
            }
        }
    }

    /// One backward-Euler step from `state` with step index `step`.
    pub fn step(&mut self, state: &DualPressure, step: usize) -> Result<(DualPressure, PicardTrace)> {
        let start = Instant::now();
        let tau = self.cfg.tau;
        let mut iterate = match self.cfg.initial_guess {
            InitialGuess::Previous => state.p.clone(),
            InitialGuess::Zero => [vec![0.0; state.p[0].len()], vec![0.0; state.p[1].len()]],
        };
        let mut trace = PicardTrace {
            step,
            ..Default::default()
        };
        let n = self.disc.grid.n_nodes();
        for it in 1..=self.cfg.max_iterations {
            let (a, rhs) = self.disc.linear_system(self.model, state, &iterate, tau)?;
            let x = self.solve_linear(a, rhs)?;
            let next = [x[..n].to_vec(), x[n..].to_vec()];
            for i in 0..2 {
                trace.differences[i].push(relative_difference(&next[i], &iterate[i]));
            }
            let done = stopping_check(&next, &iterate, self.cfg.delta0);
            iterate = next;
            trace.iterations = it;
            if done {
                trace.residual = self.disc.nonlinear_residual(self.model, state, &iterate, tau, self.space)?;
                trace.wall_seconds = start.elapsed().as_secs_f64();
                debug!(
                    "step {step}: {it} Picard iterations, residual {:.3e}",
                    trace.residual
                );
                return Ok((
                    DualPressure {
                        p: iterate,
                        t: state.t + tau,
                    },
                    trace,
                ));
            }
        }
        trace.wall_seconds = start.elapsed().as_secs_f64();
        Err(Error::NonConvergence {
            step,
            max_iterations: self.cfg.max_iterations,
            trace: Box::new(trace),
        })
    }

    /// All `S` steps from `initial`; each accepted iterate seeds the next step.
    pub fn run(&mut self, initial: &DualPressure) -> Result<(DualPressure, Vec<PicardTrace>)> {
        let steps = self.cfg.steps()?;
        let mut state = initial.clone();
        let mut traces = Vec::with_capacity(steps);
        for s in 1..=steps {
            let (next, tr) = self.step(&state, s)?;
            state = next;
            traces.push(tr);
        }
        Ok((state, traces))
    }
}

/// Single Picard step; see [`PicardSolver::step`].
pub fn picard_step(
    disc: &DualDiscretization,
    model: &CoefficientModel,
    space: &Space,
    cfg: &TimeSteppingConfig,
    state: &DualPressure,
) -> Result<(DualPressure, PicardTrace)> {
    PicardSolver::new(disc, model, space, cfg.clone())?.step(state, 1)
}

/// Full simulation from zero initial data.
pub fn run_simulation(
    disc: &DualDiscretization,
    model: &CoefficientModel,
    space: &Space,
    cfg: &TimeSteppingConfig,
) -> Result<(DualPressure, Vec<PicardTrace>)> {
    PicardSolver::new(disc, model, space, cfg.clone())?.run(&DualPressure::zeros(&disc.grid))
}

/// Contraction factor estimated from a step trace: geometric mean of the
/// last (at most three) successive-difference ratios. A zero difference
/// gives `λ = 0`.
pub fn contraction_from_trace(trace: &PicardTrace) -> Result<f64> {
    let d: Vec<f64> = (0..trace.iterations)
        .map(|k| trace.differences[0][k].max(trace.differences[1][k]))
        .collect();
    if d.contains(&0.0) {
        return Ok(0.0);
    }
    if d.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} Picard iterations; at least 3 are needed for a contraction estimate",
            d.len()
        )));
    }
    let ratios: Vec<f64> = d
        .windows(2)
        .filter(|w| w[0].is_finite() && w[0] > NOISE_FLOOR && w[1] > NOISE_FLOOR)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return Err(Error::InsufficientData("no usable difference ratios".into()));
    }
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    Ok((tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp())
}

/// Relative differences below this are dominated by linear-solver error
/// (solves are accepted at relative residual 1e-10), so ratios involving
/// them say nothing about the contraction.
const NOISE_FLOOR: f64 = 1e-10;

/// Estimated Picard contraction factor of the first time step for each `τ`.
pub fn contraction_estimate(
    disc: &DualDiscretization,
    model: &CoefficientModel,
    space: &Space,
    cfg: &TimeSteppingConfig,
    taus: &[f64],
) -> Result<Vec<f64>> {
    taus.iter()
        .map(|&tau| {
            let c = TimeSteppingConfig {
                tau,
                t_final: tau,
                ..cfg.clone()
            };
            let (_, tr) = picard_step(disc, model, space, &c, &DualPressure::zeros(&disc.grid))?;
            contraction_from_trace(&tr)
        })
        .collect()
}

/// Discrete `L²` norm of a nodal field through the mass matrix.
pub fn mass_norm(mass: &CsrMatrix, u: &[f64]) -> f64 {
    dot(u, &mass.matvec(u)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule_cases() {
        let a = [vec![1.0, 2.0], vec![3.0, 0.0]];
        assert!(stopping_check(&a, &a, 1e-5));
        let b = [vec![1.0, 2.0], vec![3.0 * (1.0 + 2e-5), 0.0]];
        assert!(!stopping_check(&b, &a, 1e-5));
        let z = [vec![0.0; 2], vec![0.0; 2]];
        assert!(stopping_check(&z, &z, 1e-5));
        assert!(!stopping_check(&a, &z, 1e-5));
    }

    #[test]
    fn steps_must_divide() {
        let c = TimeSteppingConfig::default();
        assert_eq!(c.steps().unwrap(), 20);
        let bad = TimeSteppingConfig { tau: 0.3, ..c };
        assert!(bad.steps().is_err());
    }

    #[test]
    fn contraction_needs_three_iterations() {
        let t = PicardTrace {
            iterations: 2,
            differences: [vec![f64::INFINITY, 1e-3], vec![f64::INFINITY, 1e-3]],
            ..Default::default()
        };
        assert!(matches!(contraction_from_trace(&t), Err(Error::InsufficientData(_))));
        let t = PicardTrace {
            iterations: 4,
            differences: [vec![f64::INFINITY, 1e-1, 1e-2, 1e-3], vec![f64::INFINITY, 1e-2, 1e-3, 1e-4]],
            ..Default::default()
        };
        assert!((contraction_from_trace(&t).unwrap() - 0.1).abs() < 1e-12);
    }
}
