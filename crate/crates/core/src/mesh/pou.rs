use crate::error::{Error, Result};
use crate::fem::{solve_dirichlet, Assembler, Field};
use crate::mesh::{perimeter_ccw, CoarseGrid, ElementWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PouMode {
    /// κ-harmonic on each coarse element with linear edge data.
    Multiscale,
    /// Standard bilinear hat functions.
    Bilinear,
}

/// Partition-of-unity functions `χ_l` of one continuum, one per coarse node,
/// each stored on the fine nodes of its neighborhood window.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    pub mode: PouMode,
    grid: CoarseGrid,
    windows: Vec<ElementWindow>,
    values: Vec<Vec<f64>>,
}

impl PartitionOfUnity {
    pub fn n_functions(&self) -> usize {
        self.values.len()
    }

    pub fn window(&self, l: usize) -> ElementWindow {
        self.windows[l]
    }

    /// Nodal values of `χ_l` over its window, row-major.
    pub fn patch(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    /// `χ_l` as a full fine nodal vector.
    pub fn global(&self, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.fine.n_nodes()];
        for (k, n) in self.grid.fine.window_nodes(self.windows[l]).into_iter().enumerate() {
            out[n] = self.values[l][k];
        }
        out
    }

    /// `Σ_l χ_l` at every fine node.
    pub fn sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.fine.n_nodes()];
        for l in 0..self.values.len() {
            for (k, n) in self.grid.fine.window_nodes(self.windows[l]).into_iter().enumerate() {
                out[n] += self.values[l][k];
            }
        }
        out
    }

    /// `Σ_l |∇χ_l|²` at every quadrature point of `asm` (which must live on
    /// the fine grid), indexed `e * asm.n_qp() + q`.
    pub fn gradient_energy_density(&self, asm: &Assembler) -> Vec<f64> {
        let fine = &self.grid.fine;
        assert_eq!(asm.grid(), fine, "assembler must be on the fine grid");
        let nq = asm.n_qp();
        let mut out = vec![0.0; fine.n_elements() * nq];
        for e in 0..fine.n_elements() {
            let ce = self.grid.coarse_of_fine_element(e);
            let (fi, fj) = fine.element_ij(e);
            for l in self.grid.coarse.element_nodes(ce) {
                let w = self.windows[l];
                let (li, lj) = (fi - w.i0, fj - w.j0);
                let stride = w.nx + 1;
                let base = lj * stride + li;
                let loc = [base, base + 1, base + 1 + stride, base + stride];
                let v = &self.values[l];
                for q in 0..nq {
                    let g = asm.dphi(q);
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for a in 0..4 {
                        gx += v[loc[a]] * g[a][0];
                        gy += v[loc[a]] * g[a][1];
                    }
                    out[e * nq + q] += gx * gx + gy * gy;
                }
            }
        }
        out
    }
}

/// Builds the partition of unity for conductivity `kappa` on the fine grid
/// of `cg`. Local problems are independent per coarse element.
pub fn partition_of_unity(cg: &CoarseGrid, kappa: &Field, mode: PouMode) -> Result<PartitionOfUnity> {
    let fine = &cg.fine;
    kappa.check(fine)?;
    let (lo, _) = kappa.bounds();
    if !(lo > 0.0) {
        return Err(Error::invalid(format!(
            "partition of unity needs positive conductivity, min {lo}"
        )));
    }
    let nodes = cg.coarse.n_nodes();
    let mut windows = Vec::with_capacity(nodes);
    let mut values = Vec::with_capacity(nodes);
    for l in 0..nodes {
        let nb = cg.neighborhood(l)?;
        windows.push(nb.window);
        values.push(vec![0.0; nb.fine_nodes.len()]);
    }
    let (rx, ry) = (cg.rx, cg.ry);
    let hat = |corner: usize, i: usize, j: usize| {
        let s = i as f64 / rx as f64;
        let t = j as f64 / ry as f64;
        match corner {
            0 => (1.0 - s) * (1.0 - t),
            1 => s * (1.0 - t),
            2 => s * t,
            _ => (1.0 - s) * t,
        }
    };
    let bilinear = |c: usize| {
        let mut v = Vec::with_capacity((rx + 1) * (ry + 1));
        for j in 0..=ry {
            for i in 0..=rx {
                v.push(hat(c, i, j));
            }
        }
        v
    };
    let mut mask = vec![false; (rx + 1) * (ry + 1)];
    for b in perimeter_ccw(rx, ry) {
        mask[b] = true;
    }
    for ce in 0..cg.coarse.n_elements() {
        let locals: Vec<Vec<f64>> = match mode {
            PouMode::Bilinear => (0..4).map(bilinear).collect(),
            PouMode::Multiscale => {
                let w = cg.fine_window_of(ce);
                let sub = fine.subgrid(w);
                let k = Assembler::new(&sub).stiffness(&kappa.restrict(fine, w))?;
                let data: Vec<Vec<f64>> = (0..4)
                    .map(|c| {
                        bilinear(c)
                            .iter()
                            .zip(&mask)
                            .map(|(x, m)| if *m { *x } else { 0.0 })
                            .collect()
                    })
                    .collect();
                solve_dirichlet(&k, &mask, &data)?
            }
        };
        let (ci, cj) = cg.coarse.element_ij(ce);
        for (c, l) in cg.coarse.element_nodes(ce).into_iter().enumerate() {
            let w = windows[l];
            let stride = w.nx + 1;
            for j in 0..=ry {
                for i in 0..=rx {
                    let gi = ci * rx + i - w.i0;
                    let gj = cj * ry + j - w.j0;
                    values[l][gj * stride + gi] = locals[c][j * (rx + 1) + i];
                }
            }
        }
    }
    Ok(PartitionOfUnity {
        mode,
        grid: cg.clone(),
        windows,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_coarse_grid, StructuredGrid};

    fn layered(g: &StructuredGrid) -> Field {
        Field::Element(
            (0..g.n_elements())
                .map(|e| {
                    let (i, j) = g.element_ij(e);
                    if (i / 3 + j) % 5 == 0 { 1e4 } else { 1.0 + 0.1 * i as f64 }
                })
                .collect(),
        )
    }

    #[test]
    fn constant_conductivity_gives_bilinear_hats() {
        let f = StructuredGrid::unit_square(16).unwrap();
        let cg = build_coarse_grid(&f, 4).unwrap();
        let ms = partition_of_unity(&cg, &Field::Constant(3.0), PouMode::Multiscale).unwrap();
        let bl = partition_of_unity(&cg, &Field::Constant(3.0), PouMode::Bilinear).unwrap();
        for l in 0..ms.n_functions() {
            for (a, b) in ms.patch(l).iter().zip(bl.patch(l)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sums_to_one_and_bounded() {
        let f = StructuredGrid::unit_square(24).unwrap();
        let cg = build_coarse_grid(&f, 3).unwrap();
        let pou = partition_of_unity(&cg, &layered(&f), PouMode::Multiscale).unwrap();
        for (n, s) in pou.sum().iter().enumerate() {
            if !f.is_boundary_node(n) {
                assert!((s - 1.0).abs() < 1e-12, "node {n}: {s}");
            }
        }
        for l in 0..pou.n_functions() {
            assert!(pou.patch(l).iter().all(|v| *v >= -1e-12 && *v <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let f = StructuredGrid::unit_square(4).unwrap();
        let cg = build_coarse_grid(&f, 2).unwrap();
        assert!(partition_of_unity(&cg, &Field::Constant(0.0), PouMode::Multiscale).is_err());
    }
}
