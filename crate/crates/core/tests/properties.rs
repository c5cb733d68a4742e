//! Randomized invariants.

use dcflow::cli::relative_l2_error;
use dcflow::fem::{assemble_coupling, Assembler, Field};
use dcflow::gmsfem::{coupled_snapshots, spectral_decompose, uncoupled_snapshots};
use dcflow::hier::{build_hierarchy, dof_count, SolveMode};
use dcflow::homogenize::{effective_tensor, solve_cell_n, UnitCellMesh};
use dcflow::mesh::{build_coarse_grid, partition_of_unity, PouMode, StructuredGrid};
use dcflow::model::{format_raster, parse_raster, CoefficientModel};
use dcflow::time_picard::{mass_norm, DualDiscretization, DualPressure, PicardSolver, Space, TimeSteppingConfig};
use faer::prelude::*;
use faer::Mat;
use proptest::prelude::*;

/// High-contrast elementwise field: log-uniform values in `[1, 10^decades]`.
fn contrast_field(n: usize, decades: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..decades, n).prop_map(|v| v.into_iter().map(|e| 10f64.powf(e)).collect())
}

fn span_residual(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a[0].len();
    let am = Mat::<f64>::from_fn(n, a.len(), |i, j| a[j][i]);
    let bm = Mat::<f64>::from_fn(n, b.len(), |i, j| b[j][i]);
    let x = am.qr().solve_lstsq(&bm);
    (&am * &x - &bm).norm_l2() / bm.norm_l2()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn partition_of_unity_sums_to_one(k in contrast_field(256, 4.0), bilinear in any::<bool>()) {
        let g = StructuredGrid::unit_square(16).unwrap();
        let cg = build_coarse_grid(&g, 4).unwrap();
        let mode = if bilinear { PouMode::Bilinear } else { PouMode::Multiscale };
        let pou = partition_of_unity(&cg, &Field::Element(k), mode).unwrap();
        let s = pou.sum();
        for n in g.interior_nodes() {
            prop_assert!((s[n] - 1.0).abs() <= 1e-12, "node {n}: {}", s[n]);
        }
    }

    #[test]
    fn coupling_form_vanishes_for_equal_pressures(
        c in prop::collection::vec(0.0..1e5f64, 64),
        p in prop::collection::vec(-10.0..10.0f64, 81),
    ) {
        let g = StructuredGrid::unit_square(8).unwrap();
        let (own, cross) = assemble_coupling(&g, &Field::Element(c)).unwrap();
        let a = own.matvec(&p);
        let b = cross.matvec(&p);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x + y, 0.0);
        }
    }

    #[test]
    fn snapshots_and_spectra(k in contrast_field(256, 3.0), k2 in contrast_field(256, 2.0), which in 0usize..9) {
        let g = StructuredGrid::unit_square(16).unwrap();
        let cg = build_coarse_grid(&g, 4).unwrap();
        let nb = cg.neighborhood(cg.interior_coarse_nodes()[which]).unwrap();
        let (f1, f2) = (Field::Element(k), Field::Element(k2));
        let us = uncoupled_snapshots(&cg, &nb, &f1, 0).unwrap();
        for (m, v) in us.vectors.iter().enumerate() {
            for (q, &b) in nb.boundary_local.iter().enumerate() {
                let want = if q == m { 1.0 } else { 0.0 };
                prop_assert_eq!(v[b], want);
            }
        }
        let sub = g.subgrid(nb.window);
        let kl = f1.restrict(&g, nb.window);
        let a = Assembler::new(&sub).stiffness(&kl).unwrap();
        let s = Assembler::new(&sub).mass(&kl).unwrap();
        let spec = spectral_decompose(&us, &a, &s, 8).unwrap();
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        for (i, fi) in spec.functions.iter().enumerate() {
            let sfi = s.matvec(fi);
            for (j, fj) in spec.functions.iter().enumerate() {
                let d: f64 = fj.iter().zip(&sfi).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        let c0 = coupled_snapshots(&cg, &nb, [&f1, &f2], &Field::Constant(0.0)).unwrap();
        let u2 = uncoupled_snapshots(&cg, &nb, &f2, 1).unwrap();
        let nl = us.vectors[0].len();
        let stacked: Vec<Vec<f64>> = us
            .vectors
            .iter()
            .map(|v| [v.as_slice(), &vec![0.0; nl]].concat())
            .chain(u2.vectors.iter().map(|v| [&vec![0.0; nl], v.as_slice()].concat()))
            .collect();
        prop_assert!(span_residual(&c0.vectors, &stacked) <= 1e-8);
        prop_assert!(span_residual(&stacked, &c0.vectors) <= 1e-8);
    }

    #[test]
    fn pure_diffusion_is_dissipative(
        a1 in contrast_field(64, 3.0),
        a2 in contrast_field(64, 1.0),
        init in prop::collection::vec(-1.0..1.0f64, 2 * 81),
        transfer in 0.0..1e3f64,
    ) {
        let g = StructuredGrid::unit_square(8).unwrap();
        let disc = DualDiscretization::new(&g).unwrap();
        let mut model = CoefficientModel::with_fields(a1, a2);
        model.convection = 0.0;
        model.source = [0.0, 0.0];
        model.transfer = transfer;
        model.nonlinear_transfer = false;
        let mut state = DualPressure::zeros(&g);
        for i in 0..2 {
            for k in g.interior_nodes() {
                state.p[i][k] = init[i * 81 + k];
            }
        }
        let cfg = TimeSteppingConfig { t_final: 0.05, tau: 0.01, ..Default::default() };
        let mut solver = PicardSolver::new(&disc, &model, &Space::Fine, cfg).unwrap();
        let energy = |s: &DualPressure| mass_norm(&disc.mass, &s.p[0]).powi(2) + mass_norm(&disc.mass, &s.p[1]).powi(2);
        let mut prev = energy(&state);
        for step in 1..=5 {
            state = solver.step(&state, step).unwrap().0;
            let e = energy(&state);
            prop_assert!(e <= prev * (1.0 + 1e-12), "step {step}: {e} > {prev}");
            prev = e;
        }
    }

    /// Effective conductivity of an element-aligned field lies between the
    /// harmonic and arithmetic means.
    #[test]
    fn effective_tensor_is_bracketed(k in contrast_field(64, 2.0)) {
        let mesh = UnitCellMesh::new(3).unwrap();
        let kf = |y: [f64; 2]| {
            let i = ((y[0] * 8.0) as usize).min(7);
            let j = ((y[1] * 8.0) as usize).min(7);
            k[j * 8 + i]
        };
        let n1 = solve_cell_n(&mesh, kf, 0).unwrap();
        let n2 = solve_cell_n(&mesh, kf, 1).unwrap();
        let t = effective_tensor(&mesh, kf, [&n1, &n2]);
        let arith = k.iter().sum::<f64>() / 64.0;
        let harm = 64.0 / k.iter().map(|v| 1.0 / v).sum::<f64>();
        for ev in t.eigenvalues() {
            prop_assert!(ev >= harm * (1.0 - 1e-9) && ev <= arith * (1.0 + 1e-9), "{ev} not in [{harm}, {arith}]");
        }
        prop_assert!(t.asymmetry < 1e-9);
    }

    #[test]
    fn hierarchy_partition_density_and_dofs(a in -5.0..5.0f64, w in 0.1..10.0f64, depth in 1usize..=6) {
        let b = a + w;
        let h = build_hierarchy(a, b, depth).unwrap();
        let u = h.union_1d();
        prop_assert_eq!(u.len(), (1 << depth) + 1);
        prop_assert!(u.windows(2).all(|p| p[0] < p[1]));
        for dim in [1, 2] {
            for (l, p) in h.points(dim) {
                if l == 1 { continue; }
                let anc = h.ancestor(l, &p).unwrap();
                let d = anc.iter().zip(&p).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d <= 2f64.sqrt() * 0.5f64.powi(l as i32 - 1) * w * (1.0 + 1e-12));
            }
            let (hd, fd) = (dof_count(&h, SolveMode::Hierarchical, dim), dof_count(&h, SolveMode::Full, dim));
            if depth >= 2 { prop_assert!(hd < fd); } else { prop_assert_eq!(hd, fd); }
        }
    }

    #[test]
    fn relative_error_scales(s in -0.5..0.5f64, v in prop::collection::vec(-1.0..1.0f64, 25)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let g = StructuredGrid::unit_square(4).unwrap();
        let disc = DualDiscretization::new(&g).unwrap();
        let r = [v.clone(), v.iter().map(|x| -x).collect::<Vec<_>>()];
        let m = [r[0].iter().map(|x| (1.0 + s) * x).collect(), r[1].iter().map(|x| (1.0 + s) * x).collect()];
        for e in relative_l2_error(&disc.mass, &m, &r).unwrap() {
            prop_assert!((e - 100.0 * s.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn raster_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 12)) {
        let (nx, ny, back) = parse_raster(&format_raster(4, 3, &v)).unwrap();
        prop_assert_eq!((nx, ny), (4, 3));
        prop_assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
