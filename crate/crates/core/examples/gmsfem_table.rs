use dcflow::gmsfem::{BasisMode, GmsfemConfig, OfflineBasis};
use dcflow::mesh::{build_coarse_grid, StructuredGrid};
use dcflow::model::CoefficientModel;
use dcflow::time_picard::{mass_norm, run_simulation, DualDiscretization, Space, TimeSteppingConfig};

fn main() -> dcflow::Result<()> {
    let n = 128;
    let grid = StructuredGrid::unit_square(n)?;
    let cg = build_coarse_grid(&grid, 16)?;
    let model = CoefficientModel::test_problem(n)?;
    let disc = DualDiscretization::new(&grid)?;
    let cfg = TimeSteppingConfig::default();
    let t0 = std::time::Instant::now();
    let (fine, _) = run_simulation(&disc, &model, &Space::Fine, &cfg)?;
    println!("fine {:.1}s", t0.elapsed().as_secs_f64());
    for mode in [BasisMode::Coupled, BasisMode::Uncoupled] {
        let t0 = std::time::Instant::now();
        let gcfg = GmsfemConfig { mode, ..Default::default() };
        let basis = OfflineBasis::build(&cg, &model, None, &gcfg, 20)?;
        println!("{mode} offline {:.1}s", t0.elapsed().as_secs_f64());
        for dim in [900, 1800, 2700, 3600, 4500] {
            let t0 = std::time::Instant::now();
            let per = basis.per_node_for_dim(dim)?;
            let ms = basis.space(per)?;
            let space = Space::projected(ms.r.clone());
            let (st, tr) = run_simulation(&disc, &model, &space, &cfg)?;
            let its: usize = tr.iter().map(|t| t.iterations).sum();
            let e: Vec<f64> = (0..2)
                .map(|i| {
                    let d: Vec<f64> = st.p[i].iter().zip(&fine.p[i]).map(|(a, b)| a - b).collect();
                    100.0 * mass_norm(&disc.mass, &d) / mass_norm(&disc.mass, &fine.p[i])
                })
                .collect();
            println!(
                "{mode} dim {dim} (cols {}, dropped {}) err {:.4}% {:.4}%  its {its}  {:.1}s",
                ms.dim,
                ms.dropped.len(),
                e[0],
                e[1],
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
