use dcflow::mesh::StructuredGrid;
use dcflow::model::CoefficientModel;
use dcflow::time_picard::{run_simulation, DualDiscretization, Space, TimeSteppingConfig};

fn main() -> dcflow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(128, |s| s.parse().unwrap());
    let grid = StructuredGrid::unit_square(n)?;
    let model = CoefficientModel::test_problem(n)?;
    let disc = DualDiscretization::new(&grid)?;
    let cfg = TimeSteppingConfig::default();
    let t0 = std::time::Instant::now();
    let (state, traces) = run_simulation(&disc, &model, &Space::Fine, &cfg)?;
    for tr in &traces {
        println!(
            "step {:2}  iterations {:2}  residual {:.2e}  {:.2}s",
            tr.step, tr.iterations, tr.residual, tr.wall_seconds
        );
    }
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("max p1 {:.6}  max p2 {:.6}", max(&state.p[0]), max(&state.p[1]));
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
