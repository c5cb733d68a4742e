//! Picard iteration on the channelized test problem: iteration counts, the
//! successive differences of the first step and the estimated contraction
//! factor as the time step shrinks.

use dcflow::mesh::StructuredGrid;
use dcflow::model::CoefficientModel;
use dcflow::time_picard::{contraction_estimate, picard_step, DualDiscretization, DualPressure, Space, TimeSteppingConfig};

fn main() -> dcflow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(64, |s| s.parse().expect("grid size"));
    let grid = StructuredGrid::unit_square(n)?;
    let model = CoefficientModel::test_problem(n)?;
    let disc = DualDiscretization::new(&grid)?;
    let cfg = TimeSteppingConfig {
        delta0: 1e-10,
        ..Default::default()
    };
    let (_, tr) = picard_step(&disc, &model, &Space::Fine, &cfg, &DualPressure::zeros(&grid))?;
    println!("first step, tau = {}: {} iterations", cfg.tau, tr.iterations);
    for k in 0..tr.iterations {
        println!("  {k:2}  {:.3e}  {:.3e}", tr.differences[0][k], tr.differences[1][k]);
    }
    let taus = [0.1, 0.05, 0.025];
    let lambda = contraction_estimate(&disc, &model, &Space::Fine, &cfg, &taus)?;
    for (t, l) in taus.iter().zip(&lambda) {
        println!("tau {t:<6} lambda {l:.4}");
    }
    Ok(())
}
