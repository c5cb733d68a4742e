//! Hierarchical versus full cell solves over dyadic pressure macrogrids.
//!
//! For depths 3, 4, 5 every macro point is solved both ways; the table lists
//! the per-level max gradient error, the fitted constant in
//! `err(l) ≤ C·l·2^{−L}` and the cell unknowns each approach needs.

use dcflow::hier::{benchmark, CellProblem};
use dcflow::homogenize::QMeanPolicy;
use dcflow::model::SmoothCellModel;

fn main() -> dcflow::Result<()> {
    let problems = [
        ("N^1_1", CellProblem::N { continuum: 0, direction: 0 }),
        ("M_1", CellProblem::M { continuum: 0 }),
    ];
    for (name, problem) in problems {
        println!("{name}");
        println!("{:>3} {:>3} {:>6} {:>6} {:>12} {:>9} {:>9} {:>8} {:>7} {:>7}", "L", "l", "points", "dofs", "max err", "hier dof", "full dof", "C", "t hier", "t full");
        let rows = benchmark(&SmoothCellModel, 0.0, 1.0, &[3, 4, 5], problem, QMeanPolicy::Strict)?;
        for r in rows {
            println!(
                "{:>3} {:>3} {:>6} {:>6} {:>12.4e} {:>9} {:>9} {:>8.4} {:>7.2} {:>7.2}",
                r.depth, r.level, r.points, r.space_dofs, r.max_error, r.hierarchical_dofs, r.full_dofs, r.fitted_c,
                r.hierarchical_seconds, r.full_seconds
            );
        }
    }
    Ok(())
}
