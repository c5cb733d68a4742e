//! Periodic cell problems and the homogenized coefficients they define.
//!
//! Prints the effective conductivity of a two-phase laminate next to its
//! harmonic/arithmetic closed forms, then the full coefficient table of a
//! smooth pressure-dependent cell model at a few macro points.

use dcflow::homogenize::{
    effective_table, effective_tensor, format_effective_table, solve_cell_n, QMeanPolicy, UnitCellMesh,
};
use dcflow::model::SmoothCellModel;

fn main() -> dcflow::Result<()> {
    let mesh = UnitCellMesh::new(7)?;
    let k = |y: [f64; 2]| if y[0] < 0.5 { 1.0 } else { 4.0 };
    let n1 = solve_cell_n(&mesh, k, 0)?;
    let n2 = solve_cell_n(&mesh, k, 1)?;
    let t = effective_tensor(&mesh, k, [&n1, &n2]);
    println!("laminate k in {{1, 4}} on a {0}x{0} cell mesh", mesh.n());
    println!("  K*_11 = {:.6}  (harmonic mean 1.6)", t.k[0][0]);
    println!("  K*_22 = {:.6}  (arithmetic mean 2.5)", t.k[1][1]);
    println!("  K*_12 = {:.2e}, asymmetry {:.2e}", t.k[0][1], t.asymmetry);

    let mesh = UnitCellMesh::new(6)?;
    let points = [[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]];
    let rows = effective_table(&mesh, &SmoothCellModel, &points, QMeanPolicy::Strict)?;
    println!("\nsmooth cell model, level {}", mesh.level());
    print!("{}", format_effective_table(&rows));
    Ok(())
}
