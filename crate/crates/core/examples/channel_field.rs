//! The shipped channelized conductivity layout, written as raster text and
//! structured-points files for a viewer.

use std::path::PathBuf;

use dcflow::cli::{export_field, FieldFormat};
use dcflow::mesh::StructuredGrid;
use dcflow::model::{channel_fraction, channelized_field, ChannelFieldSpec};

fn main() -> dcflow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/fields".into()));
    std::fs::create_dir_all(&out)?;
    let n = 128;
    let grid = StructuredGrid::unit_square(n)?;
    for (name, spec) in [
        ("fracture", ChannelFieldSpec::default_fracture(n)),
        ("matrix", ChannelFieldSpec::default_matrix(n)),
    ] {
        let a = channelized_field(&spec)?;
        println!(
            "{name}: background {} channel {} ({} strips, {:.1}% of elements)",
            spec.background,
            spec.channel,
            spec.channels.len(),
            100.0 * channel_fraction(&a, spec.channel)
        );
        for fmt in [FieldFormat::RasterText, FieldFormat::StructuredPoints] {
            let path = out.join(format!("{name}.{}", fmt.extension()));
            export_field(&grid, name, &a, &path, fmt)?;
            println!("  wrote {}", path.display());
        }
    }
    // Coarse picture of the layout: '#' marks channel elements.
    let a = channelized_field(&ChannelFieldSpec::default_fracture(n))?;
    for j in (0..n).rev().step_by(4) {
        let row: String = (0..n).step_by(2).map(|i| if a[j * n + i] > 10.0 { '#' } else { '.' }).collect();
        println!("{row}");
    }
    Ok(())
}
