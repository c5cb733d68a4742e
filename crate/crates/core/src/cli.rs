//! Experiment runner behind the command-line tool: configuration, error
//! reports, field export and one driver per subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::CsrMatrix;
use crate::gmsfem::{BasisMode, GmsfemConfig, OfflineBasis};
use crate::hier::{benchmark, BenchmarkRow, CellProblem};
use crate::homogenize::{effective_table, format_effective_table, EffectiveCoefficients, QMeanPolicy, UnitCellMesh};
use crate::mesh::{build_coarse_grid, Rect, StructuredGrid};
use crate::model::{
    channelized_field, default_channels, format_raster, read_raster, CellModel, ChannelFieldSpec, CoefficientModel,
    ShapeFactorTransfer, SmoothCellModel,
};
use crate::time_picard::{mass_norm, run_simulation, DualDiscretization, DualPressure, Space, TimeSteppingConfig};

/// Which space the dual system is solved in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Fine,
    Uncoupled,
    Coupled,
}

impl SolverMode {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMode::Fine => "fine",
            SolverMode::Uncoupled => "uncoupled",
            SolverMode::Coupled => "coupled",
        }
    }
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(SolverMode::Fine),
            "uncoupled" => Ok(SolverMode::Uncoupled),
            "coupled" => Ok(SolverMode::Coupled),
            _ => Err(Error::invalid(format!("unknown mode {s:?}; expected fine, uncoupled or coupled"))),
        }
    }
}

/// Parses a comma-separated list of dimensions such as `900,1800`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("dimension {t:?}: {e}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Fine elements per side.
    pub fine: usize,
    /// Coarse elements per side.
    pub coarse: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { fine: 128, coarse: 16 }
    }
}

/// Conductivity factor of one continuum: a raster file, or a channel
/// layout (the shipped one when `channels` is absent).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub raster: Option<PathBuf>,
    pub background: Option<f64>,
    pub channel: Option<f64>,
    pub channels: Option<Vec<Rect>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fracture: FieldConfig,
    pub matrix: FieldConfig,
    pub convection: f64,
    pub transfer: f64,
    /// Pressure-dependent conductivity and transfer.
    pub nonlinear: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fracture: FieldConfig::default(),
            matrix: FieldConfig::default(),
            convection: 30.0,
            transfer: 1e5,
            nonlinear: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub modes: Vec<SolverMode>,
    /// Offline-space dimensions to run for each multiscale mode.
    pub dims: Vec<usize>,
    pub include_boundary_nodes: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            modes: vec![SolverMode::Coupled, SolverMode::Uncoupled],
            dims: vec![900, 1800, 2700, 3600, 4500],
            include_boundary_nodes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write final pressure fields of every run.
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            fields: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellModelChoice {
    /// Smooth Lipschitz-in-p coefficients with mean-zero transfer.
    Smooth,
    /// Smooth conductivities with the transfer `Q = ζ k₂`.
    ShapeFactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizeConfig {
    /// Cell mesh level: `2^level` elements per side.
    pub level: u32,
    pub cell_model: CellModelChoice,
    pub zeta: f64,
    pub q_mean: QMeanPolicy,
    pub pressures: Vec<[f64; 2]>,
}

impl Default for HomogenizeConfig {
    fn default() -> Self {
        Self {
            level: 6,
            cell_model: CellModelChoice::Smooth,
            zeta: 1.0,
            q_mean: QMeanPolicy::Strict,
            pressures: vec![[0.0, 0.0], [0.5, 0.5], [1.0, 0.0], [1.0, 1.0]],
        }
    }
}

impl HomogenizeConfig {
    fn cell_model(&self) -> Box<dyn CellModel> {
        match self.cell_model {
            CellModelChoice::Smooth => Box::new(SmoothCellModel),
            CellModelChoice::ShapeFactor => Box::new(ShapeFactorTransfer {
                base: SmoothCellModel,
                zeta: self.zeta,
            }),
        }
    }
}

/// A cell problem in configuration files, with one-based indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HierProblem {
    N { continuum: usize, direction: usize },
    M { continuum: usize },
}

impl HierProblem {
    fn to_problem(self) -> Result<CellProblem> {
        let ok = |v: usize| (1..=2).contains(&v);
        match self {
            HierProblem::N { continuum, direction } if ok(continuum) && ok(direction) => Ok(CellProblem::N {
                continuum: continuum - 1,
                direction: direction - 1,
            }),
            HierProblem::M { continuum } if ok(continuum) => Ok(CellProblem::M { continuum: continuum - 1 }),
            _ => Err(Error::invalid(format!("hier problem {self:?}: indices are 1 or 2"))),
        }
    }

    fn label(&self) -> String {
        match self {
            HierProblem::N { continuum, direction } => format!("N{direction}_{continuum}"),
            HierProblem::M { continuum } => format!("M{continuum}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierConfig {
    pub a: f64,
    pub b: f64,
    pub depths: Vec<usize>,
    pub problems: Vec<HierProblem>,
}

impl Default for HierConfig {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            depths: vec![3, 4, 5],
            problems: vec![
                HierProblem::N {
                    continuum: 1,
                    direction: 1,
                },
                HierProblem::M { continuum: 1 },
            ],
        }
    }
}

/// Everything a run needs. Every section is optional; the defaults are the
/// 128²/16² channelized study.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub time: TimeSteppingConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub homogenize: HomogenizeConfig,
    pub hier: HierConfig,
    /// Reserved; no stage draws random numbers.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses TOML text. Relative raster paths are resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        if let Some(base) = base {
            for f in [&mut cfg.model.fracture, &mut cfg.model.matrix] {
                if let Some(r) = &f.raster {
                    if r.is_relative() {
                        f.raster = Some(base.join(r));
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.fine < 2 || g.coarse < 1 || g.fine % g.coarse != 0 {
            return Err(Error::invalid(format!(
                "grid: fine = {} must be at least 2 and a multiple of coarse = {}",
                g.fine, g.coarse
            )));
        }
        self.time.steps()?;
        if self.solver.modes.is_empty() {
            return Err(Error::invalid("solver: no modes selected"));
        }
        let mut modes = self.solver.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != self.solver.modes.len() {
            return Err(Error::invalid("solver: modes repeat"));
        }
        if self.solver.modes.iter().any(|m| *m != SolverMode::Fine) && self.solver.dims.is_empty() {
            return Err(Error::invalid("solver: multiscale modes need at least one dimension"));
        }
        if self.solver.dims.contains(&0) {
            return Err(Error::invalid("solver: dimensions must be positive"));
        }
        for (name, f) in [("fracture", &self.model.fracture), ("matrix", &self.model.matrix)] {
            if let Some(r) = &f.raster {
                if !r.is_file() {
                    return Err(Error::invalid(format!("model.{name}: raster {} does not exist", r.display())));
                }
                if f.channels.is_some() || f.background.is_some() || f.channel.is_some() {
                    return Err(Error::invalid(format!("model.{name}: give either a raster or a channel layout")));
                }
            }
        }
        if !(self.model.transfer >= 0.0) || !self.model.convection.is_finite() {
            return Err(Error::invalid("model: transfer must be nonnegative and convection finite"));
        }
        let h = &self.homogenize;
        if !(1..=12).contains(&h.level) {
            return Err(Error::invalid(format!("homogenize: level {} outside 1..=12", h.level)));
        }
        if h.pressures.iter().flatten().any(|p| !p.is_finite()) {
            return Err(Error::invalid("homogenize: pressures must be finite"));
        }
        let hc = &self.hier;
        if !(hc.a < hc.b) || hc.depths.is_empty() || hc.depths.iter().any(|d| !(1..=8).contains(d)) {
            return Err(Error::invalid("hier: need a < b and depths in 1..=8"));
        }
        for p in &hc.problems {
            p.to_problem()?;
        }
        Ok(())
    }

    fn channel_spec(&self, f: &FieldConfig, fracture: bool) -> ChannelFieldSpec {
        let base = if fracture {
            ChannelFieldSpec::default_fracture(self.grid.fine)
        } else {
            ChannelFieldSpec::default_matrix(self.grid.fine)
        };
        ChannelFieldSpec {
            background: f.background.unwrap_or(base.background),
            channel: f.channel.unwrap_or(base.channel),
            channels: f.channels.clone().unwrap_or_else(default_channels),
            ..base
        }
    }

    /// Elementwise conductivity factors `[a₁, a₂]` on the fine grid.
    pub fn conductivity_fields(&self) -> Result<[Vec<f64>; 2]> {
        let n = self.grid.fine;
        let field = |f: &FieldConfig, fracture: bool| -> Result<Vec<f64>> {
            match &f.raster {
                Some(path) => {
                    let (nx, ny, v) = read_raster(path)?;
                    if nx != n || ny != n {
                        return Err(Error::invalid(format!(
                            "raster {} is {nx}x{ny}; the fine grid has {n}x{n} elements",
                            path.display()
                        )));
                    }
                    Ok(v)
                }
                None => channelized_field(&self.channel_spec(f, fracture)),
            }
        };
        Ok([field(&self.model.fracture, true)?, field(&self.model.matrix, false)?])
    }

    pub fn coefficient_model(&self) -> Result<CoefficientModel> {
        let [a1, a2] = self.conductivity_fields()?;
        let mut m = CoefficientModel::with_fields(a1, a2);
        m.convection = self.model.convection;
        m.transfer = self.model.transfer;
        m.nonlinear_conductivity = self.model.nonlinear;
        m.nonlinear_transfer = self.model.nonlinear;
        Ok(m)
    }
}

/// `100·‖p_ms,i − p_ref,i‖/‖p_ref,i‖` per continuum, in the mass-matrix
/// `L²` norm.
pub fn relative_l2_error(mass: &CsrMatrix, p_ms: &[Vec<f64>; 2], p_ref: &[Vec<f64>; 2]) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for i in 0..2 {
        if p_ms[i].len() != mass.nrows() || p_ref[i].len() != mass.nrows() {
            return Err(Error::invalid("fields and mass matrix differ in size"));
        }
        let r = mass_norm(mass, &p_ref[i]);
        if r == 0.0 {
            return Err(Error::invalid(format!("reference field {} has zero norm", i + 1)));
        }
        let d: Vec<f64> = p_ms[i].iter().zip(&p_ref[i]).map(|(a, b)| a - b).collect();
        out[i] = 100.0 * mass_norm(mass, &d) / r;
    }
    Ok(out)
}

/// One multiscale (or fine) run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub mode: SolverMode,
    /// Offline-space dimension; twice the interior nodes for the fine run.
    pub dim: usize,
    pub err_p1_percent: f64,
    pub err_p2_percent: f64,
    pub picard_iterations: Vec<usize>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub fine_dofs: usize,
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    /// CSV without timings, so identical configurations give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,dim,err_p1_percent,err_p2_percent,picard_iterations\n");
        for r in &self.rows {
            let its: Vec<String> = r.picard_iterations.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{}",
                r.mode,
                r.dim,
                r.err_p1_percent,
                r.err_p2_percent,
                its.join(";")
            );
        }
        s
    }

    pub fn rows_for(&self, mode: SolverMode) -> impl Iterator<Item = &ErrorRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn row(&self, mode: SolverMode, dim: usize) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.mode == mode && r.dim == dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldFormat {
    /// Header `nx ny`, then row-major values from the bottom row.
    RasterText,
    /// Legacy ASCII structured-points volume.
    StructuredPoints,
}

impl FieldFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            FieldFormat::RasterText => "txt",
            FieldFormat::StructuredPoints => "vtk",
        }
    }
}

fn field_shape(grid: &StructuredGrid, len: usize) -> Result<(usize, usize, bool)> {
    if len == grid.n_nodes() {
        Ok((grid.nx() + 1, grid.ny() + 1, true))
    } else if len == grid.n_elements() {
        Ok((grid.nx(), grid.ny(), false))
    } else {
        Err(Error::invalid(format!(
            "field of length {len} is neither nodal ({}) nor elementwise ({})",
            grid.n_nodes(),
            grid.n_elements()
        )))
    }
}

/// Legacy structured-points text of a nodal (`POINT_DATA`) or elementwise
/// (`CELL_DATA`) field. Values are written in shortest round-trip form.
pub fn format_structured_points(grid: &StructuredGrid, name: &str, values: &[f64]) -> Result<String> {
    let (_, _, nodal) = field_shape(grid, values.len())?;
    let d = grid.domain();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{name}\nASCII\nDATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", grid.nx() + 1, grid.ny() + 1);
    let _ = writeln!(s, "ORIGIN {:?} {:?} 0\nSPACING {:?} {:?} 1", d.x0, d.y0, grid.hx(), grid.hy());
    let kind = if nodal { "POINT_DATA" } else { "CELL_DATA" };
    let _ = writeln!(s, "{kind} {}\nSCALARS {name} double 1\nLOOKUP_TABLE default", values.len());
    for v in values {
        let _ = writeln!(s, "{v:?}");
    }
    Ok(s)
}

/// Writes a nodal or elementwise field of `grid`.
pub fn export_field(grid: &StructuredGrid, name: &str, values: &[f64], path: &Path, format: FieldFormat) -> Result<()> {
    let text = match format {
        FieldFormat::RasterText => {
            let (nx, ny, _) = field_shape(grid, values.len())?;
            format_raster(nx, ny, values)
        }
        FieldFormat::StructuredPoints => format_structured_points(grid, name, values)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Prefixes an error message with the pipeline stage it came from.
fn staged<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("[{stage}] {m}")),
        Error::SolverFailure(m) => Error::SolverFailure(format!("[{stage}] {m}")),
        Error::DecompositionFailure(m) => Error::DecompositionFailure(format!("[{stage}] {m}")),
        Error::InsufficientData(m) => Error::InsufficientData(format!("[{stage}] {m}")),
        Error::InvariantViolation(m) => Error::InvariantViolation(format!("[{stage}] {m}")),
        Error::Parse(m) => Error::Parse(format!("[{stage}] {m}")),
        other => {
            log::error!("stage {stage} failed: {other}");
            other
        }
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a str,
    config: &'a ExperimentConfig,
    fine_dofs: usize,
    fine_seconds: f64,
    offline_seconds: BTreeMap<String, f64>,
    rows: &'a [ErrorRow],
    artifacts: Vec<String>,
}

/// Final state of a run, kept for field comparisons.
pub struct RunOutput {
    pub mode: SolverMode,
    pub dim: usize,
    pub state: DualPressure,
}

/// Result of [`run_experiment`].
pub struct ExperimentOutcome {
    pub report: ErrorReport,
    pub reference: DualPressure,
    pub runs: Vec<RunOutput>,
    pub grid: StructuredGrid,
}

fn write_artifact(dir: &Path, name: &str, text: &str, artifacts: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    artifacts.push(name.to_string());
    Ok(())
}

fn export_pair(
    grid: &StructuredGrid,
    dir: &Path,
    stem: &str,
    state: &DualPressure,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    for i in 0..2 {
        for fmt in [FieldFormat::RasterText, FieldFormat::StructuredPoints] {
            let name = format!("{stem}_p{}.{}", i + 1, fmt.extension());
            export_field(grid, &format!("p{}", i + 1), &state.p[i], &dir.join(&name), fmt)?;
            artifacts.push(name);
        }
    }
    Ok(())
}

/// Runs the fine reference once, then every multiscale mode and dimension.
/// Writes `report.csv`, `manifest.json` and (optionally) the final fields
/// to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, command: &str) -> Result<ExperimentOutcome> {
    staged("config", cfg.validate())?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let grid = staged("mesh", StructuredGrid::unit_square(cfg.grid.fine))?;
    let cg = staged("mesh", build_coarse_grid(&grid, cfg.grid.coarse))?;
    let model = staged("model", cfg.coefficient_model())?;
    staged("model", model.validate(&grid))?;
    let disc = staged("fem", DualDiscretization::new(&grid))?;
    let mut artifacts = Vec::new();

    let t0 = Instant::now();
    let (reference, fine_traces) = staged("fine", run_simulation(&disc, &model, &Space::Fine, &cfg.time))?;
    let fine_seconds = t0.elapsed().as_secs_f64();
    info!("fine reference: {fine_seconds:.1}s");
    let fine_dofs = Space::Fine.dim(&grid);
    if cfg.output.fields {
        export_pair(&grid, &dir, "fine", &reference, &mut artifacts)?;
    }

    let mut report = ErrorReport { fine_dofs, rows: vec![] };
    let mut runs = Vec::new();
    let mut offline_seconds = BTreeMap::new();
    for &mode in &cfg.solver.modes {
        let basis_mode = match mode {
            SolverMode::Fine => {
                report.rows.push(ErrorRow {
                    mode,
                    dim: fine_dofs,
                    err_p1_percent: 0.0,
                    err_p2_percent: 0.0,
                    picard_iterations: fine_traces.iter().map(|t| t.iterations).collect(),
                    wall_seconds: fine_seconds,
                });
                continue;
            }
            SolverMode::Uncoupled => BasisMode::Uncoupled,
            SolverMode::Coupled => BasisMode::Coupled,
        };
        let gcfg = GmsfemConfig {
            mode: basis_mode,
            include_boundary_nodes: cfg.solver.include_boundary_nodes,
            ..Default::default()
        };
        let nodes = if gcfg.include_boundary_nodes {
            cg.coarse.n_nodes()
        } else {
            cg.interior_coarse_nodes().len()
        };
        let groups = nodes * if basis_mode == BasisMode::Uncoupled { 2 } else { 1 };
        let max_dim = *cfg.solver.dims.iter().max().expect("validated");
        let t0 = Instant::now();
        let basis = staged("offline", OfflineBasis::build(&cg, &model, None, &gcfg, max_dim.div_ceil(groups.max(1))))?;
        offline_seconds.insert(mode.to_string(), t0.elapsed().as_secs_f64());
        for &dim in &cfg.solver.dims {
            let t0 = Instant::now();
            let per = staged("offline", basis.per_node_for_dim(dim))?;
            let ms = staged("offline", basis.space(per))?;
            let space = Space::projected(ms.r);
            let (state, traces) = staged("online", run_simulation(&disc, &model, &space, &cfg.time))?;
            let err = staged("report", relative_l2_error(&disc.mass, &state.p, &reference.p))?;
            let row = ErrorRow {
                mode,
                dim,
                err_p1_percent: err[0],
                err_p2_percent: err[1],
                picard_iterations: traces.iter().map(|t| t.iterations).collect(),
                wall_seconds: t0.elapsed().as_secs_f64(),
            };
            info!(
                "{mode} dim {dim}: {:.4}% {:.4}% ({:.1}s)",
                row.err_p1_percent, row.err_p2_percent, row.wall_seconds
            );
            report.rows.push(row);
            if cfg.output.fields {
                export_pair(&grid, &dir, &format!("{mode}_{dim}"), &state, &mut artifacts)?;
            }
            runs.push(RunOutput { mode, dim, state });
        }
    }
    write_artifact(&dir, "report.csv", &report.to_csv(), &mut artifacts)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        fine_dofs,
        fine_seconds,
        offline_seconds,
        rows: &report.rows,
        artifacts: artifacts.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(format!("manifest: {e}")))?,
    )?;
    Ok(ExperimentOutcome {
        report,
        reference,
        runs,
        grid,
    })
}

/// A named pass/fail check of a table run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Error bands at the largest tabulated dimension.
pub const COUPLED_BAND_PERCENT: f64 = 0.7;
pub const UNCOUPLED_BAND_PERCENT: f64 = 1.2;
/// Dimension the bands apply to.
pub const BAND_DIM: usize = 4500;

/// Trend and band checks of a coupled/uncoupled table.
pub fn table_checks(report: &ErrorReport) -> Vec<Check> {
    let coupled: Vec<&ErrorRow> = report.rows_for(SolverMode::Coupled).collect();
    let mut checks = Vec::new();
    let decreasing = coupled.windows(2).all(|w| {
        w[1].dim > w[0].dim && w[1].err_p1_percent < w[0].err_p1_percent && w[1].err_p2_percent < w[0].err_p2_percent
    });
    let seq: Vec<String> = coupled
        .iter()
        .map(|r| format!("{}:{:.3}/{:.3}", r.dim, r.err_p1_percent, r.err_p2_percent))
        .collect();
    checks.push(Check {
        name: "coupled errors strictly decrease with dimension".into(),
        pass: coupled.len() >= 2 && decreasing,
        detail: seq.join(" "),
    });
    let mut worst = Vec::new();
    let mut below = true;
    for c in coupled.iter().filter(|r| r.dim >= 1800) {
        if let Some(u) = report.row(SolverMode::Uncoupled, c.dim) {
            for (ce, ue, k) in [(c.err_p1_percent, u.err_p1_percent, 1), (c.err_p2_percent, u.err_p2_percent, 2)] {
                if ce > ue {
                    below = false;
                    worst.push(format!("dim {} p{k}: coupled {ce:.4} > uncoupled {ue:.4}", c.dim));
                }
            }
        } else {
            below = false;
            worst.push(format!("dim {}: no uncoupled run", c.dim));
        }
    }
    checks.push(Check {
        name: "coupled <= uncoupled for dims >= 1800".into(),
        pass: below && coupled.iter().any(|r| r.dim >= 1800),
        detail: if worst.is_empty() { "all dims".into() } else { worst.join("; ") },
    });
    for (mode, band) in [
        (SolverMode::Coupled, COUPLED_BAND_PERCENT),
        (SolverMode::Uncoupled, UNCOUPLED_BAND_PERCENT),
    ] {
        let (pass, detail) = match report.row(mode, BAND_DIM) {
            Some(r) => (
                r.err_p1_percent <= band && r.err_p2_percent <= band,
                format!("{:.4}% / {:.4}%", r.err_p1_percent, r.err_p2_percent),
            ),
            None => (false, format!("dimension {BAND_DIM} not run")),
        };
        checks.push(Check {
            name: format!("{mode} errors at dim {BAND_DIM} <= {band}%"),
            pass,
            detail,
        });
    }
    checks
}

pub fn format_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(s, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    s
}

/// Coupled and uncoupled runs over the configured dimensions, followed by
/// the trend and band checks (also written to `table_checks.txt`).
pub fn run_table(cfg: &ExperimentConfig) -> Result<(ExperimentOutcome, Vec<Check>)> {
    let mut cfg = cfg.clone();
    cfg.solver.modes = vec![SolverMode::Coupled, SolverMode::Uncoupled];
    let outcome = run_experiment(&cfg, "table")?;
    let checks = table_checks(&outcome.report);
    std::fs::write(cfg.output.dir.join("table_checks.txt"), format_checks(&checks))?;
    Ok((outcome, checks))
}

/// Cell problems and effective coefficients at the configured pressures,
/// written to `effective.txt`.
pub fn run_homogenize(cfg: &ExperimentConfig) -> Result<Vec<EffectiveCoefficients>> {
    staged("config", cfg.validate())?;
    let h = &cfg.homogenize;
    let mesh = UnitCellMesh::new(h.level)?;
    let model = h.cell_model();
    let rows = staged("cell", effective_table(&mesh, model.as_ref(), &h.pressures, h.q_mean))?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    std::fs::write(cfg.output.dir.join("effective.txt"), format_effective_table(&rows))?;
    Ok(rows)
}

pub fn format_benchmark(label: &str, rows: &[BenchmarkRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{label},{},{},{},{},{:.6e},{},{},{:.6},{:.3},{:.3}",
            r.depth,
            r.level,
            r.points,
            r.space_dofs,
            r.max_error,
            r.hierarchical_dofs,
            r.full_dofs,
            r.fitted_c,
            r.hierarchical_seconds,
            r.full_seconds
        );
    }
    s
}

pub const BENCHMARK_HEADER: &str =
    "problem,depth,level,points,space_dofs,max_error,hierarchical_dofs,full_dofs,fitted_c,hier_seconds,full_seconds\n";

/// Hierarchical versus full cell solves for every configured problem and
/// depth, written to `hier_bench.csv`.
pub fn run_hier_bench(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<BenchmarkRow>)>> {
    staged("config", cfg.validate())?;
    let hc = &cfg.hier;
    let model = cfg.homogenize.cell_model();
    let mut out = Vec::new();
    let mut csv = String::from(BENCHMARK_HEADER);
    for p in &hc.problems {
        let rows = staged(
            "hier",
            benchmark(model.as_ref(), hc.a, hc.b, &hc.depths, p.to_problem()?, cfg.homogenize.q_mean),
        )?;
        csv.push_str(&format_benchmark(&p.label(), &rows));
        out.push((p.label(), rows));
    }
    std::fs::create_dir_all(&cfg.output.dir)?;
    std::fs::write(cfg.output.dir.join("hier_bench.csv"), csv)?;
    Ok(out)
}

/// Writes the two conductivity factors as raster text and structured points.
pub fn run_gen_field(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    staged("config", cfg.validate())?;
    let grid = StructuredGrid::unit_square(cfg.grid.fine)?;
    let fields = staged("model", cfg.conductivity_fields())?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let mut paths = Vec::new();
    for (name, f) in ["fracture", "matrix"].iter().zip(&fields) {
        for fmt in [FieldFormat::RasterText, FieldFormat::StructuredPoints] {
            let path = cfg.output.dir.join(format!("{name}.{}", fmt.extension()));
            export_field(&grid, name, f, &path, fmt)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_raster;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "[grid]\nfine = 32\ncoarse = 4\n[time]\ntau = 0.5\n[solver]\nmodes = [\"coupled\"]\ndims = [18]\n\
             [[hier.problems]]\nkind = \"m\"\ncontinuum = 2\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.grid.fine, 32);
        assert_eq!(cfg.time.t_final, 2.0);
        assert_eq!(cfg.time.tau, 0.5);
        assert_eq!(cfg.solver.modes, vec![SolverMode::Coupled]);
        assert_eq!(cfg.hier.problems, vec![HierProblem::M { continuum: 2 }]);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("[grid]\nfine = \"x\"\n", None), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::from_toml("[bogus]\n", None), Err(Error::Parse(_))));
        let bad = [
            "[grid]\nfine = 30\ncoarse = 4\n",
            "[time]\ntau = 0.3\n",
            "[solver]\nmodes = []\n",
            "[solver]\nmodes = [\"fine\", \"fine\"]\n",
            "[model.fracture]\nraster = \"/nonexistent/a.txt\"\n",
            "[homogenize]\nlevel = 0\n",
            "[hier]\na = 1.0\nb = 0.0\n",
            "[[hier.problems]]\nkind = \"n\"\ncontinuum = 3\ndirection = 1\n",
        ];
        for text in bad {
            let err = ExperimentConfig::from_toml(text, None).and_then(|c| c.validate());
            assert_eq!(err.map_err(|e| e.exit_code()).unwrap_err(), 2, "{text}");
        }
    }

    #[test]
    fn modes_and_dims_parse() {
        assert_eq!("coupled".parse::<SolverMode>().unwrap(), SolverMode::Coupled);
        assert!("both".parse::<SolverMode>().is_err());
        assert_eq!(parse_dims("900, 1800").unwrap(), vec![900, 1800]);
        assert!(parse_dims("900,x").is_err());
    }

    #[test]
    fn relative_error_scales_and_rejects_zero_reference() {
        let g = StructuredGrid::unit_square(4).unwrap();
        let disc = DualDiscretization::new(&g).unwrap();
        let p = g.interpolate(|x, y| x * (1.0 - x) * y);
        let r = [p.clone(), p.iter().map(|v| 2.0 * v).collect::<Vec<_>>()];
        assert_eq!(relative_l2_error(&disc.mass, &r, &r).unwrap(), [0.0, 0.0]);
        let s = [r[0].iter().map(|v| 1.01 * v).collect(), r[1].iter().map(|v| 1.01 * v).collect()];
        for e in relative_l2_error(&disc.mass, &s, &r).unwrap() {
            assert!((e - 1.0).abs() < 1e-12);
        }
        let z = [vec![0.0; g.n_nodes()], vec![0.0; g.n_nodes()]];
        assert!(relative_l2_error(&disc.mass, &r, &z).is_err());
    }

    #[test]
    fn raster_export_round_trips_bits() {
        let g = StructuredGrid::unit_square(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        export_field(&g, "c", &[0.1; 9], &path, FieldFormat::RasterText).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("3 3\n"));
        let (nx, ny, v) = parse_raster(&text).unwrap();
        assert_eq!((nx, ny, v), (3, 3, vec![0.1; 9]));
        let vals: Vec<f64> = (0..9).map(|k| (k as f64).sqrt() / 7.0).collect();
        export_field(&g, "v", &vals, &path, FieldFormat::RasterText).unwrap();
        assert_eq!(crate::model::read_raster(&path).unwrap().2, vals);
        assert!(export_field(&g, "v", &[1.0; 5], &path, FieldFormat::RasterText).is_err());
    }

    #[test]
    fn structured_points_layout() {
        let g = StructuredGrid::unit_square(2).unwrap();
        let s = format_structured_points(&g, "p1", &[1.5; 9]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_POINTS");
        assert_eq!(lines[4], "DIMENSIONS 3 3 1");
        assert_eq!(lines[6], "SPACING 0.5 0.5 1");
        assert_eq!(lines[7], "POINT_DATA 9");
        assert_eq!(lines.len(), 10 + 9);
        let c = format_structured_points(&g, "a", &[2.0; 4]).unwrap();
        assert!(c.contains("CELL_DATA 4"));
    }

    #[test]
    fn table_checks_flag_violations() {
        let row = |mode, dim, e1, e2| ErrorRow {
            mode,
            dim,
            err_p1_percent: e1,
            err_p2_percent: e2,
            picard_iterations: vec![2],
            wall_seconds: 0.0,
        };
        let mut rep = ErrorReport {
            fine_dofs: 10,
            rows: vec![
                row(SolverMode::Coupled, 1800, 1.0, 1.0),
                row(SolverMode::Coupled, 4500, 0.5, 0.6),
                row(SolverMode::Uncoupled, 1800, 2.0, 2.0),
                row(SolverMode::Uncoupled, 4500, 0.9, 0.9),
            ],
        };
        assert!(table_checks(&rep).iter().all(|c| c.pass), "{}", format_checks(&table_checks(&rep)));
        rep.rows[1].err_p2_percent = 0.95;
        let c = table_checks(&rep);
        assert!(c[0].pass);
        assert!(!c[1].pass && !c[2].pass && c[3].pass);
        rep.rows[1].err_p1_percent = 1.5;
        assert!(!table_checks(&rep)[0].pass);
    }

    #[test]
    fn gen_field_writes_default_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.output.dir = dir.path().to_path_buf();
        let paths = run_gen_field(&cfg).unwrap();
        assert_eq!(paths.len(), 4);
        let (nx, ny, v) = crate::model::read_raster(&paths[0]).unwrap();
        assert_eq!((nx, ny), (128, 128));
        assert!(v.contains(&1e5) && v.contains(&10.0));
        let mut c2 = cfg.clone();
        c2.model.fracture = FieldConfig {
            raster: Some(paths[0].clone()),
            ..Default::default()
        };
        assert_eq!(c2.conductivity_fields().unwrap()[0], v);
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::from_toml(
            "[grid]\nfine = 16\ncoarse = 4\n[time]\nt_final = 0.2\n[solver]\nmodes = [\"fine\", \"coupled\", \"uncoupled\"]\ndims = [18, 36]\n",
            None,
        )
        .unwrap();
        cfg.output.dir = dir.path().join("a");
        let a = run_experiment(&cfg, "test").unwrap();
        cfg.output.dir = dir.path().join("b");
        run_experiment(&cfg, "test").unwrap();
        let ra = std::fs::read(dir.path().join("a/report.csv")).unwrap();
        let rb = std::fs::read(dir.path().join("b/report.csv")).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.report.rows.len(), 5);
        assert_eq!(a.report.rows[0].err_p1_percent, 0.0);
        assert!(dir.path().join("a/manifest.json").is_file());
        assert!(dir.path().join("a/coupled_36_p2.vtk").is_file());
    }
}
