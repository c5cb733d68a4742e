//! Coefficients of the dual-continuum test problem, channelized
//! high-contrast fields, and cell-scale two-scale coefficients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Field, VectorField};
use crate::mesh::{Rect, StructuredGrid};

/// Background value, channel value and channel rectangles of a
/// high-contrast conductivity factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFieldSpec {
    pub background: f64,
    pub channel: f64,
    pub channels: Vec<Rect>,
    pub nx: usize,
    pub ny: usize,
}

/// Long thin strips, 2 to 4 fine elements wide on a 128 grid, shared by
/// both continua. They intersect into one floating network and stay out of
/// the outermost coarse layer for `H = 1/16`: without boundary coarse nodes
/// the offline space cannot resolve a high-contrast channel there.
pub fn default_channels() -> Vec<Rect> {
    let c = |x0: f64, x1: f64, y0: f64, y1: f64| Rect { x0, y0, x1, y1 };
    let f = |k: f64| k / 128.0;
    vec![
        c(f(10.0), f(118.0), f(20.0), f(23.0)),
        c(0.1, 0.7, f(50.0), f(52.0)),
        c(0.3, 0.9, f(80.0), f(84.0)),
        c(0.1, 0.6, f(108.0), f(110.0)),
        c(f(30.0), f(33.0), 0.25, 0.9),
        c(f(70.0), f(72.0), 0.1, 0.6),
        c(f(100.0), f(104.0), 0.35, 0.9),
    ]
}

impl ChannelFieldSpec {
    /// Fracture continuum: background 10, channels 1e5.
    pub fn default_fracture(n: usize) -> Self {
        Self {
            background: 10.0,
            channel: 1e5,
            channels: default_channels(),
            nx: n,
            ny: n,
        }
    }

    /// Matrix continuum: background 1, channels 10.
    pub fn default_matrix(n: usize) -> Self {
        Self {
            background: 1.0,
            channel: 10.0,
            channels: default_channels(),
            nx: n,
            ny: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background > 0.0) || !(self.channel >= self.background) {
            return Err(Error::invalid(format!(
                "channel spec needs channel ({}) >= background ({}) > 0",
                self.channel, self.background
            )));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid("channel spec grid must be at least 2x2"));
        }
        for r in &self.channels {
            let inside = r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= 1.0 && r.y1 <= 1.0;
            if !inside || r.x0 > r.x1 || r.y0 > r.y1 {
                return Err(Error::invalid(format!("channel rectangle {r:?} outside the unit square")));
            }
        }
        Ok(())
    }
}

/// Elementwise field of `spec`: an element is a channel element when its
/// center lies in one of the rectangles.
pub fn channelized_field(spec: &ChannelFieldSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let g = StructuredGrid::new(spec.nx, spec.ny, Rect::UNIT)?;
    Ok((0..g.n_elements())
        .map(|e| {
            let [x, y] = g.element_center(e);
            if spec.channels.iter().any(|r| r.contains(x, y)) {
                spec.channel
            } else {
                spec.background
            }
        })
        .collect())
}

/// Fraction of elements carrying the channel value.
pub fn channel_fraction(field: &[f64], channel: f64) -> f64 {
    field.iter().filter(|v| **v == channel).count() as f64 / field.len() as f64
}

/// Text raster: header `nx ny`, then the values row-major from the bottom row.
pub fn format_raster(nx: usize, ny: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), nx * ny, "raster size");
    let mut s = format!("{nx} {ny}\n");
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_raster(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut it = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        it.next()
            .ok_or_else(|| Error::Parse(format!("raster: missing {what}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("raster {what}: {e}")))
    };
    let nx = next_usize("nx")?;
    let ny = next_usize("ny")?;
    let values: Vec<f64> = text
        .split_whitespace()
        .skip(2)
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("raster value {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != nx * ny {
        return Err(Error::Parse(format!(
            "raster declares {nx}x{ny} values but holds {}",
            values.len()
        )));
    }
    Ok((nx, ny, values))
}

pub fn read_raster(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    parse_raster(&std::fs::read_to_string(path)?)
}

pub fn write_raster(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, format_raster(nx, ny, values))?;
    Ok(())
}

/// Coefficients of the reduced dual-continuum system
///
/// `∂p_i/∂t − div(κ_i ∇p_i) + Σ_j b_ij·∇p_j + c_i (p_i − p_other) = f_i`.
///
/// With the default switches this is the channelized test problem:
/// `κ_i = a_i/(1+|p_i|)`, `b_i1 = s(p₁,p₁)`, `b_i2 = s(−p₂,−p₂)`,
/// `c_i = c₀/(1+|p_i|)`, `f_i = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientModel {
    /// Elementwise conductivity factors `a_i(x)`.
    pub a: [Vec<f64>; 2],
    pub nonlinear_conductivity: bool,
    /// Convection scale `s`; zero switches convection off.
    pub convection: f64,
    /// Transfer scale `c₀`.
    pub transfer: f64,
    pub nonlinear_transfer: bool,
    pub source: [f64; 2],
}

/// Coefficients frozen at one pressure state.
#[derive(Clone, Debug)]
pub struct FrozenCoefficients {
    pub kappa: [Field; 2],
    /// `b[i][j]` multiplies `∇p_j` in equation `i`.
    pub b: [[VectorField; 2]; 2],
    pub c: [Field; 2],
    pub f: [Field; 2],
}

impl CoefficientModel {
    /// The channelized high-contrast test problem on an `n × n` grid with
    /// the shipped channel geometry.
    pub fn test_problem(n: usize) -> Result<Self> {
        let a1 = channelized_field(&ChannelFieldSpec::default_fracture(n))?;
        let a2 = channelized_field(&ChannelFieldSpec::default_matrix(n))?;
        Ok(Self::with_fields(a1, a2))
    }

    /// Test-problem coefficient laws over user-supplied conductivity factors.
    pub fn with_fields(a1: Vec<f64>, a2: Vec<f64>) -> Self {
        Self {
            a: [a1, a2],
            nonlinear_conductivity: true,
            convection: 30.0,
            transfer: 1e5,
            nonlinear_transfer: true,
            source: [1.0, 1.0],
        }
    }

    /// Pressure-independent coefficients: `κ_i = a_i`, no convection,
    /// constant transfer.
    pub fn linear(a1: Vec<f64>, a2: Vec<f64>, transfer: f64, source: [f64; 2]) -> Self {
        Self {
            a: [a1, a2],
            nonlinear_conductivity: false,
            convection: 0.0,
            transfer,
            nonlinear_transfer: false,
            source,
        }
    }

    pub fn is_linear(&self) -> bool {
        !self.nonlinear_conductivity && self.convection == 0.0 && !self.nonlinear_transfer
    }

    pub fn validate(&self, grid: &StructuredGrid) -> Result<()> {
        for (i, a) in self.a.iter().enumerate() {
            if a.len() != grid.n_elements() {
                return Err(Error::invalid(format!(
                    "a_{} has {} values for {} elements",
                    i + 1,
                    a.len(),
                    grid.n_elements()
                )));
            }
            if a.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!("a_{} must be positive and finite", i + 1)));
            }
        }
        if !(self.transfer >= 0.0) || !self.convection.is_finite() {
            return Err(Error::invalid("transfer must be nonnegative and convection finite"));
        }
        Ok(())
    }

    /// `(min, max)` of `κ_i` for pressures with `|p_i| ≤ pmax`.
    pub fn conductivity_bounds(&self, i: usize, pmax: f64) -> (f64, f64) {
        let lo = self.a[i].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.a[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.nonlinear_conductivity {
            (lo / (1.0 + pmax), hi)
        } else {
            (lo, hi)
        }
    }
}

/// Evaluates every coefficient at the nodal state `(p₁, p₂)`.
pub fn eval_coefficients(
    model: &CoefficientModel,
    grid: &StructuredGrid,
    p1: &[f64],
    p2: &[f64],
) -> Result<FrozenCoefficients> {
    model.validate(grid)?;
    if p1.len() != grid.n_nodes() || p2.len() != grid.n_nodes() {
        return Err(Error::invalid("pressure fields do not match the grid"));
    }
    if p1.iter().chain(p2).any(|v| !v.is_finite()) {
        return Err(Error::invalid("pressure field contains NaN or infinity"));
    }
    let p = [p1, p2];
    let damp = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 1.0 / (1.0 + x.abs())).collect() };
    let kappa = std::array::from_fn(|i| {
        if model.nonlinear_conductivity {
            Field::ElementNodal {
                element: model.a[i].clone(),
                nodal: damp(p[i]),
            }
        } else {
            Field::Element(model.a[i].clone())
        }
    });
    let s = model.convection;
    let b = if s == 0.0 {
        std::array::from_fn(|_| std::array::from_fn(|_| [Field::zero(), Field::zero()]))
    } else {
        let b1 = Field::Nodal(p1.iter().map(|v| s * v).collect());
        let b2 = Field::Nodal(p2.iter().map(|v| -s * v).collect());
        std::array::from_fn(|_| [[b1.clone(), b1.clone()], [b2.clone(), b2.clone()]])
    };
    let c = std::array::from_fn(|i| {
        if model.nonlinear_transfer {
            Field::Nodal(damp(p[i]).into_iter().map(|v| model.transfer * v).collect())
        } else {
            Field::Constant(model.transfer)
        }
    });
    let f = std::array::from_fn(|i| Field::Constant(model.source[i]));
    Ok(FrozenCoefficients { kappa, b, c, f })
}

/// Cell-scale coefficients `k_j(y, p_j)` and transfer `Q_j(y, p₁, p₂)` on
/// the unit cell, continuum index `j ∈ {0, 1}`.
pub trait CellModel: Sync {
    fn k(&self, j: usize, y: [f64; 2], p: f64) -> f64;
    fn q(&self, j: usize, y: [f64; 2], p: [f64; 2]) -> f64;

    /// `∂Q_j/∂p_r`; central differences unless overridden.
    fn dq_dp(&self, j: usize, r: usize, y: [f64; 2], p: [f64; 2]) -> f64 {
        let h = FD_STEP;
        let mut lo = p;
        let mut hi = p;
        lo[r] -= h;
        hi[r] += h;
        (self.q(j, y, hi) - self.q(j, y, lo)) / (2.0 * h)
    }
}

/// Finite-difference step for `∂Q/∂p` on pressures of unit range.
pub const FD_STEP: f64 = 1e-6;

/// Smooth, Lipschitz-in-p cell coefficients with mean-zero transfer:
///
/// `k_j = 2 + (1+p)/2 · sin(2πy₁) cos(2πy₂)` (second continuum with the
/// roles of `y₁` and `y₂` swapped) and
/// `Q_j = (1 + p₁ − p₂/2) cos(2πy₁) + p₂ sin(2πy₂)` (sign of the second
/// term flipped for `j = 1`).
#[derive(Clone, Copy, Debug, Default)]
pub struct SmoothCellModel;

impl CellModel for SmoothCellModel {
    fn k(&self, j: usize, y: [f64; 2], p: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let (u, v) = if j == 0 { (y[0], y[1]) } else { (y[1], y[0]) };
        2.0 + 0.5 * (1.0 + p) * (tau * u).sin() * (tau * v).cos()
    }

    fn q(&self, j: usize, y: [f64; 2], p: [f64; 2]) -> f64 {
        let tau = std::f64::consts::TAU;
        let s = if j == 0 { 1.0 } else { -1.0 };
        (1.0 + p[0] - 0.5 * p[1]) * (tau * y[0]).cos() + s * p[1] * (tau * y[1]).sin()
    }

    fn dq_dp(&self, j: usize, r: usize, y: [f64; 2], _p: [f64; 2]) -> f64 {
        let tau = std::f64::consts::TAU;
        let s = if j == 0 { 1.0 } else { -1.0 };
        match r {
            0 => (tau * y[0]).cos(),
            _ => -0.5 * (tau * y[0]).cos() + s * (tau * y[1]).sin(),
        }
    }
}

/// Cell model given by closures, convenient for tests and examples.
pub struct FnCellModel<K, Q>
where
    K: Fn(usize, [f64; 2], f64) -> f64 + Sync,
    Q: Fn(usize, [f64; 2], [f64; 2]) -> f64 + Sync,
{
    pub k: K,
    pub q: Q,
}

impl<K, Q> CellModel for FnCellModel<K, Q>
where
    K: Fn(usize, [f64; 2], f64) -> f64 + Sync,
    Q: Fn(usize, [f64; 2], [f64; 2]) -> f64 + Sync,
{
    fn k(&self, j: usize, y: [f64; 2], p: f64) -> f64 {
        (self.k)(j, y, p)
    }
    fn q(&self, j: usize, y: [f64; 2], p: [f64; 2]) -> f64 {
        (self.q)(j, y, p)
    }
}

/// Transfer law `Q = ζ k₂` of the shape-factor form, offered for cell-scale
/// experiments. It is not mean-zero, so callers must opt into mean
/// correction before using it in the `M` cell problem.
pub struct ShapeFactorTransfer<C: CellModel> {
    pub base: C,
    pub zeta: f64,
}

impl<C: CellModel> CellModel for ShapeFactorTransfer<C> {
    fn k(&self, j: usize, y: [f64; 2], p: f64) -> f64 {
        self.base.k(j, y, p)
    }
    fn q(&self, _j: usize, y: [f64; 2], p: [f64; 2]) -> f64 {
        self.zeta * self.base.k(1, y, p[1])
    }
}
