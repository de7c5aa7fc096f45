//! Sample grids and nonnegative density fields over the planning area.
//!
//! Fields hold densities (bit/s/m²). Totals always go through the grid's
//! quadrature weight, so changing the resolution does not change a total.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::pairwise_sum;
use crate::propagation::Point2D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2D {
        Point2D::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, p: &Point2D) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Cell-centred samples in x-major raster order: index = ix·m + iy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub points: Vec<Point2D>,
    /// m² per sample
    pub weight: f64,
    pub bounds: Rect,
    pub per_side: usize,
}

impl SampleGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.bounds.area()
    }

    pub fn spacing(&self) -> f64 {
        self.bounds.width() / self.per_side as f64
    }
}

pub fn make_grid(edge_length: f64, m_per_side: usize) -> Result<SampleGrid> {
    if !(edge_length > 0.0 && edge_length.is_finite()) {
        return Err(invalid(format!("edge length must be positive, got {edge_length}")));
    }
    if m_per_side < 2 {
        return Err(invalid(format!("need at least 2 samples per side, got {m_per_side}")));
    }
    let cell = edge_length / m_per_side as f64;
    let mut points = Vec::with_capacity(m_per_side * m_per_side);
    for ix in 0..m_per_side {
        for iy in 0..m_per_side {
            points.push(Point2D::new((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell));
        }
    }
    Ok(SampleGrid {
        points,
        weight: cell * cell,
        bounds: Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: edge_length,
            y_max: edge_length,
        },
        per_side: m_per_side,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Arc<SampleGrid>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<SampleGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        for (row, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(invalid(format!("non-finite density at sample {row}")));
            }
            if value < 0.0 {
                return Err(Error::NegativeValue { row, value });
            }
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<SampleGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Quadrature total `Σ v_m · w` (bit/s).
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.weight
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the "max spatial spread" parameter maps onto a correlation length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpreadModel {
    /// `spread` is an inverse squared correlation length, measured in units
    /// of `unit_m` metres: `ℓ = unit_m / sqrt(spread)`.
    InverseSquaredLength { unit_m: f64 },
}

impl Default for SpreadModel {
    fn default() -> Self {
        SpreadModel::InverseSquaredLength { unit_m: 1.0 }
    }
}

impl SpreadModel {
    pub fn correlation_length(&self, spread: f64) -> f64 {
        match *self {
            SpreadModel::InverseSquaredLength { unit_m } => unit_m / spread.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalTraffic {
    /// ln-scale mean of the density
    pub location: f64,
    /// ln-scale standard deviation
    pub scale: f64,
    pub spread: f64,
    /// bit/s
    pub total: f64,
    #[serde(default)]
    pub spread_model: SpreadModel,
}

impl LogNormalTraffic {
    pub fn rural() -> Self {
        Self {
            location: 19.0,
            scale: 2.8,
            spread: 0.0012,
            total: 8.9e12,
            spread_model: SpreadModel::default(),
        }
    }

    pub fn urban() -> Self {
        Self {
            location: 19.0,
            scale: 2.4,
            spread: 0.003,
            total: 9.7e12,
            spread_model: SpreadModel::default(),
        }
    }
}

/// Log-normal traffic: i.i.d. standard normals on the grid are smoothed with
/// a Gaussian kernel whose induced correlation is `exp(-r²/(2ℓ²))`, each
/// point is renormalised to unit variance, then `exp(location + scale·z)` is
/// rescaled to the requested total.
pub fn lognormal_traffic(grid: Arc<SampleGrid>, spec: &LogNormalTraffic, seed: u64) -> Result<ScalarField> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(invalid(format!("log-normal scale must be positive, got {}", spec.scale)));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(invalid(format!("spatial spread must be positive, got {}", spec.spread)));
    }
    if !(spec.total > 0.0 && spec.total.is_finite()) {
        return Err(invalid(format!("total traffic must be positive, got {}", spec.total)));
    }
    if !spec.location.is_finite() {
        return Err(invalid("log-normal location must be finite"));
    }
    let corr_len = spec.spread_model.correlation_length(spec.spread);
    if !(corr_len > 0.0 && corr_len.is_finite()) {
        return Err(invalid("spread model produced an invalid correlation length"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let smoothed = smooth_unit_variance(&grid, &white, corr_len / std::f64::consts::SQRT_2);

    let raw: Vec<f64> = smoothed
        .iter()
        .map(|z| (spec.location + spec.scale * z).exp())
        .collect();
    let field = ScalarField::new(grid, raw)?;
    rescale_total(&field, spec.total)
}

fn smooth_unit_variance(grid: &SampleGrid, white: &[f64], kernel_sd: f64) -> Vec<f64> {
    let m = grid.per_side;
    let h = grid.spacing();
    let reach = ((5.0 * kernel_sd) / h).floor() as isize;
    // Kernel weights only depend on the integer offset.
    let taps: Vec<f64> = (0..=reach.max(0))
        .map(|k| {
            let r = k as f64 * h;
            (-0.5 * r * r / (kernel_sd * kernel_sd)).exp()
        })
        .collect();
    let mut out = Vec::with_capacity(white.len());
    for ix in 0..m as isize {
        for iy in 0..m as isize {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for jx in (ix - reach).max(0)..=(ix + reach).min(m as isize - 1) {
                let kx = taps[(jx - ix).unsigned_abs()];
                for jy in (iy - reach).max(0)..=(iy + reach).min(m as isize - 1) {
                    let k = kx * taps[(jy - iy).unsigned_abs()];
                    acc += k * white[(jx * m as isize + jy) as usize];
                    norm += k * k;
                }
            }
            out.push(acc / norm.sqrt());
        }
    }
    out
}

pub fn rescale_total(field: &ScalarField, new_total: f64) -> Result<ScalarField> {
    if !(new_total >= 0.0 && new_total.is_finite()) {
        return Err(invalid(format!("target total must be finite and nonnegative, got {new_total}")));
    }
    let current = field.total();
    if current <= 0.0 {
        return Err(Error::ZeroTotal("source"));
    }
    let factor = new_total / current;
    let values = field.values.iter().map(|v| v * factor).collect();
    ScalarField::new(field.grid.clone(), values)
}

pub fn format_field_csv(field: &ScalarField) -> String {
    let mut out = String::with_capacity(64 * field.len());
    out.push_str("x_m,y_m,density_bps_per_m2\n");
    for (p, v) in field.grid.points.iter().zip(&field.values) {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", p.x, p.y, v);
    }
    out
}

pub fn save_field(field: &ScalarField, path: &Path) -> Result<()> {
    fs::write(path, format_field_csv(field))?;
    Ok(())
}

pub fn load_field(path: &Path, grid: Arc<SampleGrid>) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    parse_field_csv(&text, grid)
}

pub fn parse_field_csv(text: &str, grid: Arc<SampleGrid>) -> Result<ScalarField> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "x_m,y_m,density_bps_per_m2" => {}
        Some((i, other)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("unexpected header {other:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty traffic file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 columns, found {}", cols.len()),
            });
        }
        let mut nums = [0.0; 3];
        for (slot, col) in nums.iter_mut().zip(&cols) {
            *slot = col.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{col:?}: {e}"),
            })?;
        }
        rows.push((i + 1, nums));
    }
    if rows.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            found: rows.len(),
        });
    }
    let tol = 1e-6 * grid.spacing();
    let mut values = Vec::with_capacity(rows.len());
    for (row, ((line, [x, y, v]), p)) in rows.into_iter().zip(&grid.points).enumerate() {
        if (x - p.x).abs() > tol || (y - p.y).abs() > tol {
            return Err(Error::Parse {
                line,
                message: format!("coordinates ({x}, {y}) do not match grid sample {row}"),
            });
        }
        if v < 0.0 {
            return Err(Error::NegativeValue { row, value: v });
        }
        values.push(v);
    }
    ScalarField::new(grid, values)
}
