//! Inter-chip spacing from height scans and synthetic chip generation:
//! subtract the top-chip thickness, fit the tilt plane (plus gridded
//! residuals when the scan is a complete grid), evaluate the spacing under
//! every resonator footprint, and simulate the resulting frequency table.
//!
//! Coordinates are mm in-plane and um out-of-plane, so plane slopes are
//! um/mm = mrad and the reported tilt is slope * 1e3 urad.

use crate::cpw::{self, CpwError, ResonatorDesign};
use crate::design::AllocationPlan;
use crate::numerics::{self, NumericsError, PlaneFit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChipError {
    #[error("scan csv, line {line}: {msg}")]
    ScanCsv { line: usize, msg: String },
    #[error("scan contains no samples")]
    EmptyScan,
    #[error("top-chip thickness must be positive, got {0} um")]
    NonPositiveThickness(f64),
    #[error("layout invalid: {0}")]
    BadLayout(&'static str),
    #[error("footprint ({col}, {row}) outside the {columns} x {rows} layout")]
    FootprintOutOfRange {
        col: usize,
        row: usize,
        columns: usize,
        rows: usize,
    },
    #[error("spacing map must be positive over the chip; sample minimum is {0} um")]
    NonPositiveSpacing(f64),
    #[error("need one design and one allocation plan per column ({columns} columns, got {designs} designs, {plans} plans)")]
    ColumnCountMismatch {
        columns: usize,
        designs: usize,
        plans: usize,
    },
    #[error("column {col} plan holds {entries} entries for {rows} rows")]
    PlanTooShort {
        col: usize,
        entries: usize,
        rows: usize,
    },
    #[error("frequency csv, line {line}: {msg}")]
    FrequencyCsv { line: usize, msg: String },
    #[error("noise sigma must be non-negative and finite, got {0} MHz")]
    BadNoise(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Cpw(#[from] CpwError),
}

/// Rectangular chip with resonators on a regular column x row grid and one
/// etched length per column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipLayout {
    pub columns: usize,
    pub rows: usize,
    pub width_mm: f64,
    pub height_mm: f64,
    /// Etch-window length per column (um); 0 marks an unetched column.
    pub etched_length_um: Vec<f64>,
}

impl Default for ChipLayout {
    /// 15 x 12 resonators on a 25 x 10 mm chip, etched and unetched
    /// columns alternating.
    fn default() -> Self {
        Self {
            columns: 15,
            rows: 12,
            width_mm: 25.0,
            height_mm: 10.0,
            etched_length_um: (0..15)
                .map(|c| if c % 2 == 1 { 330.0 } else { 0.0 })
                .collect(),
        }
    }
}

impl ChipLayout {
    pub fn validate(&self) -> Result<(), ChipError> {
        if self.columns == 0 || self.rows == 0 {
            return Err(ChipError::BadLayout("needs at least one column and one row"));
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(ChipError::BadLayout("chip extent must be positive"));
        }
        if self.etched_length_um.len() != self.columns {
            return Err(ChipError::BadLayout("one etched length per column required"));
        }
        if self.etched_length_um.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ChipError::BadLayout("etched lengths must be finite and non-negative"));
        }
        Ok(())
    }

    /// Center (x, y) in mm of the footprint at (col, row).
    pub fn footprint_center(&self, col: usize, row: usize) -> Result<(f64, f64), ChipError> {
        if col >= self.columns || row >= self.rows {
            return Err(ChipError::FootprintOutOfRange {
                col,
                row,
                columns: self.columns,
                rows: self.rows,
            });
        }
        Ok((
            (col as f64 + 0.5) * self.width_mm / self.columns as f64,
            (row as f64 + 0.5) * self.height_mm / self.rows as f64,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanSample {
    pub x_mm: f64,
    pub y_mm: f64,
    pub height_um: f64,
}

/// Raw profilometer-style heights over the bonded pair, measured from the
/// bottom-chip reference, plus the top-chip thickness to subtract.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeightScan {
    pub samples: Vec<ScanSample>,
    pub top_chip_thickness_um: f64,
}

/// Parse `x_mm,y_mm,height_um` CSV; `#` lines are comments. Heights must
/// be finite and non-negative.
pub fn ingest_scan(csv_text: &str, top_chip_thickness_um: f64) -> Result<HeightScan, ChipError> {
    if !(top_chip_thickness_um > 0.0) {
        return Err(ChipError::NonPositiveThickness(top_chip_thickness_um));
    }
    let mut samples = Vec::new();
    let mut header_seen = false;
    for (i, raw) in csv_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "x_mm,y_mm,height_um" {
                return Err(ChipError::ScanCsv {
                    line: i + 1,
                    msg: format!("expected header `x_mm,y_mm,height_um`, got `{line}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(ChipError::ScanCsv {
                line: i + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 3];
        for (v, (name, field)) in vals
            .iter_mut()
            .zip(["x_mm", "y_mm", "height_um"].iter().zip(&fields))
        {
            *v = field.trim().parse().map_err(|e| ChipError::ScanCsv {
                line: i + 1,
                msg: format!("field `{name}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(ChipError::ScanCsv {
                    line: i + 1,
                    msg: format!("field `{name}` must be finite"),
                });
            }
        }
        if vals[2] < 0.0 {
            return Err(ChipError::ScanCsv {
                line: i + 1,
                msg: format!("height must be non-negative, got {}", vals[2]),
            });
        }
        samples.push(ScanSample {
            x_mm: vals[0],
            y_mm: vals[1],
            height_um: vals[2],
        });
    }
    if samples.is_empty() {
        return Err(ChipError::EmptyScan);
    }
    Ok(HeightScan {
        samples,
        top_chip_thickness_um,
    })
}

/// Render a scan as CSV with shortest round-trip number formatting, so
/// `ingest_scan(scan_to_csv(s))` reproduces every sample bit-exactly.
pub fn scan_to_csv(scan: &HeightScan) -> String {
    let mut out = String::from("x_mm,y_mm,height_um\n");
    for s in &scan.samples {
        out.push_str(&format!("{},{},{}\n", s.x_mm, s.y_mm, s.height_um));
    }
    out
}

/// Residuals of the plane fit on a complete rectangular sample grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualGrid {
    pub xs_mm: Vec<f64>,
    pub ys_mm: Vec<f64>,
    /// Row-major: values[iy * xs.len() + ix].
    pub values_um: Vec<f64>,
}

/// Spacing h(x, y) between the chip faces: a fitted plane, plus bilinear
/// residuals when the scan came on a complete grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpacingMap {
    pub plane: PlaneFit,
    pub residuals: Option<ResidualGrid>,
    pub mean_um: f64,
    pub min_um: f64,
    pub max_um: f64,
}

/// The summary emitted with chip outputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpacingReport {
    pub mean_um: f64,
    pub min_um: f64,
    pub max_um: f64,
    pub tilt_urad: f64,
    pub z0_um: f64,
    pub alpha_um_per_mm: f64,
    pub beta_um_per_mm: f64,
}

impl SpacingMap {
    /// Tilt angle between the chip faces in urad.
    pub fn tilt_urad(&self) -> f64 {
        self.plane.tilt() * 1e3
    }

    pub fn report(&self) -> SpacingReport {
        SpacingReport {
            mean_um: self.mean_um,
            min_um: self.min_um,
            max_um: self.max_um,
            tilt_urad: self.tilt_urad(),
            z0_um: self.plane.z0,
            alpha_um_per_mm: self.plane.alpha,
            beta_um_per_mm: self.plane.beta,
        }
    }
}

/// If the samples cover a complete nx x ny grid (bit-exact coordinate
/// match, each node exactly once), return sorted axes and row-major values.
fn detect_grid(samples: &[ScanSample], spacing: &[f64]) -> Option<ResidualGrid> {
    let mut xs: Vec<f64> = samples.iter().map(|s| s.x_mm).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut ys: Vec<f64> = samples.iter().map(|s| s.y_mm).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 || nx * ny != samples.len() {
        return None;
    }
    let mut values = vec![f64::NAN; nx * ny];
    for (s, &v) in samples.iter().zip(spacing) {
        let ix = xs.binary_search_by(|p| p.total_cmp(&s.x_mm)).ok()?;
        let iy = ys.binary_search_by(|p| p.total_cmp(&s.y_mm)).ok()?;
        if !values[iy * nx + ix].is_nan() {
            return None;
        }
        values[iy * nx + ix] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return None;
    }
    Some(ResidualGrid {
        xs_mm: xs,
        ys_mm: ys,
        values_um: values,
    })
}

/// Subtract the top-chip thickness and fit the tilt plane; attach gridded
/// residuals when the scan is a complete grid.
pub fn spacing_map(scan: &HeightScan) -> Result<SpacingMap, ChipError> {
    let spacing: Vec<f64> = scan
        .samples
        .iter()
        .map(|s| s.height_um - scan.top_chip_thickness_um)
        .collect();
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in &spacing {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    if !(min > 0.0) {
        return Err(ChipError::NonPositiveSpacing(min));
    }
    let points: Vec<(f64, f64, f64)> = scan
        .samples
        .iter()
        .zip(&spacing)
        .map(|(s, &v)| (s.x_mm, s.y_mm, v))
        .collect();
    let plane = numerics::fit_plane(&points)?;
    let residuals = detect_grid(&scan.samples, &spacing).map(|mut grid| {
        for (iy, &y) in grid.ys_mm.clone().iter().enumerate() {
            for (ix, &x) in grid.xs_mm.clone().iter().enumerate() {
                grid.values_um[iy * grid.xs_mm.len() + ix] -= plane.eval(x, y);
            }
        }
        grid
    });
    Ok(SpacingMap {
        plane,
        residuals,
        mean_um: sum / spacing.len() as f64,
        min_um: min,
        max_um: max,
    })
}

fn bilinear(grid: &ResidualGrid, x: f64, y: f64) -> f64 {
    let nx = grid.xs_mm.len();
    let cell = |axis: &[f64], v: f64| -> (usize, f64) {
        let v = v.clamp(axis[0], axis[axis.len() - 1]);
        let j = axis.partition_point(|&a| a <= v).saturating_sub(1).min(axis.len() - 2);
        ((j), (v - axis[j]) / (axis[j + 1] - axis[j]))
    };
    let (jx, tx) = cell(&grid.xs_mm, x);
    let (jy, ty) = cell(&grid.ys_mm, y);
    let v = |ix: usize, iy: usize| grid.values_um[iy * nx + ix];
    v(jx, jy) * (1.0 - tx) * (1.0 - ty)
        + v(jx + 1, jy) * tx * (1.0 - ty)
        + v(jx, jy + 1) * (1.0 - tx) * ty
        + v(jx + 1, jy + 1) * tx * ty
}

/// Spacing (um) at an arbitrary chip coordinate: plane plus interpolated
/// residual (clamped to the sampled rectangle when residuals exist).
pub fn spacing_at_xy(map: &SpacingMap, x_mm: f64, y_mm: f64) -> f64 {
    let mut h = map.plane.eval(x_mm, y_mm);
    if let Some(grid) = &map.residuals {
        h += bilinear(grid, x_mm, y_mm);
    }
    h
}

/// Spacing (um) under the footprint at (col, row).
pub fn spacing_at(
    map: &SpacingMap,
    layout: &ChipLayout,
    col: usize,
    row: usize,
) -> Result<f64, ChipError> {
    let (x, y) = layout.footprint_center(col, row)?;
    Ok(spacing_at_xy(map, x, y))
}

/// One simulated (or measured) resonator frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FreqRow {
    pub column: usize,
    pub row: usize,
    pub etched_length_um: f64,
    pub freq_ghz: f64,
}

/// Per-footprint frequency table, the interchange format between chip
/// simulation/measurement and analysis.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrequencyTable {
    pub rows: Vec<FreqRow>,
}

impl FrequencyTable {
    /// Render as `column,row,etched_length_um,freq_GHz` CSV with shortest
    /// round-trip number formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,row,etched_length_um,freq_GHz\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.column, r.row, r.etched_length_um, r.freq_ghz
            ));
        }
        out
    }

    pub fn from_csv(csv_text: &str) -> Result<Self, ChipError> {
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, raw) in csv_text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "column,row,etched_length_um,freq_GHz" {
                    return Err(ChipError::FrequencyCsv {
                        line: i + 1,
                        msg: format!(
                            "expected header `column,row,etched_length_um,freq_GHz`, got `{line}`"
                        ),
                    });
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(ChipError::FrequencyCsv {
                    line: i + 1,
                    msg: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse_err = |name: &str, e: &dyn std::fmt::Display| ChipError::FrequencyCsv {
                line: i + 1,
                msg: format!("field `{name}`: {e}"),
            };
            rows.push(FreqRow {
                column: fields[0].trim().parse().map_err(|e| parse_err("column", &e))?,
                row: fields[1].trim().parse().map_err(|e| parse_err("row", &e))?,
                etched_length_um: fields[2]
                    .trim()
                    .parse()
                    .map_err(|e| parse_err("etched_length_um", &e))?,
                freq_ghz: fields[3].trim().parse().map_err(|e| parse_err("freq_GHz", &e))?,
            });
        }
        if rows.is_empty() {
            return Err(ChipError::FrequencyCsv {
                line: 0,
                msg: "no data rows".into(),
            });
        }
        Ok(Self { rows })
    }
}

/// Predict every footprint's frequency from the spacing map.
///
/// Column `c` uses `column_designs[c]` with its length overridden per row
/// by `column_plans[c]`, so each row targets its own ladder frequency.
/// Gaussian noise of `noise_sigma_mhz` is added from a per-footprint RNG
/// stream (stream id col * rows + row), making the table independent of
/// evaluation order.
pub fn simulate_chip(
    layout: &ChipLayout,
    map: &SpacingMap,
    column_designs: &[ResonatorDesign],
    column_plans: &[AllocationPlan],
    noise_sigma_mhz: f64,
    seed: u64,
) -> Result<FrequencyTable, ChipError> {
    layout.validate()?;
    if column_designs.len() != layout.columns || column_plans.len() != layout.columns {
        return Err(ChipError::ColumnCountMismatch {
            columns: layout.columns,
            designs: column_designs.len(),
            plans: column_plans.len(),
        });
    }
    if !(noise_sigma_mhz >= 0.0 && noise_sigma_mhz.is_finite()) {
        return Err(ChipError::BadNoise(noise_sigma_mhz));
    }
    for (col, plan) in column_plans.iter().enumerate() {
        if plan.entries.len() < layout.rows {
            return Err(ChipError::PlanTooShort {
                col,
                entries: plan.entries.len(),
                rows: layout.rows,
            });
        }
    }
    let normal = Normal::new(0.0, noise_sigma_mhz).expect("finite non-negative sigma");
    let mut rows = Vec::with_capacity(layout.columns * layout.rows);
    for col in 0..layout.columns {
        for row in 0..layout.rows {
            let design = column_designs[col].with_length(column_plans[col].entries[row].length_mm);
            let h = spacing_at(map, layout, col, row)?;
            let f = cpw::resonator_frequency(&design, h)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((col * layout.rows + row) as u64);
            let noise_mhz = normal.sample(&mut rng);
            rows.push(FreqRow {
                column: col,
                row,
                etched_length_um: layout.etched_length_um[col],
                freq_ghz: f + noise_mhz * 1e-3,
            });
        }
    }
    Ok(FrequencyTable { rows })
}

/// Construction recipe for a synthetic height scan over a layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipScenario {
    /// Tilt magnitude between the chip faces (urad).
    pub tilt_urad: f64,
    /// Direction of steepest spacing increase, degrees from the x axis.
    pub tilt_azimuth_deg: f64,
    /// Spacing at the chip center (um).
    pub mean_spacing_um: f64,
    /// Peak extra spacing at chip center from a dome-shaped bow (um).
    pub bow_um: f64,
    /// Gaussian measurement noise per scan sample (um).
    pub scan_noise_um: f64,
    pub top_chip_thickness_um: f64,
    pub seed: u64,
}

impl Default for ChipScenario {
    fn default() -> Self {
        Self {
            tilt_urad: 219.0,
            tilt_azimuth_deg: 63.5,
            mean_spacing_um: 9.6,
            bow_um: 0.0,
            scan_noise_um: 0.0,
            top_chip_thickness_um: 430.0,
            seed: 7,
        }
    }
}

/// Sample a synthetic scan at every footprint center: tilted plane through
/// the chip center, optional dome bow, optional Gaussian scan noise.
pub fn synthetic_scan(layout: &ChipLayout, scenario: &ChipScenario) -> Result<HeightScan, ChipError> {
    layout.validate()?;
    if !(scenario.top_chip_thickness_um > 0.0) {
        return Err(ChipError::NonPositiveThickness(scenario.top_chip_thickness_um));
    }
    let az = scenario.tilt_azimuth_deg.to_radians();
    // urad tilt -> um/mm slope components.
    let alpha = scenario.tilt_urad * 1e-3 * az.cos();
    let beta = scenario.tilt_urad * 1e-3 * az.sin();
    let (cx, cy) = (0.5 * layout.width_mm, 0.5 * layout.height_mm);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let normal = Normal::new(0.0, scenario.scan_noise_um.max(0.0)).expect("finite sigma");
    let mut samples = Vec::with_capacity(layout.columns * layout.rows);
    for col in 0..layout.columns {
        for row in 0..layout.rows {
            let (x, y) = layout.footprint_center(col, row)?;
            let bow = scenario.bow_um
                * (std::f64::consts::PI * x / layout.width_mm).sin()
                * (std::f64::consts::PI * y / layout.height_mm).sin();
            let noise = if scenario.scan_noise_um > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            samples.push(ScanSample {
                x_mm: x,
                y_mm: y,
                height_um: scenario.top_chip_thickness_um
                    + scenario.mean_spacing_um
                    + alpha * (x - cx)
                    + beta * (y - cy)
                    + bow
                    + noise,
            });
        }
    }
    Ok(HeightScan {
        samples,
        top_chip_thickness_um: scenario.top_chip_thickness_um,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpw::{CrossSection, EtchPosition, FreqModel};
    use crate::design;

    fn uniform_scan(height: f64, thickness: f64) -> HeightScan {
        let layout = ChipLayout::default();
        let mut samples = Vec::new();
        for col in 0..layout.columns {
            for row in 0..layout.rows {
                let (x, y) = layout.footprint_center(col, row).unwrap();
                samples.push(ScanSample {
                    x_mm: x,
                    y_mm: y,
                    height_um: height,
                });
            }
        }
        HeightScan {
            samples,
            top_chip_thickness_um: thickness,
        }
    }

    #[test]
    fn ingest_minimal_and_errors() {
        let text = "x_mm,y_mm,height_um\n0,0,439\n1,0,440\n0,1,441\n";
        let scan = ingest_scan(text, 430.0).unwrap();
        assert_eq!(scan.samples.len(), 3);

        let bad = "x_mm,y_mm,height_um\n0,0,439\n1,zero,440\n";
        match ingest_scan(bad, 430.0).unwrap_err() {
            ChipError::ScanCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(ingest_scan("x_mm,y_mm,height_um\n0,0,-1\n", 430.0).is_err());
        assert!(ingest_scan("x_mm,y_mm,height_um\n0,0,nan\n", 430.0).is_err());
        assert!(matches!(
            ingest_scan("x_mm,y_mm,height_um\n", 430.0),
            Err(ChipError::EmptyScan)
        ));
        assert!(ingest_scan(text, 0.0).is_err());
    }

    #[test]
    fn scan_round_trips_bit_exactly() {
        let scan = synthetic_scan(
            &ChipLayout::default(),
            &ChipScenario {
                scan_noise_um: 0.05,
                bow_um: 0.3,
                ..ChipScenario::default()
            },
        )
        .unwrap();
        assert_eq!(scan.samples.len(), 180);
        let back = ingest_scan(&scan_to_csv(&scan), scan.top_chip_thickness_um).unwrap();
        assert_eq!(back, scan);
    }

    #[test]
    fn uniform_scan_gives_flat_map() {
        let map = spacing_map(&uniform_scan(439.6, 430.0)).unwrap();
        assert!((map.mean_um - 9.6).abs() < 1e-12);
        assert!((map.min_um - map.max_um).abs() < 1e-12);
        assert!(map.tilt_urad().abs() < 1e-9);
        for col in [0, 7, 14] {
            let h = spacing_at(&map, &ChipLayout::default(), col, 5).unwrap();
            assert!((h - 9.6).abs() < 1e-12);
        }
    }

    #[test]
    fn thickness_only_shifts_the_plane() {
        let scan = synthetic_scan(&ChipLayout::default(), &ChipScenario::default()).unwrap();
        let zero = HeightScan {
            samples: scan.samples.clone(),
            top_chip_thickness_um: 1e-300,
        };
        let with_t = spacing_map(&scan).unwrap();
        let without = spacing_map(&zero).unwrap();
        assert!((with_t.plane.z0 - (without.plane.z0 - 430.0)).abs() < 1e-9);
        assert!((with_t.plane.alpha - without.plane.alpha).abs() < 1e-12);
        assert!((with_t.plane.beta - without.plane.beta).abs() < 1e-12);
    }

    #[test]
    fn reference_scenario_recovers_tilt_and_range() {
        let layout = ChipLayout::default();
        let map = spacing_map(&synthetic_scan(&layout, &ChipScenario::default()).unwrap()).unwrap();
        assert!((map.tilt_urad() - 219.0).abs() < 0.219, "tilt {}", map.tilt_urad());
        assert!((map.mean_um - 9.6).abs() < 1e-9);
        // Half-range over footprint centers, then over the full chip
        // extent; the latter reaches the quoted +-2.2 um.
        let half_at_centers = 0.5 * (map.max_um - map.min_um);
        assert!((half_at_centers - 2.04).abs() < 0.05, "{half_at_centers}");
        let corners = [
            (0.0, 0.0),
            (25.0, 0.0),
            (0.0, 10.0),
            (25.0, 10.0),
        ];
        let extremes = corners.map(|(x, y)| map.plane.eval(x, y));
        let half_extent = 0.5
            * (extremes.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - extremes.iter().fold(f64::INFINITY, |a, &b| a.min(b)));
        assert!((half_extent - 2.2).abs() < 0.02, "{half_extent}");
        // Column means drift monotonically across the chip.
        let col_mean = |col: usize| {
            (0..12)
                .map(|row| spacing_at(&map, &layout, col, row).unwrap())
                .sum::<f64>()
                / 12.0
        };
        let means: Vec<f64> = (0..15).map(col_mean).collect();
        for pair in means.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn noisy_scan_still_recovers_tilt() {
        let scenario = ChipScenario {
            scan_noise_um: 0.05,
            seed: 11,
            ..ChipScenario::default()
        };
        let map = spacing_map(&synthetic_scan(&ChipLayout::default(), &scenario).unwrap()).unwrap();
        assert!(
            (map.tilt_urad() - 219.0).abs() < 0.02 * 219.0,
            "tilt {}",
            map.tilt_urad()
        );
    }

    #[test]
    fn residual_grid_reproduces_samples_exactly() {
        let layout = ChipLayout::default();
        let scenario = ChipScenario {
            bow_um: 0.4,
            ..ChipScenario::default()
        };
        let scan = synthetic_scan(&layout, &scenario).unwrap();
        let map = spacing_map(&scan).unwrap();
        assert!(map.residuals.is_some(), "footprint grid must be detected");
        for (i, s) in scan.samples.iter().enumerate() {
            let want = s.height_um - 430.0;
            let got = spacing_at_xy(&map, s.x_mm, s.y_mm);
            assert!((got - want).abs() < 1e-9, "sample {i}: {got} vs {want}");
        }
        // Off-node evaluation stays between the surrounding node values.
        let (x0, y0) = layout.footprint_center(3, 4).unwrap();
        let (x1, y1) = layout.footprint_center(4, 5).unwrap();
        let mid = spacing_at_xy(&map, 0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let nodes = [
            spacing_at_xy(&map, x0, y0),
            spacing_at_xy(&map, x1, y0),
            spacing_at_xy(&map, x0, y1),
            spacing_at_xy(&map, x1, y1),
        ];
        let lo = nodes.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = nodes.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        assert!(mid >= lo && mid <= hi);
    }

    #[test]
    fn incomplete_grids_fall_back_to_the_plane() {
        let mut scan = synthetic_scan(&ChipLayout::default(), &ChipScenario::default()).unwrap();
        scan.samples.pop();
        let map = spacing_map(&scan).unwrap();
        assert!(map.residuals.is_none());
    }

    fn column_setup(
        layout: &ChipLayout,
        gamma_etched: f64,
    ) -> (Vec<ResonatorDesign>, Vec<AllocationPlan>) {
        let cross = CrossSection::default();
        let mut designs = Vec::new();
        let mut plans = Vec::new();
        for col in 0..layout.columns {
            let gamma = if layout.etched_length_um[col] > 0.0 {
                gamma_etched
            } else {
                0.0
            };
            designs.push(ResonatorDesign {
                total_length_mm: 4.5,
                gamma,
                cross,
                etch_position: EtchPosition::AtShortedEnd,
                model: FreqModel::Averaged,
            });
            plans.push(
                design::allocate(6.5, 30.0, layout.rows, &cross, gamma, 9.0, FreqModel::Averaged)
                    .unwrap(),
            );
        }
        (designs, plans)
    }

    #[test]
    fn flat_chip_yields_designed_ladders() {
        let layout = ChipLayout::default();
        let scenario = ChipScenario {
            tilt_urad: 0.0,
            mean_spacing_um: 9.0,
            ..ChipScenario::default()
        };
        let map = spacing_map(&synthetic_scan(&layout, &scenario).unwrap()).unwrap();
        let (designs, plans) = column_setup(&layout, 0.82);
        let table = simulate_chip(&layout, &map, &designs, &plans, 0.0, 1).unwrap();
        assert_eq!(table.rows.len(), 180);
        for col in 0..layout.columns {
            let ys: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.column == col)
                .map(|r| r.freq_ghz)
                .collect();
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let fit = numerics::fit_line(&xs, &ys).unwrap();
            assert!((fit.slope * 1e3 - 30.0).abs() < 1e-3, "col {col}");
            assert!(fit.rmse * 1e3 < 1e-6, "col {col} rmse {} MHz", fit.rmse * 1e3);
        }
    }

    #[test]
    fn tilted_chip_curves_unetched_columns() {
        let layout = ChipLayout::default();
        let map =
            spacing_map(&synthetic_scan(&layout, &ChipScenario::default()).unwrap()).unwrap();
        let gamma_star =
            design::optimal_gamma(&CrossSection::default(), 4.5, 9.0, FreqModel::Averaged).unwrap();
        let (designs, plans) = column_setup(&layout, gamma_star);
        let table = simulate_chip(&layout, &map, &designs, &plans, 0.0, 1).unwrap();
        let rmse_of = |col: usize| {
            let ys: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.column == col)
                .map(|r| r.freq_ghz)
                .collect();
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            numerics::fit_line(&xs, &ys).unwrap().rmse * 1e3
        };
        let (mut plain, mut etched) = (Vec::new(), Vec::new());
        for col in 0..layout.columns {
            if layout.etched_length_um[col] > 0.0 {
                etched.push(rmse_of(col));
            } else {
                plain.push(rmse_of(col));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (m_plain, m_etched) = (mean(&plain), mean(&etched));
        assert!(m_plain > 0.1, "unetched columns must curve, rmse {m_plain} MHz");
        assert!(
            m_etched * 3.0 < m_plain,
            "etched {m_etched} MHz vs unetched {m_plain} MHz"
        );
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let layout = ChipLayout::default();
        let map =
            spacing_map(&synthetic_scan(&layout, &ChipScenario::default()).unwrap()).unwrap();
        let (designs, plans) = column_setup(&layout, 0.5);
        let a = simulate_chip(&layout, &map, &designs, &plans, 0.1, 42).unwrap();
        let b = simulate_chip(&layout, &map, &designs, &plans, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_chip(&layout, &map, &designs, &plans, 0.1, 43).unwrap();
        let max_delta_mhz = a
            .rows
            .iter()
            .zip(&c.rows)
            .map(|(r1, r2)| (r1.freq_ghz - r2.freq_ghz).abs() * 1e3)
            .fold(0.0, f64::max);
        assert!(max_delta_mhz > 0.0, "different seeds must differ");
        assert!(max_delta_mhz < 6.0 * 0.1 * 2.0, "noise bounded by O(sigma)");
    }

    #[test]
    fn frequency_table_round_trips() {
        let table = FrequencyTable {
            rows: vec![
                FreqRow { column: 0, row: 0, etched_length_um: 0.0, freq_ghz: 6.5123456789 },
                FreqRow { column: 1, row: 3, etched_length_um: 330.0, freq_ghz: 6.47 + 1e-13 },
            ],
        };
        let back = FrequencyTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(back, table);
        assert!(FrequencyTable::from_csv("wrong\n").is_err());
        match FrequencyTable::from_csv("column,row,etched_length_um,freq_GHz\n0,0,x,6.5\n") {
            Err(ChipError::FrequencyCsv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simulate_validates_inputs() {
        let layout = ChipLayout::default();
        let map =
            spacing_map(&synthetic_scan(&layout, &ChipScenario::default()).unwrap()).unwrap();
        let (designs, plans) = column_setup(&layout, 0.5);
        assert!(matches!(
            simulate_chip(&layout, &map, &designs[..3], &plans, 0.0, 1),
            Err(ChipError::ColumnCountMismatch { .. })
        ));
        assert!(matches!(
            simulate_chip(&layout, &map, &designs, &plans, -0.5, 1),
            Err(ChipError::BadNoise(_))
        ));
        assert!(matches!(
            spacing_at(&map, &layout, 15, 0),
            Err(ChipError::FootprintOutOfRange { .. })
        ));
    }
}
