//! Measurement-side analysis: resonance extraction from single-port S11
//! reflection traces, per-column frequency-ladder linearity, and the
//! cross-design comparison report.

use crate::chipmodel::FrequencyTable;
use crate::numerics::{self, LineFit, NumericsError};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trace needs at least 16 samples, got {0}")]
    TraceTooShort(usize),
    #[error("trace frequencies must be strictly increasing and finite (sample {0})")]
    TraceNotSorted(usize),
    #[error("trace csv, line {line}: {msg}")]
    TraceCsv { line: usize, msg: String },
    #[error("no resonance detected in the trace (phase winding {winding:.3} rad, derivative peak/median {contrast:.2})")]
    NoResonance { winding: f64, contrast: f64 },
    #[error("need at least 3 points after excluding {exclude_tail}, got {kept}")]
    TooFewPoints { exclude_tail: usize, kept: usize },
    #[error("column {column} is missing from the frequency table")]
    EmptyColumn { column: usize },
    #[error("no baseline columns (etched length 0) in the table")]
    MissingBaseline,
    #[error("table holds a single etched length; nothing to compare")]
    SingleDesign,
    #[error("no target step configured for etched length {0} um")]
    MissingTarget(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A reflection trace: (frequency GHz, complex S11) with strictly
/// increasing frequencies and at least 16 samples.
#[derive(Clone, Debug, PartialEq)]
pub struct S11Trace {
    points: Vec<(f64, Complex64)>,
}

impl S11Trace {
    pub fn new(points: Vec<(f64, Complex64)>) -> Result<Self, AnalysisError> {
        if points.len() < 16 {
            return Err(AnalysisError::TraceTooShort(points.len()));
        }
        for (i, pair) in points.windows(2).enumerate() {
            if !(pair[1].0 > pair[0].0) {
                return Err(AnalysisError::TraceNotSorted(i + 1));
            }
        }
        if points
            .iter()
            .any(|(f, z)| !(f.is_finite() && z.re.is_finite() && z.im.is_finite()))
        {
            return Err(AnalysisError::TraceNotSorted(0));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, Complex64)] {
        &self.points
    }

    /// Parse `freq_GHz,re,im` CSV; `#` lines are comments.
    pub fn from_csv(csv_text: &str) -> Result<Self, AnalysisError> {
        let mut points = Vec::new();
        let mut header_seen = false;
        for (i, raw) in csv_text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "freq_GHz,re,im" {
                    return Err(AnalysisError::TraceCsv {
                        line: i + 1,
                        msg: format!("expected header `freq_GHz,re,im`, got `{line}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(AnalysisError::TraceCsv {
                    line: i + 1,
                    msg: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 3];
            for (v, (name, field)) in vals
                .iter_mut()
                .zip(["freq_GHz", "re", "im"].iter().zip(&fields))
            {
                *v = field.trim().parse().map_err(|e| AnalysisError::TraceCsv {
                    line: i + 1,
                    msg: format!("field `{name}`: {e}"),
                })?;
            }
            points.push((vals[0], Complex64::new(vals[1], vals[2])));
        }
        Self::new(points)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_GHz,re,im\n");
        for (f, z) in &self.points {
            out.push_str(&format!("{},{},{}\n", f, z.re, z.im));
        }
        out
    }
}

/// Single-port reflection coefficient of a resonator at `f0_ghz` with
/// external linewidth `kappa_c_mhz` and internal loss `kappa_i_mhz`
/// (unit amplitude, zero global phase):
/// S11 = (i 2 pi (f - f0) + pi (k_i - k_c)) / (i 2 pi (f - f0) + pi (k_i + k_c)).
pub fn model_s11(f_ghz: f64, f0_ghz: f64, kappa_c_mhz: f64, kappa_i_mhz: f64) -> Complex64 {
    let x = 2.0 * PI * (f_ghz - f0_ghz) * 1e3;
    let num = Complex64::new(PI * (kappa_i_mhz - kappa_c_mhz), x);
    let den = Complex64::new(PI * (kappa_i_mhz + kappa_c_mhz), x);
    num / den
}

/// Extracted resonance parameters. `residual` is the root-mean-square
/// misfit relative to the trace power; `converged` is false when the
/// refinement hit its iteration cap (the best-so-far values are returned).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResonanceFit {
    pub f0_ghz: f64,
    pub kappa_c_mhz: f64,
    pub kappa_i_mhz: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Unwrap phases to a continuous sequence.
fn unwrapped_phases(points: &[(f64, Complex64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut prev_raw = points[0].1.arg();
    let mut acc = prev_raw;
    out.push(acc);
    for (_, z) in &points[1..] {
        let raw = z.arg();
        let mut d = raw - prev_raw;
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        acc += d;
        out.push(acc);
        prev_raw = raw;
    }
    out
}

/// Phase derivative (rad/GHz) smoothed by a centered 5-point moving
/// average.
fn smoothed_phase_derivative(freqs: &[f64], phases: &[f64]) -> Vec<f64> {
    let n = freqs.len();
    let deriv: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            (phases[b] - phases[a]) / (freqs[b] - freqs[a])
        })
        .collect();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            let hi = (k + 2).min(n - 1);
            deriv[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Complex amplitude that projects the model onto the data in the
/// least-squares sense.
fn best_amplitude(model: &[Complex64], data: &[Complex64]) -> Complex64 {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (m, z) in model.iter().zip(data) {
        num += m.conj() * z;
        den += m.norm_sqr();
    }
    if den == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        num / den
    }
}

/// Stacked real residual (Re then Im per sample) of the amplitude-projected
/// model, and its squared norm.
fn projected_residual(
    freqs: &[f64],
    data: &[Complex64],
    p: &[f64; 3],
    out: &mut Vec<f64>,
) -> f64 {
    let model: Vec<Complex64> = freqs
        .iter()
        .map(|&f| model_s11(f, p[0], p[1] * p[1], p[2] * p[2]))
        .collect();
    let a = best_amplitude(&model, data);
    out.clear();
    let mut cost = 0.0;
    for (m, z) in model.iter().zip(data) {
        let r = a * m - z;
        out.push(r.re);
        out.push(r.im);
        cost += r.norm_sqr();
    }
    cost
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [[f64; 3]; 3]| -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for i in 0..3 {
        let mut mi = m;
        for row in 0..3 {
            mi[row][i] = b[row];
        }
        x[i] = det(mi) / d;
    }
    Some(x)
}

/// Fit the reflection model to a trace.
///
/// The resonance is located from the peak of the smoothed phase
/// derivative; a trace with neither a localized derivative peak nor a
/// phase swing of pi/2 is rejected as resonance-free. The model amplitude
/// and phase are projected out in closed form each evaluation, and
/// (f0, sqrt(kappa_c), sqrt(kappa_i)) are refined by Levenberg-Marquardt
/// until the relative cost decrease falls below 1e-8 (or 100 iterations,
/// flagged via `converged`).
pub fn fit_s11(trace: &S11Trace) -> Result<ResonanceFit, AnalysisError> {
    let n = trace.points.len();
    let freqs: Vec<f64> = trace.points.iter().map(|p| p.0).collect();
    let data: Vec<Complex64> = trace.points.iter().map(|p| p.1).collect();
    let phases = unwrapped_phases(&trace.points);
    let smooth = smoothed_phase_derivative(&freqs, &phases);

    let (mut peak_idx, mut peak) = (0, 0.0);
    for (k, &s) in smooth.iter().enumerate() {
        if s.abs() > peak {
            peak = s.abs();
            peak_idx = k;
        }
    }
    let mut sorted: Vec<f64> = smooth.iter().map(|s| s.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let winding = phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - phases.iter().cloned().fold(f64::INFINITY, f64::min);
    let contrast = if median > 0.0 { peak / median } else { f64::INFINITY };
    if winding < 0.5 * PI || contrast < 5.0 {
        return Err(AnalysisError::NoResonance { winding, contrast });
    }

    // Max phase slope of the model is 4/kappa_total (in angular units),
    // giving the linewidth seed; assume strong over-coupling for the split.
    let kappa_tot_mhz = (4.0 / peak * 1e3).abs().max(1e-6);
    let mut p = [
        freqs[peak_idx],
        (0.95 * kappa_tot_mhz).sqrt(),
        (0.05 * kappa_tot_mhz).sqrt(),
    ];

    let sum_power: f64 = data.iter().map(|z| z.norm_sqr()).sum();
    let mut r = Vec::with_capacity(2 * n);
    let mut cost = projected_residual(&freqs, &data, &p, &mut r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut scratch = Vec::with_capacity(2 * n);

    for _ in 0..100 {
        if cost <= 1e-24 * sum_power {
            converged = true;
            break;
        }
        // Numeric Jacobian of the projected residual.
        let mut jac = vec![[0.0f64; 3]; 2 * n];
        for i in 0..3 {
            let h = 1e-6 * p[i].abs().max(1e-4);
            let mut pp = p;
            pp[i] += h;
            projected_residual(&freqs, &data, &pp, &mut scratch);
            let plus = scratch.clone();
            pp[i] = p[i] - h;
            projected_residual(&freqs, &data, &pp, &mut scratch);
            for k in 0..2 * n {
                jac[k][i] = (plus[k] - scratch[k]) / (2.0 * h);
            }
        }
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for k in 0..2 * n {
            for i in 0..3 {
                jtr[i] += jac[k][i] * r[k];
                for j in 0..3 {
                    jtj[i][j] += jac[k][i] * jac[k][j];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[i][i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 3.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let trial_cost = projected_residual(&freqs, &data, &trial, &mut scratch);
            if trial_cost < cost {
                let rel_drop = (cost - trial_cost) / cost;
                p = trial;
                std::mem::swap(&mut r, &mut scratch);
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if rel_drop < 1e-8 {
                    converged = true;
                }
                break;
            }
            lambda *= 3.0;
        }
        if converged || !accepted {
            converged = converged || !accepted && cost <= 1e-12 * sum_power;
            break;
        }
    }

    Ok(ResonanceFit {
        f0_ghz: p[0],
        kappa_c_mhz: p[1] * p[1],
        kappa_i_mhz: p[2] * p[2],
        residual: (cost / sum_power).sqrt(),
        converged,
    })
}

/// Default number of trailing rows excluded from ladder fits.
pub const DEFAULT_EXCLUDE_TAIL: usize = 2;

/// Fit frequency against row index after dropping the last `exclude_tail`
/// rows. Slope is the realized step (GHz per row); rmse is in GHz.
pub fn column_linearity(freqs_ghz: &[f64], exclude_tail: usize) -> Result<LineFit, AnalysisError> {
    let kept = freqs_ghz.len().saturating_sub(exclude_tail);
    if kept < 3 {
        return Err(AnalysisError::TooFewPoints { exclude_tail, kept });
    }
    let xs: Vec<f64> = (0..kept).map(|i| i as f64).collect();
    Ok(numerics::fit_line(&xs, &freqs_ghz[..kept])?)
}

/// Aggregate statistics of all columns sharing one etched length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignGroup {
    pub etched_length_um: f64,
    pub columns: Vec<usize>,
    pub mean_step_mhz: f64,
    pub mean_rmse_mhz: f64,
    pub target_step_mhz: f64,
    /// |mean step - target step|.
    pub off_target_mhz: f64,
    /// Baseline mean RMSE over this group's mean RMSE; 1 for the baseline
    /// itself, infinity when this group's ladders are exact.
    pub improvement_factor: f64,
}

/// Cross-design comparison, baseline being the unetched (0 um) columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignReport {
    pub baseline_etched_um: f64,
    pub groups: Vec<DesignGroup>,
}

fn json_number(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(if v > 0.0 { "inf" } else { "-inf" }.into()))
}

impl DesignReport {
    /// JSON with non-finite improvement factors rendered as strings.
    pub fn to_json(&self) -> String {
        let groups: Vec<serde_json::Value> = self
            .groups
            .iter()
            .map(|g| {
                serde_json::json!({
                    "etched_length_um": json_number(g.etched_length_um),
                    "columns": g.columns,
                    "mean_step_mhz": json_number(g.mean_step_mhz),
                    "mean_rmse_mhz": json_number(g.mean_rmse_mhz),
                    "target_step_mhz": json_number(g.target_step_mhz),
                    "off_target_mhz": json_number(g.off_target_mhz),
                    "improvement_factor": json_number(g.improvement_factor),
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "baseline_etched_um": json_number(self.baseline_etched_um),
            "groups": groups,
        }))
        .expect("report serialization cannot fail")
        + "\n"
    }

    pub fn to_text_table(&self) -> String {
        let mut out = String::from(
            "etched_um  columns  step_MHz    rmse_MHz    off_target_MHz  improvement\n",
        );
        for g in &self.groups {
            out.push_str(&format!(
                "{:<9} {:>8} {:>9.4} {:>11.6} {:>15.4} {:>12.3}\n",
                g.etched_length_um,
                g.columns.len(),
                g.mean_step_mhz,
                g.mean_rmse_mhz,
                g.off_target_mhz,
                g.improvement_factor,
            ));
        }
        out
    }
}

/// Compare every etched-length group against the unetched baseline.
///
/// `targets` maps etched length (um, exact match) to the designed step in
/// MHz. Output is independent of the table's row order: groups are sorted
/// by etched length and columns by index.
pub fn compare_designs(
    table: &FrequencyTable,
    targets: &[(f64, f64)],
    exclude_tail: usize,
) -> Result<DesignReport, AnalysisError> {
    // column index -> (etched length, row -> freq)
    let mut columns: BTreeMap<usize, (f64, BTreeMap<usize, f64>)> = BTreeMap::new();
    for r in &table.rows {
        let entry = columns
            .entry(r.column)
            .or_insert_with(|| (r.etched_length_um, BTreeMap::new()));
        entry.1.insert(r.row, r.freq_ghz);
    }
    // etched length (by bits, ordered by value) -> columns
    let mut groups: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for (&col, &(etched, _)) in &columns {
        groups
            .entry(etched.to_bits())
            .or_insert((etched, Vec::new()))
            .1
            .push(col);
    }
    if !groups.contains_key(&0.0f64.to_bits()) {
        return Err(AnalysisError::MissingBaseline);
    }
    if groups.len() < 2 {
        return Err(AnalysisError::SingleDesign);
    }

    let stats_of = |cols: &[usize]| -> Result<(f64, f64), AnalysisError> {
        let (mut step_sum, mut rmse_sum) = (0.0, 0.0);
        for &col in cols {
            let (_, rows) = &columns[&col];
            if rows.is_empty() {
                return Err(AnalysisError::EmptyColumn { column: col });
            }
            let freqs: Vec<f64> = rows.values().copied().collect();
            let fit = column_linearity(&freqs, exclude_tail)?;
            step_sum += fit.slope * 1e3;
            rmse_sum += fit.rmse * 1e3;
        }
        Ok((step_sum / cols.len() as f64, rmse_sum / cols.len() as f64))
    };

    let (_, baseline_cols) = &groups[&0.0f64.to_bits()];
    let (_, baseline_rmse) = stats_of(baseline_cols)?;

    let mut ordered: Vec<(f64, Vec<usize>)> = groups.into_values().collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out = Vec::new();
    for (etched, mut cols) in ordered {
        cols.sort_unstable();
        let (mean_step, mean_rmse) = stats_of(&cols)?;
        let target = targets
            .iter()
            .find(|(len, _)| *len == etched)
            .map(|(_, step)| *step)
            .ok_or(AnalysisError::MissingTarget(etched))?;
        let improvement = if etched == 0.0 {
            1.0
        } else if mean_rmse == 0.0 {
            f64::INFINITY
        } else {
            baseline_rmse / mean_rmse
        };
        out.push(DesignGroup {
            etched_length_um: etched,
            columns: cols,
            mean_step_mhz: mean_step,
            mean_rmse_mhz: mean_rmse,
            target_step_mhz: target,
            off_target_mhz: (mean_step - target).abs(),
            improvement_factor: improvement,
        });
    }
    Ok(DesignReport {
        baseline_etched_um: 0.0,
        groups: out,
    })
}
