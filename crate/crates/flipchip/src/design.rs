//! Design-space search on top of the CPW model: the spacing-insensitive
//! etching ratio, length calibration to target frequencies, and frequency
//! allocation inside a shared filter bandwidth.

use crate::cpw::{
    self, CpwError, CrossSection, EtchPosition, FreqModel, ResonatorDesign,
};
use crate::numerics::{self, NumericsError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("sensitivities at gamma 0 and 1 do not straddle zero ({s0:.3} and {s1:.3} MHz/um): no spacing-insensitive ratio")]
    NoInsensitiveRatio { s0: f64, s1: f64 },
    #[error("target frequency must be positive, got {0} GHz")]
    NonPositiveTarget(f64),
    #[error("calibrated length misses target by {0:.3} kHz (tolerance 1 kHz)")]
    CalibrationTolerance(f64),
    #[error("resonator count must be at least 1")]
    EmptyAllocation,
    #[error("frequency step must be positive, got {0} MHz")]
    NonPositiveStep(f64),
    #[error("calibration table invalid: {0}")]
    BadCalibration(&'static str),
    #[error("calibration csv, line {line}: {msg}")]
    CalibrationCsv { line: usize, msg: String },
    #[error("etched length {query} um outside calibration range [{min}, {max}] um")]
    EtchedLengthOutOfRange { query: f64, min: f64, max: f64 },
    #[error(transparent)]
    Cpw(#[from] CpwError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn template(cross: &CrossSection, gamma: f64, model: FreqModel) -> ResonatorDesign {
    ResonatorDesign {
        total_length_mm: 4.5,
        gamma,
        cross: *cross,
        etch_position: EtchPosition::AtShortedEnd,
        model,
    }
}

/// Etching ratio at which df/dh vanishes at the reference spacing.
///
/// The metal-facing section pulls the frequency down with growing spacing
/// and the dielectric-facing section pulls it up, so df/dh crosses zero at
/// exactly one ratio; Brent finds it on [0, 1]. Fails when the endpoint
/// sensitivities share a sign (that geometry admits no insensitive point).
pub fn optimal_gamma(
    cross: &CrossSection,
    total_length_mm: f64,
    h_ref_um: f64,
    model: FreqModel,
) -> Result<f64, DesignError> {
    let base = template(cross, 0.0, model).with_length(total_length_mm);
    let s0 = cpw::sensitivity(&base.with_gamma(0.0), h_ref_um)?;
    let s1 = cpw::sensitivity(&base.with_gamma(1.0), h_ref_um)?;
    if s0.signum() == s1.signum() {
        return Err(DesignError::NoInsensitiveRatio { s0, s1 });
    }
    let mut err: Option<CpwError> = None;
    let gamma = numerics::brent_root(
        |g| match cpw::sensitivity(&base.with_gamma(g), h_ref_um) {
            Ok(s) => s,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        },
        0.0,
        1.0,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(gamma?)
}

/// Physical length (mm) at which the resonator hits `f_target_ghz` at the
/// reference spacing, to 1 kHz.
///
/// The frequency scales as 1/length in both models, so the uniform-line
/// seed f(1 mm)/f_target already lands on the answer to rounding; Brent on
/// a bracket around the seed then enforces the tolerance independent of
/// that scaling argument.
pub fn calibrate_length(
    cross: &CrossSection,
    gamma: f64,
    h_ref_um: f64,
    f_target_ghz: f64,
    model: FreqModel,
) -> Result<f64, DesignError> {
    if !(f_target_ghz > 0.0) {
        return Err(DesignError::NonPositiveTarget(f_target_ghz));
    }
    let base = template(cross, gamma, model);
    let f_unit = cpw::resonator_frequency(&base.with_length(1.0), h_ref_um)?;
    let seed = f_unit / f_target_ghz;
    let mut err: Option<CpwError> = None;
    let mut miss = |ell: f64| match cpw::resonator_frequency(&base.with_length(ell), h_ref_um) {
        Ok(f) => f - f_target_ghz,
        Err(e) => {
            err = Some(e);
            f64::NAN
        }
    };
    let ell = if miss(seed) == 0.0 {
        seed
    } else {
        numerics::brent_root(&mut miss, 0.9 * seed, 1.1 * seed, 1e-10)?
    };
    if let Some(e) = err {
        return Err(e.into());
    }
    let achieved = cpw::resonator_frequency(&base.with_length(ell), h_ref_um)?;
    let miss_khz = (achieved - f_target_ghz).abs() * 1e6;
    if miss_khz > 1.0 {
        return Err(DesignError::CalibrationTolerance(miss_khz));
    }
    Ok(ell)
}

/// Evenly stepped frequency ladder centered on `center_ghz`:
/// f_i = center + (i - (count-1)/2) * step.
pub fn target_frequencies(center_ghz: f64, step_mhz: f64, count: usize) -> Vec<f64> {
    let half = 0.5 * (count as f64 - 1.0);
    (0..count)
        .map(|i| center_ghz + (i as f64 - half) * step_mhz * 1e-3)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AllocationEntry {
    pub index: usize,
    pub target_freq_ghz: f64,
    pub length_mm: f64,
}

/// A ladder of resonator targets inside one filter bandwidth, each with its
/// calibrated physical length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocationPlan {
    pub filter_center_ghz: f64,
    pub step_mhz: f64,
    pub entries: Vec<AllocationEntry>,
}

/// Allocate `count` resonators around `filter_center_ghz` and calibrate a
/// length for each at the reference spacing.
pub fn allocate(
    filter_center_ghz: f64,
    step_mhz: f64,
    count: usize,
    cross: &CrossSection,
    gamma: f64,
    h_ref_um: f64,
    model: FreqModel,
) -> Result<AllocationPlan, DesignError> {
    if count == 0 {
        return Err(DesignError::EmptyAllocation);
    }
    if !(step_mhz > 0.0) {
        return Err(DesignError::NonPositiveStep(step_mhz));
    }
    let entries = target_frequencies(filter_center_ghz, step_mhz, count)
        .into_iter()
        .enumerate()
        .map(|(index, target_freq_ghz)| {
            Ok(AllocationEntry {
                index,
                target_freq_ghz,
                length_mm: calibrate_length(cross, gamma, h_ref_um, target_freq_ghz, model)?,
            })
        })
        .collect::<Result<Vec<_>, DesignError>>()?;
    Ok(AllocationPlan {
        filter_center_ghz,
        step_mhz,
        entries,
    })
}

/// Piecewise-linear map from the fabrication "etched length" knob to the
/// model's length fraction gamma. Anchored at (0, 0); the upper end is
/// process-specific and supplied by the user.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtchCalibration {
    points: Vec<(f64, f64)>,
}

impl Default for EtchCalibration {
    /// Two-point anchor: a 330 um etch window realizing gamma 0.82.
    fn default() -> Self {
        Self {
            points: vec![(0.0, 0.0), (330.0, 0.82)],
        }
    }
}

impl EtchCalibration {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, DesignError> {
        if points.len() < 2 {
            return Err(DesignError::BadCalibration("needs at least two points"));
        }
        if points[0] != (0.0, 0.0) {
            return Err(DesignError::BadCalibration("must be anchored at (0, 0)"));
        }
        for pair in points.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(DesignError::BadCalibration(
                    "etched lengths must be strictly increasing",
                ));
            }
            if !(pair[1].1 > pair[0].1) {
                return Err(DesignError::BadCalibration(
                    "gamma values must be strictly increasing",
                ));
            }
        }
        if points.last().unwrap().1 > 1.0 {
            return Err(DesignError::BadCalibration("gamma values must stay within [0, 1]"));
        }
        Ok(Self { points })
    }

    /// Parse `etched_length_um,gamma` CSV; `#` lines are comments.
    pub fn from_csv_str(text: &str) -> Result<Self, DesignError> {
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "etched_length_um,gamma" {
                    return Err(DesignError::CalibrationCsv {
                        line: i + 1,
                        msg: format!("expected header `etched_length_um,gamma`, got `{line}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64, DesignError> {
                fields
                    .next()
                    .ok_or_else(|| DesignError::CalibrationCsv {
                        line: i + 1,
                        msg: format!("missing field `{name}`"),
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| DesignError::CalibrationCsv {
                        line: i + 1,
                        msg: format!("field `{name}`: {e}"),
                    })
            };
            let etched = next("etched_length_um")?;
            let gamma = next("gamma")?;
            if fields.next().is_some() {
                return Err(DesignError::CalibrationCsv {
                    line: i + 1,
                    msg: "too many fields".into(),
                });
            }
            rows.push((etched, gamma));
        }
        if !header_seen {
            return Err(DesignError::CalibrationCsv {
                line: 0,
                msg: "empty input".into(),
            });
        }
        Self::new(rows)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn gamma_at(&self, etched_length_um: f64) -> Result<f64, DesignError> {
        let (min, max) = (self.points[0].0, self.points.last().unwrap().0);
        if !(etched_length_um >= min && etched_length_um <= max) {
            return Err(DesignError::EtchedLengthOutOfRange {
                query: etched_length_um,
                min,
                max,
            });
        }
        let j = self
            .points
            .windows(2)
            .position(|p| etched_length_um <= p[1].0)
            .unwrap();
        let (x0, y0) = self.points[j];
        let (x1, y1) = self.points[j + 1];
        let t = (etched_length_um - x0) / (x1 - x0);
        Ok(y0 + t * (y1 - y0))
    }
}

/// See [`EtchCalibration::gamma_at`].
pub fn gamma_from_etched_length(
    cal: &EtchCalibration,
    etched_length_um: f64,
) -> Result<f64, DesignError> {
    cal.gamma_at(etched_length_um)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H_REF: f64 = 9.0;

    #[test]
    fn gamma_star_kills_the_derivative() {
        let cross = CrossSection::default();
        let g = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Averaged).unwrap();
        assert!(g > 0.0 && g < 1.0);
        let d = template(&cross, g, FreqModel::Averaged);
        assert!(cpw::sensitivity(&d, H_REF).unwrap().abs() < 0.05);
        // Metal-facing dominance below the optimum, dielectric above.
        assert!(cpw::sensitivity(&d.with_gamma(g - 0.05), H_REF).unwrap() < 0.0);
        assert!(cpw::sensitivity(&d.with_gamma(g + 0.05), H_REF).unwrap() > 0.0);
    }

    #[test]
    fn sensitivity_crosses_zero_exactly_once() {
        let d = template(&CrossSection::default(), 0.0, FreqModel::Averaged);
        let mut changes = 0;
        let mut prev = cpw::sensitivity(&d.with_gamma(0.0), H_REF).unwrap();
        for i in 1..=1000 {
            let s = cpw::sensitivity(&d.with_gamma(i as f64 * 1e-3), H_REF).unwrap();
            if s.signum() != prev.signum() {
                changes += 1;
            }
            prev = s;
        }
        assert_eq!(changes, 1);
    }

    #[test]
    fn gamma_star_is_length_invariant() {
        let cross = CrossSection::default();
        let g_a = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Averaged).unwrap();
        let g_b = optimal_gamma(&cross, 9.0, H_REF, FreqModel::Averaged).unwrap();
        assert!((g_a - g_b).abs() < 1e-9);
    }

    #[test]
    fn cascade_and_averaged_optima_are_close() {
        // The exact cascade resonance weights the two sections by local
        // energy rather than by length, so its optimum sits below the
        // averaged one; at the default geometry the gap is about 0.11.
        let cross = CrossSection::default();
        let g_avg = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Averaged).unwrap();
        let g_cas = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Cascade).unwrap();
        assert!(g_cas > 0.0 && g_cas < 1.0);
        assert!((g_avg - g_cas).abs() < 0.2, "avg {g_avg} vs cascade {g_cas}");
    }

    #[test]
    fn no_insensitive_ratio_without_sign_change() {
        // In vacuum the dielectric-facing section has no dielectric to
        // push against: its sensitivity vanishes at gamma=1 and stays
        // negative below, so no crossing exists.
        let cross = CrossSection {
            substrate_eps: 1.0,
            ..CrossSection::default()
        };
        let err = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Averaged).unwrap_err();
        assert!(matches!(err, DesignError::NoInsensitiveRatio { .. }), "{err}");
    }

    #[test]
    fn calibration_round_trip_and_closed_form() {
        let cross = CrossSection::default();
        for model in [FreqModel::Averaged, FreqModel::Cascade] {
            for gamma in [0.0, 0.5, 0.82] {
                let ell = calibrate_length(&cross, gamma, H_REF, 6.5, model).unwrap();
                let d = template(&cross, gamma, model).with_length(ell);
                let f = cpw::resonator_frequency(&d, H_REF).unwrap();
                assert!((f - 6.5).abs() < 1e-6, "{model:?} gamma {gamma}: {f}");
            }
        }
        // Uniform line admits l = v / (4 f).
        let v = cpw::line_params(&cross.at(H_REF, cpw::Facing::Metal))
            .unwrap()
            .phase_velocity;
        let want_mm = v / (4.0 * 6.5e9) * 1e3;
        let got = calibrate_length(&cross, 0.0, H_REF, 6.5, FreqModel::Averaged).unwrap();
        assert!(((got - want_mm) / want_mm).abs() < 1e-9);
    }

    #[test]
    fn ladder_lengths_decrease_with_frequency() {
        let cross = CrossSection::default();
        let mut prev = f64::INFINITY;
        for i in 0..12 {
            let f = 6.35 + 0.03 * i as f64;
            let ell = calibrate_length(&cross, 0.82, H_REF, f, FreqModel::Averaged).unwrap();
            assert!(ell < prev, "length must fall as frequency rises");
            prev = ell;
        }
    }

    #[test]
    fn optimum_flattens_the_band_tenfold() {
        let cross = CrossSection::default();
        let g = optimal_gamma(&cross, 4.5, H_REF, FreqModel::Averaged).unwrap();
        let span = |gamma: f64| {
            let d = template(&cross, gamma, FreqModel::Averaged);
            let f_ref = cpw::resonator_frequency(&d, H_REF).unwrap();
            (0..=32)
                .map(|i| 8.2 + 1.6 * i as f64 / 32.0)
                .map(|h| (cpw::resonator_frequency(&d, h).unwrap() - f_ref).abs())
                .fold(0.0, f64::max)
        };
        assert!(span(g) * 10.0 < span(0.0));
    }

    #[test]
    fn allocation_ladder_structure() {
        let cross = CrossSection::default();
        let plan = allocate(6.7, 30.0, 14, &cross, 0.5, H_REF, FreqModel::Averaged).unwrap();
        assert_eq!(plan.entries.len(), 14);
        // Symmetric about the center, uniform step, detunings -195..=195.
        for (i, e) in plan.entries.iter().enumerate() {
            let mirror = &plan.entries[13 - i];
            assert!((e.target_freq_ghz + mirror.target_freq_ghz - 2.0 * 6.7).abs() < 1e-12);
            assert_eq!(e.index, i);
        }
        for pair in plan.entries.windows(2) {
            let step = (pair[1].target_freq_ghz - pair[0].target_freq_ghz) * 1e3;
            assert!((step - 30.0).abs() < 1e-9);
            assert!(pair[1].length_mm < pair[0].length_mm);
        }
        let d0 = (plan.entries[0].target_freq_ghz - 6.7) * 1e3;
        let d13 = (plan.entries[13].target_freq_ghz - 6.7) * 1e3;
        assert!((d0 + 195.0).abs() < 1e-9 && (d13 - 195.0).abs() < 1e-9);

        let single = allocate(6.7, 30.0, 1, &cross, 0.5, H_REF, FreqModel::Averaged).unwrap();
        assert_eq!(single.entries[0].target_freq_ghz, 6.7);

        // A 12-ladder at 30 MHz spans 330 MHz, inside a 600 MHz bandwidth.
        let twelve = target_frequencies(6.7, 30.0, 12);
        let span_mhz = (twelve[11] - twelve[0]) * 1e3;
        assert!((span_mhz - 330.0).abs() < 1e-9 && span_mhz < 600.0);

        assert!(allocate(6.7, 30.0, 0, &cross, 0.5, H_REF, FreqModel::Averaged).is_err());
        assert!(allocate(6.7, -1.0, 3, &cross, 0.5, H_REF, FreqModel::Averaged).is_err());
    }

    #[test]
    fn etch_calibration_interpolates() {
        let cal = EtchCalibration::default();
        assert_eq!(cal.gamma_at(0.0).unwrap(), 0.0);
        assert!((cal.gamma_at(165.0).unwrap() - 0.41).abs() < 1e-12);
        assert!((cal.gamma_at(330.0).unwrap() - 0.82).abs() < 1e-15);
        assert!(matches!(
            cal.gamma_at(331.0),
            Err(DesignError::EtchedLengthOutOfRange { .. })
        ));
        assert!((gamma_from_etched_length(&cal, 165.0).unwrap() - 0.41).abs() < 1e-12);
    }

    #[test]
    fn etch_calibration_validation() {
        assert!(EtchCalibration::new(vec![(0.0, 0.0)]).is_err());
        assert!(EtchCalibration::new(vec![(1.0, 0.1), (330.0, 0.8)]).is_err());
        assert!(EtchCalibration::new(vec![(0.0, 0.0), (5.0, 0.5), (5.0, 0.6)]).is_err());
        assert!(EtchCalibration::new(vec![(0.0, 0.0), (5.0, 0.5), (6.0, 0.4)]).is_err());
        assert!(EtchCalibration::new(vec![(0.0, 0.0), (5.0, 1.2)]).is_err());
        assert!(EtchCalibration::new(vec![(0.0, 0.0), (5.0, 0.5), (6.0, 0.9)]).is_ok());
    }

    #[test]
    fn etch_calibration_csv() {
        let text = "# process B\netched_length_um,gamma\n0,0\n100,0.3\n330,0.82\n";
        let cal = EtchCalibration::from_csv_str(text).unwrap();
        assert_eq!(cal.points().len(), 3);
        assert!((cal.gamma_at(50.0).unwrap() - 0.15).abs() < 1e-12);
        assert!(EtchCalibration::from_csv_str("bogus\n0,0\n").is_err());
        assert!(EtchCalibration::from_csv_str("etched_length_um,gamma\n0,0\nx,0.5\n").is_err());
        assert!(EtchCalibration::from_csv_str("").is_err());
    }

    proptest! {
        /// Any valid table interpolates monotonically inside [0, 1].
        #[test]
        fn calibration_is_monotone(
            raw in proptest::collection::vec((0.01..100.0f64, 0.001..1.0f64), 1..6),
            queries in proptest::collection::vec(0.0..1.0f64, 8),
        ) {
            let mut x = 0.0;
            let mut points = vec![(0.0, 0.0)];
            let total_g: f64 = raw.iter().map(|r| r.1).sum();
            let mut g = 0.0;
            for (dx, dg) in &raw {
                x += dx;
                g += dg / total_g;
                points.push((x, g.min(1.0)));
            }
            if let Ok(cal) = EtchCalibration::new(points) {
                let max_x = cal.points().last().unwrap().0;
                let mut sorted = queries.clone();
                sorted.sort_by(f64::total_cmp);
                let mut prev = -1.0;
                for q in sorted {
                    let val = cal.gamma_at(q * max_x).unwrap();
                    prop_assert!((0.0..=1.0).contains(&val));
                    prop_assert!(val >= prev);
                    prev = val;
                }
            }
        }
    }
}
