//! Per-unit-length capacitance and inductance of flip-chip CPW
//! cross-sections, and the quarter-wave resonator frequency they imply as a
//! function of the spacing between the two chip faces.
//!
//! The cross-section is a conventional CPW (center strip of width `w`,
//! gaps `s`) on an infinitely thick substrate, with the opposing chip at
//! height `h` above the metal plane. The opposing face is either metallized
//! (a conductive cover) or etched down to bare substrate (a dielectric
//! superstrate starting at `h`). Everything is computed with conformal
//! mapping through the ratio R(k) = K(k)/K(k') of complete elliptic
//! integrals; partial capacitances per layer add, and the finite layers use
//! the standard tanh (conductor-backed) and sinh (dielectric layer) moduli.
//! Kinetic inductance is deliberately left out.

use crate::numerics::{self, NumericsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub const MU_0: f64 = 1.256_637_062_12e-6;

#[derive(Debug, Error)]
pub enum CpwError {
    #[error("cross-section invalid: {0}")]
    BadCrossSection(&'static str),
    #[error("spacing must be positive, got {0} um")]
    NonPositiveSpacing(f64),
    #[error("etched-length fraction must lie in [0, 1], got {0}")]
    GammaOutOfRange(f64),
    #[error("resonator length must be positive, got {0} mm")]
    NonPositiveLength(f64),
    #[error("no resonance found in ({0:e}, {1:e}) GHz")]
    NoResonance(f64, f64),
    #[error("reference spacing {h_ref} um outside the requested range [{min}, {max}] um")]
    ReferenceOutsideRange { h_ref: f64, min: f64, max: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which material of the opposing chip faces the line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    Metal,
    Dielectric,
}

impl std::fmt::Display for Facing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Facing::Metal => "metal",
            Facing::Dielectric => "dielectric",
        })
    }
}

/// CPW cross-section dimensions, independent of spacing and facing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossSection {
    /// Center conductor width (um).
    pub width_um: f64,
    /// Gap between center conductor and ground plane, each side (um).
    pub gap_um: f64,
    /// Relative permittivity of the (thick) substrate.
    pub substrate_eps: f64,
}

impl Default for CrossSection {
    fn default() -> Self {
        Self {
            width_um: 10.0,
            gap_um: 6.0,
            substrate_eps: 10.0,
        }
    }
}

impl CrossSection {
    fn validate(&self) -> Result<(), CpwError> {
        if !(self.width_um > 0.0) {
            return Err(CpwError::BadCrossSection("width must be positive"));
        }
        if !(self.gap_um > 0.0) {
            return Err(CpwError::BadCrossSection("gap must be positive"));
        }
        if !(self.substrate_eps >= 1.0) {
            return Err(CpwError::BadCrossSection("substrate permittivity must be >= 1"));
        }
        Ok(())
    }

    /// Bind the cross-section to a facing and an inter-chip spacing.
    pub fn at(self, spacing_um: f64, facing: Facing) -> CpwGeometry {
        CpwGeometry {
            cross: self,
            spacing_um,
            facing,
        }
    }
}

/// A full flip-chip CPW configuration: cross-section, spacing and facing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpwGeometry {
    pub cross: CrossSection,
    pub spacing_um: f64,
    pub facing: Facing,
}

/// Per-unit-length transmission-line parameters.
///
/// Constructed from (C, L); the derived velocity and impedance therefore
/// satisfy v = 1/sqrt(LC) and Z = sqrt(L/C) to rounding by definition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineParams {
    /// Capacitance per length (F/m).
    pub c_per_len: f64,
    /// Inductance per length (H/m).
    pub l_per_len: f64,
    /// Phase velocity 1/sqrt(LC) (m/s).
    pub phase_velocity: f64,
    /// Characteristic impedance sqrt(L/C) (ohm).
    pub char_impedance: f64,
}

impl LineParams {
    fn from_lc(c_per_len: f64, l_per_len: f64) -> Self {
        Self {
            c_per_len,
            l_per_len,
            phase_velocity: 1.0 / (l_per_len * c_per_len).sqrt(),
            char_impedance: (l_per_len / c_per_len).sqrt(),
        }
    }
}

/// Conformal-mapping line parameters of a flip-chip CPW cross-section.
///
/// With a = w/2, b = w/2 + s, k0 = a/b and R(k) = K(k)/K(k'):
///
/// - metal facing at height h: k3 = tanh(pi a / 2h) / tanh(pi b / 2h),
///   C = 2 eps0 (eps_r - 1) R(k0) + 2 eps0 (R(k0) + R(k3)),
///   L = mu0 / (2 (R(k0) + R(k3)));
/// - dielectric facing starting at height h:
///   k_h = sinh(pi a / 2h) / sinh(pi b / 2h),
///   C = 2 eps0 (eps_r - 1) R(k0) + 4 eps0 R(k0)
///       + 2 eps0 (eps_r - 1) (R(k0) - R(k_h)),
///   L = mu0 / (4 R(k0)), independent of h (all current stays on the
///   bottom-chip metal).
///
/// The two facings share the h -> infinity limit (uncovered CPW on a thick
/// substrate): C -> 2 eps0 (eps_r + 1) R(k0) and L -> mu0 / (4 R(k0)). The
/// metal-facing inductance carries the prefactor mu0/2 (not mu0/4): the
/// covered line is the parallel combination of the free-space image term
/// and the cover term, so L C_vacuum = mu0 eps0 holds and the limit above
/// is reproduced.
pub fn line_params(geom: &CpwGeometry) -> Result<LineParams, CpwError> {
    geom.cross.validate()?;
    let h = geom.spacing_um;
    if !(h > 0.0) {
        return Err(CpwError::NonPositiveSpacing(h));
    }
    let a = 0.5 * geom.cross.width_um;
    let b = 0.5 * geom.cross.width_um + geom.cross.gap_um;
    let er = geom.cross.substrate_eps;
    let r0 = numerics::k_ratio(a / b)?;
    Ok(match geom.facing {
        Facing::Metal => {
            let k3 = ((std::f64::consts::PI * a) / (2.0 * h)).tanh()
                / ((std::f64::consts::PI * b) / (2.0 * h)).tanh();
            let r3 = numerics::k_ratio(k3)?;
            let c = 2.0 * EPSILON_0 * (er - 1.0) * r0 + 2.0 * EPSILON_0 * (r0 + r3);
            let l = MU_0 / (2.0 * (r0 + r3));
            LineParams::from_lc(c, l)
        }
        Facing::Dielectric => {
            // sinh(x)/sinh(y) written as e^(x-y) expm1(-2x)/expm1(-2y) so
            // the ratio stays finite when the raw sinh would overflow.
            let x = (std::f64::consts::PI * a) / (2.0 * h);
            let y = (std::f64::consts::PI * b) / (2.0 * h);
            let kh = (x - y).exp() * (-2.0 * x).exp_m1() / (-2.0 * y).exp_m1();
            let rh = numerics::k_ratio(kh)?;
            let c = 2.0 * EPSILON_0 * (er - 1.0) * r0
                + 4.0 * EPSILON_0 * r0
                + 2.0 * EPSILON_0 * (er - 1.0) * (r0 - rh);
            let l = MU_0 / (4.0 * r0);
            LineParams::from_lc(c, l)
        }
    })
}

/// Where along the resonator the etched (dielectric-facing) section sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtchPosition {
    /// Etched section adjacent to the shorted (filter-coupled) end.
    AtShortedEnd,
    /// Etched section adjacent to the open end.
    AtOpenEnd,
}

/// How the two-section resonator is reduced to a single frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqModel {
    /// Length-weighted averages of L and C over the two facings.
    Averaged,
    /// Exact two-section transmission-line cascade resonance.
    Cascade,
}

/// A quarter-wave readout resonator with an etched fraction `gamma` of its
/// length facing bare substrate and the rest facing metal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonatorDesign {
    /// Physical line length (mm).
    pub total_length_mm: f64,
    /// Fraction of the length that is dielectric-facing, in [0, 1].
    pub gamma: f64,
    pub cross: CrossSection,
    pub etch_position: EtchPosition,
    pub model: FreqModel,
}

impl ResonatorDesign {
    fn validate(&self) -> Result<(), CpwError> {
        self.cross.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CpwError::GammaOutOfRange(self.gamma));
        }
        if !(self.total_length_mm > 0.0) {
            return Err(CpwError::NonPositiveLength(self.total_length_mm));
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_length(mut self, total_length_mm: f64) -> Self {
        self.total_length_mm = total_length_mm;
        self
    }
}

/// Fundamental quarter-wave frequency (GHz) at the given spacing (um).
///
/// Averaged model: f = 1 / (4 l sqrt(Lbar Cbar)) with the per-length
/// parameters averaged over the two facings weighted by gamma.
///
/// Cascade model: lowest f > 0 with
/// tan(beta_o l_o) tan(beta_s l_s) = Z_o / Z_s, where section `s` adjoins
/// the shorted end and `o` the open end. The left side rises monotonically
/// from 0 to +inf on (0, f_pole), f_pole being the first tangent pole, so
/// the lowest resonance is bracketed there and found with Brent.
pub fn resonator_frequency(design: &ResonatorDesign, spacing_um: f64) -> Result<f64, CpwError> {
    design.validate()?;
    let metal = line_params(&design.cross.at(spacing_um, Facing::Metal))?;
    let diel = line_params(&design.cross.at(spacing_um, Facing::Dielectric))?;
    let ell_m = design.total_length_mm * 1e-3;
    let g = design.gamma;
    // Uniform line for either degenerate split, in both models.
    if g == 0.0 {
        return Ok(metal.phase_velocity / (4.0 * ell_m) * 1e-9);
    }
    if g == 1.0 {
        return Ok(diel.phase_velocity / (4.0 * ell_m) * 1e-9);
    }
    match design.model {
        FreqModel::Averaged => {
            let lbar = g * diel.l_per_len + (1.0 - g) * metal.l_per_len;
            let cbar = g * diel.c_per_len + (1.0 - g) * metal.c_per_len;
            Ok(1.0 / (4.0 * ell_m * (lbar * cbar).sqrt()) * 1e-9)
        }
        FreqModel::Cascade => {
            let (sec_s, sec_o) = match design.etch_position {
                EtchPosition::AtShortedEnd => ((g * ell_m, diel), ((1.0 - g) * ell_m, metal)),
                EtchPosition::AtOpenEnd => (((1.0 - g) * ell_m, metal), (g * ell_m, diel)),
            };
            let (ls, ps) = sec_s;
            let (lo, po) = sec_o;
            let z_ratio = po.char_impedance / ps.char_impedance;
            let pole_hz = (ps.phase_velocity / (4.0 * ls)).min(po.phase_velocity / (4.0 * lo));
            let cond = |f_hz: f64| {
                let bo = 2.0 * std::f64::consts::PI * f_hz / po.phase_velocity;
                let bs = 2.0 * std::f64::consts::PI * f_hz / ps.phase_velocity;
                (bo * lo).tan() * (bs * ls).tan() - z_ratio
            };
            let lo_f = pole_hz * 1e-6;
            let hi_f = pole_hz * (1.0 - 1e-12);
            let f_hz = numerics::brent_root(cond, lo_f, hi_f, pole_hz * 1e-13)
                .map_err(|e| match e {
                    NumericsError::NoSignChange { .. } => {
                        CpwError::NoResonance(lo_f * 1e-9, hi_f * 1e-9)
                    }
                    other => CpwError::Numerics(other),
                })?;
            Ok(f_hz * 1e-9)
        }
    }
}

/// Finite-difference step used by [`sensitivity`] (um).
pub const SENSITIVITY_STEP_UM: f64 = 0.01;

/// df/dh at the given spacing (MHz per um), central difference with the
/// default step.
pub fn sensitivity(design: &ResonatorDesign, spacing_um: f64) -> Result<f64, CpwError> {
    sensitivity_with_step(design, spacing_um, SENSITIVITY_STEP_UM)
}

/// df/dh by central difference with an explicit step (um).
pub fn sensitivity_with_step(
    design: &ResonatorDesign,
    spacing_um: f64,
    delta_um: f64,
) -> Result<f64, CpwError> {
    if !(spacing_um - delta_um > 0.0) {
        return Err(CpwError::NonPositiveSpacing(spacing_um - delta_um));
    }
    let fp = resonator_frequency(design, spacing_um + delta_um)?;
    let fm = resonator_frequency(design, spacing_um - delta_um)?;
    Ok((fp - fm) / (2.0 * delta_um) * 1e3)
}

/// One row of a frequency-shift curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftPoint {
    pub spacing_um: f64,
    pub freq_ghz: f64,
    /// Relative shift against the reference spacing, percent.
    pub shift_percent: f64,
}

/// Frequency and relative shift versus spacing, referenced to `h_ref_um`.
/// Rows come back sorted by spacing.
pub fn shift_curve(
    design: &ResonatorDesign,
    spacings_um: &[f64],
    h_ref_um: f64,
) -> Result<Vec<ShiftPoint>, CpwError> {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &h in spacings_um {
        min = min.min(h);
        max = max.max(h);
    }
    if !(h_ref_um >= min && h_ref_um <= max) {
        return Err(CpwError::ReferenceOutsideRange {
            h_ref: h_ref_um,
            min,
            max,
        });
    }
    let f_ref = resonator_frequency(design, h_ref_um)?;
    let mut hs = spacings_um.to_vec();
    hs.sort_by(f64::total_cmp);
    hs.iter()
        .map(|&h| {
            let f = resonator_frequency(design, h)?;
            Ok(ShiftPoint {
                spacing_um: h,
                freq_ghz: f,
                shift_percent: (f - f_ref) / f_ref * 100.0,
            })
        })
        .collect()
}
