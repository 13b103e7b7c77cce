//! The single TOML run-configuration document shared by all subcommands.
//! Every section has working defaults (the flagship 15 x 12 chip scenario),
//! unknown keys are rejected, and all cross-field invariants are checked
//! before any computation starts.

use flipchip::chipmodel::{ChipLayout, ChipScenario};
use flipchip::cpw::{CrossSection, EtchPosition, FreqModel};
use flipchip::design::EtchCalibration;
use flipchip::purcell::PurcellSweepConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonatorSection {
    pub total_length_mm: f64,
    pub etch_position: EtchPosition,
    pub model: FreqModel,
    /// Reference spacing for calibration and shift curves (um).
    pub h_ref_um: f64,
}

impl Default for ResonatorSection {
    fn default() -> Self {
        Self {
            total_length_mm: 4.5,
            etch_position: EtchPosition::AtShortedEnd,
            model: FreqModel::Averaged,
            h_ref_um: 9.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpwSection {
    pub h_min_um: f64,
    pub h_max_um: f64,
    pub h_steps: usize,
    /// Etched-length fractions to trace shift curves for.
    pub gammas: Vec<f64>,
}

impl Default for CpwSection {
    fn default() -> Self {
        Self {
            h_min_um: 8.0,
            h_max_um: 10.0,
            h_steps: 41,
            gammas: vec![0.0, 0.82, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpuriousSection {
    pub omega_mode_ghz: f64,
    pub q_coupling: f64,
    pub g_mhz: f64,
    /// Externally reported lifetime printed alongside the computed one for
    /// comparison; never asserted against.
    pub reference_t1_ms: f64,
}

impl Default for SpuriousSection {
    fn default() -> Self {
        Self {
            omega_mode_ghz: 14.8,
            q_coupling: 14000.0,
            g_mhz: 96.0,
            reference_t1_ms: 14.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PurcellSection {
    pub sweep: PurcellSweepConfig,
    pub spurious: SpuriousSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipSection {
    pub filter_center_ghz: f64,
    pub step_mhz: f64,
    pub noise_sigma_mhz: f64,
    /// Seed for the per-footprint frequency noise.
    pub seed: u64,
    /// (etched length um, gamma) interpolation table.
    pub calibration: Vec<[f64; 2]>,
    pub layout: ChipLayout,
    pub scenario: ChipScenario,
}

impl Default for ChipSection {
    fn default() -> Self {
        Self {
            filter_center_ghz: 6.5,
            step_mhz: 30.0,
            noise_sigma_mhz: 0.0,
            seed: 1,
            calibration: vec![[0.0, 0.0], [330.0, 0.82]],
            layout: ChipLayout::default(),
            scenario: ChipScenario::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub exclude_tail: usize,
    /// (etched length um, target step MHz) pairs.
    pub targets: Vec<[f64; 2]>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            exclude_tail: 2,
            targets: vec![[0.0, 30.0], [330.0, 30.0]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format: OutputFormat,
    pub out_dir: String,
    pub geometry: CrossSection,
    pub resonator: ResonatorSection,
    pub cpw: CpwSection,
    pub purcell: PurcellSection,
    pub chip: ChipSection,
    pub analyze: AnalyzeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: OutputFormat::Csv,
            out_dir: "out".into(),
            geometry: CrossSection::default(),
            resonator: ResonatorSection::default(),
            cpw: CpwSection::default(),
            purcell: PurcellSection::default(),
            chip: ChipSection::default(),
            analyze: AnalyzeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    /// The calibration table as the typed interpolator.
    pub fn etch_calibration(&self) -> Result<EtchCalibration, String> {
        EtchCalibration::new(self.chip.calibration.iter().map(|p| (p[0], p[1])).collect())
            .map_err(|e| format!("chip.calibration: {e}"))
    }

    /// Check every cross-field invariant; all violations are configuration
    /// errors, reported before any computation.
    pub fn validate(&self) -> Result<(), String> {
        let g = &self.geometry;
        if !(g.width_um > 0.0 && g.width_um.is_finite()) {
            return Err(format!("geometry.width_um must be positive, got {}", g.width_um));
        }
        if !(g.gap_um > 0.0 && g.gap_um.is_finite()) {
            return Err(format!("geometry.gap_um must be positive, got {}", g.gap_um));
        }
        if !(g.substrate_eps >= 1.0 && g.substrate_eps.is_finite()) {
            return Err(format!(
                "geometry.substrate_eps must be at least 1, got {}",
                g.substrate_eps
            ));
        }

        let r = &self.resonator;
        if !(r.total_length_mm > 0.0) {
            return Err(format!(
                "resonator.total_length_mm must be positive, got {}",
                r.total_length_mm
            ));
        }
        if !(r.h_ref_um > 0.0) {
            return Err(format!("resonator.h_ref_um must be positive, got {}", r.h_ref_um));
        }

        let c = &self.cpw;
        if !(c.h_min_um > 0.0) {
            return Err(format!("cpw.h_min_um must be positive, got {}", c.h_min_um));
        }
        if !(c.h_max_um > c.h_min_um) {
            return Err(format!(
                "cpw.h_max_um must exceed h_min_um, got {} <= {}",
                c.h_max_um, c.h_min_um
            ));
        }
        if c.h_steps < 2 {
            return Err(format!("cpw.h_steps must be at least 2, got {}", c.h_steps));
        }
        if c.gammas.is_empty() {
            return Err("cpw.gammas must name at least one fraction".into());
        }
        for &gamma in &c.gammas {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(format!("cpw.gammas entries must lie in [0, 1], got {gamma}"));
            }
        }
        if !(r.h_ref_um >= c.h_min_um && r.h_ref_um <= c.h_max_um) {
            return Err(format!(
                "resonator.h_ref_um = {} must lie within cpw range [{}, {}]",
                r.h_ref_um, c.h_min_um, c.h_max_um
            ));
        }

        let s = &self.purcell.sweep;
        if s.kappa_f_mhz.is_empty() || s.step_mhz.is_empty() {
            return Err("purcell.sweep kappa_f_mhz and step_mhz must be non-empty".into());
        }
        if s.kappa_f_mhz.iter().any(|&k| !(k > 0.0)) {
            return Err("purcell.sweep.kappa_f_mhz entries must be positive".into());
        }
        if s.step_mhz.iter().any(|&k| !(k > 0.0)) {
            return Err("purcell.sweep.step_mhz entries must be positive".into());
        }
        if s.resonator_count == 0 {
            return Err("purcell.sweep.resonator_count must be at least 1".into());
        }
        if !(s.kappa_r_mhz > 0.0) {
            return Err(format!(
                "purcell.sweep.kappa_r_mhz must be positive, got {}",
                s.kappa_r_mhz
            ));
        }
        if !(s.eta_mhz < 0.0) {
            return Err(format!(
                "purcell.sweep.eta_mhz must be negative, got {}",
                s.eta_mhz
            ));
        }
        if !(s.omega_q_ghz > 0.0 && s.omega_f_ghz > 0.0) {
            return Err("purcell.sweep frequencies must be positive".into());
        }
        let sp = &self.purcell.spurious;
        if !(sp.q_coupling > 0.0) {
            return Err(format!(
                "purcell.spurious.q_coupling must be positive, got {}",
                sp.q_coupling
            ));
        }
        if !(sp.omega_mode_ghz > 0.0) {
            return Err(format!(
                "purcell.spurious.omega_mode_ghz must be positive, got {}",
                sp.omega_mode_ghz
            ));
        }
        if !(sp.g_mhz >= 0.0) {
            return Err(format!("purcell.spurious.g_mhz must be non-negative, got {}", sp.g_mhz));
        }

        let ch = &self.chip;
        if !(ch.filter_center_ghz > 0.0) {
            return Err(format!(
                "chip.filter_center_ghz must be positive, got {}",
                ch.filter_center_ghz
            ));
        }
        if !(ch.step_mhz > 0.0) {
            return Err(format!("chip.step_mhz must be positive, got {}", ch.step_mhz));
        }
        if !(ch.noise_sigma_mhz >= 0.0 && ch.noise_sigma_mhz.is_finite()) {
            return Err(format!(
                "chip.noise_sigma_mhz must be non-negative, got {}",
                ch.noise_sigma_mhz
            ));
        }
        ch.layout.validate().map_err(|e| format!("chip.layout: {e}"))?;
        if !(ch.scenario.top_chip_thickness_um > 0.0) {
            return Err(format!(
                "chip.scenario.top_chip_thickness_um must be positive, got {}",
                ch.scenario.top_chip_thickness_um
            ));
        }
        if !(ch.scenario.scan_noise_um >= 0.0) {
            return Err(format!(
                "chip.scenario.scan_noise_um must be non-negative, got {}",
                ch.scenario.scan_noise_um
            ));
        }
        let cal = self.etch_calibration()?;
        let cal_max = cal.points().last().unwrap().0;
        for (col, &etched) in ch.layout.etched_length_um.iter().enumerate() {
            if etched > cal_max {
                return Err(format!(
                    "chip.layout column {col} etched length {etched} um exceeds the \
                     calibration range (max {cal_max} um)"
                ));
            }
        }

        for pair in &self.analyze.targets {
            if !(pair[0].is_finite() && pair[1] > 0.0) {
                return Err(format!(
                    "analyze.targets entries must be (finite etched length, positive step), \
                     got ({}, {})",
                    pair[0], pair[1]
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = toml::to_string(&config).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[cpw]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("totally_unknown = true\n").is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        let mut config = RunConfig::default();
        config.cpw.h_min_um = -1.0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.chip.layout.etched_length_um[1] = 999.0;
        assert!(config.validate().unwrap_err().contains("calibration range"));

        let mut config = RunConfig::default();
        config.purcell.sweep.eta_mhz = 270.0;
        assert!(config.validate().is_err());
    }
}
