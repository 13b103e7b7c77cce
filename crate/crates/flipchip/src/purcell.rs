//! Purcell T1 limits of qubit-resonator and qubit-resonator-filter chains,
//! the coupling solvers that hit a target dispersive shift and resonator
//! linewidth, and the bandwidth/step design sweep.
//!
//! Every public quantity is in ordinary-frequency units (GHz for mode
//! frequencies, MHz for couplings and linewidths, us/ms for lifetimes); the
//! factors of 2 pi live only at the matrix boundary, where frequencies are
//! converted to angular rad/us. Decay enters as a non-Hermitian -i kappa/2
//! on the lossy diagonal; the qubit-like complex eigenvalue w gives
//! T1 = 1/(-2 Im w).

use crate::design;
use crate::numerics::{ComplexMatrix2, ComplexMatrix3, NumericsError};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PurcellError {
    #[error("effective detuning {0:.6} GHz hits the straddle point of the dispersive denominator")]
    StraddlePoint(f64),
    #[error("target linewidth {target_mhz} MHz must lie below the filter bandwidth {kappa_f_mhz} MHz")]
    TargetNotBelowFilter { target_mhz: f64, kappa_f_mhz: f64 },
    #[error("coupling bracket exhausted: even g_rf = kappa_f = {kappa_f_mhz} MHz reaches only {achieved_mhz:.6} MHz of the requested {target_mhz} MHz")]
    TargetUnreachable {
        kappa_f_mhz: f64,
        achieved_mhz: f64,
        target_mhz: f64,
    },
    #[error("sweep config invalid: {0}")]
    BadConfig(&'static str),
    #[error("sweep point kappa_f={kappa_f_mhz} MHz, step={step_mhz} MHz, resonator {index}: {source}")]
    AtGridPoint {
        kappa_f_mhz: f64,
        step_mhz: f64,
        index: usize,
        source: Box<PurcellError>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Qubit plus readout resonator with a directly damped resonator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrParams {
    pub omega_q_ghz: f64,
    pub omega_r_ghz: f64,
    pub g_qr_mhz: f64,
    pub kappa_r_mhz: f64,
    /// Qubit anharmonicity, negative for a transmon.
    pub eta_mhz: f64,
}

impl Default for QrParams {
    fn default() -> Self {
        Self {
            omega_q_ghz: 5.0,
            omega_r_ghz: 6.7,
            g_qr_mhz: 111.37,
            kappa_r_mhz: 2.0,
            eta_mhz: -270.0,
        }
    }
}

/// Qubit, resonator and damped Purcell filter. The resonator has no direct
/// decay channel here; its linewidth is inherited through the filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrfParams {
    #[serde(flatten)]
    pub qr: QrParams,
    pub omega_f_ghz: f64,
    pub g_rf_mhz: f64,
    pub kappa_f_mhz: f64,
}

impl Default for QrfParams {
    fn default() -> Self {
        Self {
            qr: QrParams::default(),
            omega_f_ghz: 6.7,
            g_rf_mhz: 17.3,
            kappa_f_mhz: 600.0,
        }
    }
}

/// A parasitic resonance (e.g. an etch-window mode) coupled to the qubit,
/// with its loss given as a coupling quality factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousMode {
    pub omega_mode_ghz: f64,
    pub q_coupling: f64,
    pub g_mhz: f64,
}

/// Grid for [`sweep`]: filter bandwidths crossed with frequency steps, a
/// ladder of `resonator_count` resonators centered on the filter for each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PurcellSweepConfig {
    pub kappa_f_mhz: Vec<f64>,
    pub step_mhz: Vec<f64>,
    pub resonator_count: usize,
    pub omega_f_ghz: f64,
    pub omega_q_ghz: f64,
    pub kappa_r_mhz: f64,
    pub eta_mhz: f64,
}

impl Default for PurcellSweepConfig {
    fn default() -> Self {
        Self {
            kappa_f_mhz: vec![300.0, 600.0, 1200.0],
            step_mhz: vec![30.0],
            resonator_count: 14,
            omega_f_ghz: 6.7,
            omega_q_ghz: 5.0,
            kappa_r_mhz: 2.0,
            eta_mhz: -270.0,
        }
    }
}

fn ghz_to_angular(f_ghz: f64) -> f64 {
    2.0 * PI * f_ghz * 1e3
}

fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz
}

/// Energy decay rate of the selected eigenvalue, with a floor that rounds
/// pure-rounding residue down to the unbounded sentinel. `scale` is the
/// total decay injected into the matrix (angular).
fn t1_us(lambda: Complex64, scale: f64) -> f64 {
    let gamma = -2.0 * lambda.im;
    if gamma <= 1e-12 * scale.abs() {
        f64::INFINITY
    } else {
        1.0 / gamma
    }
}

/// Pick the eigenpair whose eigenvector lives mostly on `component`;
/// near-ties resolve to the eigenvalue closest to `omega_angular`.
fn select_mode<const N: usize>(
    pairs: &[(Complex64, [Complex64; N])],
    component: usize,
    omega_angular: f64,
) -> Complex64 {
    let weight = |p: &(Complex64, [Complex64; N])| p.1[component].norm();
    let best = pairs
        .iter()
        .max_by(|a, b| weight(a).total_cmp(&weight(b)))
        .unwrap();
    let mut lambda = best.0;
    let mut dist = (best.0.re - omega_angular).abs();
    for p in pairs {
        if (weight(p) - weight(best)).abs() <= 1e-9 * weight(best)
            && (p.0.re - omega_angular).abs() < dist
        {
            lambda = p.0;
            dist = (p.0.re - omega_angular).abs();
        }
    }
    lambda
}

/// Dispersive cross shift chi = -g^2 / (Delta + Delta^2 / eta) in MHz.
/// `delta_qr_ghz` is omega_q - omega_r.
pub fn chi(g_qr_mhz: f64, delta_qr_ghz: f64, eta_mhz: f64) -> Result<f64, PurcellError> {
    let delta = delta_qr_ghz * 1e3;
    let denom = delta + delta * delta / eta_mhz;
    let scale = delta.abs().max((delta * delta / eta_mhz).abs());
    if denom.abs() <= 1e-9 * scale {
        return Err(PurcellError::StraddlePoint(delta_qr_ghz));
    }
    Ok(-g_qr_mhz * g_qr_mhz / denom)
}

/// Coupling that realizes |chi| = kappa_r / 2 at the given detuning:
/// g = sqrt((kappa_r/2) |Delta + Delta^2/eta|).
pub fn solve_g_qr(
    kappa_r_mhz: f64,
    delta_qr_ghz: f64,
    eta_mhz: f64,
) -> Result<f64, PurcellError> {
    if kappa_r_mhz == 0.0 {
        return Ok(0.0);
    }
    let delta = delta_qr_ghz * 1e3;
    let denom = delta + delta * delta / eta_mhz;
    let scale = delta.abs().max((delta * delta / eta_mhz).abs());
    if denom.abs() <= 1e-9 * scale {
        return Err(PurcellError::StraddlePoint(delta_qr_ghz));
    }
    Ok((0.5 * kappa_r_mhz * denom.abs()).sqrt())
}

fn qr_matrix(p: &QrParams) -> ComplexMatrix2 {
    let g = mhz_to_angular(p.g_qr_mhz);
    ComplexMatrix2::new([
        [
            Complex64::new(ghz_to_angular(p.omega_q_ghz), 0.0),
            Complex64::new(g, 0.0),
        ],
        [
            Complex64::new(g, 0.0),
            Complex64::new(ghz_to_angular(p.omega_r_ghz), -0.5 * mhz_to_angular(p.kappa_r_mhz)),
        ],
    ])
}

/// Purcell-limited qubit T1 (us) of the damped qubit-resonator pair.
/// Returns the infinity sentinel when the qubit-like mode does not decay.
pub fn qr_t1(p: &QrParams) -> f64 {
    let m = qr_matrix(p);
    let lambda = select_mode(&m.eigenpairs(), 0, ghz_to_angular(p.omega_q_ghz));
    t1_us(lambda, mhz_to_angular(p.kappa_r_mhz))
}

fn qrf_matrix(p: &QrfParams) -> ComplexMatrix3 {
    let zero = Complex64::new(0.0, 0.0);
    let g_qr = Complex64::new(mhz_to_angular(p.qr.g_qr_mhz), 0.0);
    let g_rf = Complex64::new(mhz_to_angular(p.g_rf_mhz), 0.0);
    ComplexMatrix3::new([
        [Complex64::new(ghz_to_angular(p.qr.omega_q_ghz), 0.0), g_qr, zero],
        [g_qr, Complex64::new(ghz_to_angular(p.qr.omega_r_ghz), 0.0), g_rf],
        [
            zero,
            g_rf,
            Complex64::new(ghz_to_angular(p.omega_f_ghz), -0.5 * mhz_to_angular(p.kappa_f_mhz)),
        ],
    ])
}

/// Purcell-limited qubit T1 (us) with the filter in the chain. The only
/// decay channel is the filter's kappa_f.
pub fn qrf_t1(p: &QrfParams) -> f64 {
    let m = qrf_matrix(p);
    let lambda = select_mode(&m.eigenpairs(), 0, ghz_to_angular(p.qr.omega_q_ghz));
    t1_us(lambda, mhz_to_angular(p.kappa_f_mhz))
}

/// The qubit side of the chain as seen by the resonator-filter solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitContext {
    pub omega_q_ghz: f64,
    pub g_qr_mhz: f64,
}

/// Effective resonator linewidth (MHz) inherited through the filter.
fn resonator_linewidth(
    omega_r_ghz: f64,
    omega_f_ghz: f64,
    kappa_f_mhz: f64,
    g_rf_mhz: f64,
    ctx: &QubitContext,
) -> f64 {
    let p = QrfParams {
        qr: QrParams {
            omega_q_ghz: ctx.omega_q_ghz,
            omega_r_ghz,
            g_qr_mhz: ctx.g_qr_mhz,
            kappa_r_mhz: 0.0,
            eta_mhz: -270.0,
        },
        omega_f_ghz,
        g_rf_mhz,
        kappa_f_mhz,
    };
    let m = qrf_matrix(&p);
    let lambda = select_mode(&m.eigenpairs(), 1, ghz_to_angular(omega_r_ghz));
    -2.0 * lambda.im / (2.0 * PI)
}

/// Resonator-filter coupling (MHz) that gives the resonator-like mode the
/// linewidth `target_kappa_r_mhz`, solved by Brent on g_rf in (0, kappa_f].
pub fn solve_g_rf(
    omega_r_ghz: f64,
    omega_f_ghz: f64,
    kappa_f_mhz: f64,
    target_kappa_r_mhz: f64,
    ctx: &QubitContext,
) -> Result<f64, PurcellError> {
    if !(target_kappa_r_mhz < kappa_f_mhz) {
        return Err(PurcellError::TargetNotBelowFilter {
            target_mhz: target_kappa_r_mhz,
            kappa_f_mhz,
        });
    }
    let residual = |g: f64| {
        resonator_linewidth(omega_r_ghz, omega_f_ghz, kappa_f_mhz, g, ctx) - target_kappa_r_mhz
    };
    let at_top = residual(kappa_f_mhz);
    if at_top < 0.0 {
        return Err(PurcellError::TargetUnreachable {
            kappa_f_mhz,
            achieved_mhz: at_top + target_kappa_r_mhz,
            target_mhz: target_kappa_r_mhz,
        });
    }
    Ok(crate::numerics::brent_root(
        residual,
        1e-9 * kappa_f_mhz,
        kappa_f_mhz,
        1e-8,
    )?)
}

/// One resonator of a sweep grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub kappa_f_mhz: f64,
    pub step_mhz: f64,
    pub delta_rf_mhz: f64,
    pub g_qr_mhz: f64,
    pub g_rf_mhz: f64,
    pub t1_us: f64,
}

/// Evaluate the Purcell limit across the (kappa_f, step) grid.
///
/// For every grid point a ladder of `resonator_count` frequencies is
/// centered on the filter; each resonator gets its own g_qr (so its
/// dispersive linewidth stays at kappa_r despite the varying qubit
/// detuning) and its own g_rf (so its total linewidth stays at kappa_r
/// despite the varying filter detuning), then its T1.
pub fn sweep(config: &PurcellSweepConfig) -> Result<Vec<SweepRow>, PurcellError> {
    if config.kappa_f_mhz.is_empty() || config.step_mhz.is_empty() {
        return Err(PurcellError::BadConfig("kappa_f and step lists must be non-empty"));
    }
    if config.resonator_count == 0 {
        return Err(PurcellError::BadConfig("resonator count must be at least 1"));
    }
    if config.step_mhz.iter().any(|&s| !(s > 0.0)) {
        return Err(PurcellError::BadConfig("steps must be positive"));
    }
    if config.kappa_f_mhz.iter().any(|&k| !(k > 0.0)) {
        return Err(PurcellError::BadConfig("filter bandwidths must be positive"));
    }
    let mut rows = Vec::new();
    for &kappa_f in &config.kappa_f_mhz {
        for &step in &config.step_mhz {
            let targets =
                design::target_frequencies(config.omega_f_ghz, step, config.resonator_count);
            for (index, &omega_r) in targets.iter().enumerate() {
                let at = |source: PurcellError| PurcellError::AtGridPoint {
                    kappa_f_mhz: kappa_f,
                    step_mhz: step,
                    index,
                    source: Box::new(source),
                };
                let g_qr =
                    solve_g_qr(config.kappa_r_mhz, config.omega_q_ghz - omega_r, config.eta_mhz)
                        .map_err(&at)?;
                let ctx = QubitContext {
                    omega_q_ghz: config.omega_q_ghz,
                    g_qr_mhz: g_qr,
                };
                let g_rf =
                    solve_g_rf(omega_r, config.omega_f_ghz, kappa_f, config.kappa_r_mhz, &ctx)
                        .map_err(&at)?;
                let t1 = qrf_t1(&QrfParams {
                    qr: QrParams {
                        omega_q_ghz: config.omega_q_ghz,
                        omega_r_ghz: omega_r,
                        g_qr_mhz: g_qr,
                        kappa_r_mhz: config.kappa_r_mhz,
                        eta_mhz: config.eta_mhz,
                    },
                    omega_f_ghz: config.omega_f_ghz,
                    g_rf_mhz: g_rf,
                    kappa_f_mhz: kappa_f,
                });
                rows.push(SweepRow {
                    kappa_f_mhz: kappa_f,
                    step_mhz: step,
                    delta_rf_mhz: (omega_r - config.omega_f_ghz) * 1e3,
                    g_qr_mhz: g_qr,
                    g_rf_mhz: g_rf,
                    t1_us: t1,
                });
            }
        }
    }
    Ok(rows)
}

/// T1 limit (ms) through a spurious mode whose linewidth is
/// omega_mode / Q_c.
pub fn spurious_mode_t1(omega_q_ghz: f64, mode: &SpuriousMode) -> f64 {
    let kappa_mhz = omega_q_mode_linewidth(mode);
    let t1 = qr_t1(&QrParams {
        omega_q_ghz,
        omega_r_ghz: mode.omega_mode_ghz,
        g_qr_mhz: mode.g_mhz,
        kappa_r_mhz: kappa_mhz,
        eta_mhz: -270.0,
    });
    t1 * 1e-3
}

fn omega_q_mode_linewidth(mode: &SpuriousMode) -> f64 {
    mode.omega_mode_ghz * 1e3 / mode.q_coupling
}
