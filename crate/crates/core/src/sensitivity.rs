//! Photon-shot-noise sensitivity of the revival-period magnetometer.
//!
//! Times `τ` and `T2` are in ms, the total interval `T` in s. Internally η
//! is G·√ms; the public values are G/√Hz.

use std::f64::consts::{E, PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constants::MICROTESLA_PER_GAUSS;
use crate::error::{NvError, Result};
use crate::magnetometry::Calibration;

/// ms^½ → s^½.
const SQRT_MS_IN_S: f64 = 0.031_622_776_601_683_79;

/// Below this `|sin(2πτ/T_R)|` the readout carries no field information.
pub const INSENSITIVE_SIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadoutModel {
    pub contrast: f64,
    pub n_centers: u64,
    pub t_total_s: f64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            contrast: 0.3,
            n_centers: 1,
            t_total_s: 1.0,
        }
    }
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(NvError::InvalidConfig(format!(
                "contrast must be in (0, 1], got {}",
                self.contrast
            )));
        }
        if self.n_centers == 0 {
            return Err(NvError::InvalidConfig(
                "n_centers must be at least 1".into(),
            ));
        }
        if !(self.t_total_s > 0.0) || !self.t_total_s.is_finite() {
            return Err(NvError::InvalidConfig(format!(
                "t_total_s must be positive, got {}",
                self.t_total_s
            )));
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(NvError::Domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Bright-state population `½ + ¼(1 + cos(2πt/T_R))·e^{−t/T2}`.
pub fn fluorescence_signal(t_ms: f64, t_r_ms: f64, t2_ms: f64) -> Result<f64> {
    check_positive("T_R", t_r_ms)?;
    check_positive("T2", t2_ms)?;
    Ok(0.5 + 0.25 * (1.0 + (TAU * t_ms / t_r_ms).cos()) * (-t_ms / t2_ms).exp())
}

/// `∂P₀/∂B` at fixed τ with `T_R = α/B`:
/// `−(πτ/2α)·e^{−τ/T2}·sin(2πτ/T_R)`, per gauss.
pub fn signal_response(tau_ms: f64, b_g: f64, t2_ms: f64, cal: &Calibration) -> Result<f64> {
    check_positive("B", b_g)?;
    check_positive("T2", t2_ms)?;
    let alpha = cal.alpha_ms_g;
    let t_r = alpha / b_g;
    Ok(-(PI * tau_ms / (2.0 * alpha)) * (-tau_ms / t2_ms).exp() * (TAU * tau_ms / t_r).sin())
}

/// Readout noise `(τ/T)^½ / C` for `N = T/τ` repetitions.
pub fn shot_noise(t_total_s: f64, tau_s: f64, contrast: f64) -> Result<f64> {
    check_positive("tau", tau_s)?;
    check_positive("contrast", contrast)?;
    if tau_s > t_total_s {
        return Err(NvError::Domain(format!(
            "tau ({tau_s} s) exceeds total time ({t_total_s} s)"
        )));
    }
    Ok((tau_s / t_total_s).sqrt() / contrast)
}

fn sin_phase(tau_ms: f64, b_g: f64, cal: &Calibration) -> Result<f64> {
    let s = (TAU * tau_ms * b_g / cal.alpha_ms_g).sin();
    if s.abs() < INSENSITIVE_SIN {
        return Err(NvError::InsensitiveTau);
    }
    Ok(s)
}

/// Smallest resolvable field (G) for a total interval `T`.
pub fn min_detectable_field(
    tau_ms: f64,
    t_total_s: f64,
    b_g: f64,
    t2_ms: f64,
    contrast: f64,
    cal: &Calibration,
) -> Result<f64> {
    check_positive("tau", tau_ms)?;
    sin_phase(tau_ms, b_g, cal)?;
    let noise = shot_noise(t_total_s, tau_ms * 1e-3, contrast)?;
    Ok(noise / signal_response(tau_ms, b_g, t2_ms, cal)?.abs())
}

/// `η = δB·√T = 2α e^{τ/T2} / (πC |sin(2πτ/T_R)| √τ)`, in G/√Hz.
pub fn sensitivity_eta(
    tau_ms: f64,
    b_g: f64,
    t2_ms: f64,
    contrast: f64,
    cal: &Calibration,
) -> Result<f64> {
    check_positive("tau", tau_ms)?;
    check_positive("B", b_g)?;
    check_positive("T2", t2_ms)?;
    check_positive("contrast", contrast)?;
    let s = sin_phase(tau_ms, b_g, cal)?;
    let eta_ms =
        2.0 * cal.alpha_ms_g * (tau_ms / t2_ms).exp() / (PI * contrast * s.abs() * tau_ms.sqrt());
    Ok(eta_ms * SQRT_MS_IN_S)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalSensitivity {
    /// `(2α/πC)·√(2e/T2)`, G/√Hz.
    pub eta_min_g: f64,
    pub tau_opt_ms: f64,
    pub ensemble_eta_g: f64,
    /// Phase order `k` in `2πτ/T_R = (k + ½)π`.
    pub phase_order: u32,
    /// Field at which `τ_opt = T2/2` meets the phase condition exactly.
    pub exact_field_g: f64,
}

/// Closed-form optimum at `τ = T2/2` under the phase condition, smallest
/// order `k = 0`.
pub fn optimal_sensitivity(
    t2_ms: f64,
    contrast: f64,
    cal: &Calibration,
    n_centers: u64,
) -> Result<OptimalSensitivity> {
    check_positive("T2", t2_ms)?;
    check_positive("contrast", contrast)?;
    if n_centers == 0 {
        return Err(NvError::Domain("n_centers must be at least 1".into()));
    }
    let eta_min_g =
        2.0 * cal.alpha_ms_g / (PI * contrast) * (2.0 * E / t2_ms).sqrt() * SQRT_MS_IN_S;
    let tau_opt_ms = 0.5 * t2_ms;
    let phase_order = 0;
    Ok(OptimalSensitivity {
        eta_min_g,
        tau_opt_ms,
        ensemble_eta_g: eta_min_g / (n_centers as f64).sqrt(),
        phase_order,
        exact_field_g: cal.alpha_ms_g * (phase_order as f64 + 0.5) / (2.0 * tau_opt_ms),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub field_g: f64,
    pub t2_ms: f64,
    pub readout: ReadoutModel,
    pub calibration: Calibration,
    pub tau_grid_ms: Vec<f64>,
    /// `None` at insensitive τ.
    pub eta_g: Vec<Option<f64>>,
    pub tau_opt_ms: f64,
    pub eta_min_g: f64,
    pub ensemble_eta_g: f64,
    pub closed_form: OptimalSensitivity,
}

impl SensitivityReport {
    pub fn eta_min_ut(&self) -> f64 {
        self.eta_min_g * MICROTESLA_PER_GAUSS
    }

    pub fn eta_min_nt(&self) -> f64 {
        self.eta_min_ut() * 1e3
    }

    pub fn ensemble_eta_ut(&self) -> f64 {
        self.ensemble_eta_g * MICROTESLA_PER_GAUSS
    }

    /// `tau_ms,eta_G_per_rtHz,eta_uT_per_rtHz,eta_nT_per_rtHz`; insensitive
    /// points are left blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau_ms,eta_G_per_rtHz,eta_uT_per_rtHz,eta_nT_per_rtHz")?;
        for (t, e) in self.tau_grid_ms.iter().zip(&self.eta_g) {
            match e {
                Some(e) => writeln!(w, "{t:.9},{e:.9e},{:.9e},{:.9e}", e * 1e2, e * 1e5)?,
                None => writeln!(w, "{t:.9},,,")?,
            }
        }
        Ok(())
    }
}

/// Evaluate η over a τ grid at fixed field and report the grid optimum
/// beside the closed form.
pub fn sensitivity_report(
    tau_grid_ms: &[f64],
    b_g: f64,
    t2_ms: f64,
    readout: &ReadoutModel,
    cal: &Calibration,
) -> Result<SensitivityReport> {
    readout.validate()?;
    if tau_grid_ms.is_empty() {
        return Err(NvError::InvalidConfig("empty τ grid".into()));
    }
    let eta_g = tau_grid_ms
        .iter()
        .map(
            |&t| match sensitivity_eta(t, b_g, t2_ms, readout.contrast, cal) {
                Ok(v) => Ok(Some(v)),
                Err(NvError::InsensitiveTau) => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let (best, eta_min_g) = eta_g
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i, e)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(NvError::InsensitiveTau)?;
    Ok(SensitivityReport {
        field_g: b_g,
        t2_ms,
        readout: *readout,
        calibration: *cal,
        tau_grid_ms: tau_grid_ms.to_vec(),
        eta_g,
        tau_opt_ms: tau_grid_ms[best],
        eta_min_g,
        ensemble_eta_g: eta_min_g / (readout.n_centers as f64).sqrt(),
        closed_form: optimal_sensitivity(t2_ms, readout.contrast, cal, readout.n_centers)?,
    })
}
