//! Field magnitude from revival periods, three-axis reconstruction, and
//! direction disambiguation with a simulated spin-1 ODMR probe.

use std::io::Write;

use nalgebra::{Complex, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bath::Vec3;
use crate::constants::{GAMMA_E_MHZ_PER_G, REVIVAL_ALPHA_MS_G, ZERO_FIELD_SPLITTING_GHZ};
use crate::decoherence::FieldVector;
use crate::error::{NvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Paper,
    Refit,
}

/// `T_R = α / B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha_ms_g: f64,
    pub alpha_source: AlphaSource,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            alpha_ms_g: REVIVAL_ALPHA_MS_G,
            alpha_source: AlphaSource::Paper,
        }
    }
}

impl Calibration {
    pub fn new(alpha_ms_g: f64, alpha_source: AlphaSource) -> Result<Self> {
        if !(alpha_ms_g > 0.0) || !alpha_ms_g.is_finite() {
            return Err(NvError::Domain(format!(
                "calibration α must be positive, got {alpha_ms_g}"
            )));
        }
        Ok(Self {
            alpha_ms_g,
            alpha_source,
        })
    }

    /// Least-squares α for `T_R = α/B` over measured `(B, T_R)` pairs.
    pub fn refit(fields_g: &[f64], t_r_ms: &[f64]) -> Result<Self> {
        if fields_g.len() != t_r_ms.len() || fields_g.is_empty() {
            return Err(NvError::Shape(
                "calibration needs matched, non-empty (B, T_R) lists".into(),
            ));
        }
        if fields_g.iter().chain(t_r_ms).any(|v| !(*v > 0.0)) {
            return Err(NvError::Domain(
                "calibration points must be positive".into(),
            ));
        }
        let num: f64 = fields_g.iter().zip(t_r_ms).map(|(b, t)| t / b).sum();
        let den: f64 = fields_g.iter().map(|b| 1.0 / (b * b)).sum();
        Self::new(num / den, AlphaSource::Refit)
    }

    /// As [`Calibration::refit`], with each point weighted by `1/σ²`.
    pub fn refit_weighted(fields_g: &[f64], t_r_ms: &[f64], sigma_ms: &[f64]) -> Result<Self> {
        if sigma_ms.len() != fields_g.len() {
            return Err(NvError::Shape(
                "one uncertainty per calibration point".into(),
            ));
        }
        if sigma_ms.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(NvError::Domain(
                "calibration uncertainties must be positive".into(),
            ));
        }
        Self::refit(fields_g, t_r_ms)?;
        let w: Vec<f64> = sigma_ms.iter().map(|s| 1.0 / (s * s)).collect();
        let num: f64 = fields_g
            .iter()
            .zip(t_r_ms)
            .zip(&w)
            .map(|((b, t), w)| w * t / b)
            .sum();
        let den: f64 = fields_g.iter().zip(&w).map(|(b, w)| w / (b * b)).sum();
        Self::new(num / den, AlphaSource::Refit)
    }
}

/// NV spin-1 constants for the ODMR model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvParams {
    pub gamma_e_ghz_per_g: f64,
    pub zero_field_splitting_ghz: f64,
}

impl Default for NvParams {
    fn default() -> Self {
        Self {
            gamma_e_ghz_per_g: GAMMA_E_MHZ_PER_G * 1e-3,
            zero_field_splitting_ghz: ZERO_FIELD_SPLITTING_GHZ,
        }
    }
}

/// Axis-projected field magnitude `B = α / T_R`.
pub fn invert_tr_to_b(t_r_ms: f64, cal: &Calibration) -> Result<f64> {
    if !(t_r_ms > 0.0) || !t_r_ms.is_finite() {
        return Err(NvError::Domain(format!(
            "T_R must be positive, got {t_r_ms}"
        )));
    }
    Ok(cal.alpha_ms_g / t_r_ms)
}

/// Remove a known bias from an axis measurement. The caller owns the sign
/// bookkeeping.
pub fn subtract_bias(measured_axis_b: f64, axis: Vec3, bias: FieldVector) -> f64 {
    measured_axis_b - bias.0.dot(&axis)
}

/// One revival-period measurement with the NV axis along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMeasurement {
    pub axis: [f64; 3],
    pub t_r_ms: f64,
    #[serde(default)]
    pub bias: Option<FieldVector>,
}

impl AxisMeasurement {
    pub fn axis_vector(&self) -> Result<Vec3> {
        let a = Vec3::from(self.axis);
        if ((a.norm() - 1.0).abs()) > 1e-9 {
            return Err(NvError::InvalidConfig(format!(
                "axis {:?} is not a unit vector",
                self.axis
            )));
        }
        Ok(a)
    }

    /// Field component along the axis.
    pub fn component(&self, cal: &Calibration) -> Result<f64> {
        let axis = self.axis_vector()?;
        let b = invert_tr_to_b(self.t_r_ms, cal)?;
        Ok(match self.bias {
            Some(bias) => subtract_bias(b, axis, bias),
            None => b,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEstimate {
    pub magnitude: f64,
    pub direction_cosines: [f64; 3],
    pub components: [f64; 3],
    /// Unit vectors consistent with the unsigned per-axis magnitudes.
    pub sign_ambiguity: Vec<[f64; 3]>,
}

/// Magnitude and direction cosines from three orthogonal components, plus
/// every signed orientation compatible with the component magnitudes.
pub fn reconstruct_field(components: [f64; 3]) -> Result<FieldEstimate> {
    if components.iter().any(|c| !c.is_finite()) {
        return Err(NvError::Domain("components must be finite".into()));
    }
    let magnitude = components.iter().map(|c| c * c).sum::<f64>().sqrt();
    if magnitude == 0.0 {
        return Err(NvError::ZeroField);
    }
    let direction_cosines = components.map(|c| c / magnitude);
    let abs = direction_cosines.map(f64::abs);
    let mut sign_ambiguity: Vec<[f64; 3]> = Vec::new();
    for mask in 0..8u8 {
        let cand = [0, 1, 2].map(|k| {
            if mask & (1 << k) != 0 {
                -abs[k]
            } else {
                abs[k]
            }
        });
        if !sign_ambiguity.contains(&cand) {
            sign_ambiguity.push(cand);
        }
    }
    Ok(FieldEstimate {
        magnitude,
        direction_cosines,
        components,
        sign_ambiguity,
    })
}

/// Reconstruct from three axis measurements along mutually orthogonal axes.
/// Components are expressed in the frame spanned by the three axes.
pub fn reconstruct_from_measurements(
    measurements: &[AxisMeasurement],
    cal: &Calibration,
) -> Result<FieldEstimate> {
    if measurements.len() != 3 {
        return Err(NvError::InvalidConfig(format!(
            "need exactly 3 axis measurements, got {}",
            measurements.len()
        )));
    }
    let axes = measurements
        .iter()
        .map(|m| m.axis_vector())
        .collect::<Result<Vec<_>>>()?;
    for i in 0..3 {
        for j in i + 1..3 {
            if axes[i].dot(&axes[j]).abs() > 1e-6 {
                return Err(NvError::InvalidConfig(format!(
                    "axes {i} and {j} are not orthogonal"
                )));
            }
        }
    }
    let mut comps = [0.0; 3];
    for (c, m) in comps.iter_mut().zip(measurements) {
        *c = m.component(cal)?;
    }
    reconstruct_field(comps)
}

fn spin_one_matrices() -> [Matrix3<Complex<f64>>; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = Complex::new(0.0, 0.0);
    let re = |v: f64| Complex::new(v, 0.0);
    let im = |v: f64| Complex::new(0.0, v);
    [
        Matrix3::new(z, re(r), z, re(r), z, re(r), z, re(r), z),
        Matrix3::new(z, im(-r), z, im(r), z, im(-r), z, im(r), z),
        Matrix3::new(re(1.0), z, z, z, z, z, z, z, re(-1.0)),
    ]
}

/// Spin-1 Hamiltonian `Δ S_z² − γ_e B·S` in GHz, basis (|+1⟩, |0⟩, |−1⟩).
pub fn nv_hamiltonian(b: FieldVector, params: &NvParams) -> Matrix3<Complex<f64>> {
    let [sx, sy, sz] = spin_one_matrices();
    let g = params.gamma_e_ghz_per_g;
    let c = |v: f64| Complex::new(v, 0.0);
    sz * sz * c(params.zero_field_splitting_ghz)
        - (sx * c(b.0.x) + sy * c(b.0.y) + sz * c(b.0.z)) * c(g)
}

/// Eigenvalues (GHz) of the spin-1 Hamiltonian, ascending.
pub fn zeeman_levels(b: FieldVector, params: &NvParams) -> [f64; 3] {
    let eig = SymmetricEigen::new(nv_hamiltonian(b, params));
    let mut e = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    e.sort_by(f64::total_cmp);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    pub f_minus_ghz: f64,
    pub f_plus_ghz: f64,
    /// `|(f₋ + f₊)/2 − Δ|`, GHz.
    pub asymmetry_ghz: f64,
    /// `f₊ − f₋`, GHz.
    pub splitting_ghz: f64,
}

/// Transitions out of the lowest level (the |0⟩-like state at weak field).
pub fn odmr_transitions(levels: [f64; 3], params: &NvParams) -> OdmrSpectrum {
    let f_minus = levels[1] - levels[0];
    let f_plus = levels[2] - levels[0];
    OdmrSpectrum {
        f_minus_ghz: f_minus,
        f_plus_ghz: f_plus,
        asymmetry_ghz: (0.5 * (f_minus + f_plus) - params.zero_field_splitting_ghz).abs(),
        splitting_ghz: f_plus - f_minus,
    }
}

/// ODMR spectrum seen by an NV whose axis points along `axis` in a fixed
/// lab field. Only the axial and transverse magnitudes matter.
pub fn simulated_odmr(lab_field: FieldVector, axis: Vec3, params: &NvParams) -> OdmrSpectrum {
    let axis = axis.normalize();
    let parallel = lab_field.0.dot(&axis);
    let transverse = (lab_field.0 - parallel * axis).norm();
    odmr_transitions(
        zeeman_levels(FieldVector::new(transverse, 0.0, parallel), params),
        params,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTolerance {
    /// Criterion a: maximum `|(f₋ + f₊)/2 − Δ|`, GHz.
    pub asymmetry_ghz: f64,
    /// Criterion b: maximum `|δ − 2γ_e B| / (2γ_e B)`.
    pub splitting_relative: f64,
}

impl Default for AlignmentTolerance {
    fn default() -> Self {
        Self {
            asymmetry_ghz: 1e-3,
            splitting_relative: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub direction: [f64; 3],
    pub spectrum: OdmrSpectrum,
    pub splitting_error_relative: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    /// A single candidate satisfies both criteria.
    Resolved,
    /// The best candidate and its antipode are spectroscopically identical.
    AntiparallelAmbiguity,
    /// No candidate satisfies both criteria.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResolution {
    pub status: AlignmentStatus,
    pub chosen: Option<[f64; 3]>,
    pub antipode: Option<[f64; 3]>,
    pub scores: Vec<CandidateScore>,
}

/// Point the NV axis along each candidate, take the probe's spectrum, and
/// keep the candidate that is symmetric about Δ (criterion a) and split by
/// `2γ_e·B` (criterion b).
pub fn resolve_alignment<P>(
    candidates: &[[f64; 3]],
    expected_magnitude_g: f64,
    probe: P,
    params: &NvParams,
    tol: &AlignmentTolerance,
) -> AlignmentResolution
where
    P: Fn(Vec3) -> OdmrSpectrum,
{
    let expected = 2.0 * params.gamma_e_ghz_per_g * expected_magnitude_g;
    let scores: Vec<CandidateScore> = candidates
        .iter()
        .map(|&d| {
            let spectrum = probe(Vec3::from(d));
            let err = if expected > 0.0 {
                (spectrum.splitting_ghz - expected).abs() / expected
            } else {
                f64::INFINITY
            };
            CandidateScore {
                direction: d,
                spectrum,
                splitting_error_relative: err,
                passes: spectrum.asymmetry_ghz <= tol.asymmetry_ghz
                    && err <= tol.splitting_relative,
            }
        })
        .collect();

    let score = |s: &CandidateScore| {
        s.splitting_error_relative + s.spectrum.asymmetry_ghz / tol.asymmetry_ghz.max(1e-300)
    };
    let best = scores
        .iter()
        .filter(|s| s.passes)
        .min_by(|a, b| score(a).total_cmp(&score(b)));
    let Some(best) = best else {
        return AlignmentResolution {
            status: AlignmentStatus::Unresolved,
            chosen: None,
            antipode: None,
            scores,
        };
    };
    let d = Vec3::from(best.direction);
    let antipode = scores.iter().find(|s| {
        s.passes
            && (Vec3::from(s.direction) + d).norm() < 1e-9
            && (score(s) - score(best)).abs() <= 1e-9 * (1.0 + score(best))
    });
    let status = if antipode.is_some() {
        AlignmentStatus::AntiparallelAmbiguity
    } else {
        AlignmentStatus::Resolved
    };
    AlignmentResolution {
        status,
        chosen: Some(best.direction),
        antipode: antipode.map(|s| s.direction),
        scores,
    }
}

/// CSV rows `frequency_GHz,candidate_id,asymmetry`, two per candidate.
pub fn write_odmr_csv<W: Write>(scores: &[CandidateScore], mut w: W) -> std::io::Result<()> {
    writeln!(w, "frequency_GHz,candidate_id,asymmetry")?;
    for (id, s) in scores.iter().enumerate() {
        writeln!(
            w,
            "{:.12},{id},{:.6e}",
            s.spectrum.f_minus_ghz, s.spectrum.asymmetry_ghz
        )?;
        writeln!(
            w,
            "{:.12},{id},{:.6e}",
            s.spectrum.f_plus_ghz, s.spectrum.asymmetry_ghz
        )?;
    }
    Ok(())
}
