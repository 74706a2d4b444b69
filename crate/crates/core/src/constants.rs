//! Physical constants in the unit system used throughout the crate.
//!
//! Field in Gauss, time in ms, frequency in kHz (ordinary, not angular),
//! lengths in nm unless a name says otherwise. Factors of 2π only appear
//! inside evolution operators.

/// ¹³C gyromagnetic ratio magnitude, kHz/G.
pub const GAMMA_C13_KHZ_PER_G: f64 = 1.0705;

/// Electron gyromagnetic ratio magnitude, MHz/G.
pub const GAMMA_E_MHZ_PER_G: f64 = 2.8025;

/// NV ground-state zero-field splitting, GHz.
pub const ZERO_FIELD_SPLITTING_GHZ: f64 = 2.87;

/// Diamond cubic lattice constant, Å.
pub const DIAMOND_LATTICE_CONSTANT_ANGSTROM: f64 = 3.567;

/// Natural ¹³C abundance.
pub const NATURAL_ABUNDANCE: f64 = 0.011;

/// Revival calibration T_R·B, ms·G.
pub const REVIVAL_ALPHA_MS_G: f64 = 0.9366;

/// μ₀/4π, T·m/A.
pub const MU0_OVER_4PI: f64 = 1.0e-7;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Gauss per Tesla.
pub const GAUSS_PER_TESLA: f64 = 1.0e4;

/// Microtesla per Gauss.
pub const MICROTESLA_PER_GAUSS: f64 = 100.0;

/// Convert a gyromagnetic ratio in kHz/G to Hz/T.
pub fn khz_per_g_to_hz_per_t(gamma: f64) -> f64 {
    gamma * 1.0e3 * GAUSS_PER_TESLA
}

/// Point-dipole prefactor (μ₀/4π)·h·γ_a·γ_b / r³ in kHz, for ratios in kHz/G
/// and `r_nm` in nm.
pub fn dipolar_prefactor_khz(gamma_a_khz_per_g: f64, gamma_b_khz_per_g: f64, r_nm: f64) -> f64 {
    let ga = khz_per_g_to_hz_per_t(gamma_a_khz_per_g);
    let gb = khz_per_g_to_hz_per_t(gamma_b_khz_per_g);
    let r_m = r_nm * 1.0e-9;
    MU0_OVER_4PI * PLANCK * ga * gb / (r_m * r_m * r_m) * 1.0e-3
}
