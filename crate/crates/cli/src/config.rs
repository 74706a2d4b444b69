//! Flat JSON run configuration. Every field is optional; missing fields take
//! the defaults below. Unknown keys are rejected.

use std::path::Path;

use nvmag_core::constants::{
    DIAMOND_LATTICE_CONSTANT_ANGSTROM, GAMMA_C13_KHZ_PER_G, GAMMA_E_MHZ_PER_G, NATURAL_ABUNDANCE,
    REVIVAL_ALPHA_MS_G, ZERO_FIELD_SPLITTING_GHZ,
};
use nvmag_core::magnetometry::AlphaSource;
use nvmag_core::{
    Calibration, LatticeConfig, MeasurementConfig, NvError, NvParams, PeakParams, ReadoutModel,
    SimulationConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First bath seed; realizations use `seed, seed + 1, …`.
    pub seed: u64,

    // Lattice and bath.
    pub lattice_constant_angstrom: f64,
    pub cutoff_radius_nm: f64,
    pub exclusion_radius_angstrom: f64,
    pub pair_cutoff_nm: f64,
    pub abundance: f64,

    // Physical constants.
    pub gamma_n_khz_per_g: f64,
    pub gamma_e_mhz_per_g: f64,
    pub zero_field_splitting_ghz: f64,
    pub alpha_ms_g: f64,
    pub alpha_source: AlphaSource,

    // Echo simulation.
    /// Static field in the NV frame, G.
    pub field_g: [f64; 3],
    /// Trace length; chosen from the field and abundance when absent.
    pub t_max_ms: Option<f64>,
    pub points_per_period: f64,
    /// Fixed grid step; overrides `points_per_period` when set.
    pub step_ms: Option<f64>,

    // Extraction.
    pub prominence: f64,
    pub min_separation: f64,

    // Sweeps.
    pub realizations: usize,
    pub sweep_fields_g: Vec<f64>,
    pub sweep_abundances: Vec<f64>,
    /// Axial field for abundance sweeps, G.
    pub sweep_field_g: f64,

    // Simulated measurements.
    pub bias_g: f64,
    pub measurement_step_ms: f64,
    pub measurement_t_max_ms: f64,

    // Alignment.
    pub asymmetry_tolerance_mhz: f64,
    pub splitting_tolerance_relative: f64,

    // Sensitivity.
    pub contrast: f64,
    pub n_centers: u64,
    pub t_total_s: f64,
    pub t2_ms: f64,
    pub tau_max_ms: f64,
    pub tau_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lattice_constant_angstrom: DIAMOND_LATTICE_CONSTANT_ANGSTROM,
            cutoff_radius_nm: 4.0,
            exclusion_radius_angstrom: 1.55,
            pair_cutoff_nm: 1.0,
            abundance: NATURAL_ABUNDANCE,
            gamma_n_khz_per_g: GAMMA_C13_KHZ_PER_G,
            gamma_e_mhz_per_g: GAMMA_E_MHZ_PER_G,
            zero_field_splitting_ghz: ZERO_FIELD_SPLITTING_GHZ,
            alpha_ms_g: REVIVAL_ALPHA_MS_G,
            alpha_source: AlphaSource::Paper,
            field_g: [0.0, 0.0, 10.0],
            t_max_ms: None,
            points_per_period: 100.0,
            step_ms: None,
            prominence: nvmag_core::timescales::DEFAULT_PROMINENCE,
            min_separation: nvmag_core::timescales::DEFAULT_MIN_SEPARATION,
            realizations: 10,
            sweep_fields_g: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            sweep_abundances: vec![0.003, 0.011, 0.03],
            sweep_field_g: 10.0,
            bias_g: 5.0,
            measurement_step_ms: 1e-3,
            measurement_t_max_ms: 3.0,
            asymmetry_tolerance_mhz: 1.0,
            splitting_tolerance_relative: 0.05,
            contrast: 0.3,
            n_centers: 1,
            t_total_s: 1.0,
            t2_ms: 0.5,
            tau_max_ms: 2.0,
            tau_points: 2000,
        }
    }
}

impl RunConfig {
    /// Read a config file. A run manifest is also accepted, in which case
    /// its echoed config is used.
    pub fn load(path: &Path) -> Result<Self, NvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NvError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let inner = match value.get("config") {
            Some(c) if value.get("tool").is_some() => c.clone(),
            _ => value,
        };
        let cfg: RunConfig = serde_json::from_value(inner)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NvError> {
        self.lattice().validate()?;
        self.peaks().validate()?;
        self.readout().validate()?;
        Calibration::new(self.alpha_ms_g, self.alpha_source)?;
        let bad = |m: &str| Err(NvError::InvalidConfig(m.into()));
        if self.field_g.iter().any(|v| !v.is_finite()) {
            return bad("field_g must be finite");
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1");
        }
        if !(self.points_per_period > 0.0) {
            return bad("points_per_period must be positive");
        }
        if matches!(self.step_ms, Some(s) if !(s > 0.0))
            || matches!(self.t_max_ms, Some(t) if !(t > 0.0))
        {
            return bad("step_ms and t_max_ms must be positive when set");
        }
        if !(self.zero_field_splitting_ghz > 0.0) {
            return bad("zero_field_splitting_ghz must be positive");
        }
        if !(self.t2_ms > 0.0 && self.tau_max_ms > 0.0) || self.tau_points == 0 {
            return bad("t2_ms, tau_max_ms and tau_points must be positive");
        }
        Ok(())
    }

    pub fn lattice(&self) -> LatticeConfig {
        LatticeConfig {
            lattice_constant_angstrom: self.lattice_constant_angstrom,
            cutoff_radius_nm: self.cutoff_radius_nm,
            exclusion_radius_angstrom: self.exclusion_radius_angstrom,
            pair_cutoff_nm: self.pair_cutoff_nm,
            abundance: self.abundance,
            gamma_n_khz_per_g: self.gamma_n_khz_per_g,
            gamma_e_mhz_per_g: self.gamma_e_mhz_per_g,
            seed: self.seed,
        }
    }

    pub fn peaks(&self) -> PeakParams {
        PeakParams {
            prominence: self.prominence,
            min_separation: self.min_separation,
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            lattice: self.lattice(),
            points_per_period: self.points_per_period,
            t_max_ms: self.t_max_ms,
            peaks: self.peaks(),
            ..SimulationConfig::default()
        }
    }

    pub fn measurement(&self) -> MeasurementConfig {
        MeasurementConfig {
            lattice: self.lattice(),
            step_ms: self.measurement_step_ms,
            t_max_ms: self.measurement_t_max_ms,
            n_realizations: self.realizations,
            bias_g: self.bias_g,
            peaks: self.peaks(),
        }
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            alpha_ms_g: self.alpha_ms_g,
            alpha_source: self.alpha_source,
        }
    }

    pub fn nv_params(&self) -> NvParams {
        NvParams {
            gamma_e_ghz_per_g: self.gamma_e_mhz_per_g * 1e-3,
            zero_field_splitting_ghz: self.zero_field_splitting_ghz,
        }
    }

    pub fn readout(&self) -> ReadoutModel {
        ReadoutModel {
            contrast: self.contrast,
            n_centers: self.n_centers,
            t_total_s: self.t_total_s,
        }
    }
}
