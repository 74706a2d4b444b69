//! Ensemble simulation, field and abundance sweeps, and simulated axis
//! measurements that feed the inversion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bath::{generate_lattice_sites, sample_bath, LatticeConfig, Vec3};
use crate::decoherence::{
    echo_coherence_trace, ensemble_average, CoherenceTrace, EchoSchedule, FieldVector,
};
use crate::error::{NvError, Result};
use crate::magnetometry::{invert_tr_to_b, Calibration};
use crate::timescales::{
    extract_timescales, fit_power_law, Measured, PeakParams, PowerLawFit, TimescaleFlag,
    TimescaleSet,
};

/// Time grid and extraction settings for a simulated sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub lattice: LatticeConfig,
    pub points_per_period: f64,
    /// Fixed trace length; `None` picks one from the field and abundance.
    pub t_max_ms: Option<f64>,
    /// Shortest automatic trace length at natural abundance.
    pub min_t_max_ms: f64,
    /// Automatic traces cover at least this many Larmor periods.
    pub min_periods: f64,
    pub peaks: PeakParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            points_per_period: 100.0,
            t_max_ms: None,
            min_t_max_ms: 1.2,
            min_periods: 3.5,
            peaks: PeakParams::default(),
        }
    }
}

impl SimulationConfig {
    /// Trace length: long enough for `min_periods` revivals and, for dilute
    /// baths, for the slower envelope.
    pub fn t_max_for(&self, field: FieldVector, abundance: f64) -> f64 {
        if let Some(t) = self.t_max_ms {
            return t;
        }
        let dilution = if abundance > 0.0 {
            (crate::constants::NATURAL_ABUNDANCE / abundance).clamp(1.0, 4.0)
        } else {
            4.0
        };
        let period = 1.0 / (self.lattice.gamma_n_khz_per_g.abs() * field.magnitude());
        (self.min_t_max_ms * dilution).max(if period.is_finite() {
            self.min_periods * period
        } else {
            0.0
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.points_per_period >= crate::decoherence::MIN_POINTS_PER_PERIOD) {
            return Err(NvError::InvalidConfig(format!(
                "points_per_period must be ≥ {}, got {}",
                crate::decoherence::MIN_POINTS_PER_PERIOD,
                self.points_per_period
            )));
        }
        if let Some(t) = self.t_max_ms {
            if !(t > 0.0) {
                return Err(NvError::InvalidConfig(format!(
                    "t_max_ms must be positive, got {t}"
                )));
            }
        }
        self.peaks.validate()
    }
}

/// Per-realization traces for `seeds`, plus their pointwise mean.
pub fn simulate_ensemble(
    lattice: &LatticeConfig,
    field: FieldVector,
    schedule: &EchoSchedule,
    seeds: &[u64],
) -> Result<(Vec<CoherenceTrace>, CoherenceTrace)> {
    if seeds.is_empty() {
        return Err(NvError::InvalidConfig(
            "at least one realization is required".into(),
        ));
    }
    let sites = generate_lattice_sites(lattice)?;
    let traces = seeds
        .iter()
        .map(|&seed| {
            let bath = sample_bath(&sites, &LatticeConfig { seed, ..*lattice })?;
            echo_coherence_trace(&bath, field, schedule)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = ensemble_average(&traces)?;
    Ok((traces, mean))
}

/// Mean and standard error over the realizations where a value exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationStats {
    pub mean: f64,
    pub sem: f64,
    pub count: usize,
}

fn stats(values: impl Iterator<Item = f64>) -> Option<RealizationStats> {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sem = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    Some(RealizationStats {
        mean,
        sem,
        count: v.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub field_g: f64,
    pub abundance: f64,
    pub seeds: Vec<u64>,
    /// Timescales of the realization-averaged trace.
    pub ensemble: TimescaleSet,
    pub realizations: Vec<TimescaleSet>,
    pub t_w_stats: Option<RealizationStats>,
    pub t_r_stats: Option<RealizationStats>,
    pub t2_stats: Option<RealizationStats>,
    #[serde(skip)]
    pub trace: Option<CoherenceTrace>,
}

fn value(m: &Option<Measured>) -> Option<f64> {
    m.map(|m| m.value)
}

/// Simulate one (field, abundance) point over `n_realizations` seeds
/// starting at `cfg.lattice.seed`.
pub fn sweep_point(
    cfg: &SimulationConfig,
    field: FieldVector,
    abundance: f64,
    n_realizations: usize,
) -> Result<SweepPoint> {
    let lattice = LatticeConfig {
        abundance,
        ..cfg.lattice
    };
    let seeds: Vec<u64> = (0..n_realizations as u64)
        .map(|k| cfg.lattice.seed.wrapping_add(k))
        .collect();
    let t_max = cfg.t_max_for(field, abundance);
    let schedule = EchoSchedule::for_field(
        t_max,
        field,
        lattice.gamma_n_khz_per_g,
        cfg.points_per_period,
    )?;
    let (traces, mean) = simulate_ensemble(&lattice, field, &schedule, &seeds)?;
    let params = cfg.peaks;
    let realizations = traces
        .iter()
        .map(|tr| extract_timescales(tr, &params))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = extract_timescales(&mean, &params)?;
    Ok(SweepPoint {
        field_g: field.magnitude(),
        abundance,
        seeds,
        t_w_stats: stats(realizations.iter().filter_map(|s| value(&s.t_w))),
        t_r_stats: stats(realizations.iter().filter_map(|s| value(&s.t_r))),
        t2_stats: stats(realizations.iter().filter_map(|s| value(&s.t2))),
        ensemble,
        realizations,
        trace: Some(mean),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Field,
    Abundance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
    pub t_w_fit: Option<PowerLawFit>,
    pub t_r_fit: Option<PowerLawFit>,
    pub t2_fit: Option<PowerLawFit>,
}

impl SweepResult {
    fn key(&self, p: &SweepPoint) -> f64 {
        match self.kind {
            SweepKind::Field => p.field_g,
            SweepKind::Abundance => p.abundance,
        }
    }

    /// Power-law fit of one ensemble timescale against the sweep key. Rows
    /// lacking that timescale, or flagged for it, are left out.
    fn fit(&self, pick: impl Fn(&TimescaleSet) -> Option<f64>) -> Option<PowerLawFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .points
            .iter()
            .filter_map(|p| {
                pick(&p.ensemble)
                    .filter(|v| v.is_finite() && *v > 0.0)
                    .map(|v| (self.key(p), v))
            })
            .filter(|(k, _)| *k > 0.0)
            .unzip();
        fit_power_law(&x, &y).ok()
    }

    fn refit(&mut self) {
        self.t_w_fit = self.fit(|s| value(&s.t_w));
        self.t_r_fit = self.fit(|s| {
            if s.has(TimescaleFlag::NoRevival) {
                None
            } else {
                value(&s.t_r)
            }
        });
        self.t2_fit = self.fit(|s| {
            if s.has(TimescaleFlag::T2Undamped) || s.has(TimescaleFlag::InsufficientEnvelope) {
                None
            } else {
                value(&s.t2)
            }
        });
    }

    /// One row per sweep point, values from the realization-averaged trace.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let fmt = |m: &Option<Measured>| m.map(|m| format!("{:.9}", m.value)).unwrap_or_default();
        match self.kind {
            SweepKind::Field => writeln!(w, "B_G,T_w_ms,T_R_ms,T2_ms,flags")?,
            SweepKind::Abundance => writeln!(w, "abundance,B_G,T_w_ms,T_R_ms,T2_ms,flags")?,
        }
        for p in &self.points {
            let e = &p.ensemble;
            if self.kind == SweepKind::Abundance {
                write!(w, "{},", p.abundance)?;
            }
            writeln!(
                w,
                "{},{},{},{},{}",
                p.field_g,
                fmt(&e.t_w),
                fmt(&e.t_r),
                fmt(&e.t2),
                e.flag_string()
            )?;
        }
        Ok(())
    }
}

fn check_sweep_len(n: usize) -> Result<()> {
    if n < 3 {
        return Err(NvError::InvalidConfig(format!(
            "a sweep needs at least 3 points, got {n}"
        )));
    }
    Ok(())
}

/// Axial-field sweep. Every point uses the same seeds, so realizations are
/// paired across fields.
pub fn run_field_sweep(
    cfg: &SimulationConfig,
    fields_g: &[f64],
    n_realizations: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    check_sweep_len(fields_g.len())?;
    let mut fields = fields_g.to_vec();
    fields.sort_by(f64::total_cmp);
    let points = fields
        .iter()
        .map(|&b| {
            sweep_point(
                cfg,
                FieldVector::axial(b),
                cfg.lattice.abundance,
                n_realizations,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = SweepResult {
        kind: SweepKind::Field,
        points,
        t_w_fit: None,
        t_r_fit: None,
        t2_fit: None,
    };
    r.refit();
    Ok(r)
}

/// ¹³C abundance sweep at a fixed axial field.
pub fn run_abundance_sweep(
    cfg: &SimulationConfig,
    abundances: &[f64],
    field_g: f64,
    n_realizations: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    check_sweep_len(abundances.len())?;
    let mut xs = abundances.to_vec();
    xs.sort_by(f64::total_cmp);
    let points = xs
        .iter()
        .map(|&c| sweep_point(cfg, FieldVector::axial(field_g), c, n_realizations))
        .collect::<Result<Vec<_>>>()?;
    let mut r = SweepResult {
        kind: SweepKind::Abundance,
        points,
        t_w_fit: None,
        t_r_fit: None,
        t2_fit: None,
    };
    r.refit();
    Ok(r)
}

/// Settings for a simulated revival-period measurement. The grid step is
/// fixed in advance, independent of the field being measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    pub lattice: LatticeConfig,
    pub step_ms: f64,
    pub t_max_ms: f64,
    pub n_realizations: usize,
    /// Bias applied along the measurement axis when no revival is seen.
    pub bias_g: f64,
    pub peaks: PeakParams,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            step_ms: 1e-3,
            t_max_ms: 3.0,
            n_realizations: 10,
            bias_g: 5.0,
            peaks: PeakParams::default(),
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.step_ms > 0.0 && self.t_max_ms > self.step_ms) {
            return Err(NvError::InvalidConfig(
                "measurement grid needs step_ms > 0 and t_max_ms > step_ms".into(),
            ));
        }
        if self.n_realizations == 0 {
            return Err(NvError::InvalidConfig(
                "n_realizations must be at least 1".into(),
            ));
        }
        if !self.bias_g.is_finite() {
            return Err(NvError::InvalidConfig("bias_g must be finite".into()));
        }
        self.peaks.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "path")]
pub enum InversionPath {
    Direct,
    Bias { bias_g: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisInversion {
    pub estimate_g: f64,
    pub t_r: Measured,
    pub path: InversionPath,
    /// Flags from the direct attempt.
    pub direct_flags: Vec<TimescaleFlag>,
    pub calibration: Calibration,
}

fn measure_tr(cfg: &MeasurementConfig, axial_g: f64) -> Result<TimescaleSet> {
    let n = (cfg.t_max_ms / cfg.step_ms).round() as usize + 1;
    let schedule = EchoSchedule::uniform(cfg.t_max_ms, n)?;
    let seeds: Vec<u64> = (0..cfg.n_realizations as u64)
        .map(|k| cfg.lattice.seed.wrapping_add(k))
        .collect();
    let (_, mean) =
        simulate_ensemble(&cfg.lattice, FieldVector::axial(axial_g), &schedule, &seeds)?;
    extract_timescales(&mean, &cfg.peaks)
}

/// Simulate a revival-period measurement of an axial field and invert it.
/// When no revival is found, repeat with `cfg.bias_g` added along the axis
/// and subtract the bias from the inverted magnitude.
pub fn measure_axial_field(
    true_b_g: f64,
    cfg: &MeasurementConfig,
    cal: &Calibration,
) -> Result<AxisInversion> {
    cfg.validate()?;
    let direct = measure_tr(cfg, true_b_g)?;
    if let Some(t_r) = direct.t_r.filter(|_| !direct.has(TimescaleFlag::NoRevival)) {
        return Ok(AxisInversion {
            estimate_g: invert_tr_to_b(t_r.value, cal)?,
            t_r,
            path: InversionPath::Direct,
            direct_flags: direct.flags,
            calibration: *cal,
        });
    }
    let biased = measure_tr(cfg, true_b_g + cfg.bias_g)?;
    let t_r = biased.t_r.ok_or(NvError::NoRevival)?;
    let total = invert_tr_to_b(t_r.value, cal)?;
    Ok(AxisInversion {
        estimate_g: crate::magnetometry::subtract_bias(
            total,
            Vec3::z(),
            FieldVector::axial(cfg.bias_g),
        ),
        t_r,
        path: InversionPath::Bias { bias_g: cfg.bias_g },
        direct_flags: direct.flags,
        calibration: *cal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig {
            lattice: LatticeConfig {
                cutoff_radius_nm: 1.5,
                ..LatticeConfig::default()
            },
            t_max_ms: Some(0.3),
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn sweep_rejects_short_lists() {
        assert!(matches!(
            run_field_sweep(&small(), &[10.0, 20.0], 1),
            Err(NvError::InvalidConfig(_))
        ));
    }

    #[test]
    fn auto_t_max_grows_for_dilute_baths_and_weak_fields() {
        let cfg = SimulationConfig::default();
        let natural = cfg.t_max_for(FieldVector::axial(10.0), 0.011);
        assert_eq!(natural, 1.2);
        assert!((cfg.t_max_for(FieldVector::axial(10.0), 0.003) - 4.4).abs() < 1e-12);
        let weak = cfg.t_max_for(FieldVector::axial(1.0), 0.011);
        assert!((weak - 3.5 / 1.0705).abs() < 1e-12);
    }

    #[test]
    fn sweep_rows_are_sorted_and_csv_shaped() {
        let r = run_field_sweep(&small(), &[40.0, 20.0, 30.0], 2).unwrap();
        let keys: Vec<f64> = r.points.iter().map(|p| p.field_g).collect();
        assert_eq!(keys, vec![20.0, 30.0, 40.0]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "B_G,T_w_ms,T_R_ms,T2_ms,flags"
        );
        assert_eq!(text.lines().count(), 4);
        assert_eq!(r.points[0].seeds, vec![0, 1]);
    }

    #[test]
    fn empty_bath_never_decays() {
        let cfg = SimulationConfig {
            lattice: LatticeConfig {
                abundance: 0.0,
                ..small().lattice
            },
            ..small()
        };
        let p = sweep_point(&cfg, FieldVector::axial(10.0), 0.0, 2).unwrap();
        assert!(p.trace.unwrap().values.iter().all(|v| *v == 1.0));
        assert!(p.ensemble.has(TimescaleFlag::CrossingNotFound));
    }
}
