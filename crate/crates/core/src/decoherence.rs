//! Hahn-echo coherence of the NV electron (|0⟩/|+1⟩ branch pair) in a
//! ¹³C bath, via a pair-cluster (CCE-2) expansion.
//!
//! Time axis: `t` is the free-precession time of one echo arm, i.e. the π
//! pulse is applied at `t` and the echo is read out at `2t`. On this axis
//! the nuclear revivals sit at multiples of the bare Larmor period
//! `1/(γ_n|B|)`.

use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathRealization, Vec3};
use crate::error::{NvError, Result};
use crate::propagator::{bath_hamiltonian, EchoKernel};

/// Minimum number of grid points per Larmor period.
pub const MIN_POINTS_PER_PERIOD: f64 = 40.0;

/// When either single-spin factor of a pair is smaller than this, the pair
/// correlation is taken as 1. The product already carries the small
/// factor, and a spin sitting in several pairs would otherwise divide by it
/// repeatedly.
pub const PAIR_DIVISION_FLOOR: f64 = 1e-4;

/// Pair correlations `L_ij / (L_i L_j)` further than this from 1 are taken
/// as 1. Near a zero of `L_i` a weak pair's ratio only amplifies a tiny
/// shift of that zero, and such ratios compound over the pairs sharing
/// spin `i`.
pub const PAIR_CORRECTION_LIMIT: f64 = 1.0;

/// Static field in the NV frame, Gauss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector(pub Vec3);

impl FieldVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn axial(bz: f64) -> Self {
        Self::new(0.0, 0.0, bz)
    }

    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }
}

/// Sampling times for an echo trace (per-arm free-precession time, ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSchedule {
    t_grid: Vec<f64>,
}

impl EchoSchedule {
    pub fn new(t_grid: Vec<f64>) -> Result<Self> {
        if t_grid.is_empty() {
            return Err(NvError::InvalidConfig("empty time grid".into()));
        }
        if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(NvError::InvalidConfig(
                "time grid must be finite and non-negative".into(),
            ));
        }
        if t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NvError::InvalidConfig(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { t_grid })
    }

    /// `n_points` evenly spaced samples on `[0, t_max]`.
    pub fn uniform(t_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(t_max > 0.0) {
            return Err(NvError::InvalidConfig(format!(
                "need t_max > 0 and ≥ 2 points, got {t_max}, {n_points}"
            )));
        }
        let step = t_max / (n_points - 1) as f64;
        Self::new((0..n_points).map(|k| k as f64 * step).collect())
    }

    /// Uniform grid on `[0, t_max]` with `points_per_period` samples per
    /// Larmor period of `field`.
    pub fn for_field(
        t_max: f64,
        field: FieldVector,
        gamma_n: f64,
        points_per_period: f64,
    ) -> Result<Self> {
        let freq = (gamma_n * field.magnitude()).abs();
        if !(freq > 0.0) {
            return Err(NvError::InvalidConfig(
                "zero field has no Larmor period; give an explicit grid".into(),
            ));
        }
        if !(points_per_period > 0.0) {
            return Err(NvError::InvalidConfig(
                "points per period must be positive".into(),
            ));
        }
        let step = 1.0 / freq / points_per_period;
        let n = (t_max / step).ceil() as usize + 1;
        Self::new((0..n).map(|k| k as f64 * step).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn max_step(&self) -> f64 {
        let first = if self.t_grid[0] > 0.0 {
            self.t_grid[0]
        } else {
            0.0
        };
        self.t_grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(first, f64::max)
    }

    /// Check the grid resolves the nuclear Larmor period of `field`.
    pub fn check_resolution(&self, field: FieldVector, gamma_n: f64) -> Result<()> {
        let freq = (gamma_n * field.magnitude()).abs();
        if freq == 0.0 || self.t_grid.len() < 2 {
            return Ok(());
        }
        let required = 1.0 / freq / MIN_POINTS_PER_PERIOD;
        let actual = self.max_step();
        if actual > required * (1.0 + 1e-9) {
            return Err(NvError::GridTooCoarse {
                required_ms: required,
                actual_ms: actual,
            });
        }
        Ok(())
    }
}

/// Provenance attached to a coherence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub field_g: [f64; 3],
    pub abundance: Option<f64>,
    pub seeds: Vec<u64>,
    pub model: String,
}

/// Sampled coherence L(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrace {
    pub t_ms: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: TraceMetadata,
}

impl CoherenceTrace {
    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }

    /// Smallest spacing of the time grid.
    pub fn min_step(&self) -> f64 {
        self.t_ms
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// The trace with its time axis multiplied by `s`.
    pub fn rescaled_time(&self, s: f64) -> Self {
        Self {
            t_ms: self.t_ms.iter().map(|t| t * s).collect(),
            ..self.clone()
        }
    }

    /// Analytic collapse-revival model sampled on `schedule`.
    pub fn analytic(t_r: f64, t2: f64, schedule: &EchoSchedule) -> Result<Self> {
        let values = schedule
            .times()
            .iter()
            .map(|&t| analytic_coherence(t_r, t2, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            t_ms: schedule.times().to_vec(),
            values,
            metadata: TraceMetadata {
                field_g: [0.0; 3],
                abundance: None,
                seeds: Vec::new(),
                model: format!("analytic(T_R={t_r},T2={t2})"),
            },
        })
    }

    /// Two-column CSV: `t_ms,L`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ms,L")?;
        for (t, l) in self.t_ms.iter().zip(&self.values) {
            writeln!(w, "{t:.12e},{l:.15e}")?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str, metadata: TraceMetadata) -> Result<Self> {
        let mut t_ms = Vec::new();
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('t')) {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| NvError::Serde(format!("bad CSV line {}: {line}", n + 1)))
            };
            t_ms.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        if t_ms.is_empty() {
            return Err(NvError::Serde("empty trace CSV".into()));
        }
        Ok(Self {
            t_ms,
            values,
            metadata,
        })
    }
}

/// Conditioned effective field on a nucleus: `B` for m = 0,
/// `B − A/γ_n` for m = +1.
pub fn effective_field(b: FieldVector, hyperfine: Vec3, m: i32, gamma_n: f64) -> Result<Vec3> {
    if gamma_n == 0.0 || !gamma_n.is_finite() {
        return Err(NvError::Domain("γ_n must be nonzero".into()));
    }
    match m {
        0 => Ok(b.0),
        1 => Ok(b.0 - hyperfine / gamma_n),
        other => Err(NvError::UnsupportedBranch(other)),
    }
}

/// Closed-form single-nucleus echo factor
/// `1 − 2|n̂₀ × n̂₁|² sin²(πγ|h₀|t) sin²(πγ|h₁|t)` (each arm lasts `t`).
pub fn single_spin_echo_factor(h0: Vec3, h1: Vec3, t: f64, gamma_n: f64) -> f64 {
    SingleSpin::new(h0, h1, gamma_n).factor(t)
}

#[derive(Debug, Clone, Copy)]
struct SingleSpin {
    depth: f64,
    f0: f64,
    f1: f64,
}

impl SingleSpin {
    fn new(h0: Vec3, h1: Vec3, gamma_n: f64) -> Self {
        let (m0, m1) = (h0.norm(), h1.norm());
        let depth = if m0 > 0.0 && m1 > 0.0 {
            2.0 * (h0 / m0).cross(&(h1 / m1)).norm_squared()
        } else {
            0.0
        };
        Self {
            depth,
            f0: (gamma_n * m0).abs(),
            f1: (gamma_n * m1).abs(),
        }
    }

    #[inline]
    fn factor(&self, t: f64) -> f64 {
        if self.depth == 0.0 {
            return 1.0;
        }
        let s0 = (std::f64::consts::PI * self.f0 * t).sin();
        let s1 = (std::f64::consts::PI * self.f1 * t).sin();
        1.0 - self.depth * s0 * s0 * s1 * s1
    }
}

/// Exact echo factor of a coupled nuclear pair, `Re Tr[ρ W₁†W₀]` with ρ
/// maximally mixed on both spins.
pub fn pair_echo_factor(
    pair: (&crate::bath::NuclearSpin, &crate::bath::NuclearSpin),
    b_ij: f64,
    field: FieldVector,
    t: f64,
    gamma_n: f64,
) -> Result<f64> {
    Ok(pair_kernel(pair.0.hyperfine, pair.1.hyperfine, b_ij, field, gamma_n)?.overlap(t))
}

fn pair_kernel(
    a_i: Vec3,
    a_j: Vec3,
    b_ij: f64,
    field: FieldVector,
    gamma_n: f64,
) -> Result<EchoKernel> {
    let f0 = [
        effective_field(field, a_i, 0, gamma_n)?,
        effective_field(field, a_j, 0, gamma_n)?,
    ];
    let f1 = [
        effective_field(field, a_i, 1, gamma_n)?,
        effective_field(field, a_j, 1, gamma_n)?,
    ];
    let couplings = [(0, 1, b_ij)];
    Ok(EchoKernel::new(
        &bath_hamiltonian(&f0, gamma_n, &couplings),
        &bath_hamiltonian(&f1, gamma_n, &couplings),
    ))
}

/// CCE-2 coherence trace:
/// `L(t) = Π_i L_i(t) · Π_(i,j) L_ij(t) / (L_i(t) L_j(t))`.
pub fn echo_coherence_trace(
    bath: &BathRealization,
    field: FieldVector,
    schedule: &EchoSchedule,
) -> Result<CoherenceTrace> {
    if !field.is_finite() {
        return Err(NvError::InvalidConfig("field must be finite".into()));
    }
    let gamma_n = bath.gamma_n;
    schedule.check_resolution(field, gamma_n)?;

    let singles = bath
        .spins
        .iter()
        .map(|s| {
            Ok(SingleSpin::new(
                effective_field(field, s.hyperfine, 0, gamma_n)?,
                effective_field(field, s.hyperfine, 1, gamma_n)?,
                gamma_n,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = bath
        .pair_couplings
        .par_iter()
        .map(|p| {
            let kernel = pair_kernel(
                bath.spins[p.i].hyperfine,
                bath.spins[p.j].hyperfine,
                p.b,
                field,
                gamma_n,
            )?;
            Ok((p.i, p.j, kernel))
        })
        .collect::<Result<Vec<_>>>()?;

    let values: Vec<f64> = schedule
        .times()
        .par_iter()
        .with_min_len(16)
        .map_init(
            || vec![0.0; singles.len()],
            |single_vals, &t| {
                let mut total = 1.0;
                for (v, s) in single_vals.iter_mut().zip(&singles) {
                    *v = s.factor(t);
                    total *= *v;
                }
                for (i, j, kernel) in &pairs {
                    let (li, lj) = (single_vals[*i], single_vals[*j]);
                    if li.abs() >= PAIR_DIVISION_FLOOR && lj.abs() >= PAIR_DIVISION_FLOOR {
                        let correction = kernel.overlap(t) / (li * lj);
                        if (correction - 1.0).abs() <= PAIR_CORRECTION_LIMIT {
                            total *= correction;
                        }
                    }
                }
                total
            },
        )
        .collect();

    Ok(CoherenceTrace {
        t_ms: schedule.times().to_vec(),
        values,
        metadata: TraceMetadata {
            field_g: field.as_array(),
            abundance: Some(bath.config.abundance),
            seeds: vec![bath.seed],
            model: "cce2".into(),
        },
    })
}

/// Pointwise mean of traces sampled on identical grids.
pub fn ensemble_average(traces: &[CoherenceTrace]) -> Result<CoherenceTrace> {
    let first = traces
        .first()
        .ok_or_else(|| NvError::Shape("no traces to average".into()))?;
    for tr in &traces[1..] {
        if tr.t_ms != first.t_ms {
            return Err(NvError::Shape("traces have different time grids".into()));
        }
    }
    if traces.len() == 1 {
        return Ok(first.clone());
    }
    let n = traces.len() as f64;
    let values = (0..first.len())
        .map(|k| traces.iter().map(|tr| tr.values[k]).sum::<f64>() / n)
        .collect();
    Ok(CoherenceTrace {
        t_ms: first.t_ms.clone(),
        values,
        metadata: TraceMetadata {
            field_g: first.metadata.field_g,
            abundance: first.metadata.abundance,
            seeds: traces
                .iter()
                .flat_map(|tr| tr.metadata.seeds.iter().copied())
                .collect(),
            model: format!("mean[{}]", first.metadata.model),
        },
    })
}

/// `½(1 + cos(2πt/T_R))·exp(−t/T₂)`.
pub fn analytic_coherence(t_r: f64, t2: f64, t: f64) -> Result<f64> {
    if !(t_r > 0.0) || !(t2 > 0.0) {
        return Err(NvError::Domain(format!(
            "timescales must be positive, got T_R={t_r}, T2={t2}"
        )));
    }
    Ok(0.5 * (1.0 + (std::f64::consts::TAU * t / t_r).cos()) * (-t / t2).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{LatticeConfig, NuclearSpin};
    use crate::constants::GAMMA_C13_KHZ_PER_G as GN;

    #[test]
    fn effective_field_branches() {
        let b = FieldVector::axial(10.0);
        let a = Vec3::new(0.3, -0.1, 2.0 * GN);
        assert_eq!(effective_field(b, a, 0, GN).unwrap(), b.0);
        let h1 = effective_field(b, a, 1, GN).unwrap();
        assert!((h1 - Vec3::new(-0.3 / GN, 0.1 / GN, 8.0)).norm() < 1e-12);
        assert_eq!(
            effective_field(b, a, -1, GN),
            Err(NvError::UnsupportedBranch(-1))
        );
        assert!(effective_field(b, a, 1, 0.0).is_err());
    }

    #[test]
    fn collinear_fields_refocus() {
        let h0 = Vec3::new(0.0, 0.0, 10.0);
        let h1 = Vec3::new(0.0, 0.0, 3.0);
        for k in 0..50 {
            let t = k as f64 * 0.037;
            assert!((single_spin_echo_factor(h0, h1, t, GN) - 1.0).abs() < 1e-15);
        }
        assert_eq!(
            single_spin_echo_factor(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.0, GN),
            1.0
        );
    }

    #[test]
    fn closed_form_matches_kernel() {
        let h0 = Vec3::new(0.0, 0.0, 10.0);
        let h1 = Vec3::new(3.0, -1.0, 7.0);
        let k = EchoKernel::new(
            &bath_hamiltonian(&[h0], GN, &[]),
            &bath_hamiltonian(&[h1], GN, &[]),
        );
        for n in 0..200 {
            let t = n as f64 * 0.0071;
            assert!((k.overlap(t) - single_spin_echo_factor(h0, h1, t, GN)).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_model_points() {
        assert_eq!(analytic_coherence(0.9, 5.0, 0.0).unwrap(), 1.0);
        assert!(analytic_coherence(0.9, 5.0, 0.45).unwrap().abs() < 1e-15);
        let v = analytic_coherence(0.9, 5.0, 0.9).unwrap();
        assert!((v - (-0.9f64 / 5.0).exp()).abs() < 1e-15);
        assert!(analytic_coherence(0.0, 1.0, 0.1).is_err());
        assert!(analytic_coherence(1.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(EchoSchedule::new(vec![0.0, 0.1, 0.1]).is_err());
        assert!(EchoSchedule::new(vec![]).is_err());
        assert!(EchoSchedule::new(vec![-0.1, 0.0]).is_err());
        let s = EchoSchedule::uniform(1.0, 11).unwrap();
        assert!((s.max_step() - 0.1).abs() < 1e-12);
        let err = s
            .check_resolution(FieldVector::axial(10.0), GN)
            .unwrap_err();
        match err {
            NvError::GridTooCoarse { required_ms, .. } => {
                assert!((required_ms - 1.0 / (GN * 10.0) / 40.0).abs() < 1e-15)
            }
            e => panic!("{e:?}"),
        }
        let fine = EchoSchedule::for_field(1.0, FieldVector::axial(10.0), GN, 40.0).unwrap();
        fine.check_resolution(FieldVector::axial(10.0), GN).unwrap();
    }

    #[test]
    fn empty_bath_is_unity() {
        let cfg = LatticeConfig {
            abundance: 0.0,
            cutoff_radius_nm: 1.0,
            ..Default::default()
        };
        let bath = crate::bath::generate_bath(&cfg).unwrap();
        let s = EchoSchedule::for_field(0.5, FieldVector::axial(10.0), GN, 50.0).unwrap();
        let tr = echo_coherence_trace(&bath, FieldVector::axial(10.0), &s).unwrap();
        assert!(tr.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn coarse_grid_rejected() {
        let bath = BathRealization::from_spins(LatticeConfig::default(), vec![]).unwrap();
        let s = EchoSchedule::uniform(1.0, 11).unwrap();
        assert!(matches!(
            echo_coherence_trace(&bath, FieldVector::axial(10.0), &s),
            Err(NvError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn decoupled_pair_factorizes() {
        let a = NuclearSpin {
            position: Vec3::new(0.5, 0.0, 0.2),
            hyperfine: Vec3::new(3.0, 1.0, -5.0),
        };
        let b = NuclearSpin {
            position: Vec3::new(-0.4, 0.3, 0.1),
            hyperfine: Vec3::new(-2.0, 4.0, 1.0),
        };
        let field = FieldVector::axial(5.0);
        for n in 0..40 {
            let t = n as f64 * 0.011;
            let pair = pair_echo_factor((&a, &b), 0.0, field, t, GN).unwrap();
            let prod = [a, b]
                .iter()
                .map(|s| {
                    single_spin_echo_factor(
                        effective_field(field, s.hyperfine, 0, GN).unwrap(),
                        effective_field(field, s.hyperfine, 1, GN).unwrap(),
                        t,
                        GN,
                    )
                })
                .product::<f64>();
            assert!((pair - prod).abs() < 1e-10);
        }
    }

    #[test]
    fn ensemble_average_rules() {
        let s = EchoSchedule::uniform(1.0, 5).unwrap();
        let mut one = CoherenceTrace::analytic(0.3, 1.0, &s).unwrap();
        one.values = vec![1.0; 5];
        let mut zero = one.clone();
        zero.values = vec![0.0; 5];
        zero.metadata.seeds = vec![7];
        let avg = ensemble_average(&[one.clone(), zero]).unwrap();
        assert!(avg.values.iter().all(|&v| v == 0.5));
        assert_eq!(avg.metadata.seeds, vec![7]);
        assert_eq!(ensemble_average(&[one.clone()]).unwrap(), one);
        assert_eq!(
            ensemble_average(&[one.clone(), one.clone()])
                .unwrap()
                .values,
            one.values
        );
        let other =
            CoherenceTrace::analytic(0.3, 1.0, &EchoSchedule::uniform(1.0, 6).unwrap()).unwrap();
        assert!(matches!(
            ensemble_average(&[one, other]),
            Err(NvError::Shape(_))
        ));
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = EchoSchedule::uniform(1.0, 7).unwrap();
        let tr = CoherenceTrace::analytic(0.3, 1.0, &s).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back =
            CoherenceTrace::read_csv(std::str::from_utf8(&buf).unwrap(), tr.metadata.clone())
                .unwrap();
        for (a, b) in back.values.iter().zip(&tr.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
