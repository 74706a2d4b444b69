//! Extraction of the collapse (T_w), revival (T_R) and envelope (T₂)
//! timescales from a coherence trace, and log-log power-law fits of their
//! field dependence.

use serde::{Deserialize, Serialize};

use crate::decoherence::CoherenceTrace;
use crate::error::{NvError, Result};

/// Default minimum peak prominence, in coherence units.
pub const DEFAULT_PROMINENCE: f64 = 0.02;

/// Default peak separation, as a fraction of the estimated period.
pub const DEFAULT_MIN_SEPARATION: f64 = 0.6;

/// Peaks at least this fraction of the largest prominence set the period
/// estimate.
const STRONG_FRACTION: f64 = 0.5;

const INV_E: f64 = 0.367_879_441_171_442_33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakParams {
    pub prominence: f64,
    /// Accepted peaks are at least this fraction of the estimated period
    /// apart; taller peaks win.
    pub min_separation: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            prominence: DEFAULT_PROMINENCE,
            min_separation: DEFAULT_MIN_SEPARATION,
        }
    }
}

impl PeakParams {
    pub fn with_prominence(prominence: f64) -> Self {
        Self {
            prominence,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prominence > 0.0 && self.prominence.is_finite()) {
            return Err(NvError::InvalidConfig(format!(
                "prominence must be positive, got {}",
                self.prominence
            )));
        }
        if !(self.min_separation > 0.0 && self.min_separation < 1.0) {
            return Err(NvError::InvalidConfig(format!(
                "min_separation must lie in (0, 1), got {}",
                self.min_separation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub t: f64,
    pub height: f64,
    /// Second derivative of the trace at the apex; 0 when not resolved.
    #[serde(default)]
    pub curvature: f64,
}

impl Peak {
    pub fn new(t: f64, height: f64) -> Self {
        Self {
            t,
            height,
            curvature: 0.0,
        }
    }
}

/// Detected revival peaks; `peaks[0]` is the t = 0 point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
    pub grid_step: f64,
    pub no_revival: bool,
    /// Median spacing of the most prominent maxima.
    #[serde(default)]
    pub period_estimate: Option<f64>,
}

/// A value with its uncertainty, both in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimescaleFlag {
    NoRevival,
    InsufficientEnvelope,
    CrossingNotFound,
    /// T₂ obtained by extrapolating the log-linear envelope fit.
    T2Extrapolated,
    /// Envelope shows no decay; T₂ reported as infinite.
    T2Undamped,
}

impl TimescaleFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimescaleFlag::NoRevival => "no_revival",
            TimescaleFlag::InsufficientEnvelope => "insufficient_envelope",
            TimescaleFlag::CrossingNotFound => "crossing_not_found",
            TimescaleFlag::T2Extrapolated => "t2_extrapolated",
            TimescaleFlag::T2Undamped => "t2_undamped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimescaleSet {
    pub t_w: Option<Measured>,
    pub t_r: Option<Measured>,
    pub t2: Option<Measured>,
    pub flags: Vec<TimescaleFlag>,
}

impl TimescaleSet {
    pub fn has(&self, flag: TimescaleFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn flag_string(&self) -> String {
        self.flags
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// `y = coefficient · x^exponent`, fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// RMS residual of `ln y`.
    pub residual: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }
}

/// Revival peaks. Local maxima with at least `params.prominence`
/// topographic prominence are candidates. The median spacing of the
/// strongest candidates estimates the period; candidates are then accepted
/// tallest first, skipping any closer than `params.min_separation` periods
/// to one already accepted. Survivors are refined by a three-point parabola.
/// The first sample is always peak 0.
pub fn find_revival_peaks(trace: &CoherenceTrace, params: &PeakParams) -> Result<PeakSet> {
    let (t, y) = (&trace.t_ms, &trace.values);
    if t.len() < 3 || t.len() != y.len() {
        return Err(NvError::Shape(format!(
            "trace needs ≥ 3 matched samples, got {}/{}",
            t.len(),
            y.len()
        )));
    }
    let n = y.len();
    let mut candidates: Vec<(usize, f64)> = Vec::new();

    let mut i = 1;
    while i < n - 1 {
        if y[i] > y[i - 1] {
            // Walk over a flat top, if any.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let centre = (i + j) / 2;
                let p = prominence(y, centre);
                if p >= params.prominence {
                    candidates.push((centre, p));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let origin = Peak::new(t[0], y[0]);
    let grid_step = trace.min_step();
    if candidates.is_empty() {
        return Ok(PeakSet {
            peaks: vec![origin],
            grid_step,
            no_revival: true,
            period_estimate: None,
        });
    }

    let top = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut strong: Vec<f64> = std::iter::once(t[0])
        .chain(
            candidates
                .iter()
                .filter(|c| c.1 >= STRONG_FRACTION * top)
                .map(|c| t[c.0]),
        )
        .collect();
    strong.dedup();
    let mut gaps: Vec<f64> = strong.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let period = if gaps.len() % 2 == 1 {
        gaps[gaps.len() / 2]
    } else {
        0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
    };
    let min_gap = params.min_separation * period;

    let mut order: Vec<usize> = candidates.iter().map(|c| c.0).collect();
    order.sort_by(|a, b| y[*b].total_cmp(&y[*a]).then(a.cmp(b)));
    let mut accepted: Vec<usize> = Vec::new();
    for k in order {
        if t[k] - t[0] >= min_gap && accepted.iter().all(|&a| (t[a] - t[k]).abs() >= min_gap) {
            accepted.push(k);
        }
    }
    accepted.sort_unstable();
    let mut peaks = vec![origin];
    peaks.extend(accepted.into_iter().map(|k| refine(t, y, k)));
    Ok(PeakSet {
        no_revival: peaks.len() < 2,
        peaks,
        grid_step,
        period_estimate: Some(period),
    })
}

fn prominence(y: &[f64], k: usize) -> f64 {
    let h = y[k];
    let mut left_min = h;
    for &v in y[..k].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &y[k + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    let base = left_min.max(right_min);
    h - base
}

fn refine(t: &[f64], y: &[f64], k: usize) -> Peak {
    let (x0, x1, x2) = (t[k - 1], t[k], t[k + 1]);
    let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
    // Vertex of the parabola through three (possibly unevenly spaced) points.
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curvature = (d1 - d0) / (x2 - x0);
    if !(curvature < 0.0) {
        return Peak::new(x1, y1);
    }
    let slope_mid = d0 + curvature * (x1 - x0);
    let offset = -slope_mid / (2.0 * curvature);
    let offset = offset.clamp(x0 - x1, x2 - x1);
    Peak {
        t: x1 + offset,
        height: y1 + slope_mid * offset + curvature * offset * offset,
        curvature: 2.0 * curvature,
    }
}

/// Revival period from the slope of peak time against revival order. The
/// order of each peak is its time over the period estimate, rounded, so a
/// missing revival does not shift the later ones. Peak times are first
/// moved back to the revival centre; see [`envelope_corrected_times`].
pub fn extract_tr(peaks: &PeakSet) -> Result<Measured> {
    let p = &peaks.peaks;
    let ts = envelope_corrected_times(p);
    match p.len() {
        0 | 1 => Err(NvError::NoRevival),
        2 => Ok(Measured {
            value: ts[1] - ts[0],
            uncertainty: peaks.grid_step,
        }),
        _ => {
            let xs: Vec<f64> = match peaks.period_estimate {
                Some(period) if period > 0.0 => p
                    .iter()
                    .map(|q| ((q.t - p[0].t) / period).round())
                    .collect(),
                _ => (0..p.len()).map(|k| k as f64).collect(),
            };
            let fit = linear_fit(&xs, &ts);
            Ok(Measured {
                value: fit.slope,
                uncertainty: fit.slope_se,
            })
        }
    }
}

/// A decaying envelope with log-slope `s` moves the apex of a revival with
/// curvature `L''` by `s·L/|L''|`. Undo that shift, taking `s` from the
/// heights of the neighbouring peaks. Peak 0 and peaks without a resolved
/// curvature are left alone.
pub fn envelope_corrected_times(peaks: &[Peak]) -> Vec<f64> {
    let n = peaks.len();
    let log_h = |k: usize| {
        if peaks[k].height > 0.0 {
            Some(peaks[k].height.ln())
        } else {
            None
        }
    };
    (0..n)
        .map(|k| {
            let q = peaks[k];
            if k == 0 || !(q.curvature < 0.0) || !(q.height > 0.0) {
                return q.t;
            }
            let (a, b) = (k - 1, (k + 1).min(n - 1));
            let slope = match (log_h(a), log_h(b)) {
                (Some(la), Some(lb)) if b != a => (lb - la) / (peaks[b].t - peaks[a].t),
                _ => return q.t,
            };
            q.t - slope * q.height / q.curvature.abs()
        })
        .collect()
}

/// Envelope 1/e time. When the peak heights fall through 1/e the crossing
/// is interpolated in log space between the bracketing peaks; otherwise
/// `−1/slope` of a log-linear fit is returned with a flag.
pub fn extract_t2(peaks: &PeakSet) -> Result<(Measured, Option<TimescaleFlag>)> {
    let usable: Vec<Peak> = peaks
        .peaks
        .iter()
        .copied()
        .filter(|p| p.height > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(NvError::InsufficientEnvelope {
            found: usable.len(),
        });
    }
    let ts: Vec<f64> = usable.iter().map(|p| p.t).collect();
    let logs: Vec<f64> = usable.iter().map(|p| p.height.ln()).collect();

    if let Some(b) = usable.iter().position(|p| p.height < INV_E) {
        if b == 0 {
            return Err(NvError::Domain("first peak already below 1/e".into()));
        }
        let frac = (logs[b - 1] + 1.0) / (logs[b - 1] - logs[b]);
        let crossing = ts[b - 1] + frac * (ts[b] - ts[b - 1]);
        let m = (b + 1).max(3).min(usable.len());
        let fit = linear_fit(&ts[..m], &logs[..m]);
        let uncertainty = if fit.slope < 0.0 {
            (crossing + 1.0 / fit.slope).abs()
        } else {
            ts[b] - ts[b - 1]
        };
        return Ok((
            Measured {
                value: crossing,
                uncertainty,
            },
            None,
        ));
    }

    let fit = linear_fit(&ts, &logs);
    let span = ts[ts.len() - 1] - ts[0];
    if fit.slope >= -1e-9 / span.max(f64::MIN_POSITIVE) {
        return Ok((
            Measured {
                value: f64::INFINITY,
                uncertainty: f64::INFINITY,
            },
            Some(TimescaleFlag::T2Undamped),
        ));
    }
    let value = -1.0 / fit.slope;
    let uncertainty = fit.slope_se / (fit.slope * fit.slope);
    Ok((
        Measured { value, uncertainty },
        Some(TimescaleFlag::T2Extrapolated),
    ))
}

/// First time the trace drops to 1/e, before its first significant
/// minimum (a dip followed by a rise of at least `params.prominence`).
pub fn extract_tw(trace: &CoherenceTrace, params: &PeakParams) -> Result<Measured> {
    let (t, y) = (&trace.t_ms, &trace.values);
    if y.is_empty() || (y[0] - 1.0).abs() > 1e-6 {
        return Err(NvError::Domain("T_w needs L(0) = 1".into()));
    }
    let mut run_min = y[0];
    for i in 1..y.len() {
        if y[i] < INV_E {
            let frac = (y[i - 1] - INV_E) / (y[i - 1] - y[i]);
            let step = t[i] - t[i - 1];
            return Ok(Measured {
                value: t[i - 1] + frac * step,
                uncertainty: 0.5 * step,
            });
        }
        run_min = run_min.min(y[i]);
        if y[i] - run_min >= params.prominence {
            break;
        }
    }
    Err(NvError::CrossingNotFound)
}

/// All three timescales, with failures turned into flags.
pub fn extract_timescales(trace: &CoherenceTrace, params: &PeakParams) -> Result<TimescaleSet> {
    let peaks = find_revival_peaks(trace, params)?;
    let mut set = TimescaleSet::default();
    match extract_tw(trace, params) {
        Ok(m) => set.t_w = Some(m),
        Err(NvError::CrossingNotFound) => set.flags.push(TimescaleFlag::CrossingNotFound),
        Err(e) => return Err(e),
    }
    match extract_tr(&peaks) {
        Ok(m) => set.t_r = Some(m),
        Err(NvError::NoRevival) => set.flags.push(TimescaleFlag::NoRevival),
        Err(e) => return Err(e),
    }
    match extract_t2(&peaks) {
        Ok((m, flag)) => {
            set.t2 = Some(m);
            set.flags.extend(flag);
        }
        Err(NvError::InsufficientEnvelope { .. }) | Err(NvError::Domain(_)) => {
            set.flags.push(TimescaleFlag::InsufficientEnvelope)
        }
        Err(e) => return Err(e),
    }
    Ok(set)
}

/// Least squares of `ln y` on `ln x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(NvError::Shape(format!(
            "{} x values vs {} y values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(NvError::Domain(format!("need ≥ 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(NvError::Domain(
            "power-law inputs must be positive and finite".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&lx, &ly);
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - fit.intercept - fit.slope * a).powi(2))
        .sum();
    Ok(PowerLawFit {
        coefficient: fit.intercept.exp(),
        exponent: fit.slope,
        residual: (ssr / lx.len() as f64).sqrt(),
        n_points: x.len(),
    })
}

struct LineFit {
    slope: f64,
    intercept: f64,
    slope_se: f64,
}

fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 {
        let ssr: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}
