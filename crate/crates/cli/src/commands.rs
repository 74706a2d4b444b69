use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nvmag_core::bath::generate_bath;
use nvmag_core::decoherence::echo_coherence_trace;
use nvmag_core::magnetometry::{
    invert_tr_to_b, reconstruct_field, reconstruct_from_measurements, resolve_alignment,
    simulated_odmr, subtract_bias, write_odmr_csv, AlignmentTolerance, AxisMeasurement,
};
use nvmag_core::pipeline::{measure_axial_field, run_abundance_sweep, run_field_sweep};
use nvmag_core::sensitivity::{optimal_sensitivity, sensitivity_report};
use nvmag_core::timescales::extract_timescales;
use nvmag_core::{
    BathRealization, CoherenceTrace, EchoSchedule, FieldVector, NvError, TraceMetadata, Vec3,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::plot::{render_csv, PlotSpec};
use crate::{Format, Global};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub format: Format,
    pub plot: bool,
}

impl Ctx {
    pub fn from_global(g: &Global) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        fs::create_dir_all(&g.out_dir)
            .with_context(|| format!("creating {}", g.out_dir.display()))?;
        Ok(Self {
            cfg,
            out_dir: g.out_dir.clone(),
            format: g.format,
            plot: g.plot,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(
        &self,
        m: &mut RunManifest,
        stage: &str,
        name: &str,
        contents: &[u8],
    ) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        m.output(stage, &p);
        Ok(p)
    }

    fn write_json<T: Serialize>(
        &self,
        m: &mut RunManifest,
        stage: &str,
        name: &str,
        v: &T,
    ) -> Result<PathBuf> {
        self.write(m, stage, name, serde_json::to_string_pretty(v)?.as_bytes())
    }

    fn plot(&self, m: &mut RunManifest, name: &str, csv: &str, spec: &PlotSpec) -> Result<()> {
        if self.plot {
            let svg = render_csv(csv, spec)?;
            self.write(m, "plot", name, svg.as_bytes())?;
        }
        Ok(())
    }

    fn finish(&self, m: &RunManifest) -> Result<()> {
        let p = m.write(&self.out_dir)?;
        eprintln!("manifest: {}", p.display());
        Ok(())
    }
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], NvError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            NvError::InvalidConfig(format!("expected three comma-separated numbers, got {s:?}"))
        })?;
    <[f64; 3]>::try_from(v)
        .map_err(|_| NvError::InvalidConfig(format!("expected three components, got {s:?}")))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, NvError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| NvError::InvalidConfig(format!("bad number {p:?} in {s:?}")))
        })
        .collect()
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

pub fn bath(ctx: &Ctx) -> Result<()> {
    let mut m = RunManifest::new("bath", &ctx.cfg);
    m.seeds = vec![ctx.cfg.seed];
    let bath = m.timed("generate", || generate_bath(&ctx.cfg.lattice()))?;
    ctx.write(&mut m, "bath", "bath.json", bath.to_json()?.as_bytes())?;
    println!(
        "spins={} pairs={} seed={}",
        bath.len(),
        bath.pair_couplings.len(),
        bath.seed
    );
    ctx.finish(&m)
}

pub struct SimulateArgs {
    pub bath: Option<PathBuf>,
    pub field: Option<[f64; 3]>,
    pub t_max_ms: Option<f64>,
    pub step_ms: Option<f64>,
    pub points_per_period: Option<f64>,
}

pub fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = RunManifest::new("simulate", cfg);
    let bath = match &a.bath {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| NvError::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            BathRealization::from_json(&text)?
        }
        None => m.timed("bath", || generate_bath(&cfg.lattice()))?,
    };
    m.seeds = vec![bath.seed];
    let field = FieldVector(Vec3::from(a.field.unwrap_or(cfg.field_g)));
    let sim = cfg.simulation();
    let t_max = a
        .t_max_ms
        .or(cfg.t_max_ms)
        .unwrap_or_else(|| sim.t_max_for(field, bath.config.abundance));
    let schedule = match a.step_ms.or(cfg.step_ms) {
        Some(step) => EchoSchedule::uniform(t_max, (t_max / step).round() as usize + 1)?,
        None => EchoSchedule::for_field(
            t_max,
            field,
            bath.gamma_n,
            a.points_per_period.unwrap_or(cfg.points_per_period),
        )?,
    };
    let trace = m.timed("simulate", || echo_coherence_trace(&bath, field, &schedule))?;
    let csv = csv_string(|b| trace.write_csv(b))?;
    match ctx.format {
        Format::Csv => {
            ctx.write(&mut m, "trace", "trace.csv", csv.as_bytes())?;
            ctx.write_json(&mut m, "trace_metadata", "trace_meta.json", &trace.metadata)?;
        }
        Format::Json => {
            ctx.write_json(&mut m, "trace", "trace.json", &trace)?;
        }
    }
    let title = format!("Hahn-echo coherence, |B| = {} G", field.magnitude());
    ctx.plot(
        &mut m,
        "trace.svg",
        &csv,
        &PlotSpec {
            title,
            x_col: "t_ms".into(),
            y_cols: vec!["L".into()],
            log_x: false,
            log_y: false,
            markers: false,
        },
    )?;
    println!(
        "points={} t_max_ms={t_max} spins={}",
        trace.len(),
        bath.len()
    );
    ctx.finish(&m)
}

pub struct SweepArgs {
    pub fields: Option<Vec<f64>>,
    pub abundances: Option<Vec<f64>>,
    pub realizations: Option<usize>,
    pub field: Option<f64>,
}

pub fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = RunManifest::new("sweep", cfg);
    let n = a.realizations.unwrap_or(cfg.realizations);
    m.seeds = (0..n as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let sim = cfg.simulation();
    let result = if let Some(c) = &a.abundances {
        m.timed("sweep", || {
            run_abundance_sweep(&sim, c, a.field.unwrap_or(cfg.sweep_field_g), n)
        })?
    } else {
        let fields = a
            .fields
            .clone()
            .unwrap_or_else(|| cfg.sweep_fields_g.clone());
        m.timed("sweep", || run_field_sweep(&sim, &fields, n))?
    };
    let csv = csv_string(|b| result.write_csv(b))?;
    match ctx.format {
        Format::Csv => {
            ctx.write(&mut m, "table", "sweep.csv", csv.as_bytes())?;
        }
        Format::Json => {
            ctx.write_json(&mut m, "table", "sweep.json", &result)?;
        }
    }
    ctx.write_json(
        &mut m,
        "fits",
        "sweep_fits.json",
        &serde_json::json!({
            "t_w": result.t_w_fit,
            "t_r": result.t_r_fit,
            "t2": result.t2_fit,
        }),
    )?;
    let x_col = if a.abundances.is_some() {
        "abundance"
    } else {
        "B_G"
    };
    let spec = PlotSpec {
        title: "Coherence timescales".into(),
        x_col: x_col.into(),
        y_cols: vec!["T_w_ms".into(), "T_R_ms".into(), "T2_ms".into()],
        log_x: true,
        log_y: true,
        markers: true,
    };
    ctx.plot(&mut m, "sweep.svg", &csv, &spec)?;
    print!("{csv}");
    if let Some(f) = result.t_r_fit {
        println!("T_R fit: c={:.6} ms·G p={:.4}", f.coefficient, f.exponent);
    }
    if let Some(f) = result.t_w_fit {
        println!("T_w fit: c={:.6} ms·G^p p={:.4}", f.coefficient, f.exponent);
    }
    ctx.finish(&m)
}

pub fn extract(ctx: &Ctx, trace_path: &Path) -> Result<()> {
    let mut m = RunManifest::new("extract", &ctx.cfg);
    let text = fs::read_to_string(trace_path).map_err(|e| {
        NvError::InvalidConfig(format!("cannot read {}: {e}", trace_path.display()))
    })?;
    let trace: CoherenceTrace = if trace_path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        let sidecar = trace_path.with_file_name("trace_meta.json");
        let meta = match fs::read_to_string(&sidecar) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(_) => TraceMetadata {
                field_g: [0.0; 3],
                abundance: None,
                seeds: vec![],
                model: "unknown".into(),
            },
        };
        CoherenceTrace::read_csv(&text, meta)?
    };
    m.seeds = trace.metadata.seeds.clone();
    let set = extract_timescales(&trace, &ctx.cfg.peaks())?;
    let cell = |v: Option<nvmag_core::Measured>| {
        v.map(|x| format!("{:.9},{:.3e}", x.value, x.uncertainty))
            .unwrap_or_else(|| ",".into())
    };
    let row = format!(
        "T_w_ms,T_w_err_ms,T_R_ms,T_R_err_ms,T2_ms,T2_err_ms,flags\n{},{},{},{}\n",
        cell(set.t_w),
        cell(set.t_r),
        cell(set.t2),
        set.flag_string()
    );
    match ctx.format {
        Format::Csv => ctx.write(&mut m, "timescales", "timescales.csv", row.as_bytes())?,
        Format::Json => ctx.write_json(&mut m, "timescales", "timescales.json", &set)?,
    };
    print!("{row}");
    ctx.finish(&m)
}

pub struct InvertArgs {
    pub t_r_ms: Option<f64>,
    pub bias_g: Option<f64>,
    pub simulate_field: Option<f64>,
}

pub fn invert(ctx: &Ctx, a: &InvertArgs) -> Result<()> {
    let cal = ctx.cfg.calibration();
    let mut m = RunManifest::new("invert", &ctx.cfg);
    let value = if let Some(b) = a.simulate_field {
        let mc = ctx.cfg.measurement();
        m.seeds = (0..mc.n_realizations as u64)
            .map(|k| mc.lattice.seed.wrapping_add(k))
            .collect();
        let r = m.timed("measure", || measure_axial_field(b, &mc, &cal))?;
        println!(
            "true_B_G={b} estimate_G={:.6} T_R_ms={:.6} path={:?}",
            r.estimate_g, r.t_r.value, r.path
        );
        serde_json::to_value(&r)?
    } else {
        let t_r = a
            .t_r_ms
            .ok_or_else(|| NvError::InvalidConfig("give --t-r or --simulate-field".into()))?;
        let total = invert_tr_to_b(t_r, &cal)?;
        let b = match a.bias_g {
            Some(bias) => subtract_bias(total, Vec3::z(), FieldVector::axial(bias)),
            None => total,
        };
        println!("estimate_G={b:.9}");
        serde_json::json!({ "t_r_ms": t_r, "bias_g": a.bias_g, "estimate_g": b, "calibration": cal })
    };
    match ctx.format {
        Format::Json => ctx.write_json(&mut m, "inversion", "invert.json", &value)?,
        Format::Csv => {
            let b = value["estimate_g"].as_f64().unwrap_or(f64::NAN);
            ctx.write(
                &mut m,
                "inversion",
                "invert.csv",
                format!("estimate_G,alpha_ms_G\n{b},{}\n", cal.alpha_ms_g).as_bytes(),
            )?
        }
    };
    ctx.finish(&m)
}

pub fn reconstruct(
    ctx: &Ctx,
    components: Option<[f64; 3]>,
    measurements: Option<&Path>,
) -> Result<()> {
    let mut m = RunManifest::new("reconstruct", &ctx.cfg);
    let est = match (components, measurements) {
        (Some(c), None) => reconstruct_field(c)?,
        (None, Some(p)) => {
            let text = fs::read_to_string(p)
                .map_err(|e| NvError::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            let ms: Vec<AxisMeasurement> = serde_json::from_str(&text)?;
            reconstruct_from_measurements(&ms, &ctx.cfg.calibration())?
        }
        _ => {
            return Err(NvError::InvalidConfig(
                "give exactly one of --components or --measurements".into(),
            )
            .into())
        }
    };
    let [cx, cy, cz] = est.direction_cosines;
    match ctx.format {
        Format::Json => ctx.write_json(&mut m, "estimate", "reconstruct.json", &est)?,
        Format::Csv => {
            let mut s = String::from("magnitude_G,cos_x,cos_y,cos_z\n");
            s += &format!("{},{cx},{cy},{cz}\n", est.magnitude);
            ctx.write(&mut m, "estimate", "reconstruct.csv", s.as_bytes())?
        }
    };
    println!(
        "magnitude_G={:.9} cosines=({cx:.6},{cy:.6},{cz:.6}) sign_candidates={}",
        est.magnitude,
        est.sign_ambiguity.len()
    );
    ctx.finish(&m)
}

pub fn odmr(ctx: &Ctx, field: Option<[f64; 3]>, resolve_from: Option<[f64; 3]>) -> Result<()> {
    let params = ctx.cfg.nv_params();
    let mut m = RunManifest::new("odmr", &ctx.cfg);
    let truth = FieldVector(Vec3::from(field.unwrap_or(ctx.cfg.field_g)));
    let tol = AlignmentTolerance {
        asymmetry_ghz: ctx.cfg.asymmetry_tolerance_mhz * 1e-3,
        splitting_relative: ctx.cfg.splitting_tolerance_relative,
    };
    let (candidates, magnitude) = match resolve_from {
        Some(c) => {
            let est = reconstruct_field(c)?;
            (est.sign_ambiguity, est.magnitude)
        }
        None => (vec![[0.0, 0.0, 1.0]], truth.magnitude()),
    };
    let res = resolve_alignment(
        &candidates,
        magnitude,
        |axis| simulated_odmr(truth, axis, &params),
        &params,
        &tol,
    );
    let csv = csv_string(|b| write_odmr_csv(&res.scores, b))?;
    match ctx.format {
        Format::Csv => ctx.write(&mut m, "spectrum", "odmr.csv", csv.as_bytes())?,
        Format::Json => ctx.write_json(&mut m, "spectrum", "odmr.json", &res)?,
    };
    for (id, s) in res.scores.iter().enumerate() {
        println!(
            "candidate {id} {:?}: f-={:.6} GHz f+={:.6} GHz splitting={:.4} MHz asymmetry={:.4} MHz {}",
            s.direction,
            s.spectrum.f_minus_ghz,
            s.spectrum.f_plus_ghz,
            s.spectrum.splitting_ghz * 1e3,
            s.spectrum.asymmetry_ghz * 1e3,
            if s.passes { "pass" } else { "fail" }
        );
    }
    println!(
        "status={:?} chosen={:?} antipode={:?}",
        res.status, res.chosen, res.antipode
    );
    ctx.finish(&m)
}

pub fn sensitivity(ctx: &Ctx, t2: Option<f64>, field: Option<f64>) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut m = RunManifest::new("sensitivity", cfg);
    let cal = cfg.calibration();
    let readout = cfg.readout();
    let t2 = t2.unwrap_or(cfg.t2_ms);
    let closed = optimal_sensitivity(t2, readout.contrast, &cal, readout.n_centers)?;
    let b = field.unwrap_or(closed.exact_field_g);
    let grid: Vec<f64> = (1..=cfg.tau_points)
        .map(|k| cfg.tau_max_ms * k as f64 / cfg.tau_points as f64)
        .collect();
    let report = sensitivity_report(&grid, b, t2, &readout, &cal)?;
    let csv = csv_string(|w| report.write_csv(w))?;
    match ctx.format {
        Format::Csv => {
            ctx.write(&mut m, "eta", "sensitivity.csv", csv.as_bytes())?;
            ctx.write_json(&mut m, "report", "sensitivity.json", &report)?;
        }
        Format::Json => {
            ctx.write_json(&mut m, "report", "sensitivity.json", &report)?;
        }
    }
    let spec = PlotSpec {
        title: format!("Shot-noise sensitivity, T2 = {t2} ms, B = {b:.4} G"),
        x_col: "tau_ms".into(),
        y_cols: vec!["eta_uT_per_rtHz".into()],
        log_x: false,
        log_y: true,
        markers: false,
    };
    ctx.plot(&mut m, "sensitivity.svg", &csv, &spec)?;
    println!(
        "eta_min={:.4} uT/rtHz (grid, tau={:.4} ms) closed_form={:.4} uT/rtHz ensemble={:.4} uT/rtHz field={b:.6} G",
        report.eta_min_ut(),
        report.tau_opt_ms,
        closed.eta_min_g * 100.0,
        report.ensemble_eta_ut()
    );
    ctx.finish(&m)
}
