//! `nvmag`: NV-center Hahn-echo simulation and revival-period magnetometry.
//!
//! Exit codes: 0 success, 2 configuration error, 3 physics constraint
//! (grid too coarse, no revival, insensitive τ, …), 1 anything else.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nvmag_core::NvError;

use commands::{parse_list, parse_vec3, Ctx, InvertArgs, SimulateArgs, SweepArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Flat JSON config (a run manifest also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bath seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "nvmag",
    version,
    about = "NV-center decoherence simulation and weak-field magnetometry"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a ¹³C bath realization.
    Bath,
    /// Hahn-echo coherence trace for one bath.
    Simulate {
        /// Bath JSON from `nvmag bath`; generated from the config otherwise.
        #[arg(long)]
        bath: Option<PathBuf>,
        /// Field in the NV frame, G: "bx,by,bz".
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        t_max: Option<f64>,
        /// Fixed grid step, ms.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        points_per_period: Option<f64>,
    },
    /// Timescales over a field or abundance sweep.
    Sweep {
        /// Axial fields, G: "1,2,5,…".
        #[arg(long, conflicts_with = "abundances")]
        fields: Option<String>,
        /// ¹³C fractions: "0.003,0.011,…".
        #[arg(long)]
        abundances: Option<String>,
        #[arg(long)]
        realizations: Option<usize>,
        /// Axial field for an abundance sweep, G.
        #[arg(long)]
        field: Option<f64>,
    },
    /// T_w, T_R and T2 from a trace file.
    Extract {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Field along the NV axis from a revival period.
    Invert {
        #[arg(long = "t-r")]
        t_r: Option<f64>,
        /// Bias field that was added along the axis, G.
        #[arg(long)]
        bias: Option<f64>,
        /// Simulate the measurement of this axial field instead.
        #[arg(long)]
        simulate_field: Option<f64>,
    },
    /// Magnitude and direction from three orthogonal components.
    Reconstruct {
        /// "bx,by,bz", G.
        #[arg(long)]
        components: Option<String>,
        /// JSON list of axis measurements.
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Simulated ODMR spectrum and direction disambiguation.
    Odmr {
        /// True lab field, G: "bx,by,bz".
        #[arg(long)]
        field: Option<String>,
        /// Reconstructed components, G; their sign patterns are the candidates.
        #[arg(long)]
        resolve: Option<String>,
    },
    /// Shot-noise sensitivity curve and optimum.
    Sensitivity {
        #[arg(long)]
        t2: Option<f64>,
        /// Axial field, G; defaults to the field where τ = T2/2 is optimal.
        #[arg(long)]
        field: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::from_global(&cli.global)?;
    match cli.command {
        Command::Bath => commands::bath(&ctx),
        Command::Simulate {
            bath,
            field,
            t_max,
            step,
            points_per_period,
        } => commands::simulate(
            &ctx,
            &SimulateArgs {
                bath,
                field: field.as_deref().map(parse_vec3).transpose()?,
                t_max_ms: t_max,
                step_ms: step,
                points_per_period,
            },
        ),
        Command::Sweep {
            fields,
            abundances,
            realizations,
            field,
        } => {
            let fields = fields.as_deref().map(parse_list).transpose()?;
            let abundances = abundances.as_deref().map(parse_list).transpose()?;
            commands::sweep(
                &ctx,
                &SweepArgs {
                    fields,
                    abundances,
                    realizations,
                    field,
                },
            )
        }
        Command::Extract { trace } => commands::extract(&ctx, &trace),
        Command::Invert {
            t_r,
            bias,
            simulate_field,
        } => commands::invert(
            &ctx,
            &InvertArgs {
                t_r_ms: t_r,
                bias_g: bias,
                simulate_field,
            },
        ),
        Command::Reconstruct {
            components,
            measurements,
        } => commands::reconstruct(
            &ctx,
            components.as_deref().map(parse_vec3).transpose()?,
            measurements.as_deref(),
        ),
        Command::Odmr { field, resolve } => commands::odmr(
            &ctx,
            field.as_deref().map(parse_vec3).transpose()?,
            resolve.as_deref().map(parse_vec3).transpose()?,
        ),
        Command::Sensitivity { t2, field } => commands::sensitivity(&ctx, t2, field),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<NvError>() {
        return if e.is_config_error() { 2 } else { 3 };
    }
    if err.downcast_ref::<serde_json::Error>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("NVMAG_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: NVMAG_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
