#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod constants;
pub mod decoherence;
pub mod error;
pub mod magnetometry;
pub mod pipeline;
pub mod propagator;
pub mod sensitivity;
pub mod timescales;

pub use bath::{BathRealization, LatticeConfig, NuclearSpin, PairCoupling, Vec3};
pub use decoherence::{CoherenceTrace, EchoSchedule, FieldVector, TraceMetadata};
pub use error::{NvError, Result};
pub use magnetometry::{
    AlignmentResolution, AlignmentStatus, Calibration, FieldEstimate, NvParams, OdmrSpectrum,
};
pub use pipeline::{MeasurementConfig, SimulationConfig, SweepResult};
pub use sensitivity::{ReadoutModel, SensitivityReport};
pub use timescales::{Measured, PeakParams, PowerLawFit, TimescaleFlag, TimescaleSet};
