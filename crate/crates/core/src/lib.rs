//! Simulation, identification, and control workbench for a three-level boost
//! converter.
//!
//! The crate is organized bottom-up:
//!
//! - [`circuit`]: switched-mode power-stage model and fixed-step solver;
//! - [`lti`]: transfer functions, the per-band small-signal model registry,
//!   and linear time responses;
//! - [`sysid`]: step experiments on the switched model and continuous-time
//!   transfer-function fitting;
//! - [`control`]: PI with conditional anti-windup and the fuzzy gain
//!   scheduler that blends the five per-band tunings;
//! - [`scenario`]: closed-loop runs, named built-in experiments, and step
//!   metrics.
//!
//! All numeric code is generic over [`Scalar`] (f32 or f64); the aliases at
//! the crate root pin f64, which is what the CLI and tests use.

pub mod circuit;
pub mod control;
pub mod lti;
pub mod scalar;
pub mod scenario;
pub mod schedule;
pub mod subinterval;
pub mod sysid;

pub use scalar::Scalar;
pub use schedule::Schedule as ScheduleGeneric;
pub use subinterval::Subinterval;

/// f64 instantiations of the core types.
pub type ConverterParams = circuit::ConverterParams<f64>;
pub type ConverterState = circuit::ConverterState<f64>;
pub type SimTrace = circuit::SimTrace<f64>;
pub type Schedule = schedule::Schedule<f64>;
pub type TransferFunction = lti::TransferFunction<f64>;
pub type LinearResponse = lti::LinearResponse<f64>;
pub type PiGains = control::PiGains<f64>;
pub type PiState = control::PiState<f64>;
pub type DutyLimits = control::DutyLimits<f64>;
pub type FuzzyPartition = control::FuzzyPartition<f64>;
pub type GainTable = control::GainTable<f64>;
pub type OperatingPoint = sysid::OperatingPoint<f64>;
pub type Experiment = sysid::Experiment<f64>;
pub type FitResult = sysid::FitResult<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type TimeSeries = scenario::TimeSeries<f64>;
pub type StepMetrics = scenario::StepMetrics<f64>;
