//! Relay-feedback identification toolkit for linear time-delay plants.
//!
//! The crate covers the full chain used to identify UAV attitude/altitude
//! dynamics from modified relay feedback tests (MRFT):
//!
//! - [`plant`] — time-delay LTI plants, their frequency response and the
//!   gain/time scaling operations the identification relies on;
//! - [`relay`] / [`sim`] — the MRFT switching law and a fixed-step
//!   closed-loop simulator;
//! - [`detect`] / [`siglog`] — limit-cycle detection on recorded signals and
//!   the CSV log format;
//! - [`lprs`] — exact limit-cycle prediction from the periodic-output Fourier
//!   series, plus the describing-function baseline;
//! - [`manifold`] — precomputed unit-frequency / unit-gain manifolds for the
//!   SOIPTD model family;
//! - [`identify`] — two-frequency and single-test identification with
//!   Monte-Carlo sensitivity statistics;
//! - [`stepfit`] — first-order-plus-dead-time step-response fitting for bench
//!   propulsion data.

pub mod detect;
pub mod identify;
pub mod lprs;
pub mod manifold;
pub mod plant;
pub mod relay;
pub mod siglog;
pub mod sim;
pub mod stepfit;

pub use detect::{detect_limit_cycle, DetectError, DetectOptions, LimitCycle};
pub use identify::{
    identify, identify_single_test, identify_two_freq, monte_carlo, Candidate, IdentError,
    IdentProblem, IdentResult, McStats, PriorKnowledge, TestObservation,
};
pub use lprs::{
    df_predict, output_amplitude, periodic_output, periodic_solution, phi, solve_limit_cycle,
    solve_limit_cycle_all, LprsError, PeriodicSolution, SolverOptions,
};
pub use manifold::{
    generate_ufm, load_manifold, load_manifold_file, save_manifold, save_manifold_file,
    scale_manifold, AxisSpec, GenOptions, GenSummary, GridSpec, LoadOptions, Manifold,
    ManifoldError, ScaledManifold, SliceCurve,
};
pub use plant::{AltitudeParams, AttitudeParams, PlantError, SoiptdParams, TimeDelayLti};
pub use relay::{MrftConfig, MrftState};
pub use sim::{simulate_mrft, SimError, SimOptions};
pub use siglog::{LogError, SignalLog};
pub use stepfit::{fit_step_response, FitError, StepFit, StepSample};
