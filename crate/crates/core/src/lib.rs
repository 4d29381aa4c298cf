//! Poly-quadratic detectability and stabilizability of discrete-time
//! polytopic LPV systems `x⁺ = A(ξ)x + Bu`, `y = Cx`.
//!
//! The crate assembles the vertex LMI tests, solves them with a
//! first-order spectral-margin engine, turns certificates into observer and
//! state-feedback gains, and checks every certificate independently by
//! eigenvalues, simplex-grid evaluation and Lyapunov-monitored simulation.

pub mod error;
pub mod files;
pub mod lmi;
pub mod model;
pub mod numerics;
pub mod solver;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
pub use lmi::{
    build_detectability, build_stab_slack, build_stab_vertex, evaluate_constraints, Assignment, LmiProblem,
    LmiTest, LyapunovStructure,
};
pub use model::{random_schedule, random_system, RandomSystemSpec, PolytopicSystem, Schedule, ScheduleMode, SimplexPoint};
pub use numerics::{Matrix, SymMatrix};
pub use solver::{solve, SolveOutcome, SolveStatus, SolverConfig};
pub use synthesis::{ControllerGain, DetectCertificate, ObserverGains, PolyQlf, StabCertificate, StabMethod};
pub use verify::{verdict_detect, verdict_stab, GridSpec, Verdict, VerdictConfig, VerdictStatus};
