//! Distributed Krasnosel'skiĭ–Mann fixed-point iterations over time-varying
//! directed networks.
//!
//! Agents hold local copies of a shared decision vector, average them through
//! doubly stochastic mixing weights, and relax toward their own nonexpansive
//! operator. The full-vector variant (D-KM) updates every coordinate each
//! round; the block-coordinate variant (D-BKM) updates one randomly drawn
//! block. Both converge to a common fixed point of all local operators when
//! one exists, and to a fixed point of the averaged operator otherwise.

pub mod apps;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod operators;
pub mod par;
pub mod state;
pub mod stepsize;
pub mod validation;

pub use diagnostics::{Trace, TraceRecord};
pub use engine::{run, validate_config, BlockSelector, Cadence, InitialStates, Mode, RunConfig, RunError, TraceOptions};
pub use error::{Error, Result};
pub use graph::{GraphSchedule, WeightedDigraph};
pub use linalg::Matrix;
pub use operators::{BlockPartition, ConvexSet, LocalOperator, OperatorFamily, SmoothConvex};
pub use par::Execution;
pub use state::StateMatrix;
pub use stepsize::StepsizeSchedule;
pub use validation::ValidationReport;
