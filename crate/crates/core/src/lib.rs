//! Executable models of asynchronous and round-based message passing with crash
//! and omission faults, simulations between them, and the analyses used to compare
//! what each model can solve.
//!
//! Numerical code (distances, probability vectors, packing bounds) is generic over
//! the scalar; the aliases below fix the usual choices.

pub mod amp_engine;
pub mod error;
pub mod explorer;
pub mod graph;
pub mod ho_engine;
pub mod metric;
pub mod process;
pub mod protocol;
pub mod protocols;
pub mod randomized;
pub mod run;
pub mod scalar;
pub mod schedule;
pub mod silence;
pub mod sims;
pub mod tasks;
pub mod view;

pub use error::{Error, Result};
pub use graph::{enumerate_graphs, validate_communication_graph, CommunicationGraph};
pub use process::{ProcSet, ProcessId};
pub use protocol::{AmpProtocol, CoinStream, HoProtocol, ProcessCtx, Seeds, Value};
pub use run::{Event, Model, MsgId, Run, ValidityReport, Violation, ViolationKind};
pub use schedule::{AmpLassoSchedule, AmpStep, LassoSchedule, MsgRef};
pub use view::{EventLog, View};

/// Exact schedule distance.
pub type ExactDistance = metric::LcpDistance<num_rational::BigRational>;
/// Floating-point schedule distance.
pub type Distance = metric::LcpDistance<f64>;
/// Probability vector over `f64`.
pub type Distribution64 = randomized::Distribution<f64>;
/// Probability vector over `f32`.
pub type Distribution32 = randomized::Distribution<f32>;
