//! LocalKMeans: Lloyd's algorithm run on `m` simulated machines that take `L`
//! local steps between size-weighted aggregations on a central server.
//!
//! The crate is split along the pipeline an experiment follows:
//!
//! * [`mixture`] generates Gaussian-mixture data (or loads a CSV) and lays it
//!   out across machines.
//! * [`seeding`] produces initial centers (distributed KMeans++ or a perturbed
//!   copy of the true centers).
//! * [`lloyd`] holds the single-machine assignment / mean-update primitives.
//! * [`protocol`] drives the rounds: local steps, aggregation, broadcast, and
//!   the two baselines.
//! * [`metrics`] observes every iteration: misclustering, cluster-wise error,
//!   center error, deviation of local models, and the KMeans objective.
//! * [`harness`] runs seeded multi-trial experiments and writes CSV results.

pub mod error;
pub mod harness;
pub mod lloyd;
pub mod metrics;
pub mod mixture;
pub mod protocol;
pub mod rng;
pub mod seeding;

pub use error::{Error, Result};
pub use lloyd::{Assignment, ClusterModel};
pub use metrics::IterationRecord;
pub use mixture::{DistributedDataset, GroundTruth, MixtureSpec, SeparationReport, TrueLabels};
pub use protocol::{CommCounters, Mode, ProtocolConfig, RunResult, RunState};
