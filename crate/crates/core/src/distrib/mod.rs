//! Column partitioning, stencil-derived exchange planning and the lockstep
//! multi-worker runner.

pub mod partition;
pub mod plan;
pub mod run;
pub mod transport;
pub mod wire;

pub use partition::{partition_columns, Partition};
pub use plan::{build_exchange_plan, ExchangePlan, WorkerPlan};
pub use run::{run_distributed, RunOutcome, RunSpec};
pub use transport::{Endpoint, TransportKind};
pub use wire::SpikeMessage;
