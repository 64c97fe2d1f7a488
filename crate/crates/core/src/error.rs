use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {scope} parameters: constraint `{constraint}` violated")]
    InvalidParameter {
        scope: &'static str,
        constraint: &'static str,
    },

    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),

    #[error("neuron id {id} out of range (network has {total} neurons)")]
    NeuronOutOfRange { id: u64, total: u64 },

    #[error("autapse requested: source and target are both neuron {0}")]
    Autapse(u64),

    #[error(
        "estimated {estimate:.3e} synapses exceeds the budget of {budget} \
         (raise the synapse budget explicitly to proceed)"
    )]
    SynapseBudget { estimate: f64, budget: u64 },

    #[error("non-finite state for neuron {neuron} at step {step}: v={v}, w={w}")]
    NonFinite { neuron: u64, step: u64, v: f64, w: f64 },

    #[error(
        "ordering violation: spike from neuron {source_id} due at step {due} \
         but step {current} is already integrated"
    )]
    LateDelivery { source_id: u64, due: u64, current: u64 },

    #[error("{workers} workers requested but the grid has only {columns} columns; shrink the worker count")]
    TooManyWorkers { workers: u32, columns: u32 },

    #[error("malformed frame from worker {sender} at byte offset {offset}: {reason}")]
    MalformedFrame {
        sender: u32,
        offset: usize,
        reason: String,
    },

    #[error("worker {worker} timed out after {timeout_ms} ms waiting for window {window} from peer {peer}")]
    PeerTimeout {
        worker: u32,
        peer: u32,
        window: u64,
        timeout_ms: u64,
    },

    #[error("transport failure between worker {worker} and peer {peer}: {reason}")]
    Transport { worker: u32, peer: u32, reason: String },

    #[error("duplicate worker count {0} in scaling table")]
    DuplicateRow(u32),

    #[error("scaling table needs at least one row with positive time")]
    EmptyTable,

    #[error("reports are not comparable: {0}")]
    Mismatch(String),

    #[error("bad connectome dump: {0}")]
    BadDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NegativeDistance(_) => "negative_distance",
            Error::NeuronOutOfRange { .. } => "neuron_out_of_range",
            Error::Autapse(_) => "autapse",
            Error::SynapseBudget { .. } => "synapse_budget",
            Error::NonFinite { .. } => "non_finite",
            Error::LateDelivery { .. } => "late_delivery",
            Error::TooManyWorkers { .. } => "too_many_workers",
            Error::MalformedFrame { .. } => "malformed_frame",
            Error::PeerTimeout { .. } => "peer_timeout",
            Error::Transport { .. } => "transport",
            Error::DuplicateRow(_) => "duplicate_row",
            Error::EmptyTable => "empty_table",
            Error::Mismatch(_) => "mismatch",
            Error::BadDump(_) => "bad_dump",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(scope: &'static str, constraint: &'static str) -> Self {
        Error::InvalidParameter { scope, constraint }
    }
}
