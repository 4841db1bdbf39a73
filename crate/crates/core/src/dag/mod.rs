//! Event blocks and the per-node OPERA DAG.

mod event;
mod store;

pub use event::{
    transactions_digest, DecodeError, Event, EventBuilder, Signature, Signer, SimSigner, Verifier,
};
pub use store::{
    Dag, DagConfig, DagError, EventIdx, ForkPair, InsertError, Inserted, DEFAULT_MAX_FUTURE_DRIFT,
};
