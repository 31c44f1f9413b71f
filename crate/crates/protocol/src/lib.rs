//! Parties, wire format, transports and audits for secret-shared training
//! over vertically partitioned features.
//!
//! Party 0 is the aggregator and holds the labels; parties 1..=s are the
//! local nodes, each holding a block of feature columns. [`engine`] runs the
//! state machines, [`transport`] moves frames between them and [`audit`]
//! checks what a coalition could learn.

pub mod audit;
pub mod config;
pub mod engine;
pub mod history;
pub mod transport;
pub mod wire;

pub use engine::{run_parties, simulate, simulate_tcp, split_inputs, EngineError, SessionParams, SimFailure, SimOutcome};
pub use history::HistoryRecord;
pub use transport::{Endpoint, NetProfile, PartyId, AGGREGATOR};
