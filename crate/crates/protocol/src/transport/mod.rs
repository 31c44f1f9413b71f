//! Message delivery between parties.
//!
//! Every party owns one [`Endpoint`]: a single inbound queue plus an
//! [`Outbox`] that routes encoded frames to peers. The in-process fabric,
//! TCP and the latency/throughput shaper are all `Outbox` implementations
//! feeding the same kind of queue, so the engine never sees the difference.

mod memory;
mod shaped;
mod tcp;

use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};
use thiserror::Error;

use crate::wire::{MalformedFrame, WireMessage};

pub use memory::in_process;
pub use shaped::{NetProfile, Shaped};
pub use tcp::{connect_mesh, write_raw_frame, TcpOptions, MAX_FRAME};

/// 0 is the aggregator, 1..=s the local nodes.
pub type PartyId = u16;
pub const AGGREGATOR: PartyId = 0;

/// Frames queued per inbound channel before `send` blocks.
pub const QUEUE_DEPTH: usize = 4096;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out after {0:?} waiting for a message")]
    Timeout(Duration),
    #[error("party {0} disconnected")]
    Disconnected(PartyId),
    #[error(transparent)]
    Malformed(#[from] MalformedFrame),
    #[error("no route to party {0}")]
    UnknownParty(PartyId),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a party's inbound queue carries.
#[derive(Debug)]
pub enum Inbound {
    Frame(Vec<u8>),
    /// The link from this peer is gone.
    Closed(PartyId),
}

/// Routes an encoded frame to a peer.
pub trait Outbox: Send + Sync {
    fn deliver(&self, dest: PartyId, frame: Vec<u8>) -> Result<(), TransportError>;

    /// Best-effort notice to every peer that this party is leaving.
    fn close(&self) {}
}

pub struct Endpoint {
    id: PartyId,
    outbox: Arc<dyn Outbox>,
    inbox: Receiver<Inbound>,
}

impl Endpoint {
    pub fn new(id: PartyId, outbox: Arc<dyn Outbox>, inbox: Receiver<Inbound>) -> Self {
        Self { id, outbox, inbox }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    /// Sends `msg`; returns the frame size (header + payload).
    pub fn send(&self, dest: PartyId, msg: &WireMessage) -> Result<usize, TransportError> {
        if dest == self.id {
            return Err(TransportError::UnknownParty(dest));
        }
        let frame = msg.encode();
        let len = frame.len();
        self.outbox.deliver(dest, frame)?;
        Ok(len)
    }

    /// Next message, waiting at most `timeout`. A malformed frame is
    /// reported as an error without affecting later frames.
    pub fn recv(&self, timeout: Duration) -> Result<WireMessage, TransportError> {
        match self.recv_until(Instant::now() + timeout) {
            Err(TransportError::Timeout(_)) => Err(TransportError::Timeout(timeout)),
            other => other,
        }
    }

    pub fn recv_until(&self, deadline: Instant) -> Result<WireMessage, TransportError> {
        match self.inbox.recv_deadline(deadline) {
            Ok(Inbound::Frame(f)) => Ok(WireMessage::decode(&f)?),
            Ok(Inbound::Closed(p)) => Err(TransportError::Disconnected(p)),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(
                deadline.saturating_duration_since(Instant::now()),
            )),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected(self.id)),
        }
    }

    /// Wraps the outbox in a latency/throughput shaper.
    pub fn shaped(mut self, profile: NetProfile) -> Self {
        if !profile.is_ideal() {
            self.outbox = Arc::new(Shaped::new(self.outbox.clone(), profile));
        }
        self
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.outbox.close();
    }
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("id", &self.id).finish_non_exhaustive()
    }
}
