use std::time::{Duration, Instant};

use log::trace;

use super::EngineError;
use crate::transport::{Endpoint, PartyId, TransportError};
use crate::wire::{Control, MsgType, WireMessage};

/// Messages that arrive ahead of the phase that consumes them (a peer's
/// SHARE before our own batch announcement, say) wait here.
const STASH_LIMIT: usize = 1 << 16;

pub(crate) struct Mailbox {
    ep: Endpoint,
    stash: Vec<WireMessage>,
    timeout: Duration,
    /// Peers whose departure is expected.
    finished: Vec<PartyId>,
}

impl Mailbox {
    pub fn new(ep: Endpoint, timeout: Duration) -> Self {
        Self {
            ep,
            stash: Vec::new(),
            timeout,
            finished: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.ep
    }

    pub fn mark_finished(&mut self, peer: PartyId) {
        self.finished.push(peer);
    }

    /// Next message matching `pred`, waiting at most one round timeout.
    pub fn expect(&mut self, what: &str, pred: impl Fn(&WireMessage) -> bool) -> Result<WireMessage, EngineError> {
        if let Some(pos) = self.stash.iter().position(&pred) {
            return Ok(self.stash.remove(pos));
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let msg = match self.ep.recv_until(deadline) {
                Ok(m) => m,
                Err(TransportError::Disconnected(p)) if self.finished.contains(&p) => continue,
                Err(TransportError::Timeout(_)) => {
                    return Err(EngineError::PartyTimeout {
                        waiting_for: what.to_string(),
                        after: self.timeout,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            if msg.msg_type == MsgType::Control {
                if let Ok(Control::Abort(reason)) = Control::decode(&msg.payload) {
                    return Err(EngineError::Aborted {
                        party: msg.sender,
                        reason,
                    });
                }
            }
            if pred(&msg) {
                return Ok(msg);
            }
            trace!(
                "party {}: stashing {:?} from {} for iteration {}",
                self.ep.id(),
                msg.msg_type,
                msg.sender,
                msg.iteration
            );
            if self.stash.len() >= STASH_LIMIT {
                return Err(EngineError::Protocol(format!("too many out-of-phase messages while waiting for {what}")));
            }
            self.stash.push(msg);
        }
    }
}
