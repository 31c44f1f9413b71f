use std::sync::Arc;

use crossbeam_channel::{bounded, Sender};

use super::{Endpoint, Inbound, Outbox, PartyId, TransportError, QUEUE_DEPTH};

struct ChannelOutbox {
    id: PartyId,
    peers: Vec<Option<Sender<Inbound>>>,
}

impl Outbox for ChannelOutbox {
    fn deliver(&self, dest: PartyId, frame: Vec<u8>) -> Result<(), TransportError> {
        let tx = self
            .peers
            .get(dest as usize)
            .and_then(Option::as_ref)
            .ok_or(TransportError::UnknownParty(dest))?;
        tx.send(Inbound::Frame(frame)).map_err(|_| TransportError::Disconnected(dest))
    }

    fn close(&self) {
        for tx in self.peers.iter().flatten() {
            let _ = tx.try_send(Inbound::Closed(self.id));
        }
    }
}

/// Fully connected in-memory fabric for `parties` endpoints (ids 0..parties).
pub fn in_process(parties: usize) -> Vec<Endpoint> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..parties).map(|_| bounded(QUEUE_DEPTH)).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(id, rx)| {
            let peers = txs
                .iter()
                .enumerate()
                .map(|(j, tx)| (j != id).then(|| tx.clone()))
                .collect();
            let id = id as PartyId;
            Endpoint::new(id, Arc::new(ChannelOutbox { id, peers }), rx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::wire::{MsgType, WireMessage};

    #[test]
    fn ordered_delivery_and_timeout() {
        let eps = in_process(3);
        for i in 0..5 {
            eps[1].send(2, &WireMessage::new(MsgType::Share, i, 1, vec![i as u8])).unwrap();
        }
        for i in 0..5 {
            let m = eps[2].recv(Duration::from_secs(1)).unwrap();
            assert_eq!((m.iteration, m.sender), (i, 1));
        }
        assert!(matches!(eps[2].recv(Duration::from_millis(10)), Err(TransportError::Timeout(_))));
        assert!(matches!(
            eps[2].send(2, &WireMessage::new(MsgType::Share, 0, 2, vec![])),
            Err(TransportError::UnknownParty(2))
        ));
    }

    #[test]
    fn dropping_an_endpoint_notifies_peers() {
        let mut eps = in_process(2);
        drop(eps.pop());
        assert!(matches!(eps[0].recv(Duration::from_secs(1)), Err(TransportError::Disconnected(1))));
    }
}
