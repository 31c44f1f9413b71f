use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::{debug, warn};
use privcoll_core::models::local_update;
use privcoll_core::ring::{encode, RingTensor};
use privcoll_core::rnn::rnn_local_update;
use privcoll_core::seed::{self, domain};
use privcoll_core::sharing::shr;
use privcoll_core::tensor::Matrix;

use super::mailbox::Mailbox;
use super::{EngineError, NodeInput, RingValue, RingView, SessionParams};
use crate::transport::{Endpoint, PartyId, AGGREGATOR};
use crate::wire::{
    plain_sum_payload, read_share, share_payload, Control, DeltaPayload, IterStats, MsgType, WireMessage,
};

#[derive(Debug, Clone)]
pub struct NodeOutcome {
    pub id: PartyId,
    pub weights: Matrix<f64>,
    /// W^l at init and after every iteration, when recorded.
    pub trajectory: Vec<Matrix<f64>>,
    /// Encoded X^lW^l per iteration and timestep, when recorded.
    pub secrets: Vec<Vec<RingValue>>,
    pub stats: Vec<IterStats>,
}

struct Node<'a> {
    params: &'a SessionParams,
    id: PartyId,
    mb: Mailbox,
    x_steps: Vec<Matrix<f64>>,
    w: Matrix<f64>,
    trajectory: Vec<Matrix<f64>>,
    secrets: Vec<Vec<RingValue>>,
    stats: Vec<IterStats>,
    current: IterStats,
    compute: Duration,
}

/// Runs local node `input.id` until the aggregator says stop.
pub fn run_node(params: &SessionParams, input: NodeInput, ep: Endpoint) -> Result<NodeOutcome, EngineError> {
    params.validate()?;
    let id = ep.id();
    if id != input.id || id == AGGREGATOR || id as usize > params.nodes {
        return Err(EngineError::Protocol(format!(
            "endpoint {id} cannot host node {} of {}",
            input.id, params.nodes
        )));
    }
    let d_l = input.x_steps.first().map_or(0, Matrix::cols);
    let rows_ok = input.x_steps.len() == params.timesteps
        && input.x_steps.iter().all(|x| x.rows() == params.samples && x.cols() == d_l);
    if d_l == 0 || !rows_ok {
        return Err(EngineError::Protocol(format!(
            "node {id}: feature slices do not match m = {}, T = {}",
            params.samples, params.timesteps
        )));
    }
    let w = params.initial_block(id, d_l);
    let mut node = Node {
        params,
        id,
        mb: Mailbox::new(ep, params.timeout),
        trajectory: if params.record_trajectory { vec![w.clone()] } else { Vec::new() },
        x_steps: input.x_steps,
        w,
        secrets: Vec::new(),
        stats: Vec::new(),
        current: IterStats::default(),
        compute: Duration::ZERO,
    };
    let result = match params.ring.width() {
        32 => node.run::<u32>(),
        _ => node.run::<u64>(),
    };
    if let Err(e) = &result {
        if !matches!(e, EngineError::Aborted { .. }) {
            node.abort_all(&e.to_string());
        }
    }
    result?;
    Ok(NodeOutcome {
        id,
        weights: node.w,
        trajectory: node.trajectory,
        secrets: node.secrets,
        stats: node.stats,
    })
}

impl Node<'_> {
    fn send(&mut self, dest: PartyId, msg: WireMessage, share_bytes: usize) -> Result<(), EngineError> {
        let n = self.mb.endpoint().send(dest, &msg)?;
        self.current.bytes_sent += n as u64;
        self.current.share_bytes += share_bytes as u64;
        self.current.messages += 1;
        Ok(())
    }

    fn timed<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let t = Instant::now();
        let r = f(self);
        self.compute += t.elapsed();
        r
    }

    fn abort_all(&self, reason: &str) {
        warn!("node {} aborting: {reason}", self.id);
        let msg = WireMessage::new(MsgType::Control, 0, self.id, Control::Abort(reason.to_string()).encode());
        for dest in std::iter::once(AGGREGATOR).chain(self.params.node_ids()) {
            if dest != self.id {
                let _ = self.mb.endpoint().send(dest, &msg);
            }
        }
    }

    fn run<W: RingView>(&mut self) -> Result<(), EngineError> {
        loop {
            let msg = self.mb.expect("control message", |m| {
                m.msg_type == MsgType::Control && m.sender == AGGREGATOR
            })?;
            match Control::decode(&msg.payload)? {
                Control::Batch { indices, .. } => {
                    let rows: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
                    if rows.is_empty() || rows.iter().any(|&r| r >= self.params.samples) {
                        return Err(EngineError::Protocol(format!("bad batch for iteration {}", msg.iteration)));
                    }
                    self.iteration::<W>(msg.iteration, &rows)?;
                }
                Control::Stop(reason) => {
                    debug!("node {} stopping ({reason:?})", self.id);
                    break;
                }
                other => return Err(EngineError::Protocol(format!("unexpected control {other:?}"))),
            }
        }
        let report = Control::Report(self.stats.clone());
        self.mb
            .endpoint()
            .send(AGGREGATOR, &WireMessage::new(MsgType::Control, self.stats.len() as u32, self.id, report.encode()))?;
        Ok(())
    }

    fn iteration<W: RingView>(&mut self, it: u32, rows: &[usize]) -> Result<(), EngineError> {
        self.current = IterStats::default();
        self.compute = Duration::ZERO;
        let params = self.params;
        let (batch, products) = self.timed(|n| -> Result<_, EngineError> {
            let batch: Vec<Matrix<f64>> = n.x_steps.iter().map(|x| x.row_slice(rows)).collect::<Result<_, _>>()?;
            let products: Vec<Matrix<f64>> = batch.iter().map(|x| x.matmul(&n.w)).collect::<Result<_, _>>()?;
            Ok((batch, products))
        })?;

        if params.plaintext {
            for (c, p) in products.iter().enumerate() {
                let msg = WireMessage::new(MsgType::ShareSum, it, self.id, plain_sum_payload(c as u32, p));
                self.send(AGGREGATOR, msg, p.rows() * p.cols() * 8)?;
            }
        } else {
            self.share_round::<W>(it, &products)?;
        }

        let msg = self.mb.expect("delta", |m| {
            m.msg_type == MsgType::Delta && m.iteration == it && m.sender == AGGREGATOR
        })?;
        let t = Instant::now();
        let lr = params.learning_rate;
        match DeltaPayload::decode(&msg.payload)? {
            DeltaPayload::Dense(delta) if params.timesteps == 1 => {
                local_update(&mut self.w, &batch[0], &delta, lr, params.spec.lambda)?
            }
            DeltaPayload::Recurrent(bundle) => rnn_local_update(&mut self.w, &batch, &bundle, lr, params.spec.lambda)?,
            DeltaPayload::Dense(_) => return Err(EngineError::Protocol("dense Δ for a recurrent model".into())),
        }
        self.compute += t.elapsed();
        if params.record_trajectory {
            self.trajectory.push(self.w.clone());
        }
        self.current.compute_ns = self.compute.as_nanos() as u64;
        self.stats.push(self.current);
        Ok(())
    }

    /// Shares every X^l(c)W^l, collects the peers' shares and sends E^l(c).
    fn share_round<W: RingView>(&mut self, it: u32, products: &[Matrix<f64>]) -> Result<(), EngineError> {
        let params = self.params;
        let s = params.nodes;
        let mut sums: Vec<RingTensor<W>> = Vec::with_capacity(products.len());
        let mut secrets = Vec::new();
        for (c, p) in products.iter().enumerate() {
            let (enc, shares) = self.timed(|n| -> Result<_, EngineError> {
                let enc = encode::<W, f64>(p, params.ring)?;
                let mut rng = seed::stream(params.seed, domain::SHARE, &[n.id as u64, it as u64, c as u64]);
                let shares = shr(&enc, s, &mut rng)?;
                Ok((enc, shares))
            })?;
            let me = self.id;
            for dest in params.node_ids().filter(|&j| j != me) {
                let t = shares.for_node(dest as usize);
                let msg = WireMessage::new(MsgType::Share, it, self.id, share_payload(c as u32, t));
                self.send(dest, msg, t.rows() * t.cols() * W::BYTES)?;
            }
            sums.push(shares.for_node(self.id as usize).clone());
            if params.record_views {
                secrets.push(W::view(enc));
            }
        }

        let mut received: BTreeMap<(usize, PartyId), RingTensor<W>> = BTreeMap::new();
        let expected = (s - 1) * products.len();
        while received.len() < expected {
            let msg = self.mb.expect("shares", |m| {
                m.msg_type == MsgType::Share && m.iteration == it && m.sender != AGGREGATOR
            })?;
            let (c, t) = read_share::<W>(&msg.payload, params.ring)?;
            let c = c as usize;
            if c >= products.len() || msg.sender as usize > s || msg.sender == self.id {
                return Err(EngineError::Protocol(format!("share for step {c} from party {}", msg.sender)));
            }
            if received.insert((c, msg.sender), t).is_some() {
                return Err(EngineError::Protocol(format!("duplicate share from party {}", msg.sender)));
            }
        }
        self.timed(|_| -> Result<(), EngineError> {
            for ((c, _), t) in &received {
                sums[*c].ring_add_assign(t)?;
            }
            Ok(())
        })?;
        for (c, e) in sums.iter().enumerate() {
            let msg = WireMessage::new(MsgType::ShareSum, it, self.id, share_payload(c as u32, e));
            self.send(AGGREGATOR, msg, e.rows() * e.cols() * W::BYTES)?;
        }
        if params.record_views {
            self.secrets.push(secrets);
        }
        Ok(())
    }
}
