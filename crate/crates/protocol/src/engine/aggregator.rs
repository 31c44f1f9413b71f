use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use privcoll_core::models::{AggregatorHead, ConvergenceTracker, ModelKind};
use privcoll_core::ring::RingTensor;
use privcoll_core::rnn::{RnnAggState, RnnConfig};
use privcoll_core::seed::BatchSchedule;
use privcoll_core::sharing::{rec, ShareSum};
use privcoll_core::tensor::Matrix;

use super::mailbox::Mailbox;
use super::{AggInput, AggModel, EngineError, RingView, SessionParams, Views};
use crate::history::{HistoryRecord, Timing};
use crate::transport::{Endpoint, PartyId, AGGREGATOR};
use crate::wire::{read_plain_sum, read_share, Control, DeltaPayload, IterStats, MsgType, StopReason, WireMessage};

#[derive(Debug, Clone)]
pub struct AggOutcome {
    pub history: Vec<HistoryRecord>,
    pub model: AggModel,
    pub converged: bool,
    pub views: Option<Views>,
    /// The aggregator's own send statistics.
    pub stats: Vec<IterStats>,
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct AggFailure {
    pub error: EngineError,
    /// Completed iterations; byte counts cover the aggregator's sends only.
    pub history: Vec<HistoryRecord>,
}

struct Agg<'a> {
    params: &'a SessionParams,
    mb: Mailbox,
    y_steps: Vec<Matrix<f64>>,
    model: AggModel,
    history: Vec<HistoryRecord>,
    stats: Vec<IterStats>,
    /// Aggregator compute per iteration.
    compute: Vec<Duration>,
    views: Option<Views>,
}

/// Runs the aggregator: schedules batches, reconstructs, computes Δ and
/// decides when to stop.
pub fn run_aggregator(params: &SessionParams, input: AggInput, ep: Endpoint) -> Result<AggOutcome, AggFailure> {
    let fail = |error: EngineError| AggFailure {
        error,
        history: Vec::new(),
    };
    params.validate().map_err(fail)?;
    if ep.id() != AGGREGATOR {
        return Err(fail(EngineError::Protocol(format!("endpoint {} cannot host the aggregator", ep.id()))));
    }
    let k = params.spec.outputs;
    if input.y_steps.len() != params.timesteps || input.y_steps.iter().any(|y| y.shape() != (params.samples, k)) {
        return Err(fail(EngineError::Protocol(format!(
            "labels do not match m = {}, k = {k}, T = {}",
            params.samples, params.timesteps
        ))));
    }
    let model = match params.spec.kind {
        ModelKind::Recurrent => {
            let config = RnnConfig::from_spec(&params.spec, params.timesteps).map_err(|e| fail(e.into()))?;
            AggModel::Recurrent(RnnAggState::init(config, params.seed))
        }
        _ => AggModel::Dense(AggregatorHead::init(&params.spec, params.seed).map_err(|e| fail(e.into()))?),
    };
    let mut agg = Agg {
        params,
        mb: Mailbox::new(ep, params.timeout),
        y_steps: input.y_steps,
        model,
        history: Vec::new(),
        stats: Vec::new(),
        compute: Vec::new(),
        views: params.record_views.then(Views::default),
    };
    let result = match params.ring.width() {
        32 => agg.run::<u32>(),
        _ => agg.run::<u64>(),
    };
    match result {
        Ok(converged) => Ok(AggOutcome {
            history: agg.history,
            model: agg.model,
            converged,
            views: agg.views,
            stats: agg.stats,
        }),
        Err(error) => {
            if !matches!(error, EngineError::Aborted { .. }) {
                agg.broadcast_abort(&error.to_string());
            }
            Err(AggFailure {
                error,
                history: agg.history,
            })
        }
    }
}

impl Agg<'_> {
    fn broadcast(&mut self, msg: &WireMessage, stats: &mut IterStats) -> Result<(), EngineError> {
        for dest in self.params.node_ids() {
            stats.bytes_sent += self.mb.endpoint().send(dest, msg)? as u64;
            stats.messages += 1;
        }
        Ok(())
    }

    fn broadcast_abort(&self, reason: &str) {
        warn!("aggregator aborting: {reason}");
        let msg = WireMessage::new(MsgType::Control, 0, AGGREGATOR, Control::Abort(reason.to_string()).encode());
        for dest in self.params.node_ids() {
            let _ = self.mb.endpoint().send(dest, &msg);
        }
    }

    /// Returns whether the loss converged.
    fn run<W: RingView>(&mut self) -> Result<bool, EngineError> {
        let p = self.params;
        let start = Instant::now();
        let schedule = BatchSchedule::new(p.samples, p.batch_size, p.seed);
        let mut tracker = ConvergenceTracker::new(p.tol);
        let cap = p.max_iterations.unwrap_or(usize::MAX);
        let mut converged = false;
        for (it, (epoch, rows)) in schedule.iter(p.max_epochs).take(cap).enumerate() {
            let it = u32::try_from(it).map_err(|_| EngineError::Protocol("iteration counter overflow".into()))?;
            let t0 = Instant::now();
            let mut stats = IterStats::default();
            let batch = Control::Batch {
                epoch: epoch as u32,
                indices: rows.iter().map(|&r| r as u32).collect(),
            };
            self.broadcast(&WireMessage::new(MsgType::Control, it, AGGREGATOR, batch.encode()), &mut stats)?;

            let (xw_steps, totals, recon) = self.collect::<W>(it, rows.len())?;
            let t1 = Instant::now();
            let y_batch: Vec<Matrix<f64>> = self.y_steps.iter().map(|y| y.row_slice(&rows)).collect::<Result<_, _>>()?;
            let lr = p.learning_rate;
            let (loss, delta) = match &mut self.model {
                AggModel::Dense(head) => {
                    let step = head.compute_delta(&xw_steps[0], &y_batch[0], lr)?;
                    (step.loss, DeltaPayload::Dense(step.delta))
                }
                AggModel::Recurrent(rnn) => {
                    let (loss, bundle) = rnn.step(&xw_steps, &y_batch, lr)?;
                    (loss, DeltaPayload::Recurrent(bundle))
                }
            };
            let payload = delta.encode();
            let compute = recon + t1.elapsed();
            self.broadcast(&WireMessage::new(MsgType::Delta, it, AGGREGATOR, payload), &mut stats)?;
            let wall = t0.elapsed();

            stats.compute_ns = compute.as_nanos() as u64;
            self.stats.push(stats);
            self.compute.push(compute);
            if let Some(v) = &mut self.views {
                v.batches.push(rows.clone());
                v.sums.push(xw_steps);
                if !totals.is_empty() {
                    v.totals.push(totals);
                }
            }
            self.history.push(HistoryRecord {
                iteration: it as u64,
                epoch: epoch as u64,
                batch_size: rows.len(),
                loss,
                bytes_sent: stats.bytes_sent,
                share_bytes: 0,
                messages: stats.messages as u64,
                timing: Timing {
                    wall_s: wall.as_secs_f64(),
                    compute_s: compute.as_secs_f64(),
                    comm_s: 0.0,
                    elapsed_s: start.elapsed().as_secs_f64(),
                },
            });
            debug!("iteration {it} (epoch {epoch}): loss {loss:.6e}");
            if tracker.observe(loss) {
                converged = true;
                break;
            }
        }
        let reason = if converged { StopReason::Converged } else { StopReason::Exhausted };
        info!(
            "training stopped after {} iterations ({reason:?})",
            self.history.len()
        );
        let stop = WireMessage::new(MsgType::Control, self.history.len() as u32, AGGREGATOR, Control::Stop(reason).encode());
        let mut scratch = IterStats::default();
        self.broadcast(&stop, &mut scratch)?;
        self.merge_reports()?;
        Ok(converged)
    }

    /// Waits for every SHARE_SUM of iteration `it` and reconstructs Σ X^lW^l
    /// per timestep. Also returns the ring totals and the time spent
    /// reconstructing.
    #[allow(clippy::type_complexity)]
    fn collect<W: RingView>(&mut self, it: u32, batch: usize) -> Result<(Vec<Matrix<f64>>, Vec<super::RingValue>, Duration), EngineError> {
        let p = self.params;
        let width = p.spec.shared_width();
        let expected = p.nodes * p.timesteps;
        let mut ring: BTreeMap<(usize, PartyId), RingTensor<W>> = BTreeMap::new();
        let mut plain: BTreeMap<(usize, PartyId), Matrix<f64>> = BTreeMap::new();
        while ring.len() + plain.len() < expected {
            let msg = self.mb.expect("share sums", |m| m.msg_type == MsgType::ShareSum && m.iteration == it)?;
            let sender = msg.sender;
            if sender == AGGREGATOR || sender as usize > p.nodes {
                return Err(EngineError::Protocol(format!("share sum from unknown party {sender}")));
            }
            let (c, shape, dup) = if p.plaintext {
                let (c, m) = read_plain_sum(&msg.payload)?;
                let shape = m.shape();
                (c, shape, plain.insert((c as usize, sender), m).is_some())
            } else {
                let (c, t) = read_share::<W>(&msg.payload, p.ring)?;
                let shape = t.shape();
                (c, shape, ring.insert((c as usize, sender), t).is_some())
            };
            // the schema admits only |B| × k tensors here
            if c as usize >= p.timesteps || shape != (batch, width) || dup {
                return Err(EngineError::Protocol(format!(
                    "share sum from {sender}: step {c}, shape {shape:?}, duplicate {dup}"
                )));
            }
        }
        let t = Instant::now();
        let mut xw_steps = Vec::with_capacity(p.timesteps);
        let mut totals = Vec::new();
        for c in 0..p.timesteps {
            if p.plaintext {
                let mut acc: Option<Matrix<f64>> = None;
                for id in p.node_ids() {
                    let m = &plain[&(c, id)];
                    acc = Some(match acc {
                        Some(a) => a.add(m)?,
                        None => m.clone(),
                    });
                }
                xw_steps.push(acc.expect("at least one node"));
            } else {
                let sums: Vec<ShareSum<W>> = p
                    .node_ids()
                    .map(|id| ShareSum {
                        node_id: id as usize,
                        value: ring.remove(&(c, id)).expect("collected"),
                    })
                    .collect();
                let total = rec(&sums, p.nodes)?;
                xw_steps.push(total.decode());
                if p.record_views {
                    totals.push(W::view(total));
                }
            }
        }
        Ok((xw_steps, totals, t.elapsed()))
    }

    /// Folds the nodes' reports into the history records.
    fn merge_reports(&mut self) -> Result<(), EngineError> {
        let mut node_compute = vec![Duration::ZERO; self.history.len()];
        for _ in 0..self.params.nodes {
            let msg = self.mb.expect("final reports", |m| {
                m.msg_type == MsgType::Control
                    && m.sender != AGGREGATOR
                    && matches!(Control::decode(&m.payload), Ok(Control::Report(_)))
            })?;
            let Control::Report(stats) = Control::decode(&msg.payload)? else {
                unreachable!("filtered above")
            };
            self.mb.mark_finished(msg.sender);
            if stats.len() != self.history.len() {
                return Err(EngineError::Protocol(format!(
                    "node {} reported {} iterations, expected {}",
                    msg.sender,
                    stats.len(),
                    self.history.len()
                )));
            }
            for ((rec, s), slowest) in self.history.iter_mut().zip(&stats).zip(&mut node_compute) {
                rec.bytes_sent += s.bytes_sent;
                rec.share_bytes += s.share_bytes;
                rec.messages += s.messages as u64;
                *slowest = (*slowest).max(Duration::from_nanos(s.compute_ns));
            }
        }
        for ((rec, own), nodes) in self.history.iter_mut().zip(&self.compute).zip(node_compute) {
            let compute = (*own + nodes).as_secs_f64();
            rec.timing.compute_s = compute;
            rec.timing.comm_s = (rec.timing.wall_s - compute).max(0.0);
        }
        Ok(())
    }
}
