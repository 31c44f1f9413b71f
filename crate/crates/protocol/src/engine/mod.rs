//! Party state machines and the iteration round structure.
//!
//! Per iteration the aggregator broadcasts the batch rows (CONTROL); every
//! node computes X^l_B W^l, splits it with `shr`, keeps its own share and
//! sends the others (SHARE); each node sums what it holds and sends E^l to
//! the aggregator (SHARE_SUM); the aggregator reconstructs Σ X^lW^l, runs
//! the model head and broadcasts Δ (DELTA); nodes update W^l. All sums are
//! taken in node-id order so every transport yields the same numbers.

mod aggregator;
mod mailbox;
mod node;

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use privcoll_core::data::{Dataset, VerticalPartitionPlan};
use privcoll_core::models::{AggregatorHead, Layer, ModelKind, ModelSpec};
use privcoll_core::oracle::CentralModel;
use privcoll_core::ring::{RingParams, RingTensor};
use privcoll_core::rnn::RnnAggState;
use privcoll_core::tensor::Matrix;
use privcoll_core::{seed, RingWord};
use thiserror::Error;

use crate::history::HistoryRecord;
use crate::transport::{connect_mesh, in_process, Endpoint, NetProfile, PartyId, TcpOptions, TransportError};
use crate::wire::{IterStats, MalformedFrame};

pub use aggregator::{run_aggregator, AggFailure, AggOutcome};
pub use node::{run_node, NodeOutcome};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no {waiting_for} within {after:?}")]
    PartyTimeout { waiting_for: String, after: Duration },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Core(#[from] privcoll_core::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("party {party} aborted: {reason}")]
    Aborted { party: PartyId, reason: String },
}

impl From<MalformedFrame> for EngineError {
    fn from(e: MalformedFrame) -> Self {
        EngineError::Transport(e.into())
    }
}

/// Everything all parties agree on before training. m, n and k are public.
#[derive(Debug, Clone)]
pub struct SessionParams {
    pub spec: ModelSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_iterations: Option<usize>,
    pub tol: f64,
    pub seed: u64,
    pub ring: RingParams,
    /// s, the number of local nodes.
    pub nodes: usize,
    pub samples: usize,
    pub features: usize,
    pub timesteps: usize,
    /// Send raw X^lW^l instead of shares. Insecure; for oracle tests only.
    pub plaintext: bool,
    /// Per-round wait limit.
    pub timeout: Duration,
    /// Keep every party's W^l after each iteration.
    pub record_trajectory: bool,
    /// Keep ring secrets and reconstructions for audits.
    pub record_views: bool,
}

impl SessionParams {
    pub fn node_ids(&self) -> impl Iterator<Item = PartyId> {
        1..=self.nodes as PartyId
    }

    pub(crate) fn validate(&self) -> Result<(), EngineError> {
        self.spec.validate()?;
        let bad = |m: String| Err(EngineError::Protocol(m));
        if self.nodes == 0 || (!self.plaintext && self.nodes < 2) {
            return Err(privcoll_core::Error::InvalidPartyCount(self.nodes).into());
        }
        if self.nodes > PartyId::MAX as usize - 1 {
            return bad(format!("{} nodes exceed the id space", self.nodes));
        }
        if self.timesteps == 0 || (self.spec.kind != ModelKind::Recurrent && self.timesteps != 1) {
            return bad(format!("{} timesteps for a {:?} model", self.timesteps, self.spec.kind));
        }
        if self.samples == 0 || self.samples > u32::MAX as usize {
            return bad(format!("unsupported sample count {}", self.samples));
        }
        Ok(())
    }

    /// Initial W^l of node `id` with `d_l` features.
    pub fn initial_block(&self, id: PartyId, d_l: usize) -> Matrix<f64> {
        seed::init_local_block(self.seed, id as usize, d_l, self.spec.shared_width(), self.features)
    }

    /// Step-2 element bytes per iteration: s(s−1)|B|k(w/8) + s|B|k(w/8),
    /// times T for recurrent models.
    pub fn expected_share_bytes(&self, batch: usize) -> u64 {
        let s = self.nodes as u64;
        let per = (batch * self.spec.shared_width()) as u64 * self.timesteps as u64;
        if self.plaintext {
            s * per * 8
        } else {
            let w = self.ring.element_bytes() as u64;
            s * (s - 1) * per * w + s * per * w
        }
    }
}

/// A ring tensor of either supported width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RingValue {
    W32(RingTensor<u32>),
    W64(RingTensor<u64>),
}

impl RingValue {
    pub fn ring_sub(&self, rhs: &RingValue) -> privcoll_core::Result<RingValue> {
        match (self, rhs) {
            (RingValue::W32(a), RingValue::W32(b)) => Ok(RingValue::W32(a.ring_sub(b)?)),
            (RingValue::W64(a), RingValue::W64(b)) => Ok(RingValue::W64(a.ring_sub(b)?)),
            _ => Err(privcoll_core::Error::ParamsMismatch),
        }
    }

    pub fn decode(&self) -> Matrix<f64> {
        match self {
            RingValue::W32(t) => t.decode(),
            RingValue::W64(t) => t.decode(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            RingValue::W32(t) => t.shape(),
            RingValue::W64(t) => t.shape(),
        }
    }
}

pub trait RingView: RingWord {
    fn view(t: RingTensor<Self>) -> RingValue;
}

impl RingView for u32 {
    fn view(t: RingTensor<u32>) -> RingValue {
        RingValue::W32(t)
    }
}

impl RingView for u64 {
    fn view(t: RingTensor<u64>) -> RingValue {
        RingValue::W64(t)
    }
}

/// The aggregator's model state.
#[derive(Debug, Clone)]
pub enum AggModel {
    Dense(AggregatorHead<f64>),
    Recurrent(RnnAggState<f64>),
}

/// Input of one local node: its feature columns for every timestep.
#[derive(Debug, Clone)]
pub struct NodeInput {
    pub id: PartyId,
    pub x_steps: Vec<Matrix<f64>>,
}

/// Input of the aggregator: the labels for every timestep.
#[derive(Debug, Clone)]
pub struct AggInput {
    pub y_steps: Vec<Matrix<f64>>,
}

/// Splits a full dataset into the parties' private inputs.
pub fn split_inputs(data: &Dataset<f64>, plan: &VerticalPartitionPlan) -> Result<(Vec<NodeInput>, AggInput), EngineError> {
    let nodes = data
        .partition(plan)?
        .into_iter()
        .enumerate()
        .map(|(l, x_steps)| NodeInput {
            id: (l + 1) as PartyId,
            x_steps,
        })
        .collect();
    Ok((
        nodes,
        AggInput {
            y_steps: data.y_steps.clone(),
        },
    ))
}

/// What the parties saw, kept when `record_views` is set.
#[derive(Debug, Clone, Default)]
pub struct Views {
    pub batches: Vec<Vec<usize>>,
    /// Aggregator: decoded Σ X^lW^l per iteration and timestep.
    pub sums: Vec<Vec<Matrix<f64>>>,
    /// Aggregator: Σ_l E^l in the ring (empty in plaintext mode).
    pub totals: Vec<Vec<RingValue>>,
    /// `secrets[l-1][i][c]`: node l's encoded X^lW^l.
    pub secrets: Vec<Vec<Vec<RingValue>>>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub history: Vec<HistoryRecord>,
    pub node_weights: Vec<Matrix<f64>>,
    pub head: AggModel,
    /// Stacked first-layer matrix at init and after every iteration.
    pub trajectory: Option<Vec<Matrix<f64>>>,
    pub views: Option<Views>,
    pub converged: bool,
    /// Per-iteration, per-party send statistics (index 0 = aggregator).
    pub party_stats: Vec<Vec<IterStats>>,
    pub wall_time: Duration,
}

impl SimOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn first_layer(&self) -> Matrix<f64> {
        Matrix::vstack(&self.node_weights).expect("blocks share a width")
    }

    /// The trained parameters assembled into one centralized model.
    pub fn assemble(&self, spec: &ModelSpec) -> CentralModel<f64> {
        let w = self.first_layer();
        match &self.head {
            AggModel::Dense(head) if spec.kind == ModelKind::FeedForward => {
                let mut layers = vec![Layer {
                    weights: w,
                    bias: head.first_bias().cloned(),
                }];
                layers.extend(head.layers().iter().cloned());
                CentralModel::FeedForward {
                    spec: spec.clone(),
                    layers,
                }
            }
            AggModel::Dense(head) => CentralModel::Regression {
                spec: spec.clone(),
                w,
                b: head.first_bias().cloned(),
            },
            AggModel::Recurrent(agg) => CentralModel::Recurrent {
                config: agg.config().clone(),
                w,
                u: agg.u.clone(),
                v: agg.v.clone(),
                b_h: agg.b_h.clone(),
                b_y: agg.b_y.clone(),
            },
        }
    }
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct SimFailure {
    pub error: EngineError,
    /// Records of the iterations completed before the failure.
    pub history: Vec<HistoryRecord>,
}

/// Runs all parties as threads over the given endpoints (index = party id).
pub fn run_parties(
    params: &SessionParams,
    nodes: Vec<NodeInput>,
    agg: AggInput,
    endpoints: Vec<Box<dyn FnOnce() -> Result<Endpoint, TransportError> + Send>>,
) -> Result<SimOutcome, SimFailure> {
    let fail = |error: EngineError| SimFailure {
        error,
        history: Vec::new(),
    };
    params.validate().map_err(fail)?;
    if nodes.len() != params.nodes || endpoints.len() != params.nodes + 1 {
        return Err(fail(EngineError::Protocol(format!(
            "{} node inputs and {} endpoints for s = {}",
            nodes.len(),
            endpoints.len(),
            params.nodes
        ))));
    }
    let start = Instant::now();
    let mut endpoints = endpoints.into_iter();
    let agg_ep = endpoints.next().expect("aggregator endpoint");
    let (agg_result, node_results) = thread::scope(|scope| {
        let node_handles: Vec<_> = nodes
            .into_iter()
            .zip(endpoints)
            .map(|(input, make)| {
                thread::Builder::new()
                    .name(format!("node-{}", input.id))
                    .spawn_scoped(scope, move || run_node(params, input, make()?))
                    .expect("spawn node thread")
            })
            .collect();
        let agg_result = match agg_ep() {
            Ok(ep) => run_aggregator(params, agg, ep),
            Err(e) => Err(AggFailure {
                error: e.into(),
                history: Vec::new(),
            }),
        };
        let node_results: Vec<_> = node_handles
            .into_iter()
            .map(|h| h.join().expect("node thread panicked"))
            .collect();
        (agg_result, node_results)
    });
    let wall_time = start.elapsed();
    let agg = agg_result.map_err(|f| SimFailure {
        error: f.error,
        history: f.history,
    })?;
    let mut node_outcomes = Vec::with_capacity(params.nodes);
    for r in node_results {
        node_outcomes.push(r.map_err(|error| SimFailure {
            error,
            history: agg.history.clone(),
        })?);
    }
    node_outcomes.sort_by_key(|n| n.id);

    let trajectory = params.record_trajectory.then(|| {
        (0..=agg.history.len())
            .map(|i| {
                let blocks: Vec<_> = node_outcomes.iter().map(|n| n.trajectory[i].clone()).collect();
                Matrix::vstack(&blocks).expect("blocks share a width")
            })
            .collect()
    });
    let views = agg.views.map(|mut v| {
        v.secrets = node_outcomes.iter().map(|n| n.secrets.clone()).collect();
        v
    });
    let mut party_stats = vec![agg.stats];
    party_stats.extend(node_outcomes.iter().map(|n| n.stats.clone()));
    Ok(SimOutcome {
        history: agg.history,
        node_weights: node_outcomes.into_iter().map(|n| n.weights).collect(),
        head: agg.model,
        trajectory,
        views,
        converged: agg.converged,
        party_stats,
        wall_time,
    })
}

/// All parties in one process over the in-memory fabric, optionally shaped.
pub fn simulate(
    params: &SessionParams,
    nodes: Vec<NodeInput>,
    agg: AggInput,
    net: NetProfile,
) -> Result<SimOutcome, SimFailure> {
    let endpoints = in_process(params.nodes + 1)
        .into_iter()
        .map(|ep| {
            let f: Box<dyn FnOnce() -> Result<Endpoint, TransportError> + Send> = Box::new(move || Ok(ep.shaped(net)));
            f
        })
        .collect();
    run_parties(params, nodes, agg, endpoints)
}

/// All parties in one process, each over its own TCP mesh connection.
pub fn simulate_tcp(
    params: &SessionParams,
    nodes: Vec<NodeInput>,
    agg: AggInput,
    addrs: &[SocketAddr],
    fingerprint: [u8; 32],
    net: NetProfile,
) -> Result<SimOutcome, SimFailure> {
    let endpoints = (0..=params.nodes)
        .map(|id| {
            let opts = TcpOptions {
                id: id as PartyId,
                addrs: addrs.to_vec(),
                fingerprint,
                connect_timeout: params.timeout,
            };
            let f: Box<dyn FnOnce() -> Result<Endpoint, TransportError> + Send> =
                Box::new(move || Ok(connect_mesh(&opts)?.shaped(net)));
            f
        })
        .collect();
    run_parties(params, nodes, agg, endpoints)
}
