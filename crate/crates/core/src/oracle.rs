//! Centralized (non-distributed, non-private) trainers used as ground truth
//! for the distributed runs.
//!
//! These share initialisation and batch order with the protocol but compute
//! gradients on the full concatenated X with their own backward passes,
//! including an O(T) reverse-sweep BPTT for the recurrent model.

use crate::error::{Error, Result};
use crate::models::{l2_penalty, output_delta, output_loss, AggregatorHead, ConvergenceTracker, Layer, ModelKind, ModelSpec};
use crate::rnn::{RnnAggState, RnnConfig};
use crate::scalar::Real;
use crate::seed::{self, BatchSchedule};
use crate::tensor::Matrix;
use crate::data::Dataset;

#[derive(Debug, Clone)]
pub struct CentralConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on iterations, applied on top of `max_epochs`.
    pub max_iterations: Option<usize>,
    pub tol: f64,
    pub seed: u64,
    /// Feature counts per local node, used to reproduce their initial blocks.
    pub node_sizes: Vec<usize>,
    /// Keep the first-layer matrix after every iteration.
    pub record_weights: bool,
}

/// Parameters of a centralized model.
#[derive(Debug, Clone, PartialEq)]
pub enum CentralModel<T> {
    Regression {
        spec: ModelSpec,
        w: Matrix<T>,
        b: Option<Matrix<T>>,
    },
    FeedForward {
        spec: ModelSpec,
        /// `layers[0]` holds the full first-layer matrix.
        layers: Vec<Layer<T>>,
    },
    Recurrent {
        config: RnnConfig,
        w: Matrix<T>,
        u: Matrix<T>,
        v: Matrix<T>,
        b_h: Option<Matrix<T>>,
        b_y: Option<Matrix<T>>,
    },
}

/// The first-layer matrix every distributed run splits across its nodes,
/// assembled from the per-node initial blocks.
pub fn initial_first_layer<T: Real>(seed: u64, node_sizes: &[usize], width: usize) -> Result<Matrix<T>> {
    let fan_in: usize = node_sizes.iter().sum();
    let blocks: Vec<Matrix<T>> = node_sizes
        .iter()
        .enumerate()
        .map(|(i, &d)| seed::init_local_block(seed, i + 1, d, width, fan_in))
        .collect();
    Matrix::vstack(&blocks)
}

impl<T: Real> CentralModel<T> {
    pub fn init(spec: &ModelSpec, timesteps: usize, node_sizes: &[usize], seed: u64) -> Result<Self> {
        spec.validate()?;
        let w = initial_first_layer(seed, node_sizes, spec.shared_width())?;
        Ok(match spec.kind {
            ModelKind::Linear | ModelKind::Logistic => {
                let head = AggregatorHead::<T>::init(spec, seed)?;
                CentralModel::Regression {
                    spec: spec.clone(),
                    w,
                    b: head.first_bias().cloned(),
                }
            }
            ModelKind::FeedForward => {
                let head = AggregatorHead::<T>::init(spec, seed)?;
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
            ModelKind::Recurrent => {
                let config = RnnConfig::from_spec(spec, timesteps)?;
                let agg = RnnAggState::<T>::init(config.clone(), seed);
                CentralModel::Recurrent {
                    config,
                    w,
                    u: agg.u,
                    v: agg.v,
                    b_h: agg.b_h,
                    b_y: agg.b_y,
                }
            }
        })
    }

    pub fn first_layer(&self) -> &Matrix<T> {
        match self {
            CentralModel::Regression { w, .. } | CentralModel::Recurrent { w, .. } => w,
            CentralModel::FeedForward { layers, .. } => &layers[0].weights,
        }
    }

    fn lambda(&self) -> f64 {
        match self {
            CentralModel::Regression { spec, .. } | CentralModel::FeedForward { spec, .. } => spec.lambda,
            CentralModel::Recurrent { config, .. } => config.lambda,
        }
    }

    /// Every trainable matrix, in a fixed order.
    pub fn params(&self) -> Vec<&Matrix<T>> {
        match self {
            CentralModel::Regression { w, b, .. } => std::iter::once(w).chain(b.as_ref()).collect(),
            CentralModel::FeedForward { layers, .. } => layers
                .iter()
                .flat_map(|l| std::iter::once(&l.weights).chain(l.bias.as_ref()))
                .collect(),
            CentralModel::Recurrent { w, u, v, b_h, b_y, .. } => [Some(w), Some(u), Some(v), b_h.as_ref(), b_y.as_ref()]
                .into_iter()
                .flatten()
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        match self {
            CentralModel::Regression { w, b, .. } => std::iter::once(w).chain(b.as_mut()).collect(),
            CentralModel::FeedForward { layers, .. } => layers
                .iter_mut()
                .flat_map(|l| std::iter::once(&mut l.weights).chain(l.bias.as_mut()))
                .collect(),
            CentralModel::Recurrent { w, u, v, b_h, b_y, .. } => [Some(w), Some(u), Some(v), b_h.as_mut(), b_y.as_mut()]
                .into_iter()
                .flatten()
                .collect(),
        }
    }

    /// Whether the parameter at `index` of [`params`](Self::params) is penalised.
    fn penalised(&self) -> Vec<bool> {
        match self {
            CentralModel::Regression { b, .. } => std::iter::once(true).chain(b.as_ref().map(|_| false)).collect(),
            CentralModel::FeedForward { layers, .. } => layers
                .iter()
                .flat_map(|l| std::iter::once(true).chain(l.bias.as_ref().map(|_| false)))
                .collect(),
            CentralModel::Recurrent { b_h, b_y, .. } => [Some(true), Some(true), Some(true), b_h.as_ref().map(|_| false), b_y.as_ref().map(|_| false)]
                .into_iter()
                .flatten()
                .collect(),
        }
    }

    /// (λ/2)Σ‖W‖² over every weight matrix.
    pub fn penalty(&self) -> T {
        let lambda = self.lambda();
        self.params()
            .into_iter()
            .zip(self.penalised())
            .filter(|(_, p)| *p)
            .map(|(m, _)| l2_penalty(lambda, m))
            .sum()
    }

    /// Outputs per step.
    pub fn predict(&self, x_steps: &[Matrix<T>]) -> Result<Vec<Matrix<T>>> {
        match self {
            CentralModel::Regression { spec, w, b } => {
                let z = affine(&x_steps[0], w, b.as_ref())?;
                Ok(vec![spec.output_activation.apply(&z)])
            }
            CentralModel::FeedForward { spec, layers } => {
                let (pre, _) = mlp_forward(spec, layers, &x_steps[0])?;
                Ok(vec![spec.output_activation.apply(pre.last().expect("non-empty"))])
            }
            CentralModel::Recurrent { .. } => Ok(self.rnn_forward(x_steps)?.y_hat),
        }
    }

    /// Data loss on (x, y), penalty excluded.
    pub fn data_loss(&self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>]) -> Result<T> {
        Ok(self.loss_and_gradients(x_steps, y_steps, false)?.0)
    }

    /// Data loss plus penalty: the objective gradient descent minimises.
    pub fn objective(&self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>]) -> Result<T> {
        Ok(self.data_loss(x_steps, y_steps)? + self.penalty())
    }

    /// Gradients of [`objective`](Self::objective), in [`params`](Self::params) order.
    pub fn gradients(&self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>]) -> Result<(T, Vec<Matrix<T>>)> {
        self.loss_and_gradients(x_steps, y_steps, true)
    }

    fn loss_and_gradients(&self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>], want_grads: bool) -> Result<(T, Vec<Matrix<T>>)> {
        let (loss, mut grads) = match self {
            CentralModel::Regression { spec, w, b } => {
                let x = &x_steps[0];
                let z = affine(x, w, b.as_ref())?;
                let loss = output_loss(spec.output_activation, &z, &y_steps[0])?;
                if !want_grads {
                    return Ok((loss, Vec::new()));
                }
                let dz = output_delta(spec.output_activation, &z, &y_steps[0])?;
                let mut g = vec![x.t_matmul(&dz)?];
                if b.is_some() {
                    g.push(dz.col_sums());
                }
                (loss, g)
            }
            CentralModel::FeedForward { spec, layers } => {
                let x = &x_steps[0];
                let (pre, acts) = mlp_forward(spec, layers, x)?;
                let last = pre.last().expect("non-empty");
                let loss = output_loss(spec.output_activation, last, &y_steps[0])?;
                if !want_grads {
                    return Ok((loss, Vec::new()));
                }
                let mut dz = output_delta(spec.output_activation, last, &y_steps[0])?;
                let mut per_layer = Vec::with_capacity(layers.len());
                for j in (0..layers.len()).rev() {
                    let input = if j == 0 { x } else { &acts[j - 1] };
                    let gw = input.t_matmul(&dz)?;
                    let gb = layers[j].bias.as_ref().map(|_| dz.col_sums());
                    if j > 0 {
                        dz = dz
                            .matmul_t(&layers[j].weights)?
                            .hadamard(&spec.hidden_activation.derivative(&pre[j - 1])?)?;
                    }
                    per_layer.push((gw, gb));
                }
                per_layer.reverse();
                let g = per_layer
                    .into_iter()
                    .flat_map(|(w, b)| std::iter::once(w).chain(b))
                    .collect();
                (loss, g)
            }
            CentralModel::Recurrent { .. } => self.rnn_backward(x_steps, y_steps, want_grads)?,
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss.as_f64()));
        }
        if want_grads && self.lambda() > 0.0 {
            let lambda = T::of(self.lambda());
            for ((g, p), pen) in grads.iter_mut().zip(self.params()).zip(self.penalised()) {
                if pen {
                    g.add_assign(&p.scale(lambda))?;
                }
            }
        }
        Ok((loss, grads))
    }

    fn rnn_forward(&self, x_steps: &[Matrix<T>]) -> Result<RnnTrace<T>> {
        let CentralModel::Recurrent { config, w, u, v, b_h, b_y } = self else {
            unreachable!("recurrent only")
        };
        let m = x_steps[0].rows();
        let mut trace = RnnTrace::default();
        let mut h = Matrix::zeros(m, config.hidden);
        for x in x_steps {
            let z_h = affine(x, w, b_h.as_ref())?.add(&h.matmul(u)?)?;
            h = config.hidden_activation.apply(&z_h);
            let z_y = affine(&h, v, b_y.as_ref())?;
            trace.y_hat.push(config.output_activation.apply(&z_y));
            trace.z_h.push(z_h);
            trace.h.push(h.clone());
            trace.z_y.push(z_y);
        }
        Ok(trace)
    }

    /// Reverse-time sweep carrying ∂J/∂h(c) backwards.
    fn rnn_backward(&self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>], want_grads: bool) -> Result<(T, Vec<Matrix<T>>)> {
        let CentralModel::Recurrent { config, w, u, v, b_h, b_y } = self else {
            unreachable!("recurrent only")
        };
        let trace = self.rnn_forward(x_steps)?;
        let m = T::of(x_steps[0].rows().max(1) as f64);
        let mut loss = T::zero();
        for (yh, y) in trace.y_hat.iter().zip(y_steps) {
            loss += yh.sub(y)?.as_slice().iter().map(|&r| r * r).sum::<T>() / (m + m);
        }
        if !want_grads {
            return Ok((loss, Vec::new()));
        }
        let mut gw = Matrix::zeros(w.rows(), w.cols());
        let mut gu = Matrix::zeros(u.rows(), u.cols());
        let mut gv = Matrix::zeros(v.rows(), v.cols());
        let mut gbh = Matrix::zeros(1, config.hidden);
        let mut gby = Matrix::zeros(1, config.outputs);
        let mut carry = Matrix::zeros(x_steps[0].rows(), config.hidden);
        for c in (0..x_steps.len()).rev() {
            let dzy = trace.y_hat[c]
                .sub(&y_steps[c])?
                .scale(T::one() / m)
                .hadamard(&config.output_activation.derivative(&trace.z_y[c])?)?;
            gv.add_assign(&trace.h[c].t_matmul(&dzy)?)?;
            gby.add_assign(&dzy.col_sums())?;
            let dh = dzy.matmul_t(v)?.add(&carry)?;
            let dzh = dh.hadamard(&config.hidden_activation.derivative(&trace.z_h[c])?)?;
            gw.add_assign(&x_steps[c].t_matmul(&dzh)?)?;
            if c > 0 {
                gu.add_assign(&trace.h[c - 1].t_matmul(&dzh)?)?;
            }
            gbh.add_assign(&dzh.col_sums())?;
            carry = dzh.matmul_t(u)?;
        }
        let grads = [Some(gw), Some(gu), Some(gv), b_h.as_ref().map(|_| gbh), b_y.as_ref().map(|_| gby)]
            .into_iter()
            .flatten()
            .collect();
        Ok((loss, grads))
    }

    /// One gradient step on a batch; returns the pre-update data loss.
    pub fn step(&mut self, x_steps: &[Matrix<T>], y_steps: &[Matrix<T>], lr: T) -> Result<T> {
        let (loss, grads) = self.gradients(x_steps, y_steps)?;
        for (p, g) in self.params_mut().into_iter().zip(&grads) {
            p.sub_scaled_assign(lr, g)?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Default)]
struct RnnTrace<T> {
    z_h: Vec<Matrix<T>>,
    h: Vec<Matrix<T>>,
    z_y: Vec<Matrix<T>>,
    y_hat: Vec<Matrix<T>>,
}

fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    let z = x.matmul(w)?;
    match b {
        Some(b) => z.add_row(b),
        None => Ok(z),
    }
}

/// Pre-activations of every layer and the hidden activations between them.
fn mlp_forward<T: Real>(spec: &ModelSpec, layers: &[Layer<T>], x: &Matrix<T>) -> Result<(Vec<Matrix<T>>, Vec<Matrix<T>>)> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut acts = Vec::with_capacity(layers.len());
    let mut input = x.clone();
    for (j, layer) in layers.iter().enumerate() {
        let z = affine(&input, &layer.weights, layer.bias.as_ref())?;
        if j + 1 < layers.len() {
            input = spec.hidden_activation.apply(&z);
            acts.push(input.clone());
        }
        pre.push(z);
    }
    Ok((pre, acts))
}

/// Trajectory and outcome of a centralized run.
#[derive(Debug, Clone)]
pub struct CentralizedRun<T> {
    /// First-layer matrix at initialisation and after every iteration
    /// (only when recording was requested).
    pub weights: Vec<Matrix<T>>,
    pub losses: Vec<T>,
    pub model: CentralModel<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn batch_of<T: Real>(steps: &[Matrix<T>], batch: &[usize]) -> Result<Vec<Matrix<T>>> {
    steps.iter().map(|m| m.row_slice(batch)).collect()
}

/// Trains on the concatenated data with the same initialisation, batch
/// stream and stopping rule as the distributed protocol.
pub fn train_centralized<T: Real>(data: &Dataset<T>, spec: &ModelSpec, cfg: &CentralConfig) -> Result<CentralizedRun<T>> {
    if cfg.node_sizes.iter().sum::<usize>() != data.features() {
        return Err(Error::InvalidPlan(format!(
            "node sizes cover {} features, data has {}",
            cfg.node_sizes.iter().sum::<usize>(),
            data.features()
        )));
    }
    let mut model = CentralModel::init(spec, data.timesteps(), &cfg.node_sizes, cfg.seed)?;
    let schedule = BatchSchedule::new(data.samples(), cfg.batch_size, cfg.seed);
    let mut tracker = ConvergenceTracker::new(cfg.tol);
    let mut weights = Vec::new();
    if cfg.record_weights {
        weights.push(model.first_layer().clone());
    }
    let lr = T::of(cfg.learning_rate);
    let cap = cfg.max_iterations.unwrap_or(usize::MAX);
    let mut losses = Vec::new();
    let mut converged = false;
    for (_, batch) in schedule.iter(cfg.max_epochs).take(cap) {
        let x = batch_of(&data.x_steps, &batch)?;
        let y = batch_of(&data.y_steps, &batch)?;
        let loss = model.step(&x, &y, lr)?;
        losses.push(loss);
        if cfg.record_weights {
            weights.push(model.first_layer().clone());
        }
        if tracker.observe(loss.as_f64()) {
            converged = true;
            break;
        }
    }
    Ok(CentralizedRun {
        weights,
        iterations: losses.len(),
        losses,
        model,
        converged,
    })
}

/// Per-iteration max-abs deviation between two weight trajectories.
pub fn compare_trajectories<T: Real>(central: &[Matrix<T>], distributed: &[Matrix<T>]) -> Result<Vec<f64>> {
    if central.len() != distributed.len() {
        return Err(Error::LengthMismatch(central.len(), distributed.len()));
    }
    central
        .iter()
        .zip(distributed)
        .map(|(a, b)| a.max_abs_diff(b).map(Real::as_f64))
        .collect()
}

/// Largest growth of a deviation series from one iteration to the next.
pub fn max_increment(deviations: &[f64]) -> f64 {
    deviations
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(deviations.first().copied())
        .fold(0.0, f64::max)
}
