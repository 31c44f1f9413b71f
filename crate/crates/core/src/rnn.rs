//! Recurrent network over vertically partitioned sequences.
//!
//! Rows are samples, so the recurrence reads
//! `Z_h(c) = X(c)W + h(c-1)U + b_h`, `h(c) = σ₁(Z_h(c))`,
//! `Z_y(c) = h(c)V + b_y`, `ŷ(c) = σ₂(Z_y(c))`, with per-step loss
//! `J(c) = ‖ŷ(c) − y(c)‖² / 2m`. Only the products X(c)W are shared;
//! U, V and both biases stay with the aggregator.

use crate::error::{shape_check, Error, Result};
use crate::models::{l2_penalty, Activation, ModelKind, ModelSpec};
use crate::scalar::Real;
use crate::seed::{self, domain};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnConfig {
    pub timesteps: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub bias: bool,
    pub lambda: f64,
}

impl RnnConfig {
    pub fn from_spec(spec: &ModelSpec, timesteps: usize) -> Result<Self> {
        spec.validate()?;
        if spec.kind != ModelKind::Recurrent {
            return Err(Error::InvalidSpec("not a recurrent model".into()));
        }
        if timesteps == 0 {
            return Err(Error::InvalidSpec("an RNN needs at least one timestep".into()));
        }
        Ok(Self {
            timesteps,
            hidden: spec.hidden[0],
            outputs: spec.outputs,
            hidden_activation: spec.hidden_activation,
            output_activation: spec.output_activation,
            bias: spec.bias,
            lambda: spec.lambda,
        })
    }
}

/// Per-step activations cached by the forward pass.
#[derive(Debug, Clone, Default)]
pub struct RnnCache<T> {
    pub z_h: Vec<Matrix<T>>,
    pub h: Vec<Matrix<T>>,
    pub z_y: Vec<Matrix<T>>,
    pub y_hat: Vec<Matrix<T>>,
}

/// δ_loss(c) = ∂J(c)/∂ŷ(c), δ_ŷ(c) = σ₂′(Z_y(c)), δ_h(c) = σ₁′(Z_h(c)).
#[derive(Debug, Clone, PartialEq)]
pub struct BpttSignals<T> {
    pub loss: Vec<Matrix<T>>,
    pub y_hat: Vec<Matrix<T>>,
    pub h: Vec<Matrix<T>>,
}

impl<T: Real> BpttSignals<T> {
    pub fn timesteps(&self) -> usize {
        self.loss.len()
    }

    /// δ_loss(c) ∘ δ_ŷ(c) = ∂J(c)/∂Z_y(c).
    pub fn output_error(&self, c: usize) -> Matrix<T> {
        self.loss[c].hadamard(&self.y_hat[c]).expect("signal shapes agree")
    }
}

/// What the aggregator broadcasts so nodes can finish ∂J/∂W^l: the signals
/// plus pre-update snapshots of V and U.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnDeltaBundle<T> {
    pub signals: BpttSignals<T>,
    pub v: Matrix<T>,
    pub u: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct RnnGradients<T> {
    pub u: Matrix<T>,
    pub v: Matrix<T>,
    pub b_h: Option<Matrix<T>>,
    pub b_y: Option<Matrix<T>>,
}

/// Aggregator side of the recurrent model.
#[derive(Debug, Clone)]
pub struct RnnAggState<T> {
    config: RnnConfig,
    pub u: Matrix<T>,
    pub v: Matrix<T>,
    pub b_h: Option<Matrix<T>>,
    pub b_y: Option<Matrix<T>>,
    cache: RnnCache<T>,
}

impl<T: Real> RnnAggState<T> {
    pub fn init(config: RnnConfig, seed: u64) -> Self {
        let hbound = 1.0 / (config.hidden as f64).sqrt();
        let u = seed::uniform_matrix(config.hidden, config.hidden, hbound, &mut seed::stream(seed, domain::HEAD, &[0]));
        let v = seed::uniform_matrix(config.hidden, config.outputs, hbound, &mut seed::stream(seed, domain::HEAD, &[1]));
        Self {
            b_h: config.bias.then(|| Matrix::zeros(1, config.hidden)),
            b_y: config.bias.then(|| Matrix::zeros(1, config.outputs)),
            u,
            v,
            config,
            cache: RnnCache::default(),
        }
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn cache(&self) -> &RnnCache<T> {
        &self.cache
    }

    /// Forward propagation through time from the reconstructed X(c)W; h(-1) = 0.
    pub fn rnn_forward(&mut self, xw_steps: &[Matrix<T>]) -> Result<Vec<Matrix<T>>> {
        let cfg = &self.config;
        if xw_steps.len() != cfg.timesteps {
            return Err(Error::ShapeMismatch {
                op: "rnn_forward",
                left: (xw_steps.len(), 0),
                right: (cfg.timesteps, 0),
            });
        }
        let m = xw_steps[0].rows();
        let mut cache = RnnCache::default();
        let mut h_prev = Matrix::zeros(m, cfg.hidden);
        for xw in xw_steps {
            shape_check("rnn_forward", xw.shape() == (m, cfg.hidden), xw.shape(), (m, cfg.hidden))?;
            let mut z_h = xw.add(&h_prev.matmul(&self.u)?)?;
            if let Some(b) = &self.b_h {
                z_h = z_h.add_row(b)?;
            }
            let h = cfg.hidden_activation.apply(&z_h);
            let mut z_y = h.matmul(&self.v)?;
            if let Some(b) = &self.b_y {
                z_y = z_y.add_row(b)?;
            }
            let y_hat = cfg.output_activation.apply(&z_y);
            cache.z_h.push(z_h);
            cache.h.push(h.clone());
            cache.z_y.push(z_y);
            cache.y_hat.push(y_hat);
            h_prev = h;
        }
        let out = cache.y_hat.clone();
        self.cache = cache;
        Ok(out)
    }

    /// Σ_c J(c) on the cached forward pass and the BPTT signals.
    pub fn signals(&self, y_steps: &[Matrix<T>]) -> Result<(T, BpttSignals<T>)> {
        let cfg = &self.config;
        if self.cache.y_hat.len() != cfg.timesteps || y_steps.len() != cfg.timesteps {
            return Err(Error::ShapeMismatch {
                op: "rnn_signals",
                left: (y_steps.len(), 0),
                right: (cfg.timesteps, 0),
            });
        }
        let mut total = T::zero();
        let mut signals = BpttSignals {
            loss: Vec::new(),
            y_hat: Vec::new(),
            h: Vec::new(),
        };
        for c in 0..cfg.timesteps {
            let y_hat = &self.cache.y_hat[c];
            let m = T::of(y_hat.rows().max(1) as f64);
            let resid = y_hat.sub(&y_steps[c])?;
            total += resid.as_slice().iter().map(|&r| r * r).sum::<T>() / (m + m);
            signals.loss.push(resid.scale(T::one() / m));
            signals.y_hat.push(cfg.output_activation.derivative(&self.cache.z_y[c])?);
            signals.h.push(cfg.hidden_activation.derivative(&self.cache.z_h[c])?);
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss(total.as_f64()));
        }
        Ok((total, signals))
    }

    pub fn penalty(&self) -> T {
        l2_penalty(self.config.lambda, &self.u) + l2_penalty(self.config.lambda, &self.v)
    }

    /// ∂J(c)/∂V = h(c)ᵀ[δ_loss(c) ∘ δ_ŷ(c)].
    pub fn rnn_grad_v(&self, signals: &BpttSignals<T>, c: usize) -> Result<Matrix<T>> {
        self.cache.h[c].t_matmul(&signals.output_error(c))
    }

    /// ∂J(c)/∂U = Σ_{k≤c} h(k-1)ᵀ e_k(c), with e_k(c) from [`hidden_errors`].
    pub fn rnn_grad_u(&self, signals: &BpttSignals<T>, c: usize) -> Result<Matrix<T>> {
        let errors = hidden_errors(signals, &self.v, &self.u, c)?;
        let mut grad = Matrix::zeros(self.config.hidden, self.config.hidden);
        // k = 0 pairs with h(-1) = 0.
        for (k, e) in errors.iter().enumerate().skip(1) {
            grad.add_assign(&self.cache.h[k - 1].t_matmul(e)?)?;
        }
        Ok(grad)
    }

    /// Gradients of the aggregator's parameters summed over all c.
    pub fn gradients(&self, signals: &BpttSignals<T>) -> Result<RnnGradients<T>> {
        let cfg = &self.config;
        let lambda = T::of(cfg.lambda);
        let mut gu = self.u.scale(lambda);
        let mut gv = self.v.scale(lambda);
        let mut gbh = Matrix::zeros(1, cfg.hidden);
        let mut gby = Matrix::zeros(1, cfg.outputs);
        for c in 0..signals.timesteps() {
            gv.add_assign(&self.rnn_grad_v(signals, c)?)?;
            gu.add_assign(&self.rnn_grad_u(signals, c)?)?;
            gby.add_assign(&signals.output_error(c).col_sums())?;
            for e in hidden_errors(signals, &self.v, &self.u, c)? {
                gbh.add_assign(&e.col_sums())?;
            }
        }
        Ok(RnnGradients {
            u: gu,
            v: gv,
            b_h: self.b_h.as_ref().map(|_| gbh),
            b_y: self.b_y.as_ref().map(|_| gby),
        })
    }

    pub fn apply(&mut self, grads: &RnnGradients<T>, lr: T) -> Result<()> {
        self.u.sub_scaled_assign(lr, &grads.u)?;
        self.v.sub_scaled_assign(lr, &grads.v)?;
        if let (Some(b), Some(g)) = (self.b_h.as_mut(), grads.b_h.as_ref()) {
            b.sub_scaled_assign(lr, g)?;
        }
        if let (Some(b), Some(g)) = (self.b_y.as_mut(), grads.b_y.as_ref()) {
            b.sub_scaled_assign(lr, g)?;
        }
        Ok(())
    }

    /// Aggregator half of one iteration: forward pass, signals, and the U/V
    /// update. Gradients come from pre-update parameters; the returned bundle
    /// carries the pre-update V and U the nodes need.
    pub fn step(&mut self, xw_steps: &[Matrix<T>], y_steps: &[Matrix<T>], lr: T) -> Result<(T, RnnDeltaBundle<T>)> {
        self.rnn_forward(xw_steps)?;
        let (loss, signals) = self.signals(y_steps)?;
        let grads = self.gradients(&signals)?;
        let bundle = RnnDeltaBundle {
            signals,
            v: self.v.clone(),
            u: self.u.clone(),
        };
        self.apply(&grads, lr)?;
        Ok((loss, bundle))
    }
}

/// e_k(c) = ∂J(c)/∂Z_h(k) for k = 0..=c.
///
/// Starts from e_c = (δ_loss(c) ∘ δ_ŷ(c))Vᵀ ∘ δ_h(c) and walks back in time
/// with e_{k-1} = (e_k Uᵀ) ∘ δ_h(k-1): the product over i = k+1..c applied
/// right-to-left, with δ_h acting elementwise. For k = c the product is empty.
pub fn hidden_errors<T: Real>(
    signals: &BpttSignals<T>,
    v: &Matrix<T>,
    u: &Matrix<T>,
    c: usize,
) -> Result<Vec<Matrix<T>>> {
    let mut errors = vec![Matrix::zeros(0, 0); c + 1];
    let mut e = signals.output_error(c).matmul_t(v)?.hadamard(&signals.h[c])?;
    for k in (0..=c).rev() {
        if k < c {
            e = e.matmul_t(u)?.hadamard(&signals.h[k])?;
        }
        errors[k] = e.clone();
    }
    Ok(errors)
}

/// ∂J(c)/∂W^l = Σ_{k≤c} X^l(k)ᵀ e_k(c), computed at the node that owns X^l.
pub fn rnn_grad_w_local<T: Real>(
    x_steps: &[Matrix<T>],
    bundle: &RnnDeltaBundle<T>,
    c: usize,
) -> Result<Matrix<T>> {
    let errors = hidden_errors(&bundle.signals, &bundle.v, &bundle.u, c)?;
    let d = x_steps.first().map_or(0, Matrix::cols);
    let mut grad = Matrix::zeros(d, bundle.u.rows());
    for (k, e) in errors.iter().enumerate() {
        grad.add_assign(&x_steps[k].t_matmul(e)?)?;
    }
    Ok(grad)
}

/// W^l ← W^l − α(Σ_c ∂J(c)/∂W^l + λW^l).
pub fn rnn_local_update<T: Real>(
    w: &mut Matrix<T>,
    x_steps: &[Matrix<T>],
    bundle: &RnnDeltaBundle<T>,
    lr: T,
    lambda: f64,
) -> Result<()> {
    if x_steps.len() != bundle.signals.timesteps() {
        return Err(Error::ShapeMismatch {
            op: "rnn_local_update",
            left: (x_steps.len(), 0),
            right: (bundle.signals.timesteps(), 0),
        });
    }
    let mut grad = w.scale(T::of(lambda));
    for c in 0..x_steps.len() {
        grad.add_assign(&rnn_grad_w_local(x_steps, bundle, c)?)?;
    }
    w.sub_scaled_assign(lr, &grad)
}

/// A local node's view for the in-memory iteration: its feature slices for
/// every timestep and its coefficient block.
#[derive(Debug, Clone)]
pub struct RnnLocal<T> {
    pub x_steps: Vec<Matrix<T>>,
    pub w: Matrix<T>,
}

/// One full iteration with the reconstruction replaced by a plaintext sum.
/// The protocol engine runs the same sequence with secret-shared sums.
pub fn rnn_train_iteration<T: Real>(
    agg: &mut RnnAggState<T>,
    nodes: &mut [RnnLocal<T>],
    y_steps: &[Matrix<T>],
    batch: &[usize],
    lr: T,
) -> Result<T> {
    let timesteps = agg.config().timesteps;
    let mut xw_steps = Vec::with_capacity(timesteps);
    let mut sliced: Vec<Vec<Matrix<T>>> = Vec::with_capacity(nodes.len());
    for node in nodes.iter() {
        sliced.push(
            node.x_steps
                .iter()
                .map(|x| x.row_slice(batch))
                .collect::<Result<_>>()?,
        );
    }
    for c in 0..timesteps {
        let mut acc: Option<Matrix<T>> = None;
        for (node, xs) in nodes.iter().zip(&sliced) {
            let p = xs[c].matmul(&node.w)?;
            acc = Some(match acc {
                Some(a) => a.add(&p)?,
                None => p,
            });
        }
        xw_steps.push(acc.ok_or_else(|| Error::InvalidSpec("no local nodes".into()))?);
    }
    let y_batch: Vec<Matrix<T>> = y_steps.iter().map(|y| y.row_slice(batch)).collect::<Result<_>>()?;
    let (loss, bundle) = agg.step(&xw_steps, &y_batch, lr)?;
    let lambda = agg.config().lambda;
    for (node, xs) in nodes.iter_mut().zip(&sliced) {
        rnn_local_update(&mut node.w, xs, &bundle, lr, lambda)?;
    }
    Ok(loss)
}
