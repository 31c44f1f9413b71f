//! Gradient-descent decomposition: the aggregator turns the reconstructed
//! product XW into the back-propagated signal Δ = ∂J/∂(XW), and every local
//! node finishes its own gradient as (X^l)ᵀΔ + τ^l.

use crate::error::{shape_check, Error, Result};
use crate::scalar::Real;
use crate::seed::{self, domain};
use crate::tensor::{self, softplus, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Logistic,
    FeedForward,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Softmax,
}

impl Activation {
    pub fn apply<T: Real>(self, z: &Matrix<T>) -> Matrix<T> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Sigmoid => tensor::sigmoid(z),
            Activation::Tanh => tensor::tanh(z),
            Activation::Softmax => tensor::softmax_rows(z),
        }
    }

    /// Elementwise derivative. Softmax has no elementwise derivative and is
    /// only valid as an output activation paired with cross-entropy.
    pub fn derivative<T: Real>(self, z: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            Activation::Identity => Ok(Matrix::filled(z.rows(), z.cols(), T::one())),
            Activation::Sigmoid => Ok(tensor::sigmoid_prime(z)),
            Activation::Tanh => Ok(tensor::tanh_prime(z)),
            Activation::Softmax => Err(Error::InvalidSpec(
                "softmax has no elementwise derivative".into(),
            )),
        }
    }
}

/// Model family, output width and head architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Output classes k.
    pub outputs: usize,
    /// Hidden layer widths (feed-forward), or the single hidden width (recurrent).
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Whether the aggregator maintains bias vectors.
    pub bias: bool,
    /// L2 coefficient λ; τ^l = λW^l.
    pub lambda: f64,
}

impl ModelSpec {
    pub fn linear(outputs: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            outputs,
            hidden: Vec::new(),
            hidden_activation: Activation::Identity,
            output_activation: Activation::Identity,
            bias: true,
            lambda: 0.0,
        }
    }

    pub fn logistic(outputs: usize) -> Self {
        Self {
            kind: ModelKind::Logistic,
            output_activation: if outputs > 1 {
                Activation::Softmax
            } else {
                Activation::Sigmoid
            },
            ..Self::linear(outputs)
        }
    }

    pub fn feed_forward(hidden: Vec<usize>, outputs: usize) -> Self {
        Self {
            kind: ModelKind::FeedForward,
            hidden,
            hidden_activation: Activation::Sigmoid,
            ..Self::logistic(outputs)
        }
    }

    pub fn recurrent(hidden: usize, outputs: usize) -> Self {
        Self {
            kind: ModelKind::Recurrent,
            outputs,
            hidden: vec![hidden],
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            bias: true,
            lambda: 0.0,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.outputs == 0 {
            return bad("output width k must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("regularization must be a non-negative finite number");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.hidden_activation == Activation::Softmax {
            return bad("softmax is only supported as the output activation");
        }
        match self.kind {
            ModelKind::Linear if self.output_activation != Activation::Identity => {
                bad("linear regression uses the identity output")
            }
            ModelKind::Logistic if self.output_activation == Activation::Identity => {
                bad("logistic regression needs a sigmoid or softmax output")
            }
            ModelKind::Logistic if self.output_activation == Activation::Softmax && self.outputs < 2 => {
                bad("softmax output needs k >= 2")
            }
            ModelKind::FeedForward if self.hidden.is_empty() => {
                bad("a feed-forward network needs at least one hidden layer")
            }
            ModelKind::Recurrent if self.hidden.len() != 1 => {
                bad("a recurrent network has exactly one hidden width")
            }
            ModelKind::Recurrent if self.output_activation == Activation::Softmax => {
                bad("recurrent outputs must use an elementwise activation")
            }
            _ => Ok(()),
        }
    }

    /// Width of the shared product XW: k for regressions, the first hidden
    /// width for networks.
    pub fn shared_width(&self) -> usize {
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => self.outputs,
            ModelKind::FeedForward | ModelKind::Recurrent => self.hidden[0],
        }
    }
}

/// Δ as broadcast to the local nodes for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMessage<T> {
    pub iteration: u64,
    pub delta: Matrix<T>,
}

/// A local node's gradient split into its data term and τ.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradient<T> {
    pub data_term: Matrix<T>,
    pub tau: Matrix<T>,
}

impl<T: Real> LocalGradient<T> {
    pub fn total(&self) -> Matrix<T> {
        self.data_term.add(&self.tau).expect("same shape by construction")
    }
}

/// Loss of an output layer and its gradient with respect to the pre-activation.
///
/// Each output activation is paired with its canonical loss (identity/MSE,
/// sigmoid/binary cross-entropy, softmax/cross-entropy), for which
/// ∂J/∂Z = (σ(Z) − y)/m.
pub fn output_loss<T: Real>(act: Activation, z: &Matrix<T>, y: &Matrix<T>) -> Result<T> {
    shape_check("output_loss", z.shape() == y.shape(), z.shape(), y.shape())?;
    let m = T::of(z.rows().max(1) as f64);
    let half = T::of(0.5);
    let total: T = match act {
        Activation::Identity => z
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| half * (a - b) * (a - b))
            .sum(),
        Activation::Sigmoid => z
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| softplus(a) - b * a)
            .sum(),
        Activation::Softmax => (0..z.rows())
            .map(|i| {
                let row = z.row(i);
                let max = row.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                row.iter()
                    .zip(y.row(i))
                    .map(|(&a, &b)| b * (lse - a))
                    .sum::<T>()
            })
            .sum(),
        Activation::Tanh => {
            return Err(Error::InvalidSpec("tanh has no paired output loss".into()))
        }
    };
    Ok(total / m)
}

/// (σ(Z) − y)/m for the canonical loss of `act`.
pub fn output_delta<T: Real>(act: Activation, z: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    let m = T::of(z.rows().max(1) as f64);
    Ok(act.apply(z).sub(y)?.scale(T::one() / m))
}

/// Loss for the regression kinds evaluated directly on Z = XW (+ b).
pub fn loss<T: Real>(spec: &ModelSpec, xw: &Matrix<T>, y: &Matrix<T>) -> Result<T> {
    output_loss(spec.output_activation, xw, y)
}

/// (λ/2)‖W‖².
pub fn l2_penalty<T: Real>(lambda: f64, w: &Matrix<T>) -> T {
    T::of(lambda * 0.5) * w.as_slice().iter().map(|&v| v * v).sum::<T>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Option<Matrix<T>>,
}

/// Gradients of everything the aggregator owns.
#[derive(Debug, Clone)]
pub struct HeadGradients<T> {
    pub first_bias: Option<Matrix<T>>,
    pub layers: Vec<(Matrix<T>, Option<Matrix<T>>)>,
}

/// Result of one aggregator step.
#[derive(Debug, Clone)]
pub struct DeltaStep<T> {
    pub delta: Matrix<T>,
    /// Data loss on the batch, before the update (penalty excluded).
    pub loss: T,
}

/// Parameters held by the aggregator: the bias added to the reconstructed
/// XW and, for feed-forward networks, every layer after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorHead<T> {
    spec: ModelSpec,
    first_bias: Option<Matrix<T>>,
    layers: Vec<Layer<T>>,
}

impl<T: Real> AggregatorHead<T> {
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if spec.kind == ModelKind::Recurrent {
            return Err(Error::InvalidSpec(
                "recurrent models use the RNN aggregator state".into(),
            ));
        }
        let width = spec.shared_width();
        let first_bias = spec.bias.then(|| Matrix::zeros(1, width));
        let mut layers = Vec::new();
        if spec.kind == ModelKind::FeedForward {
            let widths: Vec<usize> = spec
                .hidden
                .iter()
                .copied()
                .chain(std::iter::once(spec.outputs))
                .collect();
            for (idx, pair) in widths.windows(2).enumerate() {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let mut rng = seed::stream(seed, domain::HEAD, &[idx as u64]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                layers.push(Layer {
                    weights: seed::uniform_matrix(fan_in, fan_out, bound, &mut rng),
                    bias: spec.bias.then(|| Matrix::zeros(1, fan_out)),
                });
            }
        }
        Ok(Self {
            spec: spec.clone(),
            first_bias,
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn first_bias(&self) -> Option<&Matrix<T>> {
        self.first_bias.as_ref()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn first_bias_mut(&mut self) -> Option<&mut Matrix<T>> {
        self.first_bias.as_mut()
    }

    fn check_input(&self, xw: &Matrix<T>, y: Option<&Matrix<T>>) -> Result<()> {
        let width = self.spec.shared_width();
        shape_check("head_input", xw.cols() == width, xw.shape(), (xw.rows(), width))?;
        if let Some(y) = y {
            shape_check(
                "labels",
                y.shape() == (xw.rows(), self.spec.outputs),
                y.shape(),
                (xw.rows(), self.spec.outputs),
            )?;
        }
        Ok(())
    }

    /// Pre-activations of every layer, starting with XW + b₁.
    fn forward(&self, xw: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let mut pre = vec![match &self.first_bias {
            Some(b) => xw.add_row(b)?,
            None => xw.clone(),
        }];
        for layer in &self.layers {
            let a = self.spec.hidden_activation.apply(pre.last().expect("non-empty"));
            let z = a.matmul(&layer.weights)?;
            pre.push(match &layer.bias {
                Some(b) => z.add_row(b)?,
                None => z,
            });
        }
        Ok(pre)
    }

    /// Model output σ(·) for a reconstructed XW.
    pub fn predict(&self, xw: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(xw, None)?;
        let pre = self.forward(xw)?;
        Ok(self.spec.output_activation.apply(pre.last().expect("non-empty")))
    }

    /// Data loss plus the penalty on aggregator-held weights.
    pub fn loss(&self, xw: &Matrix<T>, y: &Matrix<T>) -> Result<T> {
        self.check_input(xw, Some(y))?;
        let pre = self.forward(xw)?;
        let data = output_loss(self.spec.output_activation, pre.last().expect("non-empty"), y)?;
        Ok(data + self.penalty())
    }

    pub fn penalty(&self) -> T {
        self.layers
            .iter()
            .map(|l| l2_penalty(self.spec.lambda, &l.weights))
            .sum()
    }

    /// Δ = ∂J/∂(XW) together with the gradients of the head's own parameters.
    pub fn backward(&self, xw: &Matrix<T>, y: &Matrix<T>) -> Result<(T, Matrix<T>, HeadGradients<T>)> {
        self.check_input(xw, Some(y))?;
        let pre = self.forward(xw)?;
        let last = pre.last().expect("non-empty");
        let loss = output_loss(self.spec.output_activation, last, y)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss.as_f64()));
        }
        let lambda = T::of(self.spec.lambda);
        let mut grad_z = output_delta(self.spec.output_activation, last, y)?;
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (j, layer) in self.layers.iter().enumerate().rev() {
            let act = &pre[j];
            let a = self.spec.hidden_activation.apply(act);
            let mut gw = a.t_matmul(&grad_z)?;
            if self.spec.lambda > 0.0 {
                gw.add_assign(&layer.weights.scale(lambda))?;
            }
            let gb = layer.bias.as_ref().map(|_| grad_z.col_sums());
            layer_grads.push((gw, gb));
            let back = grad_z.matmul_t(&layer.weights)?;
            grad_z = back.hadamard(&self.spec.hidden_activation.derivative(act)?)?;
        }
        layer_grads.reverse();
        let grads = HeadGradients {
            first_bias: self.first_bias.as_ref().map(|_| grad_z.col_sums()),
            layers: layer_grads,
        };
        Ok((loss, grad_z, grads))
    }

    pub fn apply(&mut self, grads: &HeadGradients<T>, lr: T) -> Result<()> {
        if let (Some(b), Some(g)) = (self.first_bias.as_mut(), grads.first_bias.as_ref()) {
            b.sub_scaled_assign(lr, g)?;
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.sub_scaled_assign(lr, gw)?;
            if let (Some(b), Some(g)) = (layer.bias.as_mut(), gb.as_ref()) {
                b.sub_scaled_assign(lr, g)?;
            }
        }
        Ok(())
    }

    /// Computes Δ for the batch and updates the head's parameters in place.
    pub fn compute_delta(&mut self, xw: &Matrix<T>, y: &Matrix<T>, lr: T) -> Result<DeltaStep<T>> {
        let (loss, delta, grads) = self.backward(xw, y)?;
        self.apply(&grads, lr)?;
        Ok(DeltaStep { delta, loss })
    }
}

/// (X^l_B)ᵀΔ and τ^l = λW^l.
pub fn local_gradient<T: Real>(
    w: &Matrix<T>,
    x_batch: &Matrix<T>,
    delta: &Matrix<T>,
    lambda: f64,
) -> Result<LocalGradient<T>> {
    shape_check("local_gradient", x_batch.rows() == delta.rows(), x_batch.shape(), delta.shape())?;
    let data_term = x_batch.t_matmul(delta)?;
    shape_check("local_gradient", data_term.shape() == w.shape(), data_term.shape(), w.shape())?;
    Ok(LocalGradient {
        data_term,
        tau: w.scale(T::of(lambda)),
    })
}

/// W^l ← W^l − α((X^l_B)ᵀΔ + λW^l).
pub fn local_update<T: Real>(
    w: &mut Matrix<T>,
    x_batch: &Matrix<T>,
    delta: &Matrix<T>,
    lr: T,
    lambda: f64,
) -> Result<()> {
    let g = local_gradient(w, x_batch, delta, lambda)?;
    if lambda > 0.0 {
        w.sub_scaled_assign(lr, &g.total())
    } else {
        w.sub_scaled_assign(lr, &g.data_term)
    }
}

/// Stops once |J_t − J_{t−1}| < tol for `PATIENCE` consecutive iterations.
#[derive(Debug, Clone)]
pub struct ConvergenceTracker {
    tol: f64,
    last: Option<f64>,
    streak: usize,
}

impl ConvergenceTracker {
    pub const PATIENCE: usize = 5;

    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            last: None,
            streak: 0,
        }
    }

    /// Records a loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.last {
            Some(prev) if (loss - prev).abs() < self.tol => self.streak += 1,
            _ => self.streak = 0,
        }
        self.last = Some(loss);
        self.streak >= Self::PATIENCE
    }
}
