//! Training configuration file (TOML).
//!
//! ```toml
//! [model]
//! kind = "linear"            # linear | logistic | nn | rnn
//! outputs = 1
//! hidden = [128, 128]        # nn: hidden widths; rnn: [H]
//! bias = true
//! lambda = 0.0
//!
//! [training]
//! learning_rate = 0.05
//! batch_size = 40
//! max_epochs = 10
//! max_iterations = 200       # optional cap
//! tol = 1e-8
//! seed = 42
//! plaintext = false          # insecure oracle mode
//! timeout_secs = 30
//!
//! [ring]
//! width = 64
//! frac_bits = 20
//!
//! [topology]
//! nodes = 3
//! adversary_bound = 1
//! transport = "in_process"   # in_process | tcp
//! addresses = ["127.0.0.1:7100", "127.0.0.1:7101", "127.0.0.1:7102", "127.0.0.1:7103"]
//! plan = "plan.toml"         # optional; contiguous split otherwise
//!
//! [data]
//! source = "synthetic"       # synthetic | sequences | mnist | csv | partitioned
//! samples = 1000
//! features = 30
//!
//! [net]
//! profile = "lan"            # lan | wan | custom
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use privcoll_core::data::{
    gen_sequences, gen_synthetic, load_csv, load_csv_matrix, load_mnist_idx, write_csv_matrix, CsvOptions, Dataset, LabelColumn, MnistOptions,
    SequenceSpec, SyntheticSpec, SyntheticTask, VerticalPartitionPlan,
};
use privcoll_core::models::{Activation, ModelKind, ModelSpec};
use privcoll_core::ring::RingParams;
use privcoll_core::tensor::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{AggInput, NodeInput, SessionParams};
use crate::transport::{NetProfile, PartyId, AGGREGATOR};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while materializing the data a config points at.
#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] privcoll_core::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindName {
    Linear,
    Logistic,
    Nn,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Identity,
    Sigmoid,
    Tanh,
    Softmax,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Self {
        match a {
            ActivationName::Identity => Activation::Identity,
            ActivationName::Sigmoid => Activation::Sigmoid,
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Softmax => Activation::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindName,
    pub outputs: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_activation: Option<ActivationName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_activation: Option<ActivationName>,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub lambda: f64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec, ConfigError> {
        let mut spec = match self.kind {
            ModelKindName::Linear => ModelSpec::linear(self.outputs),
            ModelKindName::Logistic => ModelSpec::logistic(self.outputs),
            ModelKindName::Nn => ModelSpec::feed_forward(self.hidden.clone(), self.outputs),
            ModelKindName::Rnn => match self.hidden.as_slice() {
                [h] => ModelSpec::recurrent(*h, self.outputs),
                _ => return invalid("model.hidden must hold exactly one width for kind = \"rnn\""),
            },
        };
        if matches!(self.kind, ModelKindName::Linear | ModelKindName::Logistic) && !self.hidden.is_empty() {
            return invalid("model.hidden is only meaningful for nn and rnn");
        }
        if let Some(a) = self.hidden_activation {
            spec.hidden_activation = a.into();
        }
        if let Some(a) = self.output_activation {
            spec.output_activation = a.into();
        }
        spec = spec.with_bias(self.bias).with_lambda(self.lambda);
        spec.validate().map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        Ok(spec)
    }
}

fn default_epochs() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-8
}
fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plaintext: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSection {
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_frac")]
    pub frac_bits: u32,
}

fn default_width() -> u32 {
    64
}
fn default_frac() -> u32 {
    20
}

impl Default for RingSection {
    fn default() -> Self {
        Self {
            width: default_width(),
            frac_bits: default_frac(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// s, the number of local nodes.
    pub nodes: usize,
    /// t, the number of colluding nodes the deployment is assumed to face.
    #[serde(default)]
    pub adversary_bound: usize,
    #[serde(default)]
    pub transport: TransportMode,
    /// Listen address of every party, aggregator first.
    #[serde(default)]
    pub addresses: Vec<SocketAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
}

fn default_noise() -> f64 {
    0.1
}
fn default_data_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    Synthetic {
        samples: usize,
        features: usize,
        /// Defaults to full rank.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rank: Option<usize>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    Sequences {
        samples: usize,
        features: usize,
        timesteps: usize,
        /// Hidden width of the generating network.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        teacher_hidden: Option<usize>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replicate_to: Option<usize>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "yes")]
        has_header: bool,
        label: LabelColumn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
    /// A directory written by `privcoll partition`.
    Partitioned { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    #[default]
    Lan,
    Wan,
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default)]
    pub profile: ProfileName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput_bytes_per_sec: Option<f64>,
}

impl NetSection {
    pub fn profile(&self) -> Result<NetProfile, ConfigError> {
        let p = match self.profile {
            ProfileName::Lan => NetProfile::lan(),
            ProfileName::Wan => NetProfile::wan(),
            ProfileName::Custom => NetProfile {
                latency_ms: self.latency_ms.unwrap_or(0.0),
                throughput_bytes_per_sec: self.throughput_bytes_per_sec.unwrap_or(0.0),
            },
        };
        if self.profile != ProfileName::Custom && (self.latency_ms.is_some() || self.throughput_bytes_per_sec.is_some()) {
            return invalid("net.latency_ms and net.throughput_bytes_per_sec need profile = \"custom\"");
        }
        p.validate().map_err(|e| ConfigError::Invalid(format!("net: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub model: ModelConfig,
    pub training: TrainingSection,
    #[serde(default)]
    pub ring: RingSection,
    pub topology: TopologySection,
    pub data: DataSection,
    #[serde(default)]
    pub net: NetSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Written next to partitioned data so every party knows the public shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub samples: usize,
    pub features: usize,
    pub outputs: usize,
    pub timesteps: usize,
    pub nodes: usize,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PLAN_FILE: &str = "plan.toml";

pub fn node_file(id: PartyId, step: usize) -> String {
    format!("node{id}_step{step}.csv")
}

pub fn label_file(step: usize) -> String {
    format!("labels_step{step}.csv")
}

/// The private inputs of one party.
#[derive(Debug, Clone)]
pub enum PartyData {
    Aggregator(AggInput),
    Node(NodeInput),
}

impl TrainingConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str, base_dir: PathBuf) -> Result<Self, ConfigError> {
        let mut cfg: TrainingConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The same configuration with every relative path made absolute, so it
    /// can be written elsewhere.
    pub fn absolutized(&self) -> Self {
        let mut c = self.clone();
        let abs = |p: &Path| {
            let p = self.resolve(p);
            std::path::absolute(&p).unwrap_or(p)
        };
        c.topology.plan = self.topology.plan.as_deref().map(abs);
        match &mut c.data {
            DataSection::Mnist { images, labels, .. } => {
                *images = abs(images);
                *labels = abs(labels);
            }
            DataSection::Csv { path, .. } => *path = abs(path),
            DataSection::Partitioned { dir } => *dir = abs(dir),
            DataSection::Synthetic { .. } | DataSection::Sequences { .. } => {}
        }
        c.base_dir = PathBuf::new();
        c
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Hard errors only; see [`TrainingConfig::warnings`] for the rest.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.model.spec()?;
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return invalid(format!("training.learning_rate must be positive, got {}", t.learning_rate));
        }
        if t.batch_size == 0 {
            return invalid("training.batch_size must be at least 1");
        }
        if !(t.tol >= 0.0) {
            return invalid("training.tol must be non-negative");
        }
        if !(t.timeout_secs > 0.0 && t.timeout_secs.is_finite()) {
            return invalid("training.timeout_secs must be positive");
        }
        RingParams::new(self.ring.width, self.ring.frac_bits).map_err(|e| ConfigError::Invalid(format!("ring: {e}")))?;
        let s = self.topology.nodes;
        if s == 0 || (s < 2 && !t.plaintext) {
            return invalid(format!("topology.nodes must be at least 2 for secret sharing, got {s}"));
        }
        if s >= PartyId::MAX as usize {
            return invalid(format!("topology.nodes = {s} is too large"));
        }
        if self.topology.transport == TransportMode::Tcp && self.topology.addresses.len() != s + 1 {
            return invalid(format!(
                "topology.addresses must list {} addresses (aggregator first) for tcp, got {}",
                s + 1,
                self.topology.addresses.len()
            ));
        }
        self.net.profile()?;
        let recurrent = spec.kind == ModelKind::Recurrent;
        match &self.data {
            DataSection::Synthetic { samples, features, noise, .. } => {
                if *samples == 0 || *features < s {
                    return invalid(format!(
                        "data: need at least one sample and one feature per node ({samples} × {features} for {s} nodes)"
                    ));
                }
                if !(*noise >= 0.0) {
                    return invalid("data.noise must be non-negative");
                }
                if recurrent {
                    return invalid("an rnn needs sequence data (data.source = \"sequences\")");
                }
            }
            DataSection::Sequences { samples, features, timesteps, .. } => {
                if *samples == 0 || *features < s || *timesteps == 0 {
                    return invalid("data: sequences need samples, timesteps ≥ 1 and one feature per node");
                }
                if !recurrent {
                    return invalid("sequence data needs model.kind = \"rnn\"");
                }
            }
            DataSection::Mnist { .. } if self.model.outputs != 10 => {
                return invalid("MNIST has 10 classes; set model.outputs = 10");
            }
            _ => {}
        }
        Ok(())
    }

    /// Non-fatal findings, such as an adversary bound outside the proven regime.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let (s, t) = (self.topology.nodes, self.topology.adversary_bound);
        if t + 1 >= s {
            w.push(format!(
                "adversary bound t = {t} with s = {s} nodes: privacy is only argued for t < s - 1; \
                 t = s - 1 colluding nodes plus the aggregator can recover the honest node's products"
            ));
        }
        if self.training.plaintext {
            w.push("plaintext mode sends X^lW^l in the clear; use it only for correctness checks".into());
        }
        w
    }

    /// SHA-256 over the canonical JSON form without the network profile and
    /// local file paths. Parties refuse peers whose fingerprint differs.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let root = v.as_object_mut().expect("object");
        root.remove("net");
        for (section, keys) in [("data", &["dir", "images", "labels", "path"][..]), ("topology", &["plan"][..])] {
            if let Some(obj) = root.get_mut(section).and_then(|s| s.as_object_mut()) {
                for k in keys {
                    obj.remove(*k);
                }
            }
        }
        Sha256::digest(v.to_string().as_bytes()).into()
    }

    pub fn ring_params(&self) -> RingParams {
        RingParams::new(self.ring.width, self.ring.frac_bits).expect("validated")
    }

    pub fn net_profile(&self) -> NetProfile {
        self.net.profile().expect("validated")
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.training.timeout_secs)
    }

    /// Session parameters for data of the given public shape.
    pub fn session_params(&self, samples: usize, features: usize, timesteps: usize) -> SessionParams {
        let t = &self.training;
        SessionParams {
            spec: self.model.spec().expect("validated"),
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            max_iterations: t.max_iterations,
            tol: t.tol,
            seed: t.seed,
            ring: self.ring_params(),
            nodes: self.topology.nodes,
            samples,
            features,
            timesteps,
            plaintext: t.plaintext,
            timeout: self.timeout(),
            record_trajectory: false,
            record_views: false,
        }
    }

    /// The split of feature columns over the nodes.
    pub fn plan(&self, features: usize) -> Result<VerticalPartitionPlan, DataError> {
        let plan = match &self.topology.plan {
            Some(p) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                VerticalPartitionPlan::parse(&text)?
            }
            None => VerticalPartitionPlan::contiguous(features, self.topology.nodes)?,
        };
        if plan.parties() != self.topology.nodes || plan.features() != features {
            return Err(ConfigError::Invalid(format!(
                "plan covers {} nodes and {} features; config has {} nodes, data {} features",
                plan.parties(),
                plan.features(),
                self.topology.nodes,
                features
            ))
            .into());
        }
        Ok(plan)
    }

    fn check_outputs(&self, data: &Dataset<f64>) -> Result<(), DataError> {
        if data.outputs() != self.model.outputs {
            return Err(ConfigError::Invalid(format!(
                "data has {} label columns but model.outputs = {}",
                data.outputs(),
                self.model.outputs
            ))
            .into());
        }
        Ok(())
    }

    /// The full dataset, as one trusted party would see it. Used by
    /// `simulate`, the oracles and `partition`.
    pub fn load_dataset(&self) -> Result<Dataset<f64>, DataError> {
        let k = self.model.outputs;
        let data = match &self.data {
            &DataSection::Synthetic {
                samples,
                features,
                rank,
                noise,
                data_seed,
            } => {
                let task = match self.model.kind {
                    ModelKindName::Linear => SyntheticTask::Linear,
                    _ => SyntheticTask::Logistic,
                };
                let d = gen_synthetic::<f64>(&SyntheticSpec {
                    samples,
                    features,
                    outputs: k,
                    rank: rank.unwrap_or(features),
                    noise,
                    task,
                    seed: data_seed,
                });
                Dataset::single(d.x, d.y)?
            }
            &DataSection::Sequences {
                samples,
                features,
                timesteps,
                teacher_hidden,
                noise,
                data_seed,
            } => gen_sequences(&SequenceSpec {
                samples,
                features,
                outputs: k,
                timesteps,
                hidden: teacher_hidden.unwrap_or_else(|| self.model.hidden.first().copied().unwrap_or(4)),
                noise,
                seed: data_seed,
            }),
            DataSection::Mnist {
                images,
                labels,
                limit,
                replicate_to,
            } => {
                let d = load_mnist_idx::<f64>(
                    &self.resolve(images),
                    &self.resolve(labels),
                    &MnistOptions {
                        limit: *limit,
                        replicate_to: *replicate_to,
                    },
                )?;
                Dataset::single(d.images, d.targets)?
            }
            DataSection::Csv {
                path,
                has_header,
                label,
                classes,
            } => {
                let (x, y) = load_csv::<f64>(
                    &self.resolve(path),
                    &CsvOptions {
                        has_header: *has_header,
                        label: label.clone(),
                        classes: *classes,
                    },
                )?;
                Dataset::single(x, y)?
            }
            DataSection::Partitioned { dir } => self.load_partitioned(&self.resolve(dir))?,
        };
        self.check_outputs(&data)?;
        Ok(data)
    }

    fn manifest(&self, dir: &Path) -> Result<PartitionManifest, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: PartitionManifest = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.nodes != self.topology.nodes {
            return Err(ConfigError::Invalid(format!(
                "{} was partitioned for {} nodes, config has {}",
                dir.display(),
                m.nodes,
                self.topology.nodes
            ))
            .into());
        }
        Ok(m)
    }

    fn read_matrix(path: &Path) -> Result<Matrix<f64>, DataError> {
        Ok(load_csv_matrix(path)?)
    }

    fn load_partitioned(&self, dir: &Path) -> Result<Dataset<f64>, DataError> {
        let m = self.manifest(dir)?;
        let mut x_steps = Vec::new();
        let mut y_steps = Vec::new();
        for c in 0..m.timesteps {
            let blocks: Vec<Matrix<f64>> = (1..=m.nodes as PartyId)
                .map(|id| Self::read_matrix(&dir.join(node_file(id, c))))
                .collect::<Result<_, _>>()?;
            x_steps.push(Matrix::hstack(&blocks)?);
            y_steps.push(Self::read_matrix(&dir.join(label_file(c)))?);
        }
        Ok(Dataset::new(x_steps, y_steps)?)
    }

    /// Session parameters and private inputs of one party. With partitioned
    /// data each party reads only its own files.
    pub fn load_party(&self, id: PartyId) -> Result<(SessionParams, PartyData), DataError> {
        if id as usize > self.topology.nodes {
            return Err(ConfigError::Invalid(format!("party {id} is not part of a {}-node topology", self.topology.nodes)).into());
        }
        if let DataSection::Partitioned { dir } = &self.data {
            let dir = self.resolve(dir);
            let m = self.manifest(&dir)?;
            let params = self.session_params(m.samples, m.features, m.timesteps);
            let data = if id == AGGREGATOR {
                let y_steps = (0..m.timesteps)
                    .map(|c| Self::read_matrix(&dir.join(label_file(c))))
                    .collect::<Result<_, _>>()?;
                PartyData::Aggregator(AggInput { y_steps })
            } else {
                let x_steps = (0..m.timesteps)
                    .map(|c| Self::read_matrix(&dir.join(node_file(id, c))))
                    .collect::<Result<_, _>>()?;
                PartyData::Node(NodeInput { id, x_steps })
            };
            return Ok((params, data));
        }
        let data = self.load_dataset()?;
        let params = self.session_params(data.samples(), data.features(), data.timesteps());
        if id == AGGREGATOR {
            return Ok((params, PartyData::Aggregator(AggInput { y_steps: data.y_steps })));
        }
        let plan = self.plan(data.features())?;
        let mut slices = data.partition(&plan)?;
        let x_steps = slices.swap_remove(id as usize - 1);
        Ok((params, PartyData::Node(NodeInput { id, x_steps })))
    }
}

/// Writes per-party CSV files, the plan and a manifest into `dir`.
pub fn write_partitions(
    data: &Dataset<f64>,
    plan: &VerticalPartitionPlan,
    dir: &Path,
) -> Result<PartitionManifest, DataError> {
    let io = |path: &Path, source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let write = |name: String, m: &Matrix<f64>| -> Result<(), DataError> { Ok(write_csv_matrix(&dir.join(name), m)?) };
    for (l, steps) in data.partition(plan)?.iter().enumerate() {
        for (c, x) in steps.iter().enumerate() {
            write(node_file((l + 1) as PartyId, c), x)?;
        }
    }
    for (c, y) in data.y_steps.iter().enumerate() {
        write(label_file(c), y)?;
    }
    let manifest = PartitionManifest {
        samples: data.samples(),
        features: data.features(),
        outputs: data.outputs(),
        timesteps: data.timesteps(),
        nodes: plan.parties(),
    };
    let p = dir.join(PLAN_FILE);
    fs::write(&p, plan.to_text()).map_err(|e| io(&p, e))?;
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, toml::to_string(&manifest).expect("manifest serializes")).map_err(|e| io(&p, e))?;
    Ok(manifest)
}
