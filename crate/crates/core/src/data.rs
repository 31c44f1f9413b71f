//! Dataset ingestion (CSV, MNIST IDX), vertical feature partitioning and
//! synthetic generators.

use std::fs;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{self, domain};
use crate::tensor::{sigmoid_scalar, Matrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Features per timestep and labels per timestep, row-aligned across steps.
/// Non-recurrent data has exactly one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x_steps: Vec<Matrix<T>>,
    pub y_steps: Vec<Matrix<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn single(x: Matrix<T>, y: Matrix<T>) -> Result<Self> {
        Self::new(vec![x], vec![y])
    }

    pub fn new(x_steps: Vec<Matrix<T>>, y_steps: Vec<Matrix<T>>) -> Result<Self> {
        if x_steps.is_empty() || x_steps.len() != y_steps.len() {
            return Err(Error::Dataset("features and labels need the same non-zero step count".into()));
        }
        let (m, n) = x_steps[0].shape();
        let k = y_steps[0].cols();
        for (x, y) in x_steps.iter().zip(&y_steps) {
            if x.shape() != (m, n) || y.shape() != (m, k) {
                return Err(Error::Dataset("steps disagree in shape".into()));
            }
        }
        Ok(Self { x_steps, y_steps })
    }

    pub fn samples(&self) -> usize {
        self.x_steps[0].rows()
    }

    pub fn features(&self) -> usize {
        self.x_steps[0].cols()
    }

    pub fn outputs(&self) -> usize {
        self.y_steps[0].cols()
    }

    pub fn timesteps(&self) -> usize {
        self.x_steps.len()
    }

    /// First `m` samples.
    pub fn head(&self, m: usize) -> Result<Self> {
        let m = m.min(self.samples());
        Self::new(
            self.x_steps.iter().map(|x| x.row_range(0..m)).collect::<Result<_>>()?,
            self.y_steps.iter().map(|y| y.row_range(0..m)).collect::<Result<_>>()?,
        )
    }

    /// Per node, per step feature slices.
    pub fn partition(&self, plan: &VerticalPartitionPlan) -> Result<Vec<Vec<Matrix<T>>>> {
        let per_step: Vec<Vec<Matrix<T>>> = self
            .x_steps
            .iter()
            .map(|x| partition_vertical(x, plan))
            .collect::<Result<_>>()?;
        Ok((0..plan.parties())
            .map(|l| per_step.iter().map(|slices| slices[l].clone()).collect())
            .collect())
    }
}

/// Which column of a CSV file holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// Disjoint contiguous feature ranges, one per local node, in node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalPartitionPlan {
    ranges: Vec<Range<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_column: Option<LabelColumn>,
}

#[derive(Deserialize, Serialize)]
struct PlanFile {
    nodes: usize,
    ranges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_column: Option<LabelColumn>,
}

impl VerticalPartitionPlan {
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidPlan("no nodes".into()));
        }
        let mut next = 0;
        for (l, r) in ranges.iter().enumerate() {
            if r.start != next {
                return Err(Error::InvalidPlan(format!(
                    "node {} starts at feature {} but {} is the first unassigned feature",
                    l + 1,
                    r.start,
                    next
                )));
            }
            if r.end <= r.start {
                return Err(Error::InvalidPlan(format!("node {} has no features", l + 1)));
            }
            next = r.end;
        }
        Ok(Self {
            ranges,
            label_column: None,
        })
    }

    /// Contiguous equal split; the remainder goes to the earlier nodes.
    pub fn contiguous(features: usize, parties: usize) -> Result<Self> {
        if parties == 0 || features < parties {
            return Err(Error::InvalidPlan(format!(
                "cannot give each of {parties} nodes at least one of {features} features"
            )));
        }
        let base = features / parties;
        let extra = features % parties;
        let mut start = 0;
        let ranges = (0..parties)
            .map(|l| {
                let len = base + usize::from(l < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Self::new(ranges)
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        Self::new(
            sizes
                .iter()
                .map(|&d| {
                    let r = start..start + d;
                    start += d;
                    r
                })
                .collect(),
        )
    }

    pub fn with_label_column(mut self, label: LabelColumn) -> Self {
        self.label_column = Some(label);
        self
    }

    pub fn label_column(&self) -> Option<&LabelColumn> {
        self.label_column.as_ref()
    }

    pub fn parties(&self) -> usize {
        self.ranges.len()
    }

    pub fn features(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Parses the plan file format:
    ///
    /// ```text
    /// nodes = 3
    /// ranges = [[0, 262], [262, 523], [523, 784]]
    /// label_column = "label"   # optional; a column name or index
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| Error::InvalidPlan(e.to_string()))?;
        if file.nodes != file.ranges.len() {
            return Err(Error::InvalidPlan(format!(
                "nodes = {} but {} ranges given",
                file.nodes,
                file.ranges.len()
            )));
        }
        let plan = Self::new(file.ranges.iter().map(|[a, b]| *a..*b).collect())?;
        Ok(Self {
            label_column: file.label_column,
            ..plan
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(&PlanFile {
            nodes: self.parties(),
            ranges: self.ranges.iter().map(|r| [r.start, r.end]).collect(),
            label_column: self.label_column.clone(),
        })
        .expect("plan serializes")
    }
}

/// Splits the columns of `x` into the plan's slices.
pub fn partition_vertical<T: Real>(x: &Matrix<T>, plan: &VerticalPartitionPlan) -> Result<Vec<Matrix<T>>> {
    if plan.features() != x.cols() {
        return Err(Error::InvalidPlan(format!(
            "plan covers {} features, data has {}",
            plan.features(),
            x.cols()
        )));
    }
    plan.ranges.iter().map(|r| x.col_range(r.clone())).collect()
}

pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Matrix<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Dataset(format!("label {bad} outside 0..{classes}")));
    }
    Ok(Matrix::from_fn(labels.len(), classes, |i, j| {
        if labels[i] == j {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// Repeats rows cyclically until there are `target` rows: row i + native
/// equals row i.
pub fn replicate_rows<T: Real>(x: &Matrix<T>, target: usize) -> Result<Matrix<T>> {
    if x.rows() == 0 && target > 0 {
        return Err(Error::Dataset("cannot replicate an empty matrix".into()));
    }
    let idx: Vec<usize> = (0..target).map(|i| i % x.rows()).collect();
    x.row_slice(&idx)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an unsigned-byte IDX buffer: returns its dimensions and payload.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::TruncatedFile(format!("IDX header ends before byte {}", at + 4)))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            expected: expected_magic,
            found: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|l| l.checked_add(start).map(|_| l))
        .ok_or_else(|| Error::TruncatedFile(format!("IDX dimensions {dims:?} overflow")))?;
    let body = bytes.get(start..start + len).ok_or_else(|| {
        Error::TruncatedFile(format!(
            "IDX body holds {} of {} bytes",
            bytes.len().saturating_sub(start),
            len
        ))
    })?;
    Ok((dims, body))
}

#[derive(Debug, Clone, Default)]
pub struct MnistOptions {
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
    /// Duplicate samples cyclically up to this many rows.
    pub replicate_to: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MnistData<T> {
    /// m × 784, pixels scaled to [0, 1].
    pub images: Matrix<T>,
    pub labels: Vec<usize>,
    /// m × 10 one-hot labels.
    pub targets: Matrix<T>,
}

/// Loads an IDX image/label pair (plain or gzip-compressed).
pub fn load_mnist_idx<T: Real>(images: &Path, labels: &Path, opts: &MnistOptions) -> Result<MnistData<T>> {
    let img_bytes = read_maybe_gz(images)?;
    let lab_bytes = read_maybe_gz(labels)?;
    let (dims, pixels) = parse_idx(&img_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, raw_labels) = parse_idx(&lab_bytes, IDX_LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            dims[0], ldims[0]
        )));
    }
    let m = opts.limit.map_or(dims[0], |l| l.min(dims[0]));
    let px = dims[1] * dims[2];
    let scale = T::of(1.0 / 255.0);
    let data = pixels[..m * px].iter().map(|&p| T::of(p as f64) * scale).collect();
    let mut images = Matrix::from_vec(m, px, data)?;
    let mut labels: Vec<usize> = raw_labels[..m].iter().map(|&l| l as usize).collect();
    if let Some(target) = opts.replicate_to {
        if target > m {
            images = replicate_rows(&images, target)?;
            labels = (0..target).map(|i| labels[i % m]).collect();
        }
    }
    let targets = one_hot(&labels, 10)?;
    Ok(MnistData {
        images,
        labels,
        targets,
    })
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label: LabelColumn,
    /// One-hot encode integer labels into this many classes.
    pub classes: Option<usize>,
}

/// Reads a ',' separated numeric file into (features, labels).
pub fn load_csv<T: Real>(path: &Path, opts: &CsvOptions) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(b',')
        .from_path(path)?;
    let label_idx = match &opts.label {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !opts.has_header {
                return Err(Error::Dataset("a named label column needs a header row".into()));
            }
            reader
                .headers()?
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Dataset(format!("no column named {name:?}")))?
        }
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Dataset(format!("record {} has {} fields", line + 1, record.len())));
        }
        if label_idx >= record.len() {
            return Err(Error::Dataset(format!("label column {label_idx} out of range")));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Dataset(format!("record {}, field {}: {field:?} is not a number", line + 1, j + 1))
            })?;
            if j == label_idx {
                labels.push(v);
            } else {
                features.push(T::of(v));
            }
        }
    }
    let m = labels.len();
    let n = width.map_or(0, |w| w - 1);
    let x = Matrix::from_vec(m, n, features)?;
    let y = match opts.classes {
        Some(k) => {
            let ints = labels
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Dataset(format!("class label {v} is not a non-negative integer")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            one_hot(&ints, k)?
        }
        None => Matrix::from_vec(m, 1, labels.into_iter().map(T::of).collect())?,
    };
    Ok((x, y))
}

/// Reads a header-less all-numeric CSV file.
pub fn load_csv_matrix<T: Real>(path: &Path) -> Result<Matrix<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Dataset(format!("record {} has {} fields", line + 1, record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Dataset(format!("record {}, field {}: {field:?} is not a number", line + 1, j + 1))
            })?;
            data.push(T::of(v));
        }
        rows += 1;
    }
    Matrix::from_vec(rows, width.unwrap_or(0), data)
}

/// Writes `m` as header-less CSV with round-trip exact decimals.
pub fn write_csv_matrix<T: Real>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.rows() {
        writer.write_record((0..m.cols()).map(|j| format!("{:?}", m[(i, j)].as_f64())))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    Linear,
    Logistic,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub features: usize,
    pub outputs: usize,
    pub rank: usize,
    pub noise: f64,
    pub task: SyntheticTask,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    pub x: Matrix<T>,
    pub y: Matrix<T>,
    pub w_star: Matrix<T>,
}

fn gaussian<T: Real, R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * scale)
    })
}

/// X = A·B with A: m×r, B: r×n Gaussian, so rank X = min(r, m, n); labels
/// come from a planted W* (linear with Gaussian noise, or thresholded
/// Bernoulli draws from σ(XW*) for the logistic task).
pub fn gen_synthetic<T: Real>(spec: &SyntheticSpec) -> SyntheticData<T> {
    let mut rng = seed::stream(spec.seed, domain::DATA, &[0]);
    let r = spec.rank.max(1);
    let a = gaussian::<f64, _>(spec.samples, r, 1.0, &mut rng);
    let b = gaussian::<f64, _>(r, spec.features, 1.0 / (r as f64).sqrt(), &mut rng);
    let x = a.matmul(&b).expect("conformable factors");
    let w_star = gaussian::<f64, _>(spec.features, spec.outputs, 1.0 / (spec.features.max(1) as f64).sqrt(), &mut rng);
    let z = x.matmul(&w_star).expect("conformable");
    let y = match spec.task {
        SyntheticTask::Linear => {
            let noise = gaussian::<f64, _>(z.rows(), z.cols(), spec.noise, &mut rng);
            z.add(&noise).expect("same shape")
        }
        SyntheticTask::Logistic => Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            let v = z[(i, j)];
            let positive = if spec.noise > 0.0 {
                rng.random::<f64>() < sigmoid_scalar(v / spec.noise)
            } else {
                v > 0.0
            };
            if positive {
                1.0
            } else {
                0.0
            }
        }),
    };
    SyntheticData {
        x: x.cast(),
        y: y.cast(),
        w_star: w_star.cast(),
    }
}

#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub samples: usize,
    pub features: usize,
    pub outputs: usize,
    pub timesteps: usize,
    pub hidden: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Random input sequences with targets produced by a planted tanh RNN
/// teacher plus Gaussian noise.
pub fn gen_sequences<T: Real>(spec: &SequenceSpec) -> Dataset<T> {
    let mut rng = seed::stream(spec.seed, domain::DATA, &[1]);
    let n = spec.features.max(1) as f64;
    let hd = spec.hidden.max(1) as f64;
    let w = gaussian::<f64, _>(spec.features, spec.hidden, 1.0 / n.sqrt(), &mut rng);
    let u = gaussian::<f64, _>(spec.hidden, spec.hidden, 0.5 / hd.sqrt(), &mut rng);
    let v = gaussian::<f64, _>(spec.hidden, spec.outputs, 1.0 / hd.sqrt(), &mut rng);
    let mut h = Matrix::<f64>::zeros(spec.samples, spec.hidden);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..spec.timesteps {
        let x = gaussian::<f64, _>(spec.samples, spec.features, 1.0, &mut rng);
        let z = x.matmul(&w).and_then(|a| a.add(&h.matmul(&u)?)).expect("conformable");
        h = z.map(f64::tanh);
        let noise = gaussian::<f64, _>(spec.samples, spec.outputs, spec.noise, &mut rng);
        let y = h.matmul(&v).and_then(|o| o.add(&noise)).expect("conformable");
        xs.push(x.cast());
        ys.push(y.cast());
    }
    Dataset::new(xs, ys).expect("consistent shapes")
}
