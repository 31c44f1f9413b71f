//! What a coalition of honest-but-curious parties can learn.
//!
//! Three checks: the rank-based ε bound (a coalition that knows XXᵀ can only
//! pin X down to one of r! orthogonal factorizations), the simulator
//! recursions for linear regression (the coalition's view can be replayed
//! from its own inputs plus the party knowledge set), and the collusion
//! boundary (s−1 nodes plus the aggregator recover the last node's
//! products by subtraction).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use log::info;
use nalgebra::{DMatrix, SymmetricEigen};
use privcoll_core::data::{Dataset, VerticalPartitionPlan};
use privcoll_core::models::ModelSpec;
use privcoll_core::ring::RingParams;
use privcoll_core::tensor::Matrix;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::config::TrainingConfig;
use crate::engine::{simulate, split_inputs, EngineError, SessionParams, Views};
use crate::transport::{NetProfile, PartyId, AGGREGATOR};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("adversary set {set} holds {held} of {nodes} nodes; the analysis needs fewer than s - 1")]
    InvalidAdversarySet { set: String, held: usize, nodes: usize },
    #[error("bad adversary specification {0:?}: use a comma list of \"agg\" and node ids")]
    BadSpec(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Core(#[from] privcoll_core::Error),
    #[error(transparent)]
    Data(#[from] crate::config::DataError),
}

/// log10 of the bound ε ≤ 1/r!.
pub fn epsilon_bound(r: usize) -> f64 {
    if r <= 1 {
        return 0.0;
    }
    -ln_gamma(r as f64 + 1.0) / std::f64::consts::LN_10
}

/// Smallest rank whose bound reaches 10^`exponent` (exponent < 0).
pub fn rank_for_privacy(exponent: f64) -> usize {
    (1..).find(|&r| epsilon_bound(r) <= exponent).expect("bound decreases without limit")
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Count of singular values above `rank_tol · σ_max`; the default tolerance
/// is 1e−8 · max(m, n).
pub fn numerical_rank(x: &Matrix<f64>, rank_tol: Option<f64>) -> usize {
    if x.rows() == 0 || x.cols() == 0 {
        return 0;
    }
    let tol = rank_tol.unwrap_or(1e-8 * x.rows().max(x.cols()) as f64);
    let sv = to_na(x).singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// log10 of the number of orthogonal-column factorizations of a rank-r Gram
/// matrix, r!.
pub fn eigen_reconstruction_count(r: usize) -> f64 {
    -epsilon_bound(r)
}

/// A = BBᵀ split as UΛUᵀ.
#[derive(Debug, Clone)]
pub struct EigenAnalysis {
    pub a: Matrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column j belongs to `eigenvalues[j]`.
    pub eigenvectors: Matrix<f64>,
    pub rank: usize,
}

/// Largest r for which [`EigenAnalysis::reconstructions`] enumerates.
pub const MAX_ENUMERATED_RANK: usize = 8;

impl EigenAnalysis {
    pub fn new(a: &Matrix<f64>) -> Result<Self, AuditError> {
        if a.rows() != a.cols() {
            return Err(privcoll_core::Error::ShapeMismatch {
                op: "eigen_analysis",
                left: a.shape(),
                right: a.shape(),
            }
            .into());
        }
        let eig = SymmetricEigen::new(to_na(a));
        let mut order: Vec<usize> = (0..a.rows()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = Matrix::from_fn(a.rows(), a.rows(), |i, j| eig.eigenvectors[(i, order[j])]);
        let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let tol = 1e-8 * a.rows().max(1) as f64 * top;
        let rank = eigenvalues.iter().filter(|&&l| l > tol && l > 0.0).count();
        Ok(Self {
            a: a.clone(),
            eigenvalues,
            eigenvectors,
            rank,
        })
    }

    /// Smallest eigenvalue relative to the largest magnitude.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let scale = self.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        self.eigenvalues.last().is_none_or(|&l| l >= -rel_tol * scale)
    }

    /// U_r Λ_r^{1/2}, an m × r factor with BBᵀ = A.
    pub fn factor(&self) -> Matrix<f64> {
        Matrix::from_fn(self.a.rows(), self.rank, |i, j| {
            self.eigenvectors[(i, j)] * self.eigenvalues[j].max(0.0).sqrt()
        })
    }

    /// Every column ordering of [`EigenAnalysis::factor`].
    pub fn reconstructions(&self) -> Result<Vec<Matrix<f64>>, AuditError> {
        if self.rank > MAX_ENUMERATED_RANK {
            return Err(AuditError::Unsupported(format!(
                "enumerating {}! factorizations is not feasible",
                self.rank
            )));
        }
        let f = self.factor();
        Ok((0..self.rank)
            .permutations(self.rank)
            .map(|perm| Matrix::from_fn(f.rows(), self.rank, |i, j| f[(i, perm[j])]))
            .collect())
    }

    /// ‖BBᵀ − A‖_max.
    pub fn residual(&self, b: &Matrix<f64>) -> Result<f64, AuditError> {
        Ok(b.matmul_t(b)?.max_abs_diff(&self.a)?)
    }
}

/// A coalition: possibly the aggregator plus some local nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversarySet {
    pub aggregator: bool,
    pub nodes: BTreeSet<PartyId>,
}

impl AdversarySet {
    pub fn aggregator_only() -> Self {
        Self {
            aggregator: true,
            nodes: BTreeSet::new(),
        }
    }

    pub fn with_nodes(aggregator: bool, nodes: impl IntoIterator<Item = PartyId>) -> Self {
        Self {
            aggregator,
            nodes: nodes.into_iter().collect(),
        }
    }

    /// Nodes outside the coalition, in id order.
    pub fn honest(&self, s: usize) -> Vec<PartyId> {
        (1..=s as PartyId).filter(|l| !self.nodes.contains(l)).collect()
    }

    /// Whether the coalition is inside t < s − 1.
    pub fn within_regime(&self, s: usize) -> bool {
        self.nodes.len() + 1 < s
    }

    pub fn check(&self, s: usize) -> Result<(), AuditError> {
        if let Some(&bad) = self.nodes.iter().find(|&&l| l == AGGREGATOR || l as usize > s) {
            return Err(AuditError::BadSpec(format!("node {bad} is not one of 1..={s}")));
        }
        if !self.within_regime(s) {
            return Err(AuditError::InvalidAdversarySet {
                set: self.to_string(),
                held: self.nodes.len(),
                nodes: s,
            });
        }
        Ok(())
    }
}

impl fmt::Display for AdversarySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .aggregator
            .then(|| "agg".to_string())
            .into_iter()
            .chain(self.nodes.iter().map(|l| l.to_string()))
            .collect();
        if parts.is_empty() {
            f.write_str("{}")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for AdversarySet {
    type Err = AuditError;

    /// `"agg,1,2"`; node ids are 1-based.
    fn from_str(s: &str) -> Result<Self, AuditError> {
        let mut set = AdversarySet::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok.eq_ignore_ascii_case("agg") {
                set.aggregator = true;
            } else {
                let id: PartyId = tok.trim_start_matches(['s', 'S']).parse().map_err(|_| AuditError::BadSpec(s.into()))?;
                if id == AGGREGATOR {
                    return Err(AuditError::BadSpec(s.into()));
                }
                set.nodes.insert(id);
            }
        }
        if !set.aggregator && set.nodes.is_empty() {
            return Err(AuditError::BadSpec(s.into()));
        }
        Ok(set)
    }
}

/// Everything a coalition can derive, materialized from a run's inputs and
/// coefficients.
#[derive(Debug, Clone)]
pub struct PartyKnowledge {
    pub adversary: AdversarySet,
    pub honest: Vec<PartyId>,
    /// The coalition's own (id, X^l, W^l).
    pub own: Vec<(PartyId, Matrix<f64>, Matrix<f64>)>,
    /// Σ_l X^lW^l over all nodes.
    pub xw: Matrix<f64>,
    /// z1 = Σ X^lW^l over honest nodes.
    pub z1: Matrix<f64>,
    /// z2 = Σ X^l(X^l)ᵀ over honest nodes.
    pub z2: Matrix<f64>,
    /// z3 = XXᵀ.
    pub z3: Matrix<f64>,
}

impl PartyKnowledge {
    pub fn shapes(&self) -> [(&'static str, (usize, usize)); 4] {
        [
            ("xw", self.xw.shape()),
            ("z1", self.z1.shape()),
            ("z2", self.z2.shape()),
            ("z3", self.z3.shape()),
        ]
    }
}

/// `parts[l-1]` and `weights[l-1]` are node l's X^l and W^l.
pub fn build_party_knowledge(
    parts: &[Matrix<f64>],
    weights: &[Matrix<f64>],
    adversary: &AdversarySet,
) -> Result<PartyKnowledge, AuditError> {
    let s = parts.len();
    if weights.len() != s || s == 0 {
        return Err(privcoll_core::Error::LengthMismatch(s, weights.len()).into());
    }
    adversary.check(s)?;
    let honest = adversary.honest(s);
    let m = parts[0].rows();
    let k = weights[0].cols();
    let mut xw = Matrix::zeros(m, k);
    let mut z1 = Matrix::zeros(m, k);
    let mut z2 = Matrix::zeros(m, m);
    let mut own = Vec::new();
    for (l, (x, w)) in parts.iter().zip(weights).enumerate() {
        let id = (l + 1) as PartyId;
        let p = x.matmul(w)?;
        xw.add_assign(&p)?;
        if honest.contains(&id) {
            z1.add_assign(&p)?;
            z2.add_assign(&x.matmul_t(x)?)?;
        } else {
            own.push((id, x.clone(), w.clone()));
        }
    }
    let x = Matrix::hstack(parts)?;
    let z3 = x.matmul_t(&x)?;
    Ok(PartyKnowledge {
        adversary: adversary.clone(),
        honest,
        own,
        xw,
        z1,
        z2,
        z3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// The coalition is a set of nodes; the aggregator is honest.
    NodesOnly,
    /// The aggregator is in the coalition.
    WithAggregator,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRealReport {
    pub mode: SimMode,
    pub iterations: usize,
    /// max |Σ_SIM − Σ_REAL| per iteration.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// Inputs of a SIM/REAL comparison. The REAL run is full-batch linear
/// regression without bias or regularization, in plaintext mode.
#[derive(Debug, Clone)]
pub struct SimRealInput<'a> {
    pub data: &'a Dataset<f64>,
    pub plan: &'a VerticalPartitionPlan,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub adversary: &'a AdversarySet,
}

/// Session parameters of the REAL run.
pub fn sim_real_params(input: &SimRealInput<'_>) -> SessionParams {
    let m = input.data.samples();
    SessionParams {
        spec: ModelSpec::linear(input.data.outputs()).with_bias(false),
        learning_rate: input.learning_rate,
        batch_size: m,
        max_epochs: input.iterations,
        max_iterations: Some(input.iterations),
        tol: 0.0,
        seed: input.seed,
        ring: RingParams::default(),
        nodes: input.plan.parties(),
        samples: m,
        features: input.data.features(),
        timesteps: 1,
        plaintext: true,
        timeout: std::time::Duration::from_secs(30),
        record_trajectory: false,
        record_views: true,
    }
}

/// Runs REAL through the protocol and SIM through the simulator recursions,
/// then compares the reconstructed sums Σ^(i) iteration by iteration.
///
/// With the aggregator in the coalition, SIM starts from Σ^(0) and follows
/// Σ^(i) = Σ^(i−1) − α z3 Δ^(i−1). Without it, SIM keeps the honest part
/// μ^(i) = μ^(i−1) − α z2 Δ^(i−1) and adds the coalition's own products,
/// whose coefficients it updates with the simulated Δ.
pub fn sim_real_check(input: &SimRealInput<'_>) -> Result<SimRealReport, AuditError> {
    let data = input.data;
    if data.timesteps() != 1 {
        return Err(AuditError::Unsupported("the simulator covers linear regression only".into()));
    }
    let s = input.plan.parties();
    input.adversary.check(s)?;
    let params = sim_real_params(input);
    let (nodes, agg) = split_inputs(data, input.plan)?;
    let parts: Vec<Matrix<f64>> = nodes.iter().map(|n| n.x_steps[0].clone()).collect();
    let real = simulate(&params, nodes, agg, NetProfile::lan()).map_err(|f| f.error)?;
    let views = real.views.expect("views were recorded");

    // REAL sums in sample order
    let real_sums: Vec<Matrix<f64>> = views
        .batches
        .iter()
        .zip(&views.sums)
        .map(|(rows, sums)| {
            let mut inv = vec![0; rows.len()];
            for (pos, &r) in rows.iter().enumerate() {
                inv[r] = pos;
            }
            sums[0].row_slice(&inv)
        })
        .collect::<Result<_, _>>()?;

    let y = &data.y_steps[0];
    let m = data.samples() as f64;
    let alpha = input.learning_rate;
    let init: Vec<Matrix<f64>> = parts
        .iter()
        .enumerate()
        .map(|(l, x)| params.initial_block((l + 1) as PartyId, x.cols()))
        .collect();
    let know = build_party_knowledge(&parts, &init, input.adversary)?;
    let delta_of = |sigma: &Matrix<f64>| -> Result<Matrix<f64>, AuditError> { Ok(sigma.sub(y)?.scale(1.0 / m)) };

    let mut sim_sums = Vec::with_capacity(input.iterations);
    let mode = if input.adversary.aggregator {
        let mut sigma = know.xw.clone();
        for _ in 0..real_sums.len() {
            let delta = delta_of(&sigma)?;
            sim_sums.push(sigma.clone());
            sigma.sub_scaled_assign(alpha, &know.z3.matmul(&delta)?)?;
        }
        SimMode::WithAggregator
    } else {
        let mut mu = know.z1.clone();
        let mut own: Vec<(Matrix<f64>, Matrix<f64>)> = know.own.iter().map(|(_, x, w)| (x.clone(), w.clone())).collect();
        for _ in 0..real_sums.len() {
            let mut sigma = mu.clone();
            for (x, w) in &own {
                sigma.add_assign(&x.matmul(w)?)?;
            }
            let delta = delta_of(&sigma)?;
            sim_sums.push(sigma);
            mu.sub_scaled_assign(alpha, &know.z2.matmul(&delta)?)?;
            for (x, w) in &mut own {
                let g = x.t_matmul(&delta)?;
                w.sub_scaled_assign(alpha, &g)?;
            }
        }
        SimMode::NodesOnly
    };
    let deviations: Vec<f64> = sim_sums
        .iter()
        .zip(&real_sums)
        .map(|(a, b)| a.max_abs_diff(b))
        .collect::<Result<_, _>>()?;
    Ok(SimRealReport {
        mode,
        iterations: deviations.len(),
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        deviations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CollusionOutcome {
    pub colluders: String,
    /// The honest node whose products the coalition tries to recover.
    pub target: PartyId,
    pub within_proven_regime: bool,
    /// Iteration and timestep pairs compared.
    pub checked: usize,
    /// How many of them matched the target's encoded products exactly.
    pub recovered: usize,
}

impl CollusionOutcome {
    pub fn all_recovered(&self) -> bool {
        self.checked > 0 && self.recovered == self.checked
    }
}

/// Subtracts the colluding nodes' own encoded products from the ring total
/// the aggregator reconstructs, and compares the rest with the lowest-id
/// honest node's secret. Only the aggregator sees that total, so without it
/// the coalition has nothing to subtract from.
pub fn collusion_demo(views: &Views, colluders: &AdversarySet, s: usize) -> Result<CollusionOutcome, AuditError> {
    let honest = colluders.honest(s);
    let target = *honest
        .first()
        .ok_or_else(|| AuditError::BadSpec(format!("{colluders} leaves no honest node")))?;
    if views.totals.is_empty() || views.secrets.len() != s {
        return Err(AuditError::Unsupported("collusion needs a ring-mode run with recorded views".into()));
    }
    let mut checked = 0;
    let mut recovered = 0;
    if colluders.aggregator {
        for (i, totals) in views.totals.iter().enumerate() {
            for (c, total) in totals.iter().enumerate() {
                let mut rest = total.clone();
                for &l in &colluders.nodes {
                    rest = rest.ring_sub(&views.secrets[l as usize - 1][i][c])?;
                }
                checked += 1;
                if rest == views.secrets[target as usize - 1][i][c] {
                    recovered += 1;
                }
            }
        }
    }
    Ok(CollusionOutcome {
        colluders: colluders.to_string(),
        target,
        within_proven_regime: colluders.within_regime(s),
        checked,
        recovered,
    })
}

/// Structured result of `privcoll audit`.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub adversary: String,
    pub nodes: usize,
    pub within_proven_regime: bool,
    pub privacy: PrivacySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeSection>,
    pub sim_real: SimRealSection,
    pub collusion: CollusionOutcome,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrivacySection {
    /// Numerical rank of the honest nodes' feature columns.
    pub rank: usize,
    pub log10_epsilon: f64,
    pub rank_needed_for_1e_minus_40: usize,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct KnowledgeSection {
    pub honest_nodes: Vec<PartyId>,
    pub xw_shape: [usize; 2],
    pub z1_shape: [usize; 2],
    pub z2_shape: [usize; 2],
    pub z3_shape: [usize; 2],
    pub z2_psd: bool,
    pub z3_psd: bool,
    /// Samples used for the m × m matrices.
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRealSection {
    pub performed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SimMode>,
    pub iterations: usize,
    pub samples: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub note: String,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        toml::to_string_pretty(self).expect("report serializes")
    }
}

/// Samples used for the m × m audit matrices and the simulator replay.
pub const AUDIT_SAMPLES: usize = 200;
pub const SIM_REAL_TOLERANCE: f64 = 1e-6;
const SIM_REAL_ITERATIONS: usize = 20;

/// Audits the run a configuration describes against one coalition.
pub fn run_audit(cfg: &TrainingConfig, adversary: &AdversarySet) -> Result<AuditReport, AuditError> {
    let s = cfg.topology.nodes;
    if let Some(&bad) = adversary.nodes.iter().find(|&&l| l as usize > s) {
        return Err(AuditError::BadSpec(format!("node {bad} is not one of 1..={s}")));
    }
    let data = cfg.load_dataset()?;
    let plan = cfg.plan(data.features())?;
    let regime = adversary.within_regime(s);
    let mut failures = Vec::new();

    // the trained run, in the ring, with views kept for the collusion check
    let mut params = cfg.session_params(data.samples(), data.features(), data.timesteps());
    params.plaintext = false;
    params.record_views = true;
    let (nodes, agg) = split_inputs(&data, &plan)?;
    let parts: Vec<Matrix<f64>> = nodes.iter().map(|n| n.x_steps[0].clone()).collect();
    info!("audit: running the protocol with recorded views");
    let run = simulate(&params, nodes, agg, NetProfile::lan()).map_err(|f| f.error)?;
    let views = run.views.as_ref().expect("views were recorded");
    let collusion = collusion_demo(views, adversary, s)?;
    let expect_recovery = adversary.aggregator && !regime;
    if collusion.all_recovered() != expect_recovery {
        failures.push(format!(
            "collusion: {} of {} recovered, expected {}",
            collusion.recovered,
            collusion.checked,
            if expect_recovery { "all" } else { "none" }
        ));
    } else if !expect_recovery && collusion.recovered > 0 {
        failures.push(format!("collusion: {} unexpected exact recoveries", collusion.recovered));
    }

    let honest = adversary.honest(s);
    let honest_x = Matrix::hstack(&honest.iter().map(|&l| parts[l as usize - 1].clone()).collect::<Vec<_>>())?;
    let rank = numerical_rank(&honest_x, None);
    let needed = rank_for_privacy(-40.0);
    let privacy = PrivacySection {
        rank,
        log10_epsilon: epsilon_bound(rank),
        rank_needed_for_1e_minus_40: needed,
        note: format!(
            "rank {needed} gives log10 eps = {:.2}; rank 32 only reaches {:.2}",
            epsilon_bound(needed),
            epsilon_bound(32)
        ),
    };

    let audit_m = data.samples().min(AUDIT_SAMPLES);
    let subset = data.head(audit_m)?;
    let sub_parts = subset.partition(&plan)?;
    let knowledge = if regime {
        let x_steps: Vec<Matrix<f64>> = sub_parts.iter().map(|p| p[0].clone()).collect();
        let know = build_party_knowledge(&x_steps, &run.node_weights, adversary)?;
        let z2_psd = EigenAnalysis::new(&know.z2)?.is_psd(1e-9);
        let z3_psd = EigenAnalysis::new(&know.z3)?.is_psd(1e-9);
        if !(z2_psd && z3_psd) {
            failures.push("knowledge: z2 or z3 is not positive semidefinite".into());
        }
        let shape = |m: &Matrix<f64>| [m.rows(), m.cols()];
        Some(KnowledgeSection {
            honest_nodes: know.honest.clone(),
            xw_shape: shape(&know.xw),
            z1_shape: shape(&know.z1),
            z2_shape: shape(&know.z2),
            z3_shape: shape(&know.z3),
            z2_psd,
            z3_psd,
            samples: audit_m,
        })
    } else {
        None
    };

    let sim_m = data.samples().min(50);
    let sim_real = if !regime {
        SimRealSection {
            performed: false,
            mode: None,
            iterations: 0,
            samples: 0,
            max_deviation: 0.0,
            tolerance: SIM_REAL_TOLERANCE,
            note: "coalition outside the proven regime; not simulated".into(),
        }
    } else if data.timesteps() != 1 {
        SimRealSection {
            performed: false,
            mode: None,
            iterations: 0,
            samples: 0,
            max_deviation: 0.0,
            tolerance: SIM_REAL_TOLERANCE,
            note: "the simulator replays linear regression on static features only".into(),
        }
    } else {
        let sim_data = data.head(sim_m)?;
        let sim_data = Dataset::single(sim_data.x_steps[0].clone(), sim_data.y_steps[0].clone())?;
        let rep = sim_real_check(&SimRealInput {
            data: &sim_data,
            plan: &plan,
            learning_rate: cfg.training.learning_rate.min(0.05),
            iterations: SIM_REAL_ITERATIONS,
            seed: cfg.training.seed,
            adversary,
        })?;
        if rep.max_deviation > SIM_REAL_TOLERANCE {
            failures.push(format!("sim/real deviation {:e} above {SIM_REAL_TOLERANCE:e}", rep.max_deviation));
        }
        SimRealSection {
            performed: true,
            mode: Some(rep.mode),
            iterations: rep.iterations,
            samples: sim_m,
            max_deviation: rep.max_deviation,
            tolerance: SIM_REAL_TOLERANCE,
            note: "linear-regression replay of the coalition's view".into(),
        }
    };

    Ok(AuditReport {
        adversary: adversary.to_string(),
        nodes: s,
        within_proven_regime: regime,
        privacy,
        knowledge,
        sim_real,
        collusion,
        passed: failures.is_empty(),
        failures,
    })
}
