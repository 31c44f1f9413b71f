use std::fs;
use std::path::Path;

use log::info;
use privcoll_core::data::Dataset;
use privcoll_core::models::{ModelKind, ModelSpec};
use privcoll_core::oracle::{compare_trajectories, max_increment, train_centralized, CentralConfig, CentralModel};
use privcoll_core::tensor::Matrix;
use privcoll_protocol::audit::{run_audit, AdversarySet, AuditError};
use privcoll_protocol::config::{write_partitions, ConfigError, DataError, PartyData, ProfileName, TrainingConfig, TransportMode};
use privcoll_protocol::engine::{run_aggregator, run_node};
use privcoll_protocol::transport::{connect_mesh, TcpOptions};
use privcoll_protocol::{history, simulate, simulate_tcp, split_inputs, EngineError, NetProfile, PartyId, SessionParams, SimOutcome};
use serde::Serialize;

use crate::Failure;

pub const CONFIG_COPY: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MODEL_FILE: &str = "model.json";

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(c) => c.into(),
            DataError::Core(e) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<privcoll_core::Error> for Failure {
    fn from(e: privcoll_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::BadSpec(_) | AuditError::InvalidAdversarySet { .. } => Failure::Config(e.to_string()),
            AuditError::Data(d) => d.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_history(path: &Path, records: &[history::HistoryRecord]) -> Result<(), Failure> {
    write_file(path, history::to_jsonl(records))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Loads everything and runs all parties in this process.
fn run_local(cfg: &TrainingConfig, tweak: impl FnOnce(&mut SessionParams)) -> Result<(Dataset<f64>, SessionParams, SimOutcome), Failure> {
    let data = cfg.load_dataset()?;
    let plan = cfg.plan(data.features())?;
    let mut params = cfg.session_params(data.samples(), data.features(), data.timesteps());
    tweak(&mut params);
    let (nodes, agg) = split_inputs(&data, &plan)?;
    let net = cfg.net_profile();
    let outcome = match cfg.topology.transport {
        TransportMode::InProcess => simulate(&params, nodes, agg, net),
        TransportMode::Tcp => simulate_tcp(&params, nodes, agg, &cfg.topology.addresses, cfg.fingerprint(), net),
    };
    let outcome = outcome.map_err(|f| {
        Failure::Runtime(format!("{} (after {} completed iterations)", f.error, f.history.len()))
    })?;
    Ok((data, params, outcome))
}

pub fn partition(cfg: &TrainingConfig, out: &Path) -> Result<(), Failure> {
    let data = cfg.load_dataset()?;
    let plan = cfg.plan(data.features())?;
    let m = write_partitions(&data, &plan, out)?;
    println!(
        "wrote {} samples, {} features over {} nodes ({} timesteps) to {}",
        m.samples,
        m.features,
        m.nodes,
        m.timesteps,
        out.display()
    );
    Ok(())
}

fn tcp_options(cfg: &TrainingConfig, id: PartyId) -> Result<TcpOptions, Failure> {
    if cfg.topology.transport != TransportMode::Tcp {
        return Err(ConfigError::Invalid("agg and node need topology.transport = \"tcp\"".into()).into());
    }
    Ok(TcpOptions {
        id,
        addrs: cfg.topology.addresses.clone(),
        fingerprint: cfg.fingerprint(),
        connect_timeout: cfg.timeout(),
    })
}

pub fn agg(cfg: &TrainingConfig, out: &Path) -> Result<(), Failure> {
    let opts = tcp_options(cfg, 0)?;
    let (params, PartyData::Aggregator(input)) = cfg.load_party(0)? else {
        unreachable!("party 0 is the aggregator")
    };
    info!("aggregator listening on {}", opts.addrs[0]);
    let ep = connect_mesh(&opts).map_err(EngineError::from)?.shaped(cfg.net_profile());
    match run_aggregator(&params, input, ep) {
        Ok(outcome) => {
            write_history(&out.join(HISTORY_FILE), &outcome.history)?;
            println!(
                "{} iterations, final loss {:.6e}{}",
                outcome.history.len(),
                outcome.history.last().map_or(f64::NAN, |r| r.loss),
                if outcome.converged { " (converged)" } else { "" }
            );
            Ok(())
        }
        Err(f) => {
            write_history(&out.join(HISTORY_FILE), &f.history)?;
            Err(f.error.into())
        }
    }
}

pub fn node(cfg: &TrainingConfig, id: u16, out: &Path) -> Result<(), Failure> {
    if id == 0 || id as usize > cfg.topology.nodes {
        return Err(Failure::Config(format!("--id must be in 1..={}", cfg.topology.nodes)));
    }
    let opts = tcp_options(cfg, id)?;
    let (params, PartyData::Node(input)) = cfg.load_party(id)? else {
        unreachable!("nonzero ids are nodes")
    };
    let ep = connect_mesh(&opts).map_err(EngineError::from)?.shaped(cfg.net_profile());
    let outcome = run_node(&params, input, ep)?;
    let path = out.join(format!("node{id}_weights.csv"));
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    privcoll_core::data::write_csv_matrix(&path, &outcome.weights)?;
    println!("node {id}: {} iterations, weights in {}", outcome.stats.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct ModelDump {
    kind: String,
    params: Vec<Vec<Vec<f64>>>,
}

fn dump_model(model: &CentralModel<f64>, spec: &ModelSpec) -> ModelDump {
    ModelDump {
        kind: format!("{:?}", spec.kind),
        params: model
            .params()
            .into_iter()
            .map(|m| (0..m.rows()).map(|i| m.row(i).to_vec()).collect())
            .collect(),
    }
}

pub fn simulate_cmd(cfg: &TrainingConfig, out: &Path) -> Result<(), Failure> {
    let (_, params, outcome) = run_local(cfg, |_| {})?;
    write_history(&out.join(HISTORY_FILE), &outcome.history)?;
    write_file(&out.join(MODEL_FILE), json(&dump_model(&outcome.assemble(&params.spec), &params.spec)))?;
    write_file(&out.join(CONFIG_COPY), cfg.absolutized().to_toml())?;
    let last = outcome.history.last();
    println!(
        "{} iterations, final loss {:.6e}, {} bytes sent{}",
        outcome.iterations(),
        last.map_or(f64::NAN, |r| r.loss),
        outcome.history.iter().map(|r| r.bytes_sent).sum::<u64>(),
        if outcome.converged { " (converged)" } else { "" }
    );
    println!("results in {}", out.display());
    Ok(())
}

pub fn audit(cfg: &TrainingConfig, adversary: &str, out: &Path) -> Result<(), Failure> {
    let set: AdversarySet = adversary.parse()?;
    let report = run_audit(cfg, &set)?;
    let text = report.to_text();
    write_file(&out.join("audit_report.toml"), &text)?;
    print!("{text}");
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("audit failed: {}", report.failures.join("; "))))
    }
}

#[derive(Serialize)]
struct BenchRow {
    profile: String,
    plaintext: bool,
    iterations: usize,
    compute_s: f64,
    comm_s: f64,
    total_s: f64,
    bytes: u64,
    share_bytes: u64,
    expected_share_bytes: u64,
    /// Per iteration, from the one-way latency of the sequential phases.
    predicted_comm_s: f64,
    mean_wall_s: f64,
}

pub fn bench(cfg: &TrainingConfig, profiles: &[ProfileName], out: &Path) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for &profile in profiles {
        let mut c = cfg.clone();
        c.net.profile = profile;
        if profile != ProfileName::Custom {
            c.net.latency_ms = None;
            c.net.throughput_bytes_per_sec = None;
        }
        c.validate()?;
        let net: NetProfile = c.net_profile();
        let (_, params, outcome) = run_local(&c, |_| {})?;
        let h = &outcome.history;
        let n = h.len().max(1) as f64;
        let phases = if params.plaintext { 2.0 } else { 3.0 };
        rows.push(BenchRow {
            profile: format!("{profile:?}").to_lowercase(),
            plaintext: params.plaintext,
            iterations: h.len(),
            compute_s: h.iter().map(|r| r.timing.compute_s).sum(),
            comm_s: h.iter().map(|r| r.timing.comm_s).sum(),
            total_s: outcome.wall_time.as_secs_f64(),
            bytes: h.iter().map(|r| r.bytes_sent).sum(),
            share_bytes: h.iter().map(|r| r.share_bytes).sum(),
            expected_share_bytes: h.iter().map(|r| params.expected_share_bytes(r.batch_size)).sum(),
            predicted_comm_s: phases * net.latency().as_secs_f64(),
            mean_wall_s: h.iter().map(|r| r.timing.wall_s).sum::<f64>() / n,
        });
    }
    let mut table = format!(
        "{:<8} {:>6} {:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>14}\n",
        "profile", "iters", "compute_s", "comm_s", "total_s", "bytes", "share_bytes", "wall/iter", "predicted/iter"
    );
    for r in &rows {
        table.push_str(&format!(
            "{:<8} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>12} {:>12} {:>12.4} {:>14.4}\n",
            r.profile, r.iterations, r.compute_s, r.comm_s, r.total_s, r.bytes, r.share_bytes, r.mean_wall_s, r.predicted_comm_s
        ));
    }
    print!("{table}");
    write_file(&out.join("bench.txt"), &table)?;
    write_file(&out.join("bench.json"), json(&rows))?;
    Ok(())
}

#[derive(Serialize)]
pub struct CompareReport {
    pub plaintext: bool,
    pub iterations: usize,
    pub max_deviation: f64,
    pub max_increment: f64,
    pub tolerance: Option<f64>,
    pub distributed_losses: Vec<f64>,
    pub central_losses: Vec<f64>,
    pub distributed_metric: f64,
    pub central_metric: f64,
    /// "accuracy" for classifiers, "mse" otherwise.
    pub metric: String,
    pub passed: bool,
}

/// Accuracy for classifiers, mean squared error otherwise, on the last step.
fn metric(model: &CentralModel<f64>, spec: &ModelSpec, data: &Dataset<f64>) -> Result<(String, f64), Failure> {
    let pred = model.predict(&data.x_steps)?;
    let (p, y) = (pred.last().expect("a timestep"), data.y_steps.last().expect("a timestep"));
    let classify = !matches!(spec.kind, ModelKind::Linear) && spec.kind != ModelKind::Recurrent;
    if classify {
        let hits = if y.cols() > 1 {
            p.argmax_rows().iter().zip(y.argmax_rows()).filter(|(a, b)| **a == *b).count()
        } else {
            p.as_slice().iter().zip(y.as_slice()).filter(|(a, b)| (**a >= 0.5) == (**b >= 0.5)).count()
        };
        Ok(("accuracy".into(), hits as f64 / y.rows() as f64))
    } else {
        let d = p.sub(y)?;
        Ok(("mse".into(), d.as_slice().iter().map(|v| v * v).sum::<f64>() / d.as_slice().len() as f64))
    }
}

pub fn compare(cfg: &TrainingConfig, out: &Path) -> Result<(), Failure> {
    let (data, params, outcome) = run_local(cfg, |p| p.record_trajectory = true)?;
    let plan = cfg.plan(data.features())?;
    let central = train_centralized(
        &data,
        &params.spec,
        &CentralConfig {
            learning_rate: params.learning_rate,
            batch_size: params.batch_size,
            max_epochs: params.max_epochs,
            max_iterations: params.max_iterations,
            tol: params.tol,
            seed: params.seed,
            node_sizes: plan.sizes(),
            record_weights: true,
        },
    )?;
    let traj: &[Matrix<f64>] = outcome.trajectory.as_deref().expect("trajectory recorded");
    let n = traj.len().min(central.weights.len());
    let devs = compare_trajectories(&central.weights[..n], &traj[..n])?;
    let max_dev = devs.iter().copied().fold(0.0, f64::max);
    let tolerance = params.plaintext.then_some(match params.spec.kind {
        ModelKind::Linear | ModelKind::Logistic => 1e-12,
        _ => 1e-10,
    });
    let (name, dist_metric) = metric(&outcome.assemble(&params.spec), &params.spec, &data)?;
    let (_, central_metric) = metric(&central.model, &params.spec, &data)?;
    let passed = central.iterations == outcome.iterations() && tolerance.is_none_or(|t| max_dev <= t);
    let report = CompareReport {
        plaintext: params.plaintext,
        iterations: outcome.iterations(),
        max_deviation: max_dev,
        max_increment: max_increment(&devs),
        tolerance,
        distributed_losses: outcome.history.iter().map(|r| r.loss).collect(),
        central_losses: central.losses.clone(),
        distributed_metric: dist_metric,
        central_metric,
        metric: name.clone(),
        passed,
    };
    write_file(&out.join("compare.json"), json(&report))?;
    println!(
        "{} iterations: max |W_dist - W_central| = {:.3e}, max increment {:.3e}; {name} {:.4} (distributed) vs {:.4} (centralized)",
        report.iterations, report.max_deviation, report.max_increment, dist_metric, central_metric
    );
    if passed {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "distributed run deviates from the centralized trainer ({} vs {} iterations, deviation {:.3e})",
            outcome.iterations(),
            central.iterations,
            max_dev
        )))
    }
}
