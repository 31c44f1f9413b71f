use std::time::Duration;

use privcoll_core::data::{gen_sequences, gen_synthetic, Dataset, SequenceSpec, SyntheticSpec, SyntheticTask, VerticalPartitionPlan};
use privcoll_core::models::ModelSpec;
use privcoll_core::oracle::{compare_trajectories, train_centralized, CentralConfig};
use privcoll_core::ring::RingParams;
use privcoll_protocol::engine::{simulate, split_inputs, EngineError, SessionParams};
use privcoll_protocol::NetProfile;

fn params(spec: ModelSpec, data: &Dataset<f64>, nodes: usize, batch: usize, iters: usize) -> SessionParams {
    SessionParams {
        spec,
        learning_rate: 0.1,
        batch_size: batch,
        max_epochs: 1000,
        max_iterations: Some(iters),
        tol: 0.0,
        seed: 7,
        ring: RingParams::default(),
        nodes,
        samples: data.samples(),
        features: data.features(),
        timesteps: data.timesteps(),
        plaintext: false,
        timeout: Duration::from_secs(30),
        record_trajectory: true,
        record_views: false,
    }
}

fn synthetic(task: SyntheticTask, m: usize, n: usize) -> Dataset<f64> {
    let d = gen_synthetic::<f64>(&SyntheticSpec {
        samples: m,
        features: n,
        outputs: 1,
        rank: n,
        noise: 0.1,
        task,
        seed: 3,
    });
    Dataset::single(d.x, d.y).unwrap()
}

fn deviation(p: &SessionParams, data: &Dataset<f64>) -> f64 {
    let plan = VerticalPartitionPlan::contiguous(data.features(), p.nodes).unwrap();
    let (nodes, agg) = split_inputs(data, &plan).unwrap();
    let out = simulate(p, nodes, agg, NetProfile::lan()).unwrap();
    let central = train_centralized(
        data,
        &p.spec,
        &CentralConfig {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            max_iterations: p.max_iterations,
            tol: p.tol,
            seed: p.seed,
            node_sizes: plan.sizes(),
            record_weights: true,
        },
    )
    .unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), central.losses.len());
    let tol = if p.plaintext { 1e-12 } else { 1e-5 };
    for (a, b) in losses.iter().zip(&central.losses) {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "loss {a} vs {b}");
    }
    let dev = compare_trajectories(&central.weights, out.trajectory.as_ref().unwrap()).unwrap();
    dev.into_iter().fold(0.0, f64::max)
}

#[test]
fn linear_shares_track_centralized() {
    let data = synthetic(SyntheticTask::Linear, 120, 9);
    let p = params(ModelSpec::linear(1), &data, 3, 20, 30);
    let d = deviation(&p, &data);
    assert!(d < 1e-4, "{d}");
}

#[test]
fn plaintext_mode_matches_centralized_exactly() {
    let data = synthetic(SyntheticTask::Logistic, 100, 8);
    let mut p = params(ModelSpec::logistic(1), &data, 2, 25, 20);
    p.plaintext = true;
    assert!(deviation(&p, &data) <= 1e-12);
}

#[test]
fn recurrent_plaintext_matches_centralized() {
    let data = gen_sequences::<f64>(&SequenceSpec {
        samples: 60,
        features: 6,
        outputs: 2,
        timesteps: 3,
        hidden: 4,
        noise: 0.05,
        seed: 1,
    });
    let mut p = params(ModelSpec::recurrent(4, 2), &data, 3, 15, 12);
    p.plaintext = true;
    assert!(deviation(&p, &data) <= 1e-10);
    p.plaintext = false;
    assert!(deviation(&p, &data) <= 1e-3);
}

#[test]
fn share_bytes_match_the_closed_form() {
    let data = synthetic(SyntheticTask::Linear, 50, 6);
    for (nodes, width) in [(2usize, 64u32), (3, 32), (4, 64)] {
        let mut p = params(ModelSpec::linear(1), &data, nodes, 10, 5);
        p.ring = RingParams::new(width, 12).unwrap();
        let plan = VerticalPartitionPlan::contiguous(6, nodes).unwrap();
        let (n, a) = split_inputs(&data, &plan).unwrap();
        let out = simulate(&p, n, a, NetProfile::lan()).unwrap();
        for r in &out.history {
            assert_eq!(r.share_bytes, p.expected_share_bytes(10));
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let data = synthetic(SyntheticTask::Linear, 40, 6);
    let p = params(ModelSpec::feed_forward(vec![5], 1), &data, 3, 8, 10);
    let plan = VerticalPartitionPlan::contiguous(6, 3).unwrap();
    let run = || {
        let (n, a) = split_inputs(&data, &plan).unwrap();
        simulate(&p, n, a, NetProfile::lan()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        privcoll_protocol::history::canonical(&a.history),
        privcoll_protocol::history::canonical(&b.history)
    );
    assert_eq!(a.node_weights, b.node_weights);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let data = synthetic(SyntheticTask::Linear, 40, 6);
    let p = params(ModelSpec::linear(1), &data, 3, 8, 2);
    let plan = VerticalPartitionPlan::contiguous(6, 2).unwrap();
    let (n, a) = split_inputs(&data, &plan).unwrap();
    let err = simulate(&p, n, a, NetProfile::lan()).unwrap_err();
    assert!(matches!(err.error, EngineError::Protocol(_)));
}
