use nalgebra::DMatrix;
use privcoll_core::data::{gen_sequences, gen_synthetic, Dataset, SequenceSpec, SyntheticSpec, SyntheticTask, VerticalPartitionPlan};
use privcoll_core::models::{Activation, AggregatorHead, ModelSpec};
use privcoll_core::oracle::{train_centralized, CentralConfig, CentralModel};
use privcoll_core::rnn::{rnn_train_iteration, RnnAggState, RnnConfig, RnnLocal};
use privcoll_core::seed::{self, BatchSchedule};
use privcoll_core::tensor::Matrix;

fn config(sizes: Vec<usize>, lr: f64, batch: usize, iters: usize, seed_v: u64) -> CentralConfig {
    CentralConfig {
        learning_rate: lr,
        batch_size: batch,
        max_epochs: usize::MAX,
        max_iterations: Some(iters),
        tol: 0.0,
        seed: seed_v,
        node_sizes: sizes,
        record_weights: true,
    }
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn centralized_init_stacks_node_blocks() {
    let sizes = [3, 2, 4];
    let spec = ModelSpec::linear(2);
    let model = CentralModel::<f64>::init(&spec, 1, &sizes, 99).unwrap();
    let blocks: Vec<Matrix<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(l, &d)| seed::init_local_block(99, l + 1, d, 2, 9))
        .collect();
    assert_eq!(model.first_layer(), &Matrix::vstack(&blocks).unwrap());
}

#[test]
fn zero_iterations_return_init() {
    let data = gen_synthetic::<f64>(&SyntheticSpec {
        samples: 10,
        features: 4,
        outputs: 1,
        rank: 4,
        noise: 0.0,
        task: SyntheticTask::Linear,
        seed: 1,
    });
    let ds = Dataset::single(data.x, data.y).unwrap();
    let spec = ModelSpec::linear(1);
    let run = train_centralized(&ds, &spec, &config(vec![2, 2], 0.1, 10, 0, 5)).unwrap();
    assert_eq!(run.iterations, 0);
    assert_eq!(run.weights.len(), 1);
    assert_eq!(run.model.first_layer(), CentralModel::<f64>::init(&spec, 1, &[2, 2], 5).unwrap().first_layer());
}

#[test]
fn gradient_descent_reaches_least_squares() {
    use rand::Rng;
    let mut rng = seed::stream(8, "ols", &[]);
    let xm = Matrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
    let w_star = Matrix::from_fn(5, 1, |i, _| i as f64 - 2.0);
    let ym = xm.matmul(&w_star).unwrap();
    let x = to_na(&xm);
    let y = to_na(&ym);
    let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
    let ds = Dataset::single(xm, ym).unwrap();
    let spec = ModelSpec::linear(1).with_bias(false);
    let run = train_centralized(&ds, &spec, &config(vec![3, 2], 0.5, 20, 5_000, 2)).unwrap();
    let w = to_na(run.model.first_layer());
    assert!((w - ols).norm() <= 1e-6);
}

#[test]
fn separable_logistic_loss_decreases() {
    let x = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0], vec![-2.0, -1.0], vec![-1.0, -2.0]]).unwrap();
    let y = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![0.0], vec![0.0]]).unwrap();
    let ds = Dataset::single(x, y).unwrap();
    let run = train_centralized(&ds, &ModelSpec::logistic(1), &config(vec![1, 1], 0.5, 4, 200, 3)).unwrap();
    for pair in run.losses.windows(2) {
        assert!(pair[1] < pair[0], "{pair:?}");
    }
    assert!(*run.losses.last().unwrap() < 0.05);
}

#[test]
fn single_step_rnn_matches_one_hidden_layer_network() {
    // T=1: the recurrence vanishes and the RNN is X W → σ₁ → V → σ₂.
    let mut rspec = ModelSpec::recurrent(4, 2);
    rspec.output_activation = Activation::Sigmoid;
    let mut agg = RnnAggState::<f64>::init(RnnConfig::from_spec(&rspec, 1).unwrap(), 4);
    let mut nspec = ModelSpec::feed_forward(vec![4], 2);
    nspec.hidden_activation = rspec.hidden_activation;
    nspec.output_activation = Activation::Sigmoid;
    let mut head = AggregatorHead::<f64>::init(&nspec, 4).unwrap();
    let layer = &mut head.layers_mut()[0];
    layer.weights = agg.v.clone();
    layer.bias = agg.b_y.clone();
    *head.first_bias_mut().unwrap() = agg.b_h.clone().unwrap();

    let xw = Matrix::from_fn(3, 4, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
    let y_rnn = agg.rnn_forward(std::slice::from_ref(&xw)).unwrap();
    let y_nn = head.predict(&xw).unwrap();
    assert!(y_rnn[0].max_abs_diff(&y_nn).unwrap() < 1e-15);
}

fn rnn_fixture(seed_v: u64) -> (Dataset<f64>, ModelSpec, VerticalPartitionPlan) {
    let ds = gen_sequences::<f64>(&SequenceSpec {
        samples: 12,
        features: 5,
        outputs: 2,
        timesteps: 2,
        hidden: 3,
        noise: 0.05,
        seed: seed_v,
    });
    (ds, ModelSpec::recurrent(4, 2).with_lambda(0.01), VerticalPartitionPlan::contiguous(5, 2).unwrap())
}

fn run_distributed_rnn(ds: &Dataset<f64>, spec: &ModelSpec, plan: &VerticalPartitionPlan, seed_v: u64, iters: usize) -> Vec<Matrix<f64>> {
    let mut agg = RnnAggState::<f64>::init(RnnConfig::from_spec(spec, ds.timesteps()).unwrap(), seed_v);
    let parts = ds.partition(plan).unwrap();
    let mut nodes: Vec<RnnLocal<f64>> = parts
        .into_iter()
        .enumerate()
        .map(|(l, x_steps)| RnnLocal {
            w: seed::init_local_block(seed_v, l + 1, x_steps[0].cols(), 4, ds.features()),
            x_steps,
        })
        .collect();
    let stack = |nodes: &[RnnLocal<f64>]| Matrix::vstack(&nodes.iter().map(|n| n.w.clone()).collect::<Vec<_>>()).unwrap();
    let mut traj = vec![stack(&nodes)];
    let schedule = BatchSchedule::new(ds.samples(), 5, seed_v);
    for (_, batch) in schedule.iter(usize::MAX).take(iters) {
        rnn_train_iteration(&mut agg, &mut nodes, &ds.y_steps, &batch, 0.2).unwrap();
        traj.push(stack(&nodes));
    }
    traj.push(agg.u.clone());
    traj.push(agg.v.clone());
    traj
}

#[test]
fn distributed_rnn_tracks_centralized_rnn() {
    for seed_v in [1, 2, 3] {
        let (ds, spec, plan) = rnn_fixture(seed_v);
        let dist = run_distributed_rnn(&ds, &spec, &plan, seed_v, 15);
        let run = train_centralized(&ds, &spec, &config(plan.sizes(), 0.2, 5, 15, seed_v)).unwrap();
        assert_eq!(run.weights.len() + 2, dist.len());
        for (c, d) in run.weights.iter().zip(&dist) {
            assert!(c.max_abs_diff(d).unwrap() <= 1e-10);
        }
        let params = run.model.params();
        assert!(params[1].max_abs_diff(&dist[dist.len() - 2]).unwrap() <= 1e-10);
        assert!(params[2].max_abs_diff(&dist[dist.len() - 1]).unwrap() <= 1e-10);
    }
}

#[test]
fn rnn_iteration_is_reproducible() {
    let (ds, spec, plan) = rnn_fixture(5);
    assert_eq!(run_distributed_rnn(&ds, &spec, &plan, 5, 6), run_distributed_rnn(&ds, &spec, &plan, 5, 6));
}

#[test]
fn zero_data_leaves_bias_only_dynamics() {
    let (mut ds, spec, plan) = rnn_fixture(6);
    for x in &mut ds.x_steps {
        *x = Matrix::zeros(x.rows(), x.cols());
    }
    let traj = run_distributed_rnn(&ds, &spec.with_lambda(0.0), &plan, 6, 4);
    for w in &traj[1..5] {
        assert_eq!(w, &traj[0]);
    }
}
