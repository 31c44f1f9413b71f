use privcoll_core::seed;
use privcoll_core::tensor::{self, Matrix};
use proptest::prelude::*;
use rand::Rng;

fn random(rows: usize, cols: usize, seed_v: u64) -> Matrix<f64> {
    let mut rng = seed::stream(seed_v, "tensor", &[]);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn naive_product(a: &Matrix<f64>, b: &Matrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; a.rows() * b.cols()];
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for p in 0..a.cols() {
                acc += a[(i, p)] * b[(p, j)];
            }
            out[i * b.cols() + j] = acc;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random(5, 7, 1);
    let b = random(7, 3, 2);
    assert_eq!(a.matmul(&b).unwrap().as_slice(), naive_product(&a, &b).as_slice());
    // t_matmul / matmul_t agree with the explicit transpose
    let c = random(5, 3, 3);
    let at_c = a.t_matmul(&c).unwrap();
    let naive = naive_product(&a.transpose(), &c);
    for (x, y) in at_c.as_slice().iter().zip(&naive) {
        assert!((x - y).abs() < 1e-13);
    }
    let bt = b.transpose();
    let ab_t = a.matmul_t(&bt).unwrap();
    for (x, y) in ab_t.as_slice().iter().zip(naive_product(&a, &b).iter()) {
        assert!((x - y).abs() < 1e-13);
    }
}

#[test]
fn elementwise_ops_match_naive() {
    let a = random(4, 6, 4);
    let b = random(4, 6, 5);
    let sum = a.add(&b).unwrap();
    let diff = a.sub(&b).unwrap();
    let had = a.hadamard(&b).unwrap();
    let sc = a.scale(-1.5);
    for i in 0..4 {
        for j in 0..6 {
            assert_eq!(sum[(i, j)], a[(i, j)] + b[(i, j)]);
            assert_eq!(diff[(i, j)], a[(i, j)] - b[(i, j)]);
            assert_eq!(had[(i, j)], a[(i, j)] * b[(i, j)]);
            assert_eq!(sc[(i, j)], a[(i, j)] * -1.5);
            assert_eq!(a.transpose()[(j, i)], a[(i, j)]);
        }
    }
    let rows = a.row_slice(&[3, 0]).unwrap();
    assert_eq!(rows.row(0), a.row(3));
    assert_eq!(rows.row(1), a.row(0));
}

#[test]
fn softmax_matches_naive_at_small_magnitudes() {
    let z = random(6, 5, 6);
    let s = tensor::softmax_rows(&z);
    for i in 0..6 {
        let denom: f64 = z.row(i).iter().map(|v| v.exp()).sum();
        for j in 0..5 {
            let naive = z[(i, j)].exp() / denom;
            assert!(((s[(i, j)] - naive) / naive).abs() <= 1e-12);
        }
        let total: f64 = s.row(i).iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}

#[test]
fn activation_derivatives_match_central_differences() {
    let h = 1e-5;
    let z = random(3, 4, 7);
    let pairs: [(fn(&Matrix<f64>) -> Matrix<f64>, fn(&Matrix<f64>) -> Matrix<f64>); 2] = [
        (tensor::sigmoid, tensor::sigmoid_prime),
        (tensor::tanh, tensor::tanh_prime),
    ];
    for (f, df) in pairs {
        let analytic = df(&z);
        let fd = f(&z.map(|v| v + h)).sub(&f(&z.map(|v| v - h))).unwrap().scale(0.5 / h);
        for (a, n) in analytic.as_slice().iter().zip(fd.as_slice()) {
            assert!(((a - n) / a).abs() <= 1e-6, "{a} vs {n}");
        }
    }
}

proptest! {
    #[test]
    fn product_transpose_identity(m in 1usize..6, d in 1usize..6, k in 1usize..6, s: u64) {
        let a = random(m, d, s);
        let b = random(d, k, s.wrapping_add(1));
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}
