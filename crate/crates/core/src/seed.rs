//! Deterministic randomness shared by the distributed parties and the
//! centralized oracle.
//!
//! Every random stream is a ChaCha20 generator keyed by SHA-256 over
//! (master seed, domain tag, indices), so a stream is reproducible from its
//! coordinates alone and independent of which process draws it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::scalar::Real;
use crate::tensor::Matrix;

pub mod domain {
    pub const INIT: &str = "init";
    pub const HEAD: &str = "head";
    pub const BATCH: &str = "batch";
    pub const SHARE: &str = "share";
    pub const DATA: &str = "data";
}

pub fn derive_key(master: u64, domain: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}

pub fn stream(master: u64, domain: &str, indices: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_key(master, domain, indices))
}

/// `rows × cols` matrix with entries uniform in (-bound, bound).
pub fn uniform_matrix<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..bound)))
}

/// Initial coefficient block of local node `node_id` (1-based): `d_l × k`
/// uniform in ±1/√fan_in. The centralized trainer rebuilds its full matrix
/// by stacking these blocks in node order.
pub fn init_local_block<T: Real>(seed: u64, node_id: usize, d_l: usize, k: usize, fan_in: usize) -> Matrix<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = stream(seed, domain::INIT, &[node_id as u64]);
    uniform_matrix(d_l, k, bound, &mut rng)
}

/// Epoch-wise sampling without replacement of mini-batch row indices.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    samples: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchSchedule {
    pub fn new(samples: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            samples,
            batch_size: batch_size.clamp(1, samples.max(1)),
            seed,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.div_ceil(self.batch_size)
    }

    /// The batches of one epoch; the last one may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.samples).collect();
        if self.batch_size < self.samples {
            let mut rng = stream(self.seed, domain::BATCH, &[epoch as u64]);
            order.shuffle(&mut rng);
        }
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Iterator over (epoch, batch) for `epochs` epochs.
    pub fn iter(&self, epochs: usize) -> impl Iterator<Item = (usize, Vec<usize>)> + '_ {
        (0..epochs).flat_map(move |e| self.epoch(e).into_iter().map(move |b| (e, b)))
    }
}
