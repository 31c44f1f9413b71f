//! s-out-of-s additive secret sharing over Z_2^w.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::RingTensor;
use crate::scalar::RingWord;

/// The s additive shares of one secret; `shares[i]` is destined for node `i + 1`.
#[derive(Debug, Clone)]
pub struct ShareSet<W> {
    shares: Vec<RingTensor<W>>,
}

impl<W: RingWord> ShareSet<W> {
    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn secret_shape(&self) -> (usize, usize) {
        self.shares[0].shape()
    }

    /// Share for 1-based node id `node`.
    pub fn for_node(&self, node: usize) -> &RingTensor<W> {
        &self.shares[node - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RingTensor<W>> {
        self.shares.iter()
    }

    pub fn into_shares(self) -> Vec<RingTensor<W>> {
        self.shares
    }

    /// Ring sum of every share, i.e. the secret.
    pub fn combine(&self) -> Result<RingTensor<W>> {
        RingTensor::ring_sum(self.shares.iter())
    }
}

/// E^l: the sum of all shares node `node_id` received in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareSum<W> {
    pub node_id: usize,
    pub value: RingTensor<W>,
}

/// Splits `secret` into `parties` shares: the first `parties - 1` uniform,
/// the last equal to the secret minus their ring sum.
pub fn shr<W: RingWord, R: Rng + ?Sized>(
    secret: &RingTensor<W>,
    parties: usize,
    rng: &mut R,
) -> Result<ShareSet<W>> {
    if parties < 2 {
        return Err(Error::InvalidPartyCount(parties));
    }
    let (rows, cols) = secret.shape();
    let params = secret.params();
    let mut shares = Vec::with_capacity(parties);
    let mut last: Vec<W> = secret.as_slice().to_vec();
    for _ in 0..parties - 1 {
        let data: Vec<W> = (0..rows * cols).map(|_| W::random(rng)).collect();
        last.iter_mut()
            .zip(&data)
            .for_each(|(acc, r)| *acc = acc.wrapping_sub(r));
        shares.push(RingTensor::from_raw(rows, cols, data, params)?);
    }
    shares.push(RingTensor::from_raw(rows, cols, last, params)?);
    Ok(ShareSet { shares })
}

/// Reconstructs Σ_l E^l from exactly one share sum per node id 1..=s.
pub fn rec<W: RingWord>(share_sums: &[ShareSum<W>], parties: usize) -> Result<RingTensor<W>> {
    let mut slots: Vec<Option<&RingTensor<W>>> = vec![None; parties];
    for s in share_sums {
        if s.node_id == 0 || s.node_id > parties {
            return Err(Error::InvalidPartyCount(s.node_id));
        }
        let slot = &mut slots[s.node_id - 1];
        if slot.is_some() {
            return Err(Error::DuplicateShare(s.node_id));
        }
        *slot = Some(&s.value);
    }
    let present = slots
        .iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(Error::MissingShare(i + 1)))
        .collect::<Result<Vec<_>>>()?;
    RingTensor::ring_sum(present.into_iter())
}
