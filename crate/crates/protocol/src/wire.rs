//! Binary message format shared by every transport.
//!
//! A frame is a 16-byte header followed by the payload:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PCML"
//!      4     1  version
//!      5     1  msg_type (1 SHARE, 2 SHARE_SUM, 3 DELTA, 4 CONTROL)
//!      6     4  iteration (u32 LE)
//!     10     2  sender_id (u16 LE, 0 = aggregator)
//!     12     4  payload_len (u32 LE)
//!     16     -  payload
//! ```
//!
//! Tensors inside payloads are `rows: u32, cols: u32` followed by the
//! elements, little-endian and row-major: `w/8` bytes per ring element,
//! 8 bytes per real.

use privcoll_core::ring::{RingParams, RingTensor};
use privcoll_core::rnn::{BpttSignals, RnnDeltaBundle};
use privcoll_core::tensor::Matrix;
use privcoll_core::RingWord;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PCML";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed frame: {0}")]
pub struct MalformedFrame(pub String);

fn malformed(msg: impl Into<String>) -> MalformedFrame {
    MalformedFrame(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Share = 1,
    ShareSum = 2,
    Delta = 3,
    Control = 4,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self, MalformedFrame> {
        Ok(match v {
            1 => MsgType::Share,
            2 => MsgType::ShareSum,
            3 => MsgType::Delta,
            4 => MsgType::Control,
            other => return Err(malformed(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub iteration: u32,
    pub sender: u16,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, iteration: u32, sender: u16, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            iteration,
            sender,
            payload,
        }
    }

    /// Header plus payload: the byte count charged to the sender.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self, MalformedFrame> {
        if frame.len() < HEADER_LEN {
            return Err(malformed(format!("{} bytes is shorter than the header", frame.len())));
        }
        if frame[..4] != MAGIC {
            return Err(malformed(format!("bad magic {:02x?}", &frame[..4])));
        }
        if frame[4] != VERSION {
            return Err(malformed(format!("unsupported version {}", frame[4])));
        }
        let msg_type = MsgType::from_u8(frame[5])?;
        let iteration = u32::from_le_bytes(frame[6..10].try_into().expect("4 bytes"));
        let sender = u16::from_le_bytes(frame[10..12].try_into().expect("2 bytes"));
        let len = u32::from_le_bytes(frame[12..16].try_into().expect("4 bytes")) as usize;
        let payload = &frame[HEADER_LEN..];
        if payload.len() != len {
            return Err(malformed(format!("payload_len {len} but {} bytes follow", payload.len())));
        }
        Ok(Self {
            msg_type,
            iteration,
            sender,
            payload: payload.to_vec(),
        })
    }
}

/// Cursor over a payload.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedFrame> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            malformed(format!(
                "payload ends at {} but {} more bytes were expected at {}",
                self.bytes.len(),
                n,
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, MalformedFrame> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, MalformedFrame> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, MalformedFrame> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, MalformedFrame> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], MalformedFrame> {
        self.take(n)
    }

    fn dims(&mut self, elem: usize) -> Result<(usize, usize, usize), MalformedFrame> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(elem).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| malformed(format!("{rows}x{cols} tensor does not fit the payload")))?;
        Ok((rows, cols, count))
    }

    pub fn matrix(&mut self) -> Result<Matrix<f64>, MalformedFrame> {
        let (rows, cols, count) = self.dims(8)?;
        let data = self
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|e| malformed(e.to_string()))
    }

    pub fn ring<W: RingWord>(&mut self, params: RingParams) -> Result<RingTensor<W>, MalformedFrame> {
        let (rows, cols, count) = self.dims(W::BYTES)?;
        let data = self.take(count * W::BYTES)?.chunks_exact(W::BYTES).map(W::read_le).collect();
        RingTensor::from_raw(rows, cols, data, params).map_err(|e| malformed(e.to_string()))
    }

    /// Fails unless the whole payload was consumed.
    pub fn finish(self) -> Result<(), MalformedFrame> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(malformed(format!("{} trailing payload bytes", self.bytes.len() - self.pos)))
        }
    }
}

pub fn put_matrix(out: &mut Vec<u8>, m: &Matrix<f64>) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_ring<W: RingWord>(out: &mut Vec<u8>, t: &RingTensor<W>) {
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for &w in t.as_slice() {
        w.write_le(out);
    }
}

/// SHARE and SHARE_SUM payload: `step: u32` then one tensor.
pub fn share_payload<W: RingWord>(step: u32, t: &RingTensor<W>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + t.rows() * t.cols() * W::BYTES);
    out.extend_from_slice(&step.to_le_bytes());
    put_ring(&mut out, t);
    out
}

pub fn read_share<W: RingWord>(payload: &[u8], params: RingParams) -> Result<(u32, RingTensor<W>), MalformedFrame> {
    let mut r = Reader::new(payload);
    let step = r.u32()?;
    let t = r.ring(params)?;
    r.finish()?;
    Ok((step, t))
}

/// Plaintext-mode SHARE_SUM payload: `step: u32` then a real tensor.
pub fn plain_sum_payload(step: u32, m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + m.rows() * m.cols() * 8);
    out.extend_from_slice(&step.to_le_bytes());
    put_matrix(&mut out, m);
    out
}

pub fn read_plain_sum(payload: &[u8]) -> Result<(u32, Matrix<f64>), MalformedFrame> {
    let mut r = Reader::new(payload);
    let step = r.u32()?;
    let m = r.matrix()?;
    r.finish()?;
    Ok((step, m))
}

/// DELTA payload.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaPayload {
    /// Δ = ∂J/∂(XW) for the batch.
    Dense(Matrix<f64>),
    /// Per-timestep BPTT signals plus the V and U snapshots.
    Recurrent(RnnDeltaBundle<f64>),
}

const DELTA_DENSE: u8 = 0;
const DELTA_RECURRENT: u8 = 1;

impl DeltaPayload {
    /// Layout: `kind: u8`, then either one tensor (dense) or
    /// `T: u32` followed by T triples (δ_loss, δ_ŷ, δ_h) and V, U.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            DeltaPayload::Dense(d) => {
                out.push(DELTA_DENSE);
                put_matrix(&mut out, d);
            }
            DeltaPayload::Recurrent(b) => {
                out.push(DELTA_RECURRENT);
                let s = &b.signals;
                out.extend_from_slice(&(s.timesteps() as u32).to_le_bytes());
                for c in 0..s.timesteps() {
                    put_matrix(&mut out, &s.loss[c]);
                    put_matrix(&mut out, &s.y_hat[c]);
                    put_matrix(&mut out, &s.h[c]);
                }
                put_matrix(&mut out, &b.v);
                put_matrix(&mut out, &b.u);
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, MalformedFrame> {
        let mut r = Reader::new(payload);
        let out = match r.u8()? {
            DELTA_DENSE => DeltaPayload::Dense(r.matrix()?),
            DELTA_RECURRENT => {
                let t = r.u32()? as usize;
                if t == 0 || t > payload.len() {
                    return Err(malformed(format!("implausible timestep count {t}")));
                }
                let mut signals = BpttSignals {
                    loss: Vec::with_capacity(t),
                    y_hat: Vec::with_capacity(t),
                    h: Vec::with_capacity(t),
                };
                for _ in 0..t {
                    signals.loss.push(r.matrix()?);
                    signals.y_hat.push(r.matrix()?);
                    signals.h.push(r.matrix()?);
                }
                let v = r.matrix()?;
                let u = r.matrix()?;
                DeltaPayload::Recurrent(RnnDeltaBundle { signals, v, u })
            }
            other => return Err(malformed(format!("unknown delta kind {other}"))),
        };
        r.finish()?;
        Ok(out)
    }
}

/// Why the aggregator ended training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StopReason {
    Converged = 0,
    Exhausted = 1,
}

/// Per-iteration send statistics of one party, carried in its final report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterStats {
    /// Header + payload bytes of every frame sent.
    pub bytes_sent: u64,
    /// Ring or real element bytes of SHARE and SHARE_SUM tensors.
    pub share_bytes: u64,
    pub messages: u32,
    /// Local computation time (not compared across runs).
    pub compute_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    /// Rows every node slices for this iteration.
    Batch { epoch: u32, indices: Vec<u32> },
    Stop(StopReason),
    /// Connection handshake: digest of the shared configuration.
    Hello { fingerprint: [u8; 32] },
    HelloAck,
    Reject(String),
    /// A party hit an error; everyone should stop.
    Abort(String),
    /// A node's per-iteration statistics, sent once after STOP.
    Report(Vec<IterStats>),
}

impl Control {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Control::Batch { epoch, indices } => {
                out.push(0);
                out.extend_from_slice(&epoch.to_le_bytes());
                out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
                for i in indices {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
            Control::Stop(reason) => {
                out.push(1);
                out.push(*reason as u8);
            }
            Control::Hello { fingerprint } => {
                out.push(2);
                out.extend_from_slice(fingerprint);
            }
            Control::HelloAck => out.push(3),
            Control::Reject(reason) => {
                out.push(4);
                out.extend_from_slice(reason.as_bytes());
            }
            Control::Abort(reason) => {
                out.push(5);
                out.extend_from_slice(reason.as_bytes());
            }
            Control::Report(stats) => {
                out.push(6);
                out.extend_from_slice(&(stats.len() as u32).to_le_bytes());
                for s in stats {
                    out.extend_from_slice(&s.bytes_sent.to_le_bytes());
                    out.extend_from_slice(&s.share_bytes.to_le_bytes());
                    out.extend_from_slice(&s.messages.to_le_bytes());
                    out.extend_from_slice(&s.compute_ns.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, MalformedFrame> {
        let mut r = Reader::new(payload);
        let text = |r: &mut Reader| -> Result<String, MalformedFrame> {
            let rest = r.bytes(payload.len() - 1)?;
            String::from_utf8(rest.to_vec()).map_err(|_| malformed("reason is not UTF-8"))
        };
        let out = match r.u8()? {
            0 => {
                let epoch = r.u32()?;
                let n = r.u32()? as usize;
                if n.saturating_mul(4) > payload.len() {
                    return Err(malformed(format!("batch of {n} indices does not fit")));
                }
                let indices = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Control::Batch { epoch, indices }
            }
            1 => Control::Stop(match r.u8()? {
                0 => StopReason::Converged,
                1 => StopReason::Exhausted,
                other => return Err(malformed(format!("unknown stop reason {other}"))),
            }),
            2 => Control::Hello {
                fingerprint: r.bytes(32)?.try_into().expect("32 bytes"),
            },
            3 => Control::HelloAck,
            4 => Control::Reject(text(&mut r)?),
            5 => Control::Abort(text(&mut r)?),
            6 => {
                let n = r.u32()? as usize;
                if n.saturating_mul(28) > payload.len() {
                    return Err(malformed(format!("report of {n} iterations does not fit")));
                }
                let stats = (0..n)
                    .map(|_| {
                        Ok(IterStats {
                            bytes_sent: r.u64()?,
                            share_bytes: r.u64()?,
                            messages: r.u32()?,
                            compute_ns: r.u64()?,
                        })
                    })
                    .collect::<Result<_, MalformedFrame>>()?;
                Control::Report(stats)
            }
            other => return Err(malformed(format!("unknown control kind {other}"))),
        };
        r.finish()?;
        Ok(out)
    }
}
