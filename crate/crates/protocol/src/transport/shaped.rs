//! Sender-side network emulation: a token bucket limits throughput and a
//! delay queue adds one-way latency before frames reach the real outbox.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use serde::{Deserialize, Serialize};

use super::{Outbox, PartyId, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub latency_ms: f64,
    /// Zero or infinite means unlimited.
    pub throughput_bytes_per_sec: f64,
}

impl NetProfile {
    pub const WAN_LATENCY_MS: f64 = 137.7;
    pub const WAN_THROUGHPUT: f64 = 9.27e6;

    pub fn lan() -> Self {
        Self {
            latency_ms: 0.0,
            throughput_bytes_per_sec: 0.0,
        }
    }

    pub fn wan() -> Self {
        Self {
            latency_ms: Self::WAN_LATENCY_MS,
            throughput_bytes_per_sec: Self::WAN_THROUGHPUT,
        }
    }

    pub fn latency(&self) -> Duration {
        Duration::from_secs_f64(self.latency_ms / 1e3)
    }

    /// Serialization time of `bytes` on the link.
    pub fn transfer_time(&self, bytes: usize) -> Duration {
        if self.throughput_bytes_per_sec > 0.0 && self.throughput_bytes_per_sec.is_finite() {
            Duration::from_secs_f64(bytes as f64 / self.throughput_bytes_per_sec)
        } else {
            Duration::ZERO
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.latency_ms == 0.0 && self.transfer_time(1) == Duration::ZERO
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_ms >= 0.0 && self.latency_ms.is_finite()) {
            return Err(format!("latency_ms must be a non-negative number, got {}", self.latency_ms));
        }
        if !(self.throughput_bytes_per_sec >= 0.0) {
            return Err(format!(
                "throughput_bytes_per_sec must be non-negative, got {}",
                self.throughput_bytes_per_sec
            ));
        }
        Ok(())
    }
}

struct Pending {
    due: Instant,
    dest: PartyId,
    frame: Vec<u8>,
}

pub struct Shaped {
    inner: Arc<dyn Outbox>,
    profile: NetProfile,
    queue: Sender<Pending>,
    /// When the link finishes transmitting everything queued so far.
    link_free: Mutex<Instant>,
    failure: Arc<Mutex<Option<TransportError>>>,
}

impl Shaped {
    pub fn new(inner: Arc<dyn Outbox>, profile: NetProfile) -> Self {
        let (tx, rx) = unbounded::<Pending>();
        let failure = Arc::new(Mutex::new(None));
        let out = inner.clone();
        let fail = failure.clone();
        thread::Builder::new()
            .name("net-shaper".into())
            .spawn(move || {
                // due times are non-decreasing, so FIFO order is preserved
                for p in rx {
                    let now = Instant::now();
                    if p.due > now {
                        thread::sleep(p.due - now);
                    }
                    if let Err(e) = out.deliver(p.dest, p.frame) {
                        fail.lock().expect("lock").get_or_insert(e);
                    }
                }
            })
            .expect("spawn shaper thread");
        Self {
            inner,
            profile,
            queue: tx,
            link_free: Mutex::new(Instant::now()),
            failure,
        }
    }
}

impl Outbox for Shaped {
    fn deliver(&self, dest: PartyId, frame: Vec<u8>) -> Result<(), TransportError> {
        if let Some(e) = self.failure.lock().expect("lock").take() {
            return Err(e);
        }
        let due = {
            let mut free = self.link_free.lock().expect("lock");
            let start = (*free).max(Instant::now());
            *free = start + self.profile.transfer_time(frame.len());
            *free + self.profile.latency()
        };
        self.queue
            .send(Pending { due, dest, frame })
            .map_err(|_| TransportError::Disconnected(dest))
    }

    fn close(&self) {
        // let queued frames drain before the peers hear about the close
        let drained = *self.link_free.lock().expect("lock") + self.profile.latency();
        let now = Instant::now();
        if drained > now {
            thread::sleep(drained - now + Duration::from_millis(1));
        }
        self.inner.close();
    }
}
