use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{ReplicaId, SimTime};

/// Latency and bandwidth of every directed replica-to-replica link.
///
/// An idle link delivers a message of `size` bytes after
/// `base_latency_ms + size / bandwidth_bytes_per_ms + jitter`, with jitter
/// uniform in `[0, jitter_ms)`. Each link transmits one message at a time
/// and delivers in FIFO order, so a busy link adds queueing delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub base_latency_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
    pub jitter_ms: f64,
    pub jitter_seed: u64,
}

impl NetworkModel {
    pub fn new(base_latency_ms: f64, bandwidth_bytes_per_ms: f64) -> Self {
        NetworkModel { base_latency_ms, bandwidth_bytes_per_ms, jitter_ms: 0.0, jitter_seed: 0 }
    }

    pub fn with_jitter(mut self, jitter_ms: f64, jitter_seed: u64) -> Self {
        self.jitter_ms = jitter_ms;
        self.jitter_seed = jitter_seed;
        self
    }

    pub fn transmission_ms(&self, size_bytes: u64) -> f64 {
        size_bytes as f64 / self.bandwidth_bytes_per_ms
    }

    /// Delivery delay over an idle link, without jitter.
    pub fn one_way_ms(&self, size_bytes: u64) -> f64 {
        self.base_latency_ms + self.transmission_ms(size_bytes)
    }
}

impl Default for NetworkModel {
    /// 5 ms one-way latency on 100 Mbit/s links.
    fn default() -> Self {
        NetworkModel::new(5.0, 12_500.0)
    }
}

pub(crate) struct Network {
    model: NetworkModel,
    n: usize,
    rng: ChaCha8Rng,
    link_free: Vec<SimTime>,
    last_arrival: Vec<SimTime>,
}

impl Network {
    pub(crate) fn new(model: NetworkModel, n: usize, seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.jitter_seed ^ seed.rotate_left(32));
        Network {
            model,
            n,
            rng,
            link_free: vec![SimTime::ZERO; n * n],
            last_arrival: vec![SimTime::ZERO; n * n],
        }
    }

    pub(crate) fn model(&self) -> &NetworkModel {
        &self.model
    }

    /// Queues a message on the `from -> to` link and returns its arrival time.
    pub(crate) fn transmit(&mut self, now: SimTime, from: ReplicaId, to: ReplicaId, size_bytes: u64) -> SimTime {
        let link = from.0 as usize * self.n + to.0 as usize;
        let start = now.max(self.link_free[link]);
        let done = start + self.model.transmission_ms(size_bytes);
        self.link_free[link] = done;
        let jitter = if self.model.jitter_ms > 0.0 {
            let unit = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            unit * self.model.jitter_ms
        } else {
            0.0
        };
        let arrival = (done + self.model.base_latency_ms + jitter).max(self.last_arrival[link]);
        self.last_arrival[link] = arrival;
        arrival
    }
}
