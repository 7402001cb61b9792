//! Deterministic event-driven simulation core: virtual clock, ordered event
//! queue and seedable random streams.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Virtual simulation time in integer nanoseconds.
///
/// Slot edges of both supported numerologies (250 000 ns and 125 000 ns) are
/// exactly representable; symbol boundaries inside a slot are obtained by
/// proportional rounding so slot edges stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventHandle {
    time: SimTime,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot schedule event at {requested} before current clock {clock}")]
pub struct PastEventError {
    pub requested: SimTime,
    pub clock: SimTime,
}

/// Statistics returned by [`EventQueue::run_until`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub events_executed: u64,
    pub final_clock: SimTime,
}

/// Time-ordered event queue with FIFO tie-breaking at equal timestamps.
///
/// Pop order is `(time, sequence)` lexicographic; the sequence number is
/// strictly increasing at insertion, so two events scheduled for the same
/// instant run in insertion order.
#[derive(Debug)]
pub struct EventQueue<A> {
    entries: BTreeMap<(SimTime, u64), A>,
    next_seq: u64,
    clock: SimTime,
    executed: u64,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        EventQueue {
            entries: BTreeMap::new(),
            next_seq: 0,
            clock: SimTime::ZERO,
            executed: 0,
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn events_executed(&self) -> u64 {
        self.executed
    }

    /// Schedules `action` to run once the clock reaches `at`.
    pub fn schedule(&mut self, at: SimTime, action: A) -> Result<EventHandle, PastEventError> {
        if at < self.clock {
            return Err(PastEventError {
                requested: at,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert((at, seq), action);
        Ok(EventHandle { time: at, seq })
    }

    /// Cancels a pending event. Returns true if it was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.entries.remove(&(handle.time, handle.seq)).is_some()
    }

    /// Pops the next event with time <= `end`, advancing the clock to it.
    pub fn pop_due(&mut self, end: SimTime) -> Option<(SimTime, A)> {
        let key = *self.entries.keys().next()?;
        if key.0 > end {
            return None;
        }
        let action = self.entries.remove(&key).expect("key just observed");
        self.clock = key.0;
        self.executed += 1;
        Some((key.0, action))
    }

    /// Settles the clock after a run loop has drained all events due by `end`:
    /// the clock lands on `end` unless the queue ran dry after executing at
    /// least one event, in which case it stays on the last event time.
    pub fn finish_run(&mut self, end: SimTime) {
        if self.executed == 0 || !self.entries.is_empty() {
            self.clock = self.clock.max(end);
        }
        // else: queue drained, clock remains min(end, last event time)
    }

    /// Executes all events with time <= `end` through `handler`.
    pub fn run_until(&mut self, end: SimTime, mut handler: impl FnMut(SimTime, A)) -> RunStats {
        let before = self.executed;
        while let Some((t, action)) = self.pop_due(end) {
            handler(t, action);
        }
        self.finish_run(end);
        RunStats {
            events_executed: self.executed - before,
            final_clock: self.clock,
        }
    }
}

/// Derives a 64-bit stream id from a named domain and a pair of node ids,
/// so every (module, link) pair gets its own decorrelated random stream.
pub fn stream_id(domain: &str, a: u32, b: u32) -> u64 {
    // FNV-1a over the domain name, then splitmix over the ids.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in domain.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    splitmix64(splitmix64(h ^ u64::from(a)) ^ u64::from(b))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seedable random stream: identical (seed, stream-id) pairs yield identical
/// draw sequences, distinct stream ids are decorrelated.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mixed = splitmix64(master_seed ^ splitmix64(stream));
        RandomStream {
            rng: ChaCha8Rng::seed_from_u64(mixed),
        }
    }

    /// Uniform deviate in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Gaussian deviate with the given mean and standard deviation (sigma >= 0).
    pub fn normal(&mut self, mean: f64, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return mean;
        }
        Normal::new(mean, sigma)
            .expect("finite sigma")
            .sample(&mut self.rng)
    }
}
