//! Discrete-event engine: virtual clock, ordered event queue and seeded
//! random streams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Simulated time in integer nanoseconds since the start of the run.
///
/// Also used for durations (delays, RTTs, sojourn times).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
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

    /// Rounds half-up to the nearest nanosecond. Negative and NaN inputs
    /// clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        let ns = s * 1e9;
        if ns.is_nan() || ns <= 0.0 {
            SimTime(0)
        } else if ns >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime((ns + 0.5).floor() as u64)
        }
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms / 1e3)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Time needed to put `bytes` on a wire running at `rate_bps`.
    pub fn transmission(bytes: u64, rate_bps: u64) -> SimTime {
        assert!(rate_bps > 0, "link rate must be positive");
        let num = bytes as u128 * 8 * 1_000_000_000;
        let rate = rate_bps as u128;
        SimTime(((num + rate / 2) / rate) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("SimTime subtraction underflow"),
        )
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;

    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0.saturating_mul(rhs))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    fire_time: SimTime,
    sequence: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.sequence == other.sequence
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so the max-heap pops the earliest (time, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_time, other.sequence).cmp(&(self.fire_time, self.sequence))
    }
}

/// Event queue plus virtual clock.
///
/// Events execute in `(fire_time, sequence)` order, where `sequence` is the
/// insertion counter, so equal-time events run first-in first-out.
pub struct Scheduler<E> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Schedules `event` at `now + delay`. A zero delay fires after the
    /// currently executing event returns.
    pub fn schedule(&mut self, delay: SimTime, event: E) -> EventHandle {
        self.schedule_at(self.now + delay, event)
    }

    pub fn schedule_at(&mut self, fire_time: SimTime, event: E) -> EventHandle {
        assert!(
            fire_time >= self.now,
            "cannot schedule in the past ({fire_time} < {})",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry {
            fire_time,
            sequence,
            event,
        });
        EventHandle(sequence)
    }

    /// Disables a pending event. Cancelling an already fired event is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if self.heap.iter().any(|e| e.sequence == handle.0) {
            self.cancelled.insert(handle.0);
        }
    }

    /// Pops the next event if it fires at or before `end`, advancing the
    /// clock to its fire time.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_time > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.sequence) {
                continue;
            }
            self.now = entry.fire_time;
            return Some((entry.fire_time, entry.event));
        }
    }

    /// Runs every event with `fire_time <= end` through `handler`, then
    /// parks the clock at `end`.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, E),
    {
        assert!(end >= self.now, "run_until end precedes the clock");
        while let Some((_, event)) = self.pop_until(end) {
            handler(self, event);
        }
        self.now = end;
        end
    }

    /// Moves the clock forward without firing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.now);
        self.now = t;
    }
}

/// Deterministic random stream keyed by `(seed, run_number, stream_id)`.
///
/// The key fills the ChaCha seed directly, so distinct run numbers give
/// unrelated keystreams while the global seed stays fixed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    run_number: u32,
    stream_id: u32,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, run_number: u32, stream_id: u32) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&run_number.to_le_bytes());
        key[12..16].copy_from_slice(&stream_id.to_le_bytes());
        key[16..].copy_from_slice(b"l4sim-rng-stream");
        RngStream {
            seed,
            run_number,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_number(&self) -> u32 {
        self.run_number
    }

    pub fn stream_id(&self) -> u32 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// True with probability `p` (clamped to `[0, 1]`).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform() < p
        }
    }
}
