//! Real-thread microbenchmarks of the structures.
//!
//! Every run follows the same protocol: spawn N workers, release them
//! together, let them run through a warmup period, then take a snapshot of
//! the per-worker operation counters, another after the measured duration,
//! and stop everyone through a shared flag. Counters are one padded atomic
//! per worker, written only by its owner, so the hot path never contends on
//! bookkeeping.

mod compare;

pub use compare::{compare, Comparison, ComparisonReport};

use std::hint::black_box;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_utils::{Backoff, CachePadded};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::records::{Record, Source, Structure};
use crate::structures::{McsLock, McsNode, SkipListSet, TreiberStack};

/// Percentages of contains / insert / remove operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpMix {
    pub contains: u32,
    pub insert: u32,
    pub remove: u32,
}

impl Default for OpMix {
    /// Read-heavy 90/5/5.
    fn default() -> Self {
        OpMix {
            contains: 90,
            insert: 5,
            remove: 5,
        }
    }
}

impl OpMix {
    pub fn new(contains: u32, insert: u32, remove: u32) -> Self {
        OpMix {
            contains,
            insert,
            remove,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.contains + self.insert + self.remove;
        if sum != 100 {
            return Err(invalid("mix", format!("percentages must sum to 100, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub structure: Structure,
    pub workers: u32,
    /// Critical-section spin iterations (lock only).
    pub c: u64,
    /// Parallel-section spin iterations (lock and stack).
    pub p: u64,
    /// Node capacity (skip list only).
    pub k: usize,
    pub mix: OpMix,
    /// Keys are drawn from `0..key_range`.
    pub key_range: u64,
    /// Fraction of `key_range` inserted before timing. The stack is
    /// prefilled with that many elements.
    pub prefill: f64,
    pub warmup: Duration,
    pub duration: Duration,
    pub seed: u64,
    pub host_tag: Option<String>,
}

impl BenchConfig {
    pub const DEFAULT_KEY_RANGE: u64 = 100_000;
    pub const DEFAULT_PREFILL: f64 = 0.5;

    pub fn new(structure: Structure, workers: u32) -> Self {
        BenchConfig {
            structure,
            workers,
            c: 0,
            p: 0,
            k: crate::structures::skiplist::DEFAULT_CAPACITY,
            mix: OpMix::default(),
            key_range: Self::DEFAULT_KEY_RANGE,
            prefill: Self::DEFAULT_PREFILL,
            warmup: Duration::from_millis(200),
            duration: Duration::from_secs(1),
            seed: 0,
            host_tag: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            return Err(invalid("N", format!("N >= 1 required, got {}", self.workers)));
        }
        if self.duration.is_zero() {
            return Err(invalid("duration", "duration > 0 required"));
        }
        if !(0.0..=1.0).contains(&self.prefill) {
            return Err(invalid("prefill", format!("prefill in [0, 1] required, got {}", self.prefill)));
        }
        if self.k < 1 {
            return Err(invalid("k", "node capacity k >= 1 required"));
        }
        if self.key_range < 1 || self.key_range > i64::MAX as u64 {
            return Err(invalid("key_range", format!("key range in [1, 2^63) required, got {}", self.key_range)));
        }
        self.mix.validate()
    }

    fn prefill_count(&self) -> u64 {
        (self.prefill * self.key_range as f64).round() as u64
    }

    fn expect(&self, structure: Structure) -> Result<()> {
        self.validate()?;
        if self.structure != structure {
            return Err(invalid(
                "structure",
                format!("this benchmark runs {structure}, config is for {}", self.structure),
            ));
        }
        Ok(())
    }
}

/// Structure-specific tallies over the whole run, warmup included.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStats {
    Lock {
        /// Final value of the counter incremented inside the lock.
        guarded_count: u64,
    },
    Stack {
        prefilled: u64,
        pushes: u64,
        pops: u64,
        empty_pops: u64,
        final_size: u64,
    },
    Set {
        prefilled: u64,
        inserted: u64,
        removed: u64,
        final_size: u64,
        audit_violations: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub config: BenchConfig,
    /// Operations per second over the measured window.
    pub throughput_ops_s: f64,
    pub per_worker_ops_s: Vec<f64>,
    /// Wall time actually measured; `config.duration` is what was asked for.
    pub measured_s: f64,
    /// Operations each worker completed over the whole run, warmup included.
    pub completed: Vec<u64>,
    pub stats: RunStats,
    /// Seconds since the Unix epoch at the end of the run.
    pub timestamp: u64,
}

impl BenchRecord {
    pub fn total_completed(&self) -> u64 {
        self.completed.iter().sum()
    }

    pub fn to_record(&self) -> Record {
        let cfg = &self.config;
        let mut r = Record::new(Source::Bench, cfg.structure, cfg.workers, self.throughput_ops_s);
        match cfg.structure {
            Structure::Mcs => {
                r.c = Some(cfg.c);
                r.p = Some(cfg.p);
            }
            Structure::Treiber => {
                r.p = Some(cfg.p);
                r.key_range = Some(cfg.key_range);
                r.prefill = Some(cfg.prefill);
            }
            Structure::Skiplist => {
                r.k = Some(cfg.k as u32);
                r.mix_contains = Some(cfg.mix.contains);
                r.mix_insert = Some(cfg.mix.insert);
                r.mix_remove = Some(cfg.mix.remove);
                r.key_range = Some(cfg.key_range);
                r.prefill = Some(cfg.prefill);
            }
        }
        r.duration_s = Some(self.measured_s);
        r.seed = Some(cfg.seed);
        r.host_tag = cfg.host_tag.clone();
        r
    }
}

/// Spins for exactly `iterations` rounds of work the optimizer must keep.
#[inline]
pub fn spin(iterations: u64) {
    for i in 0..iterations {
        black_box(i);
    }
}

/// Runs whichever benchmark `cfg.structure` names.
pub fn run(cfg: &BenchConfig) -> Result<BenchRecord> {
    match cfg.structure {
        Structure::Mcs => run_lock_bench(cfg),
        Structure::Treiber => run_stack_bench(cfg),
        Structure::Skiplist => run_set_bench(cfg),
    }
}

/// N workers loop { acquire; spin C; release; spin P }.
pub fn run_lock_bench(cfg: &BenchConfig) -> Result<BenchRecord> {
    cfg.expect(Structure::Mcs)?;
    let lock = McsLock::new(0u64);
    let (c, p) = (cfg.c, cfg.p);
    let run = harness(cfg, |lane: &Lane<'_>| {
        let mut node = McsNode::new();
        let mut done = 0;
        while lane.running() {
            {
                let mut g = lock.lock(&mut node);
                *g += 1;
                spin(c);
            }
            spin(p);
            done += 1;
            lane.publish(done);
        }
    })?;
    let stats = RunStats::Lock {
        guarded_count: lock.into_inner(),
    };
    Ok(run.finish(cfg, stats))
}

/// N workers loop { pop or push, alternating; spin P }. A worker pushes
/// back what it popped, so the stack stays within N of its prefill.
pub fn run_stack_bench(cfg: &BenchConfig) -> Result<BenchRecord> {
    cfg.expect(Structure::Treiber)?;
    let prefilled = cfg.prefill_count();
    let stack: TreiberStack<u64> = (0..prefilled).collect();
    let p = cfg.p;
    let run = harness(cfg, |lane: &Lane<'_>| {
        let (mut pushes, mut pops, mut empty) = (0u64, 0u64, 0u64);
        let mut carry = None;
        let mut fresh = (lane.index as u64) << 48;
        let mut done = 0;
        while lane.running() {
            if done % 2 == 0 {
                match stack.pop() {
                    Some(v) => {
                        pops += 1;
                        carry = Some(v);
                    }
                    None => empty += 1,
                }
            } else {
                let v = carry.take().unwrap_or_else(|| {
                    fresh += 1;
                    fresh
                });
                stack.push(v);
                pushes += 1;
            }
            spin(p);
            done += 1;
            lane.publish(done);
        }
        (pushes, pops, empty)
    })?;
    let (pushes, pops, empty_pops) = run
        .results
        .iter()
        .fold((0, 0, 0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
    let mut final_size = 0;
    while stack.pop().is_some() {
        final_size += 1;
    }
    let stats = RunStats::Stack {
        prefilled,
        pushes,
        pops,
        empty_pops,
        final_size,
    };
    Ok(run.finish(cfg, stats))
}

/// Prefills a set of capacity `cfg.k`, then N workers run `cfg.mix` over
/// uniformly drawn keys. Worker `i` draws from a generator seeded with
/// `cfg.seed + i`.
pub fn run_set_bench(cfg: &BenchConfig) -> Result<BenchRecord> {
    cfg.expect(Structure::Skiplist)?;
    let set = SkipListSet::with_capacity(cfg.k)?;
    let prefilled = cfg.prefill_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    for key in rand::seq::index::sample(&mut rng, cfg.key_range as usize, prefilled as usize) {
        set.insert(key as i64);
    }
    let (range, mix, seed) = (cfg.key_range as i64, cfg.mix, cfg.seed);
    let run = harness(cfg, |lane: &Lane<'_>| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(lane.index as u64));
        let (mut inserted, mut removed) = (0u64, 0u64);
        let mut done = 0;
        while lane.running() {
            let dice = rng.gen_range(0..100);
            let key = rng.gen_range(0..range);
            if dice < mix.contains {
                black_box(set.contains(key));
            } else if dice < mix.contains + mix.insert {
                inserted += set.insert(key) as u64;
            } else {
                removed += set.remove(key) as u64;
            }
            done += 1;
            lane.publish(done);
        }
        (inserted, removed)
    })?;
    let (inserted, removed) = run.results.iter().fold((0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
    let audit = set.audit();
    let stats = RunStats::Set {
        prefilled,
        inserted,
        removed,
        final_size: audit.keys as u64,
        audit_violations: audit.violations,
    };
    Ok(run.finish(cfg, stats))
}

/// A worker's view of the run.
pub struct Lane<'a> {
    pub index: usize,
    counter: &'a AtomicU64,
    stop: &'a AtomicBool,
}

impl Lane<'_> {
    pub fn running(&self) -> bool {
        !self.stop.load(Ordering::Relaxed)
    }

    /// Reports this worker's running total of completed operations.
    pub fn publish(&self, done: u64) {
        self.counter.store(done, Ordering::Relaxed);
    }
}

struct Run<R> {
    window_ops: Vec<u64>,
    completed: Vec<u64>,
    measured: Duration,
    results: Vec<R>,
}

impl<R> Run<R> {
    fn finish(self, cfg: &BenchConfig, stats: RunStats) -> BenchRecord {
        let secs = self.measured.as_secs_f64();
        let per_worker_ops_s: Vec<f64> = self.window_ops.iter().map(|&n| n as f64 / secs).collect();
        BenchRecord {
            config: cfg.clone(),
            throughput_ops_s: self.window_ops.iter().sum::<u64>() as f64 / secs,
            per_worker_ops_s,
            measured_s: secs,
            completed: self.completed,
            stats,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

fn harness<R, F>(cfg: &BenchConfig, body: F) -> Result<Run<R>>
where
    R: Send,
    F: Fn(&Lane<'_>) -> R + Sync,
{
    let n = cfg.workers as usize;
    let counters: Vec<CachePadded<AtomicU64>> = (0..n).map(|_| CachePadded::new(AtomicU64::new(0))).collect();
    let stop = AtomicBool::new(false);
    let go = AtomicBool::new(false);
    let snapshot = || -> Vec<u64> { counters.iter().map(|c| c.load(Ordering::Relaxed)).collect() };

    thread::scope(|s| {
        let mut handles = Vec::with_capacity(n);
        for (index, counter) in counters.iter().enumerate() {
            let (counter, stop, go, body) = (&**counter, &stop, &go, &body);
            let spawned = thread::Builder::new()
                .name(format!("bench-{index}"))
                .spawn_scoped(s, move || {
                    let backoff = Backoff::new();
                    while !go.load(Ordering::Acquire) {
                        backoff.snooze();
                    }
                    body(&Lane { index, counter, stop })
                });
            match spawned {
                Ok(h) => handles.push(h),
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    go.store(true, Ordering::Release);
                    for h in handles {
                        let _ = h.join();
                    }
                    return Err(Error::Harness(format!("could not spawn worker {index}: {e}")));
                }
            }
        }
        go.store(true, Ordering::Release);
        thread::sleep(cfg.warmup);
        let (before, t0) = (snapshot(), Instant::now());
        thread::sleep(cfg.duration);
        let (after, t1) = (snapshot(), Instant::now());
        stop.store(true, Ordering::Relaxed);
        let joined: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
        let results = joined
            .into_iter()
            .collect::<std::result::Result<Vec<R>, _>>()
            .map_err(|_| Error::Harness("a worker panicked".into()))?;
        Ok(Run {
            window_ops: after.iter().zip(&before).map(|(a, b)| a - b).collect(),
            completed: snapshot(),
            measured: t1 - t0,
            results,
        })
    })
}
