//! Brute-force linearizability checking for small concurrent histories.
//!
//! A history is a list of completed operations with invocation and response
//! timestamps from one shared clock. It is linearizable when some total
//! order of the operations respects real time (an operation that returned
//! before another was invoked comes first) and replaying that order against
//! a sequential specification reproduces every observed result. The search
//! tries every such order, pruning on the first mismatching result and
//! memoizing dead (remaining-set, state) pairs, which is plenty for the
//! dozen-operation histories it is meant for.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Debug;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::structures::{SkipListSet, TreiberStack};

/// Histories longer than this are rejected; the search is exponential.
pub const MAX_OPS: usize = 16;

/// A sequential object the concurrent one should behave like.
pub trait Spec: Clone + Hash + Eq {
    type Op: Clone + Debug;
    type Ret: Clone + Debug + PartialEq;

    fn apply(&mut self, op: &Self::Op) -> Self::Ret;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<O, R> {
    pub worker: usize,
    pub op: O,
    pub ret: R,
    pub invoked: u64,
    pub returned: u64,
}

/// Shared clock for stamping events from several threads.
#[derive(Debug, Default)]
pub struct Recorder {
    clock: AtomicU64,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record<O, R>(&self, worker: usize, op: O, run: impl FnOnce(&O) -> R) -> Event<O, R> {
        let invoked = self.clock.fetch_add(1, Ordering::SeqCst);
        let ret = run(&op);
        let returned = self.clock.fetch_add(1, Ordering::SeqCst);
        Event {
            worker,
            op,
            ret,
            invoked,
            returned,
        }
    }
}

/// A legal sequential order of `history` (as indices into it), or `None`.
///
/// # Panics
/// If the history holds more than [`MAX_OPS`] events.
pub fn linearize<S: Spec>(initial: &S, history: &[Event<S::Op, S::Ret>]) -> Option<Vec<usize>> {
    assert!(history.len() <= MAX_OPS, "history too long for exhaustive search");
    let mut order = Vec::with_capacity(history.len());
    let mut dead = HashSet::new();
    let all = (1u32 << history.len()) - 1;
    search(initial, history, all, &mut order, &mut dead).then_some(order)
}

fn search<S: Spec>(
    state: &S,
    history: &[Event<S::Op, S::Ret>],
    remaining: u32,
    order: &mut Vec<usize>,
    dead: &mut HashSet<(u32, S)>,
) -> bool {
    if remaining == 0 {
        return true;
    }
    if dead.contains(&(remaining, state.clone())) {
        return false;
    }
    // Earliest response among pending events; anything invoked after it
    // cannot go first.
    let horizon = (0..history.len())
        .filter(|i| remaining & (1 << i) != 0)
        .map(|i| history[i].returned)
        .min()
        .unwrap_or(u64::MAX);
    for i in 0..history.len() {
        if remaining & (1 << i) == 0 || history[i].invoked > horizon {
            continue;
        }
        let mut next = state.clone();
        if next.apply(&history[i].op) != history[i].ret {
            continue;
        }
        order.push(i);
        if search(&next, history, remaining & !(1 << i), order, dead) {
            return true;
        }
        order.pop();
    }
    dead.insert((remaining, state.clone()));
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackOp {
    Push(u64),
    Pop,
}

/// Sequential stack; pushes return `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct StackSpec(pub Vec<u64>);

impl Spec for StackSpec {
    type Op = StackOp;
    type Ret = Option<u64>;

    fn apply(&mut self, op: &StackOp) -> Option<u64> {
        match *op {
            StackOp::Push(v) => {
                self.0.push(v);
                None
            }
            StackOp::Pop => self.0.pop(),
        }
    }
}

impl StackOp {
    pub fn run(&self, stack: &TreiberStack<u64>) -> Option<u64> {
        match *self {
            StackOp::Push(v) => {
                stack.push(v);
                None
            }
            StackOp::Pop => stack.pop(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetOp {
    Insert(i64),
    Remove(i64),
    Contains(i64),
}

/// Sequential ordered set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SetSpec(pub BTreeSet<i64>);

impl Spec for SetSpec {
    type Op = SetOp;
    type Ret = bool;

    fn apply(&mut self, op: &SetOp) -> bool {
        match *op {
            SetOp::Insert(k) => self.0.insert(k),
            SetOp::Remove(k) => self.0.remove(&k),
            SetOp::Contains(k) => self.0.contains(&k),
        }
    }
}

impl SetOp {
    pub fn run(&self, set: &SkipListSet) -> bool {
        match *self {
            SetOp::Insert(k) => set.insert(k),
            SetOp::Remove(k) => set.remove(k),
            SetOp::Contains(k) => set.contains(k),
        }
    }
}

/// Runs `per_worker[w]` on worker thread `w`, all released together, and
/// returns the combined history.
fn run_workers<O, R>(per_worker: Vec<Vec<O>>, exec: impl Fn(&O) -> R + Sync) -> Vec<Event<O, R>>
where
    O: Send,
    R: Send,
{
    let recorder = Recorder::new();
    let start = std::sync::Barrier::new(per_worker.len());
    let mut history: Vec<Event<O, R>> = std::thread::scope(|s| {
        let handles: Vec<_> = per_worker
            .into_iter()
            .enumerate()
            .map(|(w, ops)| {
                let (recorder, start, exec) = (&recorder, &start, &exec);
                s.spawn(move || {
                    start.wait();
                    ops.into_iter()
                        .map(|op| {
                            let e = recorder.record(w, op, exec);
                            std::thread::yield_now();
                            e
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("history worker panicked")).collect()
    });
    history.sort_by_key(|e| e.invoked);
    history
}

/// A random push/pop history of `workers × ops_per_worker` operations on a
/// fresh [`TreiberStack`]. Pushed values are distinct.
pub fn stack_history(seed: u64, workers: usize, ops_per_worker: usize) -> Vec<Event<StackOp, Option<u64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_worker = (0..workers)
        .map(|w| {
            (0..ops_per_worker)
                .map(|i| {
                    if rng.gen_bool(0.5) {
                        StackOp::Push((w * 100 + i) as u64)
                    } else {
                        StackOp::Pop
                    }
                })
                .collect()
        })
        .collect();
    let stack = TreiberStack::new();
    run_workers(per_worker, |op: &StackOp| op.run(&stack))
}

/// A random history on a [`SkipListSet`] of capacity `k` over a handful of
/// keys, so operations collide. Returns the prefilled initial contents too.
pub fn set_history(
    seed: u64,
    k: usize,
    workers: usize,
    ops_per_worker: usize,
) -> crate::Result<(SetSpec, Vec<Event<SetOp, bool>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = SkipListSet::with_capacity(k)?;
    let mut initial = SetSpec::default();
    for key in 0..6 {
        if rng.gen_bool(0.5) {
            set.insert(key);
            initial.0.insert(key);
        }
    }
    let per_worker = (0..workers)
        .map(|_| {
            (0..ops_per_worker)
                .map(|_| {
                    let key = rng.gen_range(0..6);
                    match rng.gen_range(0..3) {
                        0 => SetOp::Insert(key),
                        1 => SetOp::Remove(key),
                        _ => SetOp::Contains(key),
                    }
                })
                .collect()
        })
        .collect();
    let history = run_workers(per_worker, |op: &SetOp| op.run(&set));
    Ok((initial, history))
}
