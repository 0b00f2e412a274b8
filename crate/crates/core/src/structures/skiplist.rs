//! Skip-list set whose bottom-level nodes each hold up to `k` sorted keys.
//!
//! Layout:
//! - The bottom level is a linked list of fat nodes. Node `n` owns the key
//!   range `[n.low, n.next.low)`; `low` never changes. A keyless sentinel
//!   heads the list and owns whatever lies below the first real node.
//! - Every node carries a sequence lock. Writers take it, readers validate
//!   against it and retry, so `contains` never blocks on a writer for longer
//!   than its critical section.
//! - Index levels are an ordinary skip list of towers, one per fat node that
//!   drew a height ≥ 1, keyed by the node's `low`. They are only a starting
//!   hint: every lookup finishes on the bottom level, so keys stay reachable
//!   whatever state the index is in. Index updates are serialized by one
//!   mutex and happen after the bottom-level change is visible.
//!
//! Insert locks the one node owning the key; a full node splits, publishing
//! the new right half under the same lock. Remove locks the owner too, and a
//! node about to become empty is unlinked with its predecessor locked first.
//! Unlinked nodes and towers are reclaimed through `crossbeam_epoch`.

use std::ptr;
use std::sync::atomic::{fence, AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use crossbeam_epoch::{self as epoch, Atomic, Guard, Owned, Shared};
use crossbeam_utils::Backoff;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const DEFAULT_CAPACITY: usize = 32;
const MAX_LEVELS: usize = 32;
const INDEX_SEED: u64 = 0x5eed_1e55;
/// Index-guided lookups that land on unlinked nodes before falling back to
/// a walk from the sentinel.
const INDEX_RETRIES: usize = 3;

struct Node {
    low: i64,
    /// Sequence lock: odd while a writer holds it.
    version: AtomicU64,
    removed: AtomicBool,
    len: AtomicUsize,
    keys: Box<[AtomicI64]>,
    next: Atomic<Node>,
    /// This node's index entry. Touched only under the index mutex.
    tower: Atomic<Tower>,
}

struct Tower {
    low: i64,
    node: *const Node,
    next: Box<[Atomic<Tower>]>,
}

impl Node {
    fn new(low: i64, k: usize, keys: &[i64]) -> Self {
        debug_assert!(keys.len() <= k);
        let slots: Box<[AtomicI64]> = (0..k)
            .map(|i| AtomicI64::new(keys.get(i).copied().unwrap_or(0)))
            .collect();
        Node {
            low,
            version: AtomicU64::new(0),
            removed: AtomicBool::new(false),
            len: AtomicUsize::new(keys.len()),
            keys: slots,
            next: Atomic::null(),
            tower: Atomic::null(),
        }
    }

    fn lock(&self) -> u64 {
        let backoff = Backoff::new();
        loop {
            let v = self.version.load(Ordering::Relaxed);
            if v & 1 == 0
                && self
                    .version
                    .compare_exchange_weak(v, v + 1, Ordering::Acquire, Ordering::Relaxed)
                    .is_ok()
            {
                // Readers that observe any write below must also observe the odd version.
                fence(Ordering::Release);
                return v;
            }
            backoff.snooze();
        }
    }

    /// Releases a lock taken at version `v`. A holder that changed nothing
    /// restores `v`, so readers that overlapped it need not retry.
    fn unlock(&self, v: u64, dirty: bool) {
        self.version.store(if dirty { v + 2 } else { v }, Ordering::Release);
    }

    /// Runs `f` on a consistent snapshot. `f` may observe torn state and
    /// must not act on it; only its return value from a validated run is kept.
    fn read<R>(&self, f: impl Fn(&Node) -> R) -> R {
        let backoff = Backoff::new();
        loop {
            let v = self.version.load(Ordering::Acquire);
            if v & 1 == 0 {
                let r = f(self);
                fence(Ordering::Acquire);
                if self.version.load(Ordering::Relaxed) == v {
                    return r;
                }
            }
            backoff.snooze();
        }
    }

    fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed).min(self.keys.len())
    }

    fn key(&self, i: usize) -> i64 {
        self.keys[i].load(Ordering::Relaxed)
    }

    fn search(&self, key: i64) -> std::result::Result<usize, usize> {
        self.keys[..self.len()].binary_search_by(|k| k.load(Ordering::Relaxed).cmp(&key))
    }
}

enum Probe<'g> {
    Found(bool),
    Forward(&'g Node),
    Restart,
}

struct IndexState {
    rng: ChaCha8Rng,
}

/// Concurrent ordered set of `i64` keys, `k` keys per bottom-level node.
pub struct SkipListSet {
    k: usize,
    head: Box<Node>,
    index_head: Box<Tower>,
    index: Mutex<IndexState>,
}

// SAFETY: all shared state is atomics, the sequence locks or the index
// mutex; raw node pointers in towers are kept alive by epoch reclamation.
unsafe impl Send for SkipListSet {}
unsafe impl Sync for SkipListSet {}

impl Default for SkipListSet {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY).expect("default capacity is valid")
    }
}

impl std::fmt::Debug for SkipListSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkipListSet").field("k", &self.k).finish_non_exhaustive()
    }
}

/// Result of [`SkipListSet::audit`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    pub nodes: usize,
    pub keys: usize,
    pub index_entries: usize,
    pub violations: Vec<String>,
}

impl Audit {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl SkipListSet {
    /// Set with node capacity [`DEFAULT_CAPACITY`].
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "node capacity k >= 1 required"));
        }
        let head = Box::new(Node::new(i64::MIN, 0, &[]));
        let index_head = Box::new(Tower {
            low: i64::MIN,
            node: &*head,
            next: (0..MAX_LEVELS).map(|_| Atomic::null()).collect(),
        });
        Ok(SkipListSet {
            k,
            head,
            index_head,
            index: Mutex::new(IndexState {
                rng: ChaCha8Rng::seed_from_u64(INDEX_SEED),
            }),
        })
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn contains(&self, key: i64) -> bool {
        let guard = &epoch::pin();
        let mut cur = self.locate(key, guard);
        loop {
            let probe = cur.read(|n| {
                if n.removed.load(Ordering::Relaxed) {
                    return Probe::Restart;
                }
                // SAFETY: reachable nodes are protected by the pinned guard.
                if let Some(next) = unsafe { n.next.load(Ordering::Acquire, guard).as_ref() } {
                    if next.low <= key {
                        return Probe::Forward(next);
                    }
                }
                Probe::Found(n.search(key).is_ok())
            });
            match probe {
                Probe::Found(hit) => return hit,
                Probe::Forward(next) => cur = next,
                Probe::Restart => cur = self.locate(key, guard),
            }
        }
    }

    /// Adds `key`; `false` if it was already present.
    pub fn insert(&self, key: i64) -> bool {
        let guard = &epoch::pin();
        let (n, v) = self.lock_owner(key, guard);
        if ptr::eq(n, &*self.head) {
            // Below every real node: start a new first node.
            let mut first = Node::new(i64::MIN, self.k, &[key]);
            first.next = Atomic::from(n.next.load(Ordering::Relaxed, guard));
            let first = Owned::new(first).into_shared(guard);
            n.next.store(first, Ordering::Release);
            n.unlock(v, true);
            self.add_tower(first, guard);
            return true;
        }
        let len = n.len();
        let pos = match n.search(key) {
            Ok(_) => {
                n.unlock(v, false);
                return false;
            }
            Err(pos) => pos,
        };
        if len < self.k {
            for i in (pos..len).rev() {
                n.keys[i + 1].store(n.key(i), Ordering::Relaxed);
            }
            n.keys[pos].store(key, Ordering::Relaxed);
            n.len.store(len + 1, Ordering::Relaxed);
            n.unlock(v, true);
            return true;
        }
        // Full: split k + 1 keys into ⌈k/2⌉ staying and ⌊k/2⌋ + 1 moving right.
        let mut all: Vec<i64> = (0..len).map(|i| n.key(i)).collect();
        all.insert(pos, key);
        let stay = self.k.div_ceil(2);
        let mut right = Node::new(all[stay], self.k, &all[stay..]);
        right.next = Atomic::from(n.next.load(Ordering::Relaxed, guard));
        let right = Owned::new(right).into_shared(guard);
        for (i, &k) in all[..stay].iter().enumerate() {
            n.keys[i].store(k, Ordering::Relaxed);
        }
        n.len.store(stay, Ordering::Relaxed);
        n.next.store(right, Ordering::Release);
        n.unlock(v, true);
        self.add_tower(right, guard);
        true
    }

    /// Removes `key`; `false` if it was absent.
    pub fn remove(&self, key: i64) -> bool {
        let guard = &epoch::pin();
        loop {
            let (n, v) = self.lock_owner(key, guard);
            if ptr::eq(n, &*self.head) {
                n.unlock(v, false);
                return false;
            }
            let len = n.len();
            let Ok(pos) = n.search(key) else {
                n.unlock(v, false);
                return false;
            };
            if len > 1 {
                Self::delete_at(n, pos, len);
                n.unlock(v, true);
                return true;
            }
            // The node would empty; relock in list order to unlink it.
            n.unlock(v, false);
            if let Some(done) = self.remove_last(n, key, guard) {
                return done;
            }
        }
    }

    /// Number of keys. Exact only at quiescence.
    pub fn len(&self) -> usize {
        let guard = &epoch::pin();
        self.nodes(guard).map(|n| n.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All keys in order. Exact only at quiescence.
    pub fn to_vec(&self) -> Vec<i64> {
        let guard = &epoch::pin();
        self.nodes(guard).flat_map(|n| (0..n.len()).map(|i| n.key(i))).collect()
    }

    /// Occupancy of each bottom-level node, in order. Quiescence required.
    pub fn occupancies(&self) -> Vec<usize> {
        let guard = &epoch::pin();
        self.nodes(guard).map(|n| n.len()).collect()
    }

    /// Structural check; meaningful only at quiescence.
    pub fn audit(&self) -> Audit {
        let guard = &epoch::pin();
        let mut audit = Audit::default();
        let mut fail = |msg: String| audit_push(&mut audit.violations, msg);
        if self.head.len() != 0 {
            fail("sentinel holds keys".into());
        }
        let mut prev_low: Option<i64> = None;
        let mut prev_max: Option<i64> = None;
        let mut nodes = 0;
        let mut keys = 0;
        for n in self.nodes(guard) {
            nodes += 1;
            let len = n.len();
            keys += len;
            let at = format!("node {nodes} (low {})", n.low);
            if n.removed.load(Ordering::Relaxed) {
                fail(format!("{at} is linked but marked removed"));
            }
            if n.version.load(Ordering::Relaxed) & 1 == 1 {
                fail(format!("{at} is still locked"));
            }
            if !(1..=self.k).contains(&n.len.load(Ordering::Relaxed)) {
                fail(format!("{at} holds {} keys, outside [1, {}]", n.len.load(Ordering::Relaxed), self.k));
            }
            if prev_low.is_some_and(|p| p >= n.low) {
                fail(format!("{at} low not above predecessor's {}", prev_low.unwrap()));
            }
            for i in 0..len {
                let key = n.key(i);
                if key < n.low {
                    fail(format!("{at} key {key} below its low"));
                }
                if prev_max.is_some_and(|p| p >= key) {
                    fail(format!("{at} key {key} not above previous key {}", prev_max.unwrap()));
                }
                prev_max = Some(key);
            }
            // SAFETY: protected by the pinned guard.
            if let Some(next) = unsafe { n.next.load(Ordering::Acquire, guard).as_ref() } {
                if prev_max.is_some_and(|p| p >= next.low) {
                    fail(format!("{at} holds a key at or above the next node's low {}", next.low));
                }
            }
            prev_low = Some(n.low);
        }
        let mut entries = 0;
        for level in 0..MAX_LEVELS {
            let mut t: &Tower = &self.index_head;
            // SAFETY: protected by the pinned guard.
            while let Some(next) = unsafe { t.next[level].load(Ordering::Acquire, guard).as_ref() } {
                if next.low < t.low {
                    fail(format!("index level {level} out of order at low {}", next.low));
                }
                // SAFETY: a linked tower's node has not been reclaimed.
                let node = unsafe { &*next.node };
                if node.removed.load(Ordering::Relaxed) {
                    fail(format!("index level {level} points at unlinked node {}", next.low));
                }
                if node.low != next.low {
                    fail(format!("index entry {} points at node {}", next.low, node.low));
                }
                if level == 0 {
                    entries += 1;
                }
                t = next;
            }
        }
        audit.nodes = nodes;
        audit.keys = keys;
        audit.index_entries = entries;
        audit
    }

    fn nodes<'g>(&'g self, guard: &'g Guard) -> impl Iterator<Item = &'g Node> + 'g {
        // SAFETY: protected by the pinned guard.
        let first = unsafe { self.head.next.load(Ordering::Acquire, guard).as_ref() };
        std::iter::successors(first, move |n| unsafe { n.next.load(Ordering::Acquire, guard).as_ref() })
    }

    fn delete_at(n: &Node, pos: usize, len: usize) {
        for i in pos + 1..len {
            n.keys[i - 1].store(n.key(i), Ordering::Relaxed);
        }
        n.len.store(len - 1, Ordering::Relaxed);
    }

    /// Removes `key` from `n`, which held it as its only key when last
    /// locked. `None` means the situation changed and the caller retries.
    fn remove_last(&self, n: &Node, key: i64, guard: &Guard) -> Option<bool> {
        let (pred, pv) = self.lock_pred(n, guard)?;
        let nv = n.lock();
        // `n` cannot be unlinked while its predecessor is locked.
        // SAFETY: protected by the pinned guard.
        let next = n.next.load(Ordering::Acquire, guard);
        if unsafe { next.as_ref() }.is_some_and(|nx| nx.low <= key) {
            n.unlock(nv, false);
            pred.unlock(pv, false);
            return None;
        }
        let len = n.len();
        let outcome = match n.search(key) {
            Err(_) => {
                n.unlock(nv, false);
                false
            }
            Ok(pos) if len > 1 => {
                Self::delete_at(n, pos, len);
                n.unlock(nv, true);
                true
            }
            Ok(_) => {
                n.len.store(0, Ordering::Relaxed);
                n.removed.store(true, Ordering::Relaxed);
                pred.next.store(next, Ordering::Release);
                n.unlock(nv, true);
                pred.unlock(pv, true);
                let unlinked = Shared::from(n as *const Node);
                self.remove_tower(n, guard);
                // SAFETY: unreachable from the list and, after
                // `remove_tower`, from the index.
                unsafe { guard.defer_destroy(unlinked) };
                return Some(true);
            }
        };
        pred.unlock(pv, false);
        Some(outcome)
    }

    /// Locks the live node whose `next` is `n`; `None` once `n` is unlinked.
    fn lock_pred<'g>(&'g self, n: &Node, guard: &'g Guard) -> Option<(&'g Node, u64)> {
        let backoff = Backoff::new();
        loop {
            if n.removed.load(Ordering::Acquire) {
                return None;
            }
            let p = if n.low == i64::MIN {
                &*self.head
            } else {
                self.locate(n.low - 1, guard)
            };
            let pv = p.lock();
            if !p.removed.load(Ordering::Relaxed) && ptr::eq(p.next.load(Ordering::Acquire, guard).as_raw(), n) {
                return Some((p, pv));
            }
            p.unlock(pv, false);
            backoff.snooze();
        }
    }

    /// Locks the live node whose range holds `key` (possibly the sentinel).
    fn lock_owner<'g>(&'g self, key: i64, guard: &'g Guard) -> (&'g Node, u64) {
        let mut cur = self.locate(key, guard);
        loop {
            let v = cur.lock();
            if cur.removed.load(Ordering::Relaxed) {
                cur.unlock(v, false);
                cur = self.locate(key, guard);
                continue;
            }
            // SAFETY: protected by the pinned guard.
            match unsafe { cur.next.load(Ordering::Acquire, guard).as_ref() } {
                Some(next) if next.low <= key => {
                    cur.unlock(v, false);
                    cur = next;
                }
                _ => return (cur, v),
            }
        }
    }

    /// The node owning `key` at some instant during the call.
    fn locate<'g>(&'g self, key: i64, guard: &'g Guard) -> &'g Node {
        let mut attempts = 0;
        'restart: loop {
            let mut cur = if attempts < INDEX_RETRIES {
                self.index_search(key, guard)
            } else {
                &*self.head
            };
            attempts += 1;
            loop {
                let (removed, next) =
                    cur.read(|n| (n.removed.load(Ordering::Relaxed), n.next.load(Ordering::Acquire, guard)));
                if removed {
                    continue 'restart;
                }
                // SAFETY: protected by the pinned guard.
                match unsafe { next.as_ref() } {
                    Some(next) if next.low <= key => cur = next,
                    _ => return cur,
                }
            }
        }
    }

    /// The live node with the largest `low <= key` among the index entries
    /// visited, or the sentinel.
    fn index_search<'g>(&'g self, key: i64, guard: &'g Guard) -> &'g Node {
        let mut t: &Tower = &self.index_head;
        let mut best: &Node = &self.head;
        for level in (0..MAX_LEVELS).rev() {
            // SAFETY: towers and their nodes are protected by the pinned guard.
            while let Some(next) = unsafe { t.next[level].load(Ordering::Acquire, guard).as_ref() } {
                if next.low > key {
                    break;
                }
                t = next;
                let node = unsafe { &*next.node };
                if !node.removed.load(Ordering::Acquire) {
                    best = node;
                }
            }
        }
        best
    }

    /// Per level, the last tower with `low` strictly below `low`.
    fn index_preds<'g>(&'g self, low: i64, guard: &'g Guard) -> [&'g Tower; MAX_LEVELS] {
        let mut preds = [&*self.index_head; MAX_LEVELS];
        let mut t: &Tower = &self.index_head;
        for level in (0..MAX_LEVELS).rev() {
            // SAFETY: protected by the pinned guard; writers hold the index mutex.
            while let Some(next) = unsafe { t.next[level].load(Ordering::Acquire, guard).as_ref() } {
                if next.low >= low {
                    break;
                }
                t = next;
            }
            preds[level] = t;
        }
        preds
    }

    fn add_tower(&self, node: Shared<'_, Node>, guard: &Guard) {
        let mut index = self.index.lock().unwrap_or_else(|e| e.into_inner());
        // SAFETY: `node` was just published and is protected by the guard.
        let n = unsafe { node.deref() };
        if n.removed.load(Ordering::Acquire) {
            return;
        }
        let mut height = 0;
        while height < MAX_LEVELS && index.rng.gen::<bool>() {
            height += 1;
        }
        if height == 0 {
            return;
        }
        let preds = self.index_preds(n.low, guard);
        let tower = Tower {
            low: n.low,
            node: n,
            next: (0..height)
                .map(|l| Atomic::from(preds[l].next[l].load(Ordering::Acquire, guard)))
                .collect(),
        };
        let tower = Owned::new(tower).into_shared(guard);
        for (level, pred) in preds.iter().enumerate().take(height) {
            pred.next[level].store(tower, Ordering::Release);
        }
        n.tower.store(tower, Ordering::Relaxed);
    }

    fn remove_tower(&self, n: &Node, guard: &Guard) {
        let _index = self.index.lock().unwrap_or_else(|e| e.into_inner());
        let tower = n.tower.swap(Shared::null(), Ordering::Relaxed, guard);
        // SAFETY: protected by the pinned guard.
        let Some(t) = (unsafe { tower.as_ref() }) else {
            return;
        };
        let preds = self.index_preds(t.low, guard);
        for (level, &pred) in preds.iter().enumerate().take(t.next.len()) {
            let mut p = pred;
            // Entries with an equal low may precede ours.
            loop {
                let next = p.next[level].load(Ordering::Acquire, guard);
                if next == tower {
                    p.next[level].store(t.next[level].load(Ordering::Acquire, guard), Ordering::Release);
                    break;
                }
                // SAFETY: protected by the pinned guard.
                match unsafe { next.as_ref() } {
                    Some(nt) if nt.low == t.low => p = nt,
                    _ => unreachable!("tower missing from index level {level}"),
                }
            }
        }
        // SAFETY: unlinked from every level under the index mutex.
        unsafe { guard.defer_destroy(tower) };
    }
}

fn audit_push(violations: &mut Vec<String>, msg: String) {
    const LIMIT: usize = 32;
    if violations.len() < LIMIT {
        violations.push(msg);
    }
}

impl Drop for SkipListSet {
    fn drop(&mut self) {
        // SAFETY: `&mut self` rules out concurrent access; unlinked nodes and
        // towers were handed to the epoch collector already.
        unsafe {
            let guard = epoch::unprotected();
            let mut t = self.index_head.next[0].load(Ordering::Relaxed, guard);
            while !t.is_null() {
                let next = t.deref().next[0].load(Ordering::Relaxed, guard);
                drop(t.into_owned());
                t = next;
            }
            let mut n = self.head.next.load(Ordering::Relaxed, guard);
            while !n.is_null() {
                let next = n.deref().next.load(Ordering::Relaxed, guard);
                drop(n.into_owned());
                n = next;
            }
        }
    }
}
