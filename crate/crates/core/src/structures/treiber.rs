//! Treiber stack.
//!
//! Nodes live in an append-only arena and are addressed by 32-bit index.
//! Popped nodes go to a free list and are reused for later pushes; the
//! arena itself is only released when the stack is dropped, so a worker
//! holding a stale index always reads valid memory. Both list heads pack an
//! index with a stamp that every successful CAS increments, so a CAS based
//! on a stale read fails even if the same node is back on top (ABA).
//! The stamp wraps after 2³² updates of one head; a worker would have to
//! stall across exactly that many for a stale CAS to slip through.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU32, AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

const NIL: u32 = 0;
/// Slots in the first arena segment; each later segment doubles.
const BASE_SHIFT: u32 = 6;
const SEGMENTS: usize = 27;

struct Slot<T> {
    /// Index of the node below, or of the next free slot.
    next: AtomicU32,
    value: UnsafeCell<MaybeUninit<T>>,
}

/// Index 0 is null; index `i` lives at arena position `i - 1`.
fn pack(stamp: u32, index: u32) -> u64 {
    (stamp as u64) << 32 | index as u64
}

fn unpack(word: u64) -> (u32, u32) {
    ((word >> 32) as u32, word as u32)
}

fn locate(index: u32) -> (usize, usize) {
    let pos = (index - 1) as u64;
    let seg = 63 - ((pos >> BASE_SHIFT) + 1).leading_zeros() as usize;
    let start = ((1u64 << seg) - 1) << BASE_SHIFT;
    (seg, (pos - start) as usize)
}

fn segment_len(seg: usize) -> usize {
    1usize << (BASE_SHIFT as usize + seg)
}

struct Arena<T> {
    segments: [AtomicPtr<Slot<T>>; SEGMENTS],
    bump: AtomicU32,
}

impl<T> Arena<T> {
    fn new() -> Self {
        Arena {
            segments: std::array::from_fn(|_| AtomicPtr::new(ptr::null_mut())),
            bump: AtomicU32::new(0),
        }
    }

    fn slot(&self, index: u32) -> &Slot<T> {
        let (seg, off) = locate(index);
        let base = self.segments[seg].load(Ordering::Acquire);
        debug_assert!(!base.is_null());
        // SAFETY: an index is only published after its segment is installed,
        // and segments live as long as the arena.
        unsafe { &*base.add(off) }
    }

    /// A never-used slot index.
    fn grow(&self) -> u32 {
        let index = self.bump.fetch_add(1, Ordering::Relaxed).checked_add(1).expect("stack arena exhausted");
        let (seg, _) = locate(index);
        if self.segments[seg].load(Ordering::Acquire).is_null() {
            let fresh: Box<[Slot<T>]> = (0..segment_len(seg))
                .map(|_| Slot {
                    next: AtomicU32::new(NIL),
                    value: UnsafeCell::new(MaybeUninit::uninit()),
                })
                .collect();
            let fresh = Box::into_raw(fresh) as *mut Slot<T>;
            if self.segments[seg]
                .compare_exchange(ptr::null_mut(), fresh, Ordering::AcqRel, Ordering::Acquire)
                .is_err()
            {
                // SAFETY: lost the race; nobody else saw `fresh`.
                drop(unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(fresh, segment_len(seg))) });
            }
        }
        index
    }
}

impl<T> Drop for Arena<T> {
    fn drop(&mut self) {
        for (seg, p) in self.segments.iter_mut().enumerate() {
            let p = *p.get_mut();
            if !p.is_null() {
                // SAFETY: allocated in `grow` with exactly this length. Slots
                // hold `MaybeUninit`, so no values are dropped here.
                drop(unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(p, segment_len(seg))) });
            }
        }
    }
}

/// Lock-free LIFO stack.
pub struct TreiberStack<T> {
    head: CachePadded<AtomicU64>,
    free: CachePadded<AtomicU64>,
    arena: Arena<T>,
}

unsafe impl<T: Send> Send for TreiberStack<T> {}
unsafe impl<T: Send> Sync for TreiberStack<T> {}

impl<T> Default for TreiberStack<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> TreiberStack<T> {
    pub fn new() -> Self {
        TreiberStack {
            head: CachePadded::new(AtomicU64::new(pack(0, NIL))),
            free: CachePadded::new(AtomicU64::new(pack(0, NIL))),
            arena: Arena::new(),
        }
    }

    pub fn push(&self, value: T) {
        let index = self.alloc();
        let slot = self.arena.slot(index);
        // SAFETY: the slot is on neither list, so only this worker can reach
        // its value until the CAS below publishes it.
        unsafe { (*slot.value.get()).write(value) };
        let mut head = self.head.load(Ordering::Acquire);
        loop {
            let (stamp, top) = unpack(head);
            slot.next.store(top, Ordering::Relaxed);
            match self.head.compare_exchange_weak(
                head,
                pack(stamp.wrapping_add(1), index),
                Ordering::Release,
                Ordering::Acquire,
            ) {
                Ok(_) => return,
                Err(now) => head = now,
            }
        }
    }

    /// Removes the top element; `None` when the stack is empty.
    pub fn pop(&self) -> Option<T> {
        let mut head = self.head.load(Ordering::Acquire);
        loop {
            let (stamp, top) = unpack(head);
            if top == NIL {
                return None;
            }
            let slot = self.arena.slot(top);
            let below = slot.next.load(Ordering::Relaxed);
            match self.head.compare_exchange_weak(
                head,
                pack(stamp.wrapping_add(1), below),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    // SAFETY: the successful CAS unlinked the slot, so this
                    // worker owns it; the pusher's release made the value
                    // visible.
                    let value = unsafe { (*slot.value.get()).assume_init_read() };
                    self.release(top);
                    return Some(value);
                }
                Err(now) => head = now,
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        unpack(self.head.load(Ordering::Acquire)).1 == NIL
    }

    fn alloc(&self) -> u32 {
        let mut free = self.free.load(Ordering::Acquire);
        loop {
            let (stamp, index) = unpack(free);
            if index == NIL {
                return self.arena.grow();
            }
            let next = self.arena.slot(index).next.load(Ordering::Relaxed);
            match self.free.compare_exchange_weak(
                free,
                pack(stamp.wrapping_add(1), next),
                Ordering::Acquire,
                Ordering::Acquire,
            ) {
                Ok(_) => return index,
                Err(now) => free = now,
            }
        }
    }

    fn release(&self, index: u32) {
        let slot = self.arena.slot(index);
        let mut free = self.free.load(Ordering::Acquire);
        loop {
            let (stamp, top) = unpack(free);
            slot.next.store(top, Ordering::Relaxed);
            match self.free.compare_exchange_weak(
                free,
                pack(stamp.wrapping_add(1), index),
                Ordering::Release,
                Ordering::Acquire,
            ) {
                Ok(_) => return,
                Err(now) => free = now,
            }
        }
    }
}

impl<T> Drop for TreiberStack<T> {
    fn drop(&mut self) {
        while self.pop().is_some() {}
    }
}

impl<T> Extend<T> for TreiberStack<T> {
    fn extend<I: IntoIterator<Item = T>>(&mut self, iter: I) {
        for v in iter {
            self.push(v);
        }
    }
}

impl<T> FromIterator<T> for TreiberStack<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut s = TreiberStack::new();
        s.extend(iter);
        s
    }
}
