//! MCS queue lock.
//!
//! Each worker brings its own [`McsNode`] and spins only on that node's
//! `locked` flag, so a handover invalidates exactly one waiter's cache line.

use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering};

use crossbeam_utils::{Backoff, CachePadded};

/// A worker's queue entry. Reusable across acquisitions, but enqueued at
/// most once at a time, which the `&mut` borrow held by [`McsGuard`]
/// enforces.
#[derive(Debug, Default)]
pub struct McsNode {
    locked: CachePadded<AtomicBool>,
    next: CachePadded<AtomicPtr<McsNode>>,
}

impl McsNode {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stable identity of this node while it is borrowed by a guard.
    pub fn id(&self) -> usize {
        self as *const McsNode as usize
    }
}

/// How a release left the lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Release {
    /// No successor: the tail was reset and the lock is free.
    Freed,
    /// Ownership passed to the next waiter. `awaited_link` is set when the
    /// successor had swapped itself into the tail but not yet linked behind
    /// us, so the release had to wait for the link.
    HandedOver { awaited_link: bool },
}

/// Mutual exclusion over `T` with FIFO handover.
pub struct McsLock<T: ?Sized = ()> {
    tail: CachePadded<AtomicPtr<McsNode>>,
    data: UnsafeCell<T>,
}

unsafe impl<T: ?Sized + Send> Send for McsLock<T> {}
unsafe impl<T: ?Sized + Send> Sync for McsLock<T> {}

impl<T: Default> Default for McsLock<T> {
    fn default() -> Self {
        Self::new(T::default())
    }
}

impl<T> McsLock<T> {
    pub fn new(data: T) -> Self {
        McsLock {
            tail: CachePadded::new(AtomicPtr::new(ptr::null_mut())),
            data: UnsafeCell::new(data),
        }
    }

    pub fn into_inner(self) -> T {
        self.data.into_inner()
    }
}

impl<T: ?Sized> McsLock<T> {
    /// Blocks until the lock is held through `node`.
    pub fn lock<'a>(&'a self, node: &'a mut McsNode) -> McsGuard<'a, T> {
        self.lock_with(node, || {})
    }

    /// Like [`lock`](Self::lock), running `after_enqueue` between joining
    /// the queue and linking behind the predecessor. Tests use it to hold a
    /// waiter in the window where the holder cannot see it yet.
    #[doc(hidden)]
    pub fn lock_with<'a>(&'a self, node: &'a mut McsNode, after_enqueue: impl FnOnce()) -> McsGuard<'a, T> {
        // Other workers touch the node through shared references only.
        let node: &'a McsNode = node;
        node.locked.store(true, Ordering::Relaxed);
        node.next.store(ptr::null_mut(), Ordering::Relaxed);
        let me = node as *const McsNode as *mut McsNode;
        let pred = self.tail.swap(me, Ordering::AcqRel);
        after_enqueue();
        if !pred.is_null() {
            // SAFETY: a predecessor stays enqueued, and so alive, until it
            // has seen this link and handed over to us.
            unsafe { (*pred).next.store(me, Ordering::Release) };
            let backoff = Backoff::new();
            while node.locked.load(Ordering::Acquire) {
                backoff.snooze();
            }
        }
        McsGuard {
            lock: self,
            node,
            pred: (!pred.is_null()).then_some(pred as usize),
            _data: PhantomData,
        }
    }

    /// Whether some worker holds or waits for the lock.
    pub fn is_locked(&self) -> bool {
        !self.tail.load(Ordering::Acquire).is_null()
    }

    fn release(&self, node: &McsNode) -> Release {
        let me = node as *const McsNode as *mut McsNode;
        let mut succ = node.next.load(Ordering::Acquire);
        let mut awaited_link = false;
        if succ.is_null() {
            if self
                .tail
                .compare_exchange(me, ptr::null_mut(), Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                return Release::Freed;
            }
            // A successor swapped itself in but has not linked yet.
            awaited_link = true;
            let backoff = Backoff::new();
            loop {
                succ = node.next.load(Ordering::Acquire);
                if !succ.is_null() {
                    break;
                }
                backoff.snooze();
            }
        }
        // SAFETY: the successor spins on its flag and cannot leave before
        // this store.
        unsafe { (*succ).locked.store(false, Ordering::Release) };
        Release::HandedOver { awaited_link }
    }
}

/// Proof of ownership; releases on drop.
pub struct McsGuard<'a, T: ?Sized> {
    lock: &'a McsLock<T>,
    node: &'a McsNode,
    pred: Option<usize>,
    // Sharing a guard shares `&T`; keep it `Sync` only when `T` is.
    _data: PhantomData<&'a mut T>,
}

impl<T: ?Sized> McsGuard<'_, T> {
    /// The [`McsNode::id`] this acquisition queued behind, if it had to wait.
    pub fn predecessor(&self) -> Option<usize> {
        self.pred
    }

    pub fn node_id(&self) -> usize {
        self.node.id()
    }

    /// Releases explicitly, reporting which path the release took.
    pub fn unlock(self) -> Release {
        let this = std::mem::ManuallyDrop::new(self);
        this.lock.release(this.node)
    }
}

impl<T: ?Sized> Deref for McsGuard<'_, T> {
    type Target = T;

    fn deref(&self) -> &T {
        // SAFETY: the guard proves exclusive ownership.
        unsafe { &*self.lock.data.get() }
    }
}

impl<T: ?Sized> DerefMut for McsGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        // SAFETY: the guard proves exclusive ownership.
        unsafe { &mut *self.lock.data.get() }
    }
}

impl<T: ?Sized> Drop for McsGuard<'_, T> {
    fn drop(&mut self) {
        self.lock.release(self.node);
    }
}
