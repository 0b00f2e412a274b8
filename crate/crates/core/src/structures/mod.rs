//! Concurrent data structures under study.

pub mod mcs;
pub mod skiplist;
pub mod treiber;

pub use mcs::{McsGuard, McsLock, McsNode, Release};
pub use skiplist::{Audit, SkipListSet};
pub use treiber::TreiberStack;
