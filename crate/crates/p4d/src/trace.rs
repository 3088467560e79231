//! Process-wide invocation counters used to prove inference-cost parity:
//! the plain student forward path must never touch the teacher or the
//! perception decoder.

use std::sync::atomic::{AtomicU64, Ordering};

static TEACHER_ENCODE: AtomicU64 = AtomicU64::new(0);
static TEACHER_DECODE: AtomicU64 = AtomicU64::new(0);
static D4DP: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct InvocationCounts {
    pub teacher_encode: u64,
    pub teacher_decode: u64,
    pub d4dp: u64,
}

impl InvocationCounts {
    pub fn total(&self) -> u64 {
        self.teacher_encode + self.teacher_decode + self.d4dp
    }
}

pub fn reset() {
    TEACHER_ENCODE.store(0, Ordering::SeqCst);
    TEACHER_DECODE.store(0, Ordering::SeqCst);
    D4DP.store(0, Ordering::SeqCst);
}

pub fn snapshot() -> InvocationCounts {
    InvocationCounts {
        teacher_encode: TEACHER_ENCODE.load(Ordering::SeqCst),
        teacher_decode: TEACHER_DECODE.load(Ordering::SeqCst),
        d4dp: D4DP.load(Ordering::SeqCst),
    }
}

pub(crate) fn count_teacher_encode() {
    TEACHER_ENCODE.fetch_add(1, Ordering::SeqCst);
}

pub(crate) fn count_teacher_decode() {
    TEACHER_DECODE.fetch_add(1, Ordering::SeqCst);
}

pub(crate) fn count_d4dp() {
    D4DP.fetch_add(1, Ordering::SeqCst);
}
