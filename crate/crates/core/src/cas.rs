//! Bounded compare-and-swap loops on voxel words.
//!
//! A voxel update reads the word, computes the new value and attempts a
//! swap. After `retry_limit` failed attempts the update is finished under a
//! process-wide fallback lock with an unbounded loop, so contended evidence
//! is serialised rather than dropped.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;

static FALLBACK: Mutex<()> = Mutex::new(());

/// Retry counters accumulated by one worker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CasCounters {
    /// Failed swap attempts that were retried.
    pub retries: u64,
    /// Updates that exhausted the retry budget and took the fallback path.
    pub failures: u64,
}

impl CasCounters {
    pub fn merge(&mut self, other: CasCounters) {
        self.retries += other.retries;
        self.failures += other.failures;
    }
}

pub trait CasWord {
    type Word: Copy + Eq;
    fn load_word(&self) -> Self::Word;
    fn try_swap(&self, current: Self::Word, new: Self::Word) -> Result<Self::Word, Self::Word>;
    fn update_unbounded(&self, f: &impl Fn(Self::Word) -> Self::Word) -> Self::Word;
}

macro_rules! impl_cas_word {
    ($atomic:ty, $word:ty) => {
        impl CasWord for $atomic {
            type Word = $word;

            #[inline]
            fn load_word(&self) -> $word {
                self.load(Ordering::Acquire)
            }

            #[inline]
            fn try_swap(&self, current: $word, new: $word) -> Result<$word, $word> {
                self.compare_exchange(current, new, Ordering::AcqRel, Ordering::Acquire)
            }

            fn update_unbounded(&self, f: &impl Fn($word) -> $word) -> $word {
                self.fetch_update(Ordering::AcqRel, Ordering::Acquire, |w| Some(f(w)))
                    .expect("closure always returns Some")
            }
        }
    };
}

impl_cas_word!(AtomicU32, u32);
impl_cas_word!(AtomicU64, u64);

/// Applies `f` to the word with at most `retry_limit` swap attempts before
/// falling back. Returns `(old, new)`.
#[inline]
pub fn cas_update<A: CasWord>(
    word: &A,
    retry_limit: u32,
    counters: &mut CasCounters,
    f: impl Fn(A::Word) -> A::Word,
) -> (A::Word, A::Word) {
    let mut current = word.load_word();
    for _ in 0..retry_limit.max(1) {
        let new = f(current);
        if new == current {
            return (current, new);
        }
        match word.try_swap(current, new) {
            Ok(_) => return (current, new),
            Err(actual) => {
                counters.retries += 1;
                current = actual;
            }
        }
    }
    counters.failures += 1;
    let _guard = FALLBACK.lock().unwrap_or_else(|e| e.into_inner());
    let old = word.update_unbounded(&f);
    (old, f(old))
}

/// `f32` stored as its bit pattern in an `AtomicU32`.
#[inline]
pub fn cas_update_f32(
    word: &AtomicU32,
    retry_limit: u32,
    counters: &mut CasCounters,
    f: impl Fn(f32) -> f32,
) -> (f32, f32) {
    let (old, new) = cas_update(word, retry_limit, counters, |bits| f(f32::from_bits(bits)).to_bits());
    (f32::from_bits(old), f32::from_bits(new))
}

#[inline]
pub fn load_f32(word: &AtomicU32) -> f32 {
    f32::from_bits(word.load(Ordering::Acquire))
}

#[inline]
pub fn store_f32(word: &AtomicU32, v: f32) {
    word.store(v.to_bits(), Ordering::Release);
}
