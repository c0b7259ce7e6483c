//! Global PDE-solve accounting.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

/// Counts forward, adjoint and Born (linearized) solves.
///
/// Counters are atomic so that per-source solves may run on several threads;
/// totals do not depend on the order in which the increments land.
#[derive(Debug, Default)]
pub struct SolveLedger {
    forward: AtomicU64,
    adjoint: AtomicU64,
    born: AtomicU64,
}

/// A snapshot of the ledger counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveCounts {
    pub forward: u64,
    pub adjoint: u64,
    pub born: u64,
}

impl SolveCounts {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint + self.born
    }

    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: SolveCounts) -> SolveCounts {
        SolveCounts {
            forward: self.forward - earlier.forward,
            adjoint: self.adjoint - earlier.adjoint,
            born: self.born - earlier.born,
        }
    }
}

impl fmt::Display for SolveCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} solves (forward {}, adjoint {}, born {})",
            self.total(),
            self.forward,
            self.adjoint,
            self.born
        )
    }
}

impl SolveLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_adjoint(&self) {
        self.adjoint.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_born(&self) {
        self.born.fetch_add(1, Ordering::Relaxed);
    }

    pub fn counts(&self) -> SolveCounts {
        SolveCounts {
            forward: self.forward.load(Ordering::Relaxed),
            adjoint: self.adjoint.load(Ordering::Relaxed),
            born: self.born.load(Ordering::Relaxed),
        }
    }

    /// Forward + adjoint + Born, each counted as one solve.
    pub fn total(&self) -> u64 {
        self.counts().total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_independent_per_kind() {
        let ledger = SolveLedger::new();
        ledger.record_forward();
        ledger.record_forward();
        ledger.record_adjoint();
        ledger.record_born();
        let c = ledger.counts();
        assert_eq!((c.forward, c.adjoint, c.born), (2, 1, 1));
        assert_eq!(ledger.total(), 4);
        let before = c;
        ledger.record_born();
        assert_eq!(ledger.counts().since(before).born, 1);
        assert_eq!(ledger.counts().since(before).total(), 1);
    }

    #[test]
    fn concurrent_increments_are_not_lost() {
        let ledger = SolveLedger::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        ledger.record_forward();
                        ledger.record_adjoint();
                    }
                });
            }
        });
        assert_eq!(ledger.total(), 8000);
    }
}
