//! Iterate-indexed convergence records shared by every solver loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub objective_surrogate: f64,
    pub objective_original: f64,
    pub kkt_residual: Option<f64>,
    pub wall_ns: u64,
}

/// Ordered list of trace records owned by a single solver run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            started: Some(Instant::now()),
        }
    }

    /// Appends a record; the iteration index is the next integer after the last one.
    pub fn push(&mut self, objective_surrogate: f64, objective_original: f64, kkt_residual: Option<f64>) {
        let iter = self.records.last().map_or(0, |r| r.iter + 1);
        let wall_ns = self
            .started
            .map_or(0, |t| t.elapsed().as_nanos().min(u64::MAX as u128) as u64);
        self.records.push(TraceRecord {
            iter,
            objective_surrogate,
            objective_original,
            kkt_residual,
            wall_ns,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Largest increase of the surrogate objective between consecutive records.
    /// Non-positive for a descending run.
    pub fn max_surrogate_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].objective_surrogate - w[0].objective_surrogate)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_surrogate_nonincreasing(&self, slack: f64) -> bool {
        self.records.len() < 2 || self.max_surrogate_increase() <= slack
    }

    /// First iteration whose original objective changed by at most `eps` relative
    /// to the previous record.
    pub fn iterations_to_eps(&self, eps: f64) -> Option<u64> {
        self.records.windows(2).find_map(|w| {
            let prev = w[0].objective_original;
            let cur = w[1].objective_original;
            ((cur - prev).abs() <= eps * prev.abs().max(f64::MIN_POSITIVE)).then_some(w[1].iter)
        })
    }

    /// Appends every record of `other`, renumbering iterations so they continue this trace.
    pub fn extend_renumbered(&mut self, other: &ConvergenceTrace) {
        let offset = self.records.last().map_or(0, |r| r.iter + 1);
        let base = other.records.first().map_or(0, |r| r.iter);
        self.records.extend(other.records.iter().map(|r| TraceRecord {
            iter: offset + (r.iter - base),
            ..*r
        }));
    }
}

/// How a solver loop terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    /// The iteration cap was hit; the best iterate seen is returned.
    MaxItersExceeded,
}

impl SolveStatus {
    pub fn converged(self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterations_strictly_increase() {
        let mut t = ConvergenceTrace::new();
        for k in 0..5 {
            t.push(10.0 - k as f64, 10.0 - k as f64, None);
        }
        assert!(t.records.windows(2).all(|w| w[1].iter == w[0].iter + 1));
        assert!(t.is_surrogate_nonincreasing(0.0));
    }

    #[test]
    fn eps_detection() {
        let mut t = ConvergenceTrace::new();
        for v in [8.0, 4.0, 2.0, 2.0000001] {
            t.push(v, v, None);
        }
        assert_eq!(t.iterations_to_eps(1e-4), Some(3));
        assert_eq!(t.iterations_to_eps(1e-12), None);
    }

    #[test]
    fn renumbered_extension() {
        let mut a = ConvergenceTrace::new();
        a.push(3.0, 3.0, None);
        let mut b = ConvergenceTrace::new();
        b.push(2.0, 2.0, None);
        b.push(1.0, 1.0, None);
        a.extend_renumbered(&b);
        let iters: Vec<u64> = a.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 1, 2]);
    }
}
