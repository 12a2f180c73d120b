//! Count-based intrinsic motivation.

use std::collections::HashMap;

/// Per-task visitation counts. Absent keys count as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisitCounts {
    counts: HashMap<usize, u64>,
}

impl VisitCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Increments the count of `state_index`, returning the new count.
    pub fn record_visit(&mut self, state_index: usize) -> u64 {
        let n = self.counts.entry(state_index).or_insert(0);
        *n += 1;
        *n
    }

    pub fn get(&self, state_index: usize) -> u64 {
        self.counts.get(&state_index).copied().unwrap_or(0)
    }

    pub fn distinct_states(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// `eta / sqrt(n + eps_count)`.
pub fn intrinsic_reward(n: u64, eta: f64, eps_count: f64) -> f64 {
    eta / (n as f64 + eps_count).sqrt()
}

pub fn total_reward(r_ext: f64, r_int: f64) -> f64 {
    r_ext + r_int
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting() {
        let mut c = VisitCounts::new();
        assert_eq!(c.record_visit(4), 1);
        assert_eq!(c.record_visit(4), 2);
        assert_eq!(c.record_visit(4), 3);
        assert_eq!(c.record_visit(9), 1);
        assert_eq!(c.get(4), 3);
        assert_eq!(c.get(0), 0);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn reward_values() {
        assert!((intrinsic_reward(0, 0.1111, 1.0) - 0.1111).abs() < 1e-15);
        assert!((intrinsic_reward(8, 0.1111, 1.0) - 0.1111 / 3.0).abs() < 1e-15);
        assert_eq!(intrinsic_reward(17, 0.0, 1.0), 0.0);
        assert!((total_reward(-0.1, 0.1111) - 0.0111).abs() < 1e-15);
        assert_eq!(total_reward(3.5, 0.0), 3.5);
        assert_eq!(total_reward(0.0, -2.25), -2.25);
    }

    proptest! {
        #[test]
        fn strictly_decreasing_in_count(n in 0u64..100_000, eta in 1e-4f64..10.0, eps in 1e-3f64..10.0) {
            prop_assert!(intrinsic_reward(n + 1, eta, eps) < intrinsic_reward(n, eta, eps));
        }

        #[test]
        fn cumulative_revisit_reward(k in 1usize..200, eta in 0.0f64..1.0, eps in 0.1f64..5.0) {
            // post-increment ordering: the i-th visit (1-based) pays eta / sqrt(i + eps)
            let mut counts = VisitCounts::new();
            let got: f64 = (0..k).map(|_| intrinsic_reward(counts.record_visit(3), eta, eps)).sum();
            let want: f64 = (1..=k).map(|i| eta / (i as f64 + eps).sqrt()).sum();
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}
