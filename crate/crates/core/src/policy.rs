//! Stochastic policies over options, `μ(o | s)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ROW_TOL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionPolicy {
    num_states: usize,
    num_options: usize,
    /// Indexed by `s * num_options + o`.
    probs: Vec<f64>,
}

impl OptionPolicy {
    pub fn new(num_states: usize, num_options: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_options == 0 || probs.len() != num_states * num_options {
            return Err(Error::Shape(format!(
                "policy table has {} entries for {num_states}x{num_options}",
                probs.len()
            )));
        }
        for s in 0..num_states {
            let row = &probs[s * num_options..(s + 1) * num_options];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self { num_states, num_options, probs })
    }

    /// One option per state.
    pub fn deterministic(num_options: usize, choice: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; choice.len() * num_options];
        for (s, &o) in choice.iter().enumerate() {
            if o >= num_options {
                return Err(Error::InvalidPolicy(format!("state {s} picks option {o} of {num_options}")));
            }
            probs[s * num_options + o] = 1.0;
        }
        Self::new(choice.len(), num_options, probs)
    }

    pub fn uniform(num_states: usize, num_options: usize) -> Self {
        Self::uniform_over(num_states, num_options, &(0..num_options).collect::<Vec<_>>())
            .expect("non-empty support")
    }

    /// Uniform over the given option indices in every state.
    pub fn uniform_over(num_states: usize, num_options: usize, support: &[usize]) -> Result<Self> {
        if support.is_empty() || support.iter().any(|&o| o >= num_options) {
            return Err(Error::InvalidPolicy(format!("bad support {support:?} for {num_options} options")));
        }
        let mut row = vec![0.0; num_options];
        for &o in support {
            row[o] = 1.0 / support.len() as f64;
        }
        Self::new(num_states, num_options, row.repeat(num_states))
    }

    /// Greedy with respect to `q` (indexed `s * num_options + o`); ties go to
    /// the lowest index.
    pub fn greedy(num_states: usize, num_options: usize, q: &[f64]) -> Self {
        let choice = greedy_choice(num_states, num_options, q);
        Self::deterministic(num_options, &choice).expect("argmax is in range")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    pub fn prob(&self, s: usize, o: usize) -> f64 {
        self.probs[s * self.num_options + o]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_options..(s + 1) * self.num_options]
    }

    /// `Σ_o μ(o|s) q(s, o)`.
    pub fn expectation(&self, s: usize, q_row: &[f64]) -> f64 {
        self.row(s).iter().zip(q_row).map(|(p, q)| p * q).sum()
    }

    /// The chosen option in every state, if the policy is deterministic.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.num_states).map(|s| self.row(s).iter().position(|&p| p == 1.0)).collect()
    }
}

/// Lowest-index argmax of a slice.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy option per state for a flat `q` table.
pub fn greedy_choice(num_states: usize, num_options: usize, q: &[f64]) -> Vec<usize> {
    assert_eq!(q.len(), num_states * num_options, "q table shape");
    (0..num_states).map(|s| argmax(&q[s * num_options..(s + 1) * num_options])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn rows_are_validated() {
        assert!(OptionPolicy::new(1, 2, vec![0.3, 0.3]).is_err());
        assert!(OptionPolicy::new(1, 2, vec![1.2, -0.2]).is_err());
        assert!(OptionPolicy::deterministic(2, &[0, 2]).is_err());
        assert!(OptionPolicy::uniform_over(3, 2, &[2]).is_err());
    }

    #[test]
    fn uniform_and_expectation() {
        let mu = OptionPolicy::uniform(3, 2);
        assert_eq!(mu.expectation(1, &[2.0, 4.0]), 3.0);
        let det = OptionPolicy::deterministic(2, &[1, 0]).unwrap();
        assert_eq!(det.expectation(0, &[2.0, 4.0]), 4.0);
        assert_eq!(det.as_deterministic(), Some(vec![1, 0]));
        assert_eq!(mu.as_deterministic(), None);
    }

    #[test]
    fn greedy_policy() {
        let mu = OptionPolicy::greedy(2, 3, &[0.0, 1.0, 1.0, 5.0, -1.0, 0.0]);
        assert_eq!(mu.as_deterministic(), Some(vec![1, 0]));
    }
}
