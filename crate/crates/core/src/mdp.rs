//! Finite MDPs, options, and option execution.
//!
//! States, actions, and options are plain `usize` indices. Rewards are stored
//! as indices into a finite list of reward values so that dynamics tables are
//! exact.

use std::fmt;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repo-wide deterministic generator. One stream per run.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeds the repo-wide generator.
pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Tolerance on probability rows.
pub const ROW_TOL: f64 = 1e-12;

/// Default guard on option length during execution.
pub const DEFAULT_MAX_OPTION_STEPS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next_state: usize,
    pub reward_index: usize,
    pub prob: f64,
}

/// Tabular dynamics `p(s', r | s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    reward_values: Vec<f64>,
    /// Indexed by `s * num_actions + a`.
    dynamics: Vec<Vec<Outcome>>,
    start_state: Option<usize>,
}

/// A single invariant violation found by [`validate_mdp`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptySpace,
    RowShape { expected: usize, found: usize },
    RowSum { state: usize, action: usize, sum: f64 },
    NegativeProb { state: usize, action: usize, prob: f64 },
    NextStateOutOfRange { state: usize, action: usize, next_state: usize },
    RewardIndexOutOfRange { state: usize, action: usize, reward_index: usize },
    NonFiniteReward { reward_index: usize },
    StartOutOfRange { start: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace => write!(f, "state and action counts must be positive"),
            Violation::RowShape { expected, found } => {
                write!(f, "expected {expected} dynamics rows, found {found}")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "row (s={state}, a={action}) sums to {sum}")
            }
            Violation::NegativeProb { state, action, prob } => {
                write!(f, "row (s={state}, a={action}) has negative probability {prob}")
            }
            Violation::NextStateOutOfRange { state, action, next_state } => {
                write!(f, "row (s={state}, a={action}) next_state {next_state} out of range")
            }
            Violation::RewardIndexOutOfRange { state, action, reward_index } => {
                write!(f, "row (s={state}, a={action}) reward_index {reward_index} out of range")
            }
            Violation::NonFiniteReward { reward_index } => {
                write!(f, "reward value {reward_index} is not finite")
            }
            Violation::StartOutOfRange { start } => write!(f, "start state {start} out of range"),
        }
    }
}

impl FiniteMdp {
    /// Builds an MDP without checking invariants; see [`validate_mdp`] and
    /// [`FiniteMdp::checked`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        reward_values: Vec<f64>,
        dynamics: Vec<Vec<Outcome>>,
        start_state: Option<usize>,
    ) -> Self {
        Self { num_states, num_actions, reward_values, dynamics, start_state }
    }

    /// Builds an MDP and rejects it if any invariant is violated.
    pub fn checked(
        num_states: usize,
        num_actions: usize,
        reward_values: Vec<f64>,
        dynamics: Vec<Vec<Outcome>>,
        start_state: Option<usize>,
    ) -> Result<Self> {
        let mdp = Self::new(num_states, num_actions, reward_values, dynamics, start_state);
        let report = validate_mdp(&mdp);
        if report.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report.iter().map(ToString::to_string).collect()))
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn reward_values(&self) -> &[f64] {
        &self.reward_values
    }

    pub fn start_state(&self) -> Option<usize> {
        self.start_state
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        assert!(s < self.num_states && a < self.num_actions, "index out of range: s={s}, a={a}");
        &self.dynamics[s * self.num_actions + a]
    }

    pub fn reward(&self, outcome: &Outcome) -> f64 {
        self.reward_values[outcome.reward_index]
    }

    /// Expected one-step reward `Σ p(s',r|s,a) r`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.outcomes(s, a).iter().map(|o| o.prob * self.reward(o)).sum()
    }
}

/// Lists every violated invariant; empty when the MDP is well formed.
pub fn validate_mdp(mdp: &FiniteMdp) -> Vec<Violation> {
    let mut report = Vec::new();
    if mdp.num_states == 0 || mdp.num_actions == 0 {
        report.push(Violation::EmptySpace);
        return report;
    }
    let expected = mdp.num_states * mdp.num_actions;
    if mdp.dynamics.len() != expected {
        report.push(Violation::RowShape { expected, found: mdp.dynamics.len() });
        return report;
    }
    for (k, v) in mdp.reward_values.iter().enumerate() {
        if !v.is_finite() {
            report.push(Violation::NonFiniteReward { reward_index: k });
        }
    }
    for (idx, row) in mdp.dynamics.iter().enumerate() {
        let (state, action) = (idx / mdp.num_actions, idx % mdp.num_actions);
        let mut sum = 0.0;
        for o in row {
            if o.prob < 0.0 {
                report.push(Violation::NegativeProb { state, action, prob: o.prob });
            }
            if o.next_state >= mdp.num_states {
                report.push(Violation::NextStateOutOfRange { state, action, next_state: o.next_state });
            }
            if o.reward_index >= mdp.reward_values.len() {
                report.push(Violation::RewardIndexOutOfRange {
                    state,
                    action,
                    reward_index: o.reward_index,
                });
            }
            sum += o.prob;
        }
        if (sum - 1.0).abs() > ROW_TOL {
            report.push(Violation::RowSum { state, action, sum });
        }
    }
    if let Some(start) = mdp.start_state {
        if start >= mdp.num_states {
            report.push(Violation::StartOutOfRange { start });
        }
    }
    report
}

/// Samples an index from a probability vector. The last positive entry absorbs
/// rounding slack.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `(s', r)` from the dynamics row of `(s, a)`.
pub fn step(mdp: &FiniteMdp, s: usize, a: usize, rng: &mut Rng) -> (usize, f64) {
    let row = mdp.outcomes(s, a);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = None;
    for o in row {
        if o.prob <= 0.0 {
            continue;
        }
        acc += o.prob;
        chosen = Some(o);
        if u < acc {
            break;
        }
    }
    let o = chosen.expect("dynamics row has no positive-probability outcome");
    (o.next_state, mdp.reward(o))
}

/// An option: a policy over primitive actions plus a per-state termination
/// probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionDef {
    num_states: usize,
    num_actions: usize,
    /// Indexed by `s * num_actions + a`.
    policy: Vec<f64>,
    termination: Vec<f64>,
}

impl OptionDef {
    pub fn new(num_states: usize, num_actions: usize, policy: Vec<f64>, termination: Vec<f64>) -> Result<Self> {
        if policy.len() != num_states * num_actions || termination.len() != num_states {
            return Err(Error::Shape(format!(
                "option tables have {} policy / {} termination entries for {num_states}x{num_actions}",
                policy.len(),
                termination.len()
            )));
        }
        for s in 0..num_states {
            let row = &policy[s * num_actions..(s + 1) * num_actions];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidOption(format!("policy row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidOption(format!("policy row {s} sums to {sum}")));
            }
            let b = termination[s];
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidOption(format!("termination at state {s} is {b}")));
            }
        }
        Ok(Self { num_states, num_actions, policy, termination })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `π(a | s, o)`.
    pub fn pi(&self, s: usize, a: usize) -> f64 {
        self.policy[s * self.num_actions + a]
    }

    pub fn policy_row(&self, s: usize) -> &[f64] {
        &self.policy[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// `β(s, o)`.
    pub fn beta(&self, s: usize) -> f64 {
        self.termination[s]
    }

    pub fn with_termination(&self, termination: Vec<f64>) -> Result<Self> {
        Self::new(self.num_states, self.num_actions, self.policy.clone(), termination)
    }
}

/// The one-step option that always takes action `a`.
pub fn primitive_option(a: usize, num_states: usize, num_actions: usize) -> OptionDef {
    assert!(a < num_actions, "action {a} out of range");
    let mut policy = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        policy[s * num_actions + a] = 1.0;
    }
    OptionDef::new(num_states, num_actions, policy, vec![1.0; num_states]).expect("primitive option is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionSet {
    options: Vec<OptionDef>,
    labels: Vec<String>,
}

impl OptionSet {
    pub fn new(options: Vec<OptionDef>, labels: Vec<String>) -> Result<Self> {
        let Some(first) = options.first() else {
            return Err(Error::InvalidOption("option set is empty".into()));
        };
        if labels.len() != options.len() {
            return Err(Error::Shape(format!("{} labels for {} options", labels.len(), options.len())));
        }
        let (ns, na) = (first.num_states, first.num_actions);
        if let Some(bad) = options.iter().position(|o| o.num_states != ns || o.num_actions != na) {
            return Err(Error::InvalidOption(format!("option {bad} is defined over different spaces")));
        }
        Ok(Self { options, labels })
    }

    /// All primitive actions as one-step options, labelled by `names`.
    pub fn primitives(num_states: usize, num_actions: usize, names: &[&str]) -> Self {
        let options = (0..num_actions).map(|a| primitive_option(a, num_states, num_actions)).collect();
        let labels = (0..num_actions)
            .map(|a| names.get(a).map_or_else(|| format!("a{a}"), |n| (*n).to_string()))
            .collect();
        Self { options, labels }
    }

    /// Concatenation, keeping order (`self` first).
    pub fn concat(&self, other: &OptionSet) -> Result<Self> {
        let mut options = self.options.clone();
        options.extend(other.options.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self::new(options, labels)
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.options[0].num_states
    }

    pub fn num_actions(&self) -> usize {
        self.options[0].num_actions
    }

    pub fn get(&self, o: usize) -> &OptionDef {
        &self.options[o]
    }

    pub fn options(&self) -> &[OptionDef] {
        &self.options
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Indices of options that are one-step primitives (β ≡ 1, deterministic
    /// policy that takes the same action everywhere).
    pub fn primitive_indices(&self) -> Vec<usize> {
        let na = self.num_actions();
        self.options
            .iter()
            .enumerate()
            .filter(|(_, opt)| {
                opt.termination.iter().all(|&b| b == 1.0)
                    && (0..na).any(|a| (0..opt.num_states).all(|s| opt.pi(s, a) == 1.0))
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// The options that could have produced action `a` in state `s`, with their
/// importance ratios `ρ(o) = π(a|s,o) / π(a|s,executing)`. Options with
/// `ρ = 0` are omitted.
pub fn importance_ratios(opts: &OptionSet, s: usize, a: usize, executing: usize) -> Vec<(usize, f64)> {
    let denom = opts.get(executing).pi(s, a);
    assert!(denom > 0.0, "executing option {executing} cannot take action {a} in state {s}");
    opts.options()
        .iter()
        .enumerate()
        .filter_map(|(o, opt)| {
            let p = opt.pi(s, a);
            (p > 0.0).then(|| (o, p / denom))
        })
        .collect()
}

/// One primitive transition `(s, a, r, s')`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// The record of one option execution from initiation to termination.
#[derive(Clone, Debug, PartialEq)]
pub struct OptionSegment {
    pub start_state: usize,
    pub option: usize,
    /// Cumulative reward `R̂`.
    pub cum_reward: f64,
    /// Number of primitive steps `L̂`.
    pub length: usize,
    pub end_state: usize,
    pub transitions: Vec<Transition>,
    /// Set when `max_steps` was reached before the option terminated.
    pub truncated: bool,
}

impl OptionSegment {
    /// The option-level view used by inter-option updates.
    pub fn summary(&self) -> SmdpSample {
        SmdpSample {
            state: self.start_state,
            option: self.option,
            cum_reward: self.cum_reward,
            length: self.length as f64,
            end_state: self.end_state,
        }
    }
}

/// One option-level transition `(Ŝ, Ô, R̂, L̂, Ŝ')`. The length is real so
/// that model-generated samples with expected durations fit the same type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmdpSample {
    pub state: usize,
    pub option: usize,
    pub cum_reward: f64,
    pub length: f64,
    pub end_state: usize,
}

/// Runs option `option_index` from `s0` until it terminates or `max_steps`
/// primitive steps elapse.
pub fn execute_option(
    mdp: &FiniteMdp,
    opts: &OptionSet,
    option_index: usize,
    s0: usize,
    rng: &mut Rng,
    max_steps: usize,
) -> OptionSegment {
    assert!(max_steps >= 1, "max_steps must be at least 1");
    let opt = opts.get(option_index);
    let mut s = s0;
    let mut transitions = Vec::new();
    let mut cum_reward = 0.0;
    let mut truncated = true;
    while transitions.len() < max_steps {
        let a = sample_index(opt.policy_row(s), rng);
        let (next, r) = step(mdp, s, a, rng);
        transitions.push(Transition { state: s, action: a, reward: r, next_state: next });
        cum_reward += r;
        s = next;
        if terminates(opt.beta(s), rng) {
            truncated = false;
            break;
        }
    }
    OptionSegment {
        start_state: s0,
        option: option_index,
        cum_reward,
        length: transitions.len(),
        end_state: s,
        transitions,
        truncated,
    }
}

/// Samples a termination event with probability `beta`. Always consumes one
/// draw so that streams stay aligned across option sets.
pub fn terminates(beta: f64, rng: &mut Rng) -> bool {
    let u: f64 = rng.random();
    u < beta
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_state_chain() -> FiniteMdp {
        // s0 -> s1 (reward 0), s1 -> s0 (reward 1), single action.
        FiniteMdp::checked(
            2,
            1,
            vec![0.0, 1.0],
            vec![
                vec![Outcome { next_state: 1, reward_index: 0, prob: 1.0 }],
                vec![Outcome { next_state: 0, reward_index: 1, prob: 1.0 }],
            ],
            Some(0),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_mdp_has_empty_report() {
        assert!(validate_mdp(&two_state_chain()).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let mdp = FiniteMdp::new(
            2,
            1,
            vec![0.0],
            vec![
                vec![Outcome { next_state: 1, reward_index: 0, prob: 0.9 }],
                vec![Outcome { next_state: 0, reward_index: 0, prob: 1.0 }],
            ],
            None,
        );
        let report = validate_mdp(&mdp);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::RowSum { state: 0, action: 0, .. }));
    }

    #[test]
    fn out_of_range_next_state_is_reported() {
        let mdp = FiniteMdp::new(
            1,
            1,
            vec![0.0],
            vec![vec![Outcome { next_state: 7, reward_index: 0, prob: 1.0 }]],
            None,
        );
        let report = validate_mdp(&mdp);
        assert_eq!(report, vec![Violation::NextStateOutOfRange { state: 0, action: 0, next_state: 7 }]);
        assert!(report[0].to_string().contains('7'));
    }

    #[test]
    fn checked_rejects_invalid() {
        let err = FiniteMdp::checked(1, 1, vec![0.0], vec![vec![]], None).unwrap_err();
        assert!(matches!(err, Error::InvalidMdp(_)));
    }

    #[test]
    fn deterministic_row_always_same_outcome() {
        let mdp = two_state_chain();
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            assert_eq!(step(&mdp, 1, 0, &mut rng), (0, 1.0));
        }
    }

    #[test]
    fn two_outcome_row_frequency_matches() {
        let mdp = FiniteMdp::checked(
            2,
            1,
            vec![0.0],
            vec![
                vec![
                    Outcome { next_state: 0, reward_index: 0, prob: 0.5 },
                    Outcome { next_state: 1, reward_index: 0, prob: 0.5 },
                ],
                vec![Outcome { next_state: 0, reward_index: 0, prob: 1.0 }],
            ],
            None,
        )
        .unwrap();
        let mut rng = seeded_rng(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| step(&mdp, 0, 0, &mut rng).0 == 1).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    #[should_panic]
    fn step_with_bad_index_faults() {
        let mdp = two_state_chain();
        step(&mdp, 5, 0, &mut seeded_rng(0));
    }

    #[test]
    fn primitive_option_tables() {
        let opt = primitive_option(0, 3, 2);
        for s in 0..3 {
            assert_eq!(opt.policy_row(s), &[1.0, 0.0]);
            assert_eq!(opt.beta(s), 1.0);
        }
    }

    #[test]
    fn primitive_option_runs_one_step() {
        let mdp = two_state_chain();
        let opts = OptionSet::primitives(2, 1, &["go"]);
        let mut rng = seeded_rng(5);
        for s in 0..2 {
            let seg = execute_option(&mdp, &opts, 0, s, &mut rng, 50);
            assert_eq!(seg.length, 1);
            assert_eq!(seg.end_state, 1 - s);
            assert!(!seg.truncated);
        }
    }

    #[test]
    fn never_terminating_option_is_truncated() {
        let mdp = two_state_chain();
        let opt = OptionDef::new(2, 1, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let opts = OptionSet::new(vec![opt], vec!["loop".into()]).unwrap();
        let seg = execute_option(&mdp, &opts, 0, 0, &mut seeded_rng(1), 50);
        assert!(seg.truncated);
        assert_eq!(seg.length, 50);
    }

    #[test]
    fn constant_beta_gives_geometric_lengths() {
        let mdp = two_state_chain();
        let opt = OptionDef::new(2, 1, vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let opts = OptionSet::new(vec![opt], vec!["half".into()]).unwrap();
        let mut rng = seeded_rng(99);
        let n = 100_000;
        let total: usize = (0..n).map(|_| execute_option(&mdp, &opts, 0, 0, &mut rng, 10_000).length).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.02 * 2.0, "mean {mean}");
    }

    #[test]
    fn option_validation() {
        assert!(OptionDef::new(1, 2, vec![0.5, 0.4], vec![1.0]).is_err());
        assert!(OptionDef::new(1, 2, vec![0.5, 0.5], vec![1.5]).is_err());
        assert!(OptionDef::new(1, 2, vec![1.5, -0.5], vec![1.0]).is_err());
        assert!(OptionSet::new(vec![], vec![]).is_err());
    }

    #[test]
    fn primitive_indices_detects_one_step_options() {
        let prims = OptionSet::primitives(2, 2, &["l", "r"]);
        let other = OptionDef::new(2, 2, vec![0.5; 4], vec![1.0, 0.0]).unwrap();
        let extra = OptionSet::new(vec![other], vec!["x".into()]).unwrap();
        assert_eq!(prims.concat(&extra).unwrap().primitive_indices(), vec![0, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_mdp(seed: u64) -> FiniteMdp {
            let mut rng = seeded_rng(seed);
            let (ns, na) = (4, 2);
            let mut dynamics = Vec::new();
            for _ in 0..ns * na {
                let w: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.01).collect();
                let z: f64 = w.iter().sum();
                let row = w
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| Outcome { next_state: j, reward_index: j % 2, prob: x / z })
                    .collect();
                dynamics.push(row);
            }
            FiniteMdp::new(ns, na, vec![0.0, 1.0], dynamics, Some(0))
        }

        proptest! {
            #[test]
            fn segments_are_consistent_and_reproducible(seed in 0u64..1_000, beta in 0.05f64..1.0) {
                let mdp = random_mdp(seed);
                let opt = OptionDef::new(4, 2, vec![0.5; 8], vec![beta; 4]).unwrap();
                let opts = OptionSet::new(vec![opt], vec!["o".into()]).unwrap();
                let a = execute_option(&mdp, &opts, 0, 1, &mut seeded_rng(seed), 10_000);
                let b = execute_option(&mdp, &opts, 0, 1, &mut seeded_rng(seed), 10_000);
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.length, a.transitions.len());
                let sum: f64 = a.transitions.iter().map(|t| t.reward).sum();
                prop_assert_eq!(sum, a.cum_reward);
                prop_assert_eq!(a.transitions[0].state, 1);
                for w in a.transitions.windows(2) {
                    prop_assert_eq!(w[0].next_state, w[1].state);
                }
                prop_assert_eq!(a.transitions.last().unwrap().next_state, a.end_state);
            }
        }
    }
}
