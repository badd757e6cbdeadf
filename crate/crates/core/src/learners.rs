//! Incremental average-reward learners over options.
//!
//! Inter-option learners update once per completed option using the
//! option-level sample `(Ŝ, Ô, R̂, L̂, Ŝ')`. Intra-option learners update after
//! every primitive step, for every option that could have produced the
//! observed action, weighted by the importance ratio `ρ`.
//!
//! All Differential updates move `R̄` by exactly `η` times the total change
//! in `Q`, so `R̄ − R̄₀ = η (ΣQ − ΣQ₀)` holds throughout a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{importance_ratios, sample_index, step, terminates, FiniteMdp, OptionSet, Rng, SmdpSample, Transition};
use crate::policy::{argmax, OptionPolicy};
use rand::Rng as _;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `α / n(s, o)` where `n` counts (ρ-weighted) updates of the pair.
    OneOverVisits,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub schedule: Schedule,
    /// How ε-greedy selection breaks ties between equal values.
    #[serde(default)]
    pub ties: TieBreak,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Uniform among the maximisers.
    #[default]
    Random,
    Lowest,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self { alpha: 0.125, beta: 0.5, eta: 0.1, epsilon: 0.1, schedule: Schedule::Constant, ties: TieBreak::Random }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config { path: format!("params.{field}"), msg: msg.into() });
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta", "must lie in (0, 1]");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Value table, reward-rate estimate, and expected-length table.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    num_states: usize,
    num_options: usize,
    /// Indexed by `s * num_options + o`.
    pub q: Vec<f64>,
    pub rbar: f64,
    /// Expected option lengths; only the scaled inter-option learners use it.
    pub len: Vec<f64>,
    /// Per-pair update counts (ρ-weighted for intra-option updates).
    pub visits: Vec<f64>,
}

impl LearnerState {
    /// `Q = 0`, `R̄ = 0`, `L = 1`.
    pub fn new(num_states: usize, num_options: usize) -> Self {
        let n = num_states * num_options;
        Self { num_states, num_options, q: vec![0.0; n], rbar: 0.0, len: vec![1.0; n], visits: vec![0.0; n] }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    pub fn index(&self, s: usize, o: usize) -> usize {
        debug_assert!(s < self.num_states && o < self.num_options);
        s * self.num_options + o
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_options..(s + 1) * self.num_options]
    }

    pub fn max_q(&self, s: usize) -> f64 {
        let row = self.q_row(s);
        row[argmax(row)]
    }

    /// Records a (weighted) visit of pair `k` and returns its value stepsize.
    pub fn stepsize(&mut self, k: usize, weight: f64, p: &LearnerParams) -> f64 {
        self.visits[k] += weight;
        match p.schedule {
            Schedule::Constant => p.alpha,
            Schedule::OneOverVisits => p.alpha / self.visits[k].max(1.0),
        }
    }
}

/// Applies `Q(s,o) += a·δ/l` and `R̄ += η·a·δ/l`; returns the `Q` increment.
fn differential_step(ls: &mut LearnerState, k: usize, delta: f64, l: f64, p: &LearnerParams) -> f64 {
    let a = ls.stepsize(k, 1.0, p);
    let inc = a * delta / l;
    ls.q[k] += inc;
    ls.rbar += p.eta * inc;
    inc
}

/// Inter-option Differential Q-learning. Updates, in order: the length
/// estimate `L`, the TD error with the updated `L`, `Q`, and `R̄`. Returns the
/// TD error.
pub fn inter_dql_update(ls: &mut LearnerState, seg: &SmdpSample, p: &LearnerParams) -> f64 {
    let bootstrap = ls.max_q(seg.end_state);
    inter_scaled(ls, seg, p, bootstrap)
}

/// Inter-option Differential Q-evaluation of target `μ`.
pub fn inter_dqe_update(ls: &mut LearnerState, seg: &SmdpSample, p: &LearnerParams, mu: &OptionPolicy) -> f64 {
    let bootstrap = mu.expectation(seg.end_state, ls.q_row(seg.end_state));
    inter_scaled(ls, seg, p, bootstrap)
}

fn inter_scaled(ls: &mut LearnerState, seg: &SmdpSample, p: &LearnerParams, bootstrap: f64) -> f64 {
    let k = ls.index(seg.state, seg.option);
    ls.len[k] += p.beta * (seg.length - ls.len[k]);
    let l = ls.len[k];
    let delta = seg.cum_reward - ls.rbar * l + bootstrap - ls.q[k];
    differential_step(ls, k, delta, l, p);
    delta
}

/// The direct extension with the sampled length in the TD error and no
/// length scaling: `δ = R̂ − L̂·R̄ + max Q(Ŝ') − Q(Ŝ,Ô)`, `Q += αδ`, `R̄ += ηαδ`.
pub fn inter_unscaled_update(ls: &mut LearnerState, seg: &SmdpSample, p: &LearnerParams) -> f64 {
    let k = ls.index(seg.state, seg.option);
    let delta = seg.cum_reward - seg.length * ls.rbar + ls.max_q(seg.end_state) - ls.q[k];
    differential_step(ls, k, delta, 1.0, p);
    delta
}

/// Gosavi's baseline: `R̄ = C̄/T̄` from running averages of reward and length
/// over greedy options only.
#[derive(Clone, Debug, PartialEq)]
pub struct GosaviState {
    /// `q` and `rbar` live here; `len` is unused.
    pub base: LearnerState,
    pub cbar: f64,
    pub tbar: f64,
}

impl GosaviState {
    pub fn new(num_states: usize, num_options: usize) -> Self {
        Self { base: LearnerState::new(num_states, num_options), cbar: 0.0, tbar: 0.0 }
    }
}

/// One Gosavi update. `Q` always moves with the unscaled TD error computed
/// from the current `R̄`; the rate estimates move only after greedy options.
pub fn gosavi_update(gs: &mut GosaviState, seg: &SmdpSample, was_greedy: bool, p: &LearnerParams) -> f64 {
    let ls = &mut gs.base;
    let k = ls.index(seg.state, seg.option);
    let delta = seg.cum_reward - seg.length * ls.rbar + ls.max_q(seg.end_state) - ls.q[k];
    let a = ls.stepsize(k, 1.0, p);
    ls.q[k] += a * delta;
    if was_greedy {
        gs.cbar += p.beta * (seg.cum_reward - gs.cbar);
        gs.tbar += p.beta * (seg.length - gs.tbar);
        if gs.tbar > 0.0 {
            ls.rbar = gs.cbar / gs.tbar;
        }
    }
    delta
}

/// Intra-option Differential Q-learning on one primitive transition.
pub fn intra_dql_update(ls: &mut LearnerState, t: &Transition, executing: usize, opts: &OptionSet, p: &LearnerParams) {
    let no = ls.num_options;
    let s2 = t.next_state;
    let best = ls.max_q(s2);
    intra_update(ls, t, executing, opts, p, |q, o| {
        let b = opts.get(o).beta(s2);
        (1.0 - b) * q[s2 * no + o] + b * best
    });
}

/// Intra-option Differential Q-evaluation of target `μ`.
pub fn intra_dqe_update(
    ls: &mut LearnerState,
    t: &Transition,
    executing: usize,
    opts: &OptionSet,
    p: &LearnerParams,
    mu: &OptionPolicy,
) {
    let no = ls.num_options;
    let s2 = t.next_state;
    let target = mu.expectation(s2, ls.q_row(s2));
    intra_update(ls, t, executing, opts, p, |q, o| {
        let b = opts.get(o).beta(s2);
        (1.0 - b) * q[s2 * no + o] + b * target
    });
}

/// All TD errors are computed from the pre-update `Q` and `R̄`, then applied
/// together.
fn intra_update(
    ls: &mut LearnerState,
    t: &Transition,
    executing: usize,
    opts: &OptionSet,
    p: &LearnerParams,
    u: impl Fn(&[f64], usize) -> f64,
) {
    let ratios = importance_ratios(opts, t.state, t.action, executing);
    let deltas: Vec<f64> = ratios
        .iter()
        .map(|&(o, _)| t.reward - ls.rbar + u(&ls.q, o) - ls.q[ls.index(t.state, o)])
        .collect();
    let mut total = 0.0;
    for (&(o, rho), delta) in ratios.iter().zip(deltas) {
        let k = ls.index(t.state, o);
        let a = ls.stepsize(k, rho, p);
        let inc = a * rho * delta;
        ls.q[k] += inc;
        total += inc;
    }
    ls.rbar += p.eta * total;
}

/// With probability `eps` a uniformly random option, otherwise the
/// lowest-index argmax. Always draws once, plus once more when exploring.
pub fn epsilon_greedy_select(q_row: &[f64], eps: f64, rng: &mut Rng) -> usize {
    epsilon_greedy_select_with(q_row, eps, TieBreak::Lowest, rng)
}

/// ε-greedy with an explicit tie rule. Random tie-breaking draws once more
/// only when the maximum is shared.
pub fn epsilon_greedy_select_with(q_row: &[f64], eps: f64, ties: TieBreak, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    if u < eps {
        return rng.random_range(0..q_row.len());
    }
    let best = argmax(q_row);
    if ties == TieBreak::Lowest {
        return best;
    }
    let top = q_row[best];
    let n = q_row.iter().filter(|&&v| v == top).count();
    if n == 1 {
        return best;
    }
    let k = rng.random_range(0..n);
    q_row.iter().enumerate().filter(|&(_, &v)| v == top).nth(k).map(|(i, _)| i).expect("k < n")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecDecision {
    Continue,
    Terminate,
}

/// Terminates the executing option iff its value is strictly below the best
/// value in the current state.
pub fn interruption_check(q_row: &[f64], executing: usize) -> ExecDecision {
    if q_row[executing] < q_row[argmax(q_row)] {
        ExecDecision::Terminate
    } else {
        ExecDecision::Continue
    }
}

/// How options are chosen when one terminates.
#[derive(Clone, Debug, PartialEq)]
pub enum Behavior {
    /// ε-greedy with respect to the learner's current `Q`, lowest-index ties.
    EpsilonGreedy(f64),
    /// ε-greedy with ties broken uniformly at random.
    EpsilonGreedyRandomTies(f64),
    /// A fixed policy over options.
    Fixed(OptionPolicy),
}

impl Behavior {
    pub fn select(&self, q_row: &[f64], s: usize, rng: &mut Rng) -> usize {
        match self {
            Behavior::EpsilonGreedy(eps) => epsilon_greedy_select(q_row, *eps, rng),
            Behavior::EpsilonGreedyRandomTies(eps) => epsilon_greedy_select_with(q_row, *eps, TieBreak::Random, rng),
            Behavior::Fixed(mu) => sample_index(mu.row(s), rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InterAlgo {
    Dql,
    Dqe(OptionPolicy),
    Unscaled,
    Gosavi,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IntraAlgo {
    Dql,
    Dqe(OptionPolicy),
}

/// Learner tables at one point of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Number of primitive steps taken so far.
    pub step: usize,
    pub rbar: f64,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    /// Reward of every primitive step.
    pub rewards: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Number of learner updates applied.
    pub updates: usize,
    /// `Q` increment of every inter-option update (empty for intra runs).
    pub increments: Vec<f64>,
    pub final_q: Vec<f64>,
    pub final_rbar: f64,
    pub final_state: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Record a snapshot whenever the step count is a multiple of this.
    pub snapshot_every: usize,
    /// Guard on a single option's length.
    pub max_option_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { snapshot_every: 1000, max_option_steps: crate::mdp::DEFAULT_MAX_OPTION_STEPS }
    }
}

struct Recorder {
    rewards: Vec<f64>,
    snapshots: Vec<Snapshot>,
    every: usize,
}

impl Recorder {
    fn new(steps: usize, every: usize) -> Self {
        Self { rewards: Vec::with_capacity(steps), snapshots: Vec::new(), every: every.max(1) }
    }

    fn reward(&mut self, r: f64) {
        self.rewards.push(r);
    }

    fn maybe_snapshot(&mut self, ls: &LearnerState) {
        let t = self.rewards.len();
        if t.is_multiple_of(self.every) {
            self.snapshots.push(Snapshot { step: t, rbar: ls.rbar, q: ls.q.clone() });
        }
    }
}

/// Runs an inter-option learner for `steps` primitive steps.
///
/// Options are chosen by `behavior`, executed to termination, then used for
/// one update. An option still running when the budget is exhausted is
/// discarded without an update.
#[allow(clippy::too_many_arguments)]
pub fn run_inter_agent(
    mdp: &FiniteMdp,
    start: usize,
    opts: &OptionSet,
    algo: &InterAlgo,
    behavior: &Behavior,
    p: &LearnerParams,
    steps: usize,
    rng: &mut Rng,
    run: &RunOptions,
) -> Result<RunTrace> {
    let (ns, no) = (mdp.num_states(), opts.len());
    let mut gs = GosaviState::new(ns, no);
    let mut rec = Recorder::new(steps, run.snapshot_every);
    let mut increments = Vec::new();
    let mut updates = 0;
    let mut s = start;
    while rec.rewards.len() < steps {
        let ls = &gs.base;
        let o = behavior.select(ls.q_row(s), s, rng);
        let was_greedy = ls.q_row(s)[o] == ls.max_q(s);
        let opt = opts.get(o);
        let s0 = s;
        let (mut cum, mut len) = (0.0, 0usize);
        let mut finished = false;
        while rec.rewards.len() < steps {
            let a = sample_index(opt.policy_row(s), rng);
            let (s2, r) = step(mdp, s, a, rng);
            rec.reward(r);
            cum += r;
            len += 1;
            s = s2;
            if terminates(opt.beta(s2), rng) {
                finished = true;
                let sample = SmdpSample { state: s0, option: o, cum_reward: cum, length: len as f64, end_state: s2 };
                let before = gs.base.q[s0 * no + o];
                match algo {
                    InterAlgo::Dql => {
                        inter_dql_update(&mut gs.base, &sample, p);
                    }
                    InterAlgo::Dqe(mu) => {
                        inter_dqe_update(&mut gs.base, &sample, p, mu);
                    }
                    InterAlgo::Unscaled => {
                        inter_unscaled_update(&mut gs.base, &sample, p);
                    }
                    InterAlgo::Gosavi => {
                        gosavi_update(&mut gs, &sample, was_greedy, p);
                    }
                }
                increments.push(gs.base.q[s0 * no + o] - before);
                updates += 1;
            } else if len >= run.max_option_steps {
                return Err(Error::Truncated { state: s0, option: o, steps: len });
            }
            rec.maybe_snapshot(&gs.base);
            if finished {
                break;
            }
        }
    }
    let ls = gs.base;
    Ok(RunTrace {
        rewards: rec.rewards,
        snapshots: rec.snapshots,
        updates,
        increments,
        final_q: ls.q,
        final_rbar: ls.rbar,
        final_state: s,
    })
}

/// Runs an intra-option learner for `steps` primitive steps.
///
/// Each step makes at most one selection: a fresh option from `behavior` if
/// the previous one terminated, otherwise (with `interrupt` set) a fresh
/// option if the executing one's value is strictly below the best value in
/// the current state. A freshly selected option always takes at least one
/// action.
#[allow(clippy::too_many_arguments)]
pub fn run_intra_agent(
    mdp: &FiniteMdp,
    start: usize,
    opts: &OptionSet,
    algo: &IntraAlgo,
    behavior: &Behavior,
    p: &LearnerParams,
    steps: usize,
    rng: &mut Rng,
    interrupt: bool,
    run: &RunOptions,
) -> Result<RunTrace> {
    let (ns, no) = (mdp.num_states(), opts.len());
    let mut ls = LearnerState::new(ns, no);
    let mut rec = Recorder::new(steps, run.snapshot_every);
    let mut s = start;
    let mut o = 0;
    let mut terminated = true;
    let mut running = 0usize;
    for _ in 0..steps {
        if terminated || (interrupt && interruption_check(ls.q_row(s), o) == ExecDecision::Terminate) {
            o = behavior.select(ls.q_row(s), s, rng);
            running = 0;
        }
        let a = sample_index(opts.get(o).policy_row(s), rng);
        let (s2, r) = step(mdp, s, a, rng);
        let t = Transition { state: s, action: a, reward: r, next_state: s2 };
        match algo {
            IntraAlgo::Dql => intra_dql_update(&mut ls, &t, o, opts, p),
            IntraAlgo::Dqe(mu) => intra_dqe_update(&mut ls, &t, o, opts, p, mu),
        }
        rec.reward(r);
        running += 1;
        s = s2;
        terminated = terminates(opts.get(o).beta(s2), rng);
        if !terminated && running >= run.max_option_steps {
            return Err(Error::Truncated { state: s, option: o, steps: running });
        }
        rec.maybe_snapshot(&ls);
    }
    Ok(RunTrace {
        rewards: rec.rewards,
        snapshots: rec.snapshots,
        updates: steps,
        increments: Vec::new(),
        final_q: ls.q,
        final_rbar: ls.rbar,
        final_state: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{seeded_rng, OptionDef, Outcome};

    fn params(alpha: f64, beta: f64, eta: f64) -> LearnerParams {
        LearnerParams { alpha, beta, eta, epsilon: 0.1, schedule: Schedule::Constant, ties: TieBreak::Lowest }
    }

    fn sample(state: usize, option: usize, r: f64, l: f64, end: usize) -> SmdpSample {
        SmdpSample { state, option, cum_reward: r, length: l, end_state: end }
    }

    #[test]
    fn first_inter_update_by_hand() {
        let mut ls = LearnerState::new(2, 2);
        let delta = inter_dql_update(&mut ls, &sample(0, 1, 1.0, 1.0, 1), &params(0.5, 1.0, 0.1));
        assert_eq!(delta, 1.0);
        assert_eq!(ls.len[1], 1.0);
        assert_eq!(ls.q[1], 0.5);
        assert!((ls.rbar - 0.05).abs() < 1e-15);
        assert_eq!(ls.q.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn length_updates_before_td_error() {
        let mut ls = LearnerState::new(2, 1);
        ls.rbar = 0.2;
        ls.q = vec![0.3, 0.7];
        let delta = inter_dql_update(&mut ls, &sample(0, 0, 2.0, 5.0, 1), &params(0.5, 1.0, 0.1));
        assert_eq!(ls.len[0], 5.0);
        assert!((delta - (2.0 - 5.0 * 0.2 + 0.7 - 0.3)).abs() < 1e-15);
        assert!((ls.q[0] - (0.3 + 0.5 * delta / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn dqe_bootstrap_is_policy_average() {
        let mut ls = LearnerState::new(2, 2);
        ls.q = vec![0.0, 0.0, 2.0, 4.0];
        let mu = OptionPolicy::uniform(2, 2);
        let delta = inter_dqe_update(&mut ls, &sample(0, 0, 0.0, 1.0, 1), &params(0.5, 1.0, 0.1), &mu);
        assert_eq!(delta, 3.0);
        let det = OptionPolicy::deterministic(2, &[0, 0]).unwrap();
        let mut ls2 = LearnerState::new(2, 2);
        ls2.q = vec![0.0, 0.0, 2.0, 4.0];
        assert_eq!(inter_dqe_update(&mut ls2, &sample(0, 0, 0.0, 1.0, 1), &params(0.5, 1.0, 0.1), &det), 2.0);
    }

    #[test]
    fn unscaled_matches_scaled_for_unit_lengths() {
        let p = params(0.3, 1.0, 0.2);
        let mut a = LearnerState::new(3, 2);
        let mut b = LearnerState::new(3, 2);
        let mut rng = seeded_rng(4);
        for _ in 0..500 {
            let seg = sample(rng.random_range(0..3), rng.random_range(0..2), rng.random(), 1.0, rng.random_range(0..3));
            inter_dql_update(&mut a, &seg, &p);
            inter_unscaled_update(&mut b, &seg, &p);
        }
        assert_eq!(a.q, b.q);
        assert_eq!(a.rbar, b.rbar);
    }

    #[test]
    fn unscaled_uses_sampled_length() {
        let mut ls = LearnerState::new(1, 1);
        ls.rbar = 0.5;
        ls.len[0] = 2.0;
        let delta = inter_unscaled_update(&mut ls, &sample(0, 0, 1.0, 7.0, 0), &params(0.1, 0.5, 0.1));
        assert_eq!(delta, 1.0 - 3.5);
    }

    #[test]
    fn gosavi_first_greedy_segment() {
        let mut gs = GosaviState::new(1, 1);
        gosavi_update(&mut gs, &sample(0, 0, 1.0, 2.0, 0), true, &params(0.1, 0.5, 0.1));
        assert_eq!((gs.cbar, gs.tbar, gs.base.rbar), (0.5, 1.0, 0.5));
        gosavi_update(&mut gs, &sample(0, 0, 9.0, 1.0, 0), false, &params(0.1, 0.5, 0.1));
        assert_eq!(gs.base.rbar, 0.5);
        assert_eq!(gs.cbar, 0.5);
    }

    #[test]
    fn intra_with_primitives_is_one_step_q_learning() {
        let opts = OptionSet::primitives(2, 2, &["a", "b"]);
        let mut ls = LearnerState::new(2, 2);
        ls.q = vec![0.1, 0.2, 0.5, 0.3];
        ls.rbar = 0.05;
        let t = Transition { state: 0, action: 1, reward: 1.0, next_state: 1 };
        intra_dql_update(&mut ls, &t, 1, &opts, &params(0.5, 1.0, 0.1));
        let delta = 1.0 - 0.05 + 0.5 - 0.2;
        assert_eq!(ls.q, vec![0.1, 0.2 + 0.5 * delta, 0.5, 0.3]);
        assert!((ls.rbar - (0.05 + 0.1 * 0.5 * delta)).abs() < 1e-15);
    }

    #[test]
    fn intra_updates_use_pre_update_snapshot() {
        // Two options that both take the single action; one continues forever
        // on the self-loop, so its target reads Q(S, o) itself.
        let stay = OptionDef::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let once = OptionDef::new(1, 1, vec![1.0], vec![1.0]).unwrap();
        let opts = OptionSet::new(vec![stay, once], vec!["stay".into(), "once".into()]).unwrap();
        let mut ls = LearnerState::new(1, 2);
        ls.q = vec![1.0, 3.0];
        let t = Transition { state: 0, action: 0, reward: 0.0, next_state: 0 };
        intra_dql_update(&mut ls, &t, 1, &opts, &params(0.5, 1.0, 1.0));
        // δ(stay) = 0 + 1 − 1 = 0, δ(once) = 0 + max(1, 3) − 3 = 0.
        assert_eq!(ls.q, vec![1.0, 3.0]);
        ls.rbar = 1.0;
        intra_dql_update(&mut ls, &t, 1, &opts, &params(0.5, 1.0, 1.0));
        assert_eq!(ls.q, vec![0.5, 2.5]);
        assert_eq!(ls.rbar, 0.0);
    }

    #[test]
    fn intra_dqe_bootstrap() {
        // β(S') = 0.5 for the evaluated option; μ uniform with Q(S', ·) = (0, 2).
        let half = OptionDef::new(2, 1, vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let other = OptionDef::new(2, 1, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let opts = OptionSet::new(vec![half, other], vec!["h".into(), "o".into()]).unwrap();
        let mut ls = LearnerState::new(2, 2);
        ls.q = vec![0.0, 0.0, 0.0, 2.0];
        let mu = OptionPolicy::uniform(2, 2);
        let t = Transition { state: 0, action: 0, reward: 0.0, next_state: 1 };
        intra_dqe_update(&mut ls, &t, 0, &opts, &params(1.0, 1.0, 0.1), &mu);
        assert_eq!(ls.q[0], 0.5 * 0.0 + 0.5 * 1.0);
        assert_eq!(ls.q[1], 1.0);
    }

    #[test]
    fn selection_rules() {
        let mut rng = seeded_rng(0);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy_select(&[1.0, 1.0], 0.0, &mut rng), 0);
            assert_eq!(epsilon_greedy_select(&[0.0, 5.0, 1.0], 0.0, &mut rng), 1);
        }
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[epsilon_greedy_select(&[9.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 - 10_000.0).abs() < 400.0), "{counts:?}");
    }

    #[test]
    fn interruption_rules() {
        assert_eq!(interruption_check(&[3.0, 3.0], 1), ExecDecision::Continue);
        assert_eq!(interruption_check(&[3.0, 4.0], 0), ExecDecision::Terminate);
        assert_eq!(interruption_check(&[3.0, 4.0], 1), ExecDecision::Continue);
    }

    fn ring(n: usize) -> FiniteMdp {
        // Action 0 moves right, action 1 stays; reward 1 on wrapping to 0.
        let mut dynamics = Vec::new();
        for s in 0..n {
            let next = (s + 1) % n;
            dynamics.push(vec![Outcome { next_state: next, reward_index: usize::from(next == 0), prob: 1.0 }]);
            dynamics.push(vec![Outcome { next_state: s, reward_index: 0, prob: 1.0 }]);
        }
        FiniteMdp::checked(n, 2, vec![0.0, 1.0], dynamics, Some(0)).unwrap()
    }

    #[test]
    fn short_budget_gives_no_update() {
        let mdp = ring(4);
        let walk = OptionDef::new(4, 2, [1.0, 0.0].repeat(4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let opts = OptionSet::new(vec![walk], vec!["lap".into()]).unwrap();
        let trace = run_inter_agent(
            &mdp,
            0,
            &opts,
            &InterAlgo::Dql,
            &Behavior::EpsilonGreedy(0.1),
            &LearnerParams::default(),
            3,
            &mut seeded_rng(1),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.rewards.len(), 3);
        assert_eq!(trace.updates, 0);
    }

    #[test]
    fn primitive_inter_run_updates_every_step() {
        let mdp = ring(4);
        let opts = OptionSet::primitives(4, 2, &["go", "stay"]);
        let trace = run_inter_agent(
            &mdp,
            0,
            &opts,
            &InterAlgo::Dql,
            &Behavior::EpsilonGreedy(0.1),
            &LearnerParams::default(),
            5000,
            &mut seeded_rng(2),
            &RunOptions { snapshot_every: 1000, ..RunOptions::default() },
        )
        .unwrap();
        assert_eq!(trace.updates, 5000);
        assert_eq!(trace.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(), vec![1000, 2000, 3000, 4000, 5000]);
        assert!((trace.final_rbar - 0.25).abs() < 0.05, "rbar {}", trace.final_rbar);
    }

    #[test]
    fn runs_are_reproducible() {
        let mdp = ring(5);
        let opts = OptionSet::primitives(5, 2, &["go", "stay"]);
        let go = |seed| {
            run_intra_agent(
                &mdp,
                0,
                &opts,
                &IntraAlgo::Dql,
                &Behavior::EpsilonGreedy(0.2),
                &LearnerParams::default(),
                2000,
                &mut seeded_rng(seed),
                true,
                &RunOptions::default(),
            )
            .unwrap()
        };
        assert_eq!(go(7), go(7));
        assert_ne!(go(7).rewards, go(8).rewards);
    }

    #[test]
    fn never_ending_option_is_reported() {
        let mdp = ring(3);
        let stuck = OptionDef::new(3, 2, [0.0, 1.0].repeat(3), vec![0.0; 3]).unwrap();
        let opts = OptionSet::new(vec![stuck], vec!["stuck".into()]).unwrap();
        let err = run_inter_agent(
            &mdp,
            0,
            &opts,
            &InterAlgo::Dql,
            &Behavior::EpsilonGreedy(0.0),
            &LearnerParams::default(),
            100,
            &mut seeded_rng(0),
            &RunOptions { snapshot_every: 10, max_option_steps: 20 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Truncated { steps: 20, .. }));
    }

    #[test]
    fn params_validation_names_field() {
        let p = LearnerParams { beta: 0.0, ..LearnerParams::default() };
        match p.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "params.beta"),
            other => panic!("{other:?}"),
        }
    }
}
