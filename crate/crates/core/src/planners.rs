//! Sample-based planning with option models or one-step action models, and
//! the combined agent that learns an option model while planning with it.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::learners::{intra_dql_update, Behavior, LearnerParams, LearnerState, RunOptions, RunTrace, Snapshot};
use crate::mdp::{sample_index, step, terminates, FiniteMdp, OptionSet, Rng, Transition};
use crate::option_model::{model_learning_update_with, OptionModel};

/// Rows of a learned `mp` with less total mass than this are not sampled.
pub const MIN_ROW_MASS: f64 = 1e-6;

/// Uniform search control over previously observed state-option pairs: a
/// random observed state, then a random option observed in that state.
#[derive(Clone, Debug, Default)]
pub struct SearchControl {
    num_options: usize,
    seen: Vec<bool>,
    states: Vec<usize>,
    options_at: Vec<Vec<usize>>,
}

impl SearchControl {
    pub fn new(num_states: usize, num_options: usize) -> Self {
        Self {
            num_options,
            seen: vec![false; num_states * num_options],
            states: Vec::new(),
            options_at: vec![Vec::new(); num_states],
        }
    }

    pub fn mark(&mut self, s: usize, o: usize) {
        let k = s * self.num_options + o;
        if self.seen[k] {
            return;
        }
        self.seen[k] = true;
        if self.options_at[s].is_empty() {
            self.states.push(s);
        }
        self.options_at[s].push(o);
    }

    pub fn contains(&self, s: usize, o: usize) -> bool {
        self.seen[s * self.num_options + o]
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn len(&self) -> usize {
        self.options_at.iter().map(Vec::len).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> Option<(usize, usize)> {
        if self.states.is_empty() {
            return None;
        }
        let s = self.states[rng.random_range(0..self.states.len())];
        let opts = &self.options_at[s];
        Some((s, opts[rng.random_range(0..opts.len())]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlanOutcome {
    /// The update was applied; carries the TD error and the sampled successor.
    Updated { delta: f64, next_state: usize },
    /// The model row had (almost) no mass, so nothing was sampled.
    SkippedZeroMass,
}

/// One inter-option planning update for the pair `(s, o)`: sample `s'` from
/// the normalised `mp(·|s,o)` and use the model's expected reward and length.
pub fn inter_planning_step(
    ls: &mut LearnerState,
    model: &OptionModel,
    (s, o): (usize, usize),
    rng: &mut Rng,
    p: &LearnerParams,
) -> PlanOutcome {
    let row = model.mp_row(s, o);
    let mass: f64 = row.iter().sum();
    if mass < MIN_ROW_MASS {
        return PlanOutcome::SkippedZeroMass;
    }
    let next_state = sample_scaled(row, mass, rng);
    let k = ls.index(s, o);
    let l = model.ml(s, o);
    let delta = model.mr(s, o) - l * ls.rbar + ls.max_q(next_state) - ls.q[k];
    let a = ls.stepsize(k, 1.0, p);
    let inc = a * delta / l;
    ls.q[k] += inc;
    ls.rbar += p.eta * inc;
    PlanOutcome::Updated { delta, next_state }
}

/// Samples from `row / mass`; negative entries are skipped.
fn sample_scaled(row: &[f64], mass: f64, rng: &mut Rng) -> usize {
    let u: f64 = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last = 0;
    for (x, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = x;
        if u < acc {
            return x;
        }
    }
    last
}

/// One intra-option planning update for `(s, o)` using a one-step action
/// model: `a ~ π(·|s,o)`, `(s', r)` from the model, then the intra-option
/// learning update with `o` as the executing option.
pub fn intra_planning_step(
    ls: &mut LearnerState,
    action_model: &FiniteMdp,
    (s, o): (usize, usize),
    opts: &OptionSet,
    rng: &mut Rng,
    p: &LearnerParams,
) -> Transition {
    let a = sample_index(opts.get(o).policy_row(s), rng);
    let (next_state, reward) = step(action_model, s, a, rng);
    let t = Transition { state: s, action: a, reward, next_state };
    intra_dql_update(ls, &t, o, opts, p);
    t
}

/// A model in the starting configuration of the combined agent: `mp = 0`,
/// `mr = 0`, `ml = 1`.
pub fn initial_learned_model(num_states: usize, num_options: usize) -> OptionModel {
    let mut m = OptionModel::zeros(num_states, num_options);
    for s in 0..num_states {
        for o in 0..num_options {
            m.set_ml(s, o, 1.0);
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct CombinedTrace {
    pub trace: RunTrace,
    pub model: OptionModel,
    pub planning_updates: usize,
    pub skipped: usize,
}

/// Intra-option model learning interleaved with inter-option planning.
///
/// Each primitive step: act with the executing option, update the model for
/// every option consistent with the action (stepsize `p.beta`), then run
/// `planning_steps` planning updates on pairs drawn from the search control.
/// A new option is chosen by `behavior` after the planning block whenever the
/// executing option terminates.
#[allow(clippy::too_many_arguments)]
pub fn run_combined_agent(
    mdp: &FiniteMdp,
    start: usize,
    opts: &OptionSet,
    behavior: &Behavior,
    p: &LearnerParams,
    steps: usize,
    planning_steps: usize,
    rng: &mut Rng,
    run: &RunOptions,
) -> Result<CombinedTrace> {
    let (ns, no) = (mdp.num_states(), opts.len());
    let mut ls = LearnerState::new(ns, no);
    let mut model = initial_learned_model(ns, no);
    let mut search = SearchControl::new(ns, no);
    let mut model_visits = vec![0.0; ns * no];
    let mut rewards = Vec::with_capacity(steps);
    let mut snapshots = Vec::new();
    let (mut planning_updates, mut skipped) = (0, 0);
    let every = run.snapshot_every.max(1);
    let mut s = start;
    let mut o = behavior.select(ls.q_row(s), s, rng);
    let mut running = 0usize;
    for t in 1..=steps {
        let a = sample_index(opts.get(o).policy_row(s), rng);
        let (s2, r) = step(mdp, s, a, rng);
        let tr = Transition { state: s, action: a, reward: r, next_state: s2 };
        let updated = model_learning_update_with(&mut model, &tr, o, opts, |o2, rho| {
            let k = s * no + o2;
            model_visits[k] += rho;
            match p.schedule {
                crate::learners::Schedule::Constant => p.beta,
                crate::learners::Schedule::OneOverVisits => p.beta / model_visits[k].max(1.0),
            }
        });
        for o2 in updated {
            search.mark(s, o2);
        }
        rewards.push(r);
        running += 1;
        let done = terminates(opts.get(o).beta(s2), rng);
        for _ in 0..planning_steps {
            let Some(pair) = search.sample(rng) else { break };
            match inter_planning_step(&mut ls, &model, pair, rng, p) {
                PlanOutcome::Updated { .. } => planning_updates += 1,
                PlanOutcome::SkippedZeroMass => skipped += 1,
            }
        }
        s = s2;
        if done {
            o = behavior.select(ls.q_row(s), s, rng);
            running = 0;
        } else if running >= run.max_option_steps {
            return Err(Error::Truncated { state: s, option: o, steps: running });
        }
        if t % every == 0 {
            snapshots.push(Snapshot { step: t, rbar: ls.rbar, q: ls.q.clone() });
        }
    }
    Ok(CombinedTrace {
        trace: RunTrace {
            rewards,
            snapshots,
            updates: planning_updates,
            increments: Vec::new(),
            final_q: ls.q,
            final_rbar: ls.rbar,
            final_state: s,
        },
        model,
        planning_updates,
        skipped,
    })
}
