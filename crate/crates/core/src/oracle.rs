//! Exact ground truth by dense linear algebra.
//!
//! Everything here is deterministic and allocation-heavy but small: the
//! Four-Room domain has about a hundred states and a dozen options, so every
//! linear system is solved directly with an LU factorisation.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::fourroom::{CellPos, GridSpec};
use crate::mdp::{FiniteMdp, OptionDef, OptionSet};
use crate::option_model::OptionModel;
use crate::policy::{argmax, greedy_choice, OptionPolicy};

/// Default residual tolerance for solver outputs.
pub const SOLVER_TOL: f64 = 1e-9;

/// Transition probabilities below this are treated as absent when building
/// the recurrence graph of a chain.
const EDGE_TOL: f64 = 1e-12;

const MAX_RVI_ITERS: usize = 50_000;
const RVI_TOL: f64 = 1e-10;
const MAX_PI_ITERS: usize = 1_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    /// Indexed by `s * num_options + o`.
    pub q: Vec<f64>,
    /// `r*` for optimality solves, `r(μ)` for evaluations.
    pub rate: f64,
    /// Max absolute Bellman residual of `(q, rate)`.
    pub residual: f64,
    /// How the free additive constant of `q` was fixed.
    pub normalization: String,
    /// The (last) deterministic policy, for optimality solves.
    pub policy: Option<Vec<usize>>,
}

impl OracleSolution {
    /// `q` shifted to mean zero, for comparing solutions that were pinned
    /// differently.
    pub fn centered_q(&self) -> Vec<f64> {
        let mean = self.q.iter().sum::<f64>() / self.q.len() as f64;
        self.q.iter().map(|v| v - mean).collect()
    }
}

fn solve_checked(m: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let x = m.clone().lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = 1.0 + b.amax() + x.amax();
    ((&m * &x - &b).amax() <= 1e-8 * scale).then_some(x)
}

fn solve_checked_matrix(m: DMatrix<f64>, b: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let x = m.clone().lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = 1.0 + b.amax() + x.amax();
    ((&m * &x - &b).amax() <= 1e-8 * scale).then_some(x)
}

// ---------------------------------------------------------------------------
// Exact option models

/// Exact model of a single option (a one-option [`OptionModel`]).
///
/// With `C(s, s') = Σ_a π(a|s) p(s'|s,a) (1 − β(s'))` the three parts solve
/// `(I − C) ml = 1`, `(I − C) mr = r_π` and `(I − C) mp = B` where
/// `B(s, x) = Σ_a π(a|s) p(x|s,a) β(x)`.
pub fn exact_option_model(mdp: &FiniteMdp, opt: &OptionDef) -> Result<OptionModel> {
    exact_model_indexed(mdp, opt, 0)
}

fn exact_model_indexed(mdp: &FiniteMdp, opt: &OptionDef, index: usize) -> Result<OptionModel> {
    let n = mdp.num_states();
    if opt.num_states() != n || opt.num_actions() != mdp.num_actions() {
        return Err(Error::Shape(format!("option {index} does not match the MDP's spaces")));
    }
    if let Some(state) = first_non_terminating_state(mdp, opt) {
        return Err(Error::InfiniteOption { state, option: index });
    }
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut br = DVector::<f64>::zeros(n);
    let mut bp = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let pi = opt.pi(s, a);
            if pi == 0.0 {
                continue;
            }
            for out in mdp.outcomes(s, a) {
                let w = pi * out.prob;
                let b = opt.beta(out.next_state);
                c[(s, out.next_state)] -= w * (1.0 - b);
                br[s] += w * mdp.reward(out);
                bp[(s, out.next_state)] += w * b;
            }
        }
    }
    let infinite = |state| Error::InfiniteOption { state, option: index };
    let ml = solve_checked(c.clone(), DVector::from_element(n, 1.0)).ok_or_else(|| infinite(0))?;
    if let Some(s) = ml.iter().position(|&l| l < 1.0 - 1e-9) {
        return Err(infinite(s));
    }
    let mr = solve_checked(c.clone(), br).ok_or_else(|| infinite(0))?;
    let mp = solve_checked_matrix(c, bp).ok_or_else(|| infinite(0))?;
    let mut flat = Vec::with_capacity(n * n);
    for s in 0..n {
        flat.extend(mp.row(s).iter());
    }
    OptionModel::from_tables(n, 1, flat, mr.iter().copied().collect(), ml.iter().copied().collect())
}

/// A state from which the option can never terminate, if any.
fn first_non_terminating_state(mdp: &FiniteMdp, opt: &OptionDef) -> Option<usize> {
    let n = mdp.num_states();
    let mut can_end = vec![false; n];
    loop {
        let mut changed = false;
        for s in 0..n {
            if can_end[s] {
                continue;
            }
            let reaches = (0..mdp.num_actions()).filter(|&a| opt.pi(s, a) > 0.0).any(|a| {
                mdp.outcomes(s, a)
                    .iter()
                    .filter(|o| o.prob > 0.0)
                    .any(|o| opt.beta(o.next_state) > 0.0 || can_end[o.next_state])
            });
            if reaches {
                can_end[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    can_end.iter().position(|&ok| !ok)
}

/// Exact models for every option of the set.
pub fn exact_models(mdp: &FiniteMdp, opts: &OptionSet) -> Result<OptionModel> {
    let n = mdp.num_states();
    let no = opts.len();
    let mut out = OptionModel::zeros(n, no);
    for (o, opt) in opts.options().iter().enumerate() {
        let m = exact_model_indexed(mdp, opt, o)?;
        for s in 0..n {
            out.mp_row_mut(s, o).copy_from_slice(m.mp_row(s, 0));
            out.set_mr(s, o, m.mr(s, 0));
            out.set_ml(s, o, m.ml(s, 0));
        }
    }
    Ok(out)
}

/// Max residual of the model Bellman equations: plugging `m` into the
/// right-hand sides of the recursive definitions of the three parts.
pub fn model_bellman_residual(mdp: &FiniteMdp, opts: &OptionSet, m: &OptionModel) -> f64 {
    let n = mdp.num_states();
    let mut worst: f64 = 0.0;
    let mut rhs_p = vec![0.0; n];
    for (o, opt) in opts.options().iter().enumerate() {
        for s in 0..n {
            rhs_p.fill(0.0);
            let (mut rhs_r, mut rhs_l) = (0.0, 0.0);
            for a in 0..mdp.num_actions() {
                let pi = opt.pi(s, a);
                if pi == 0.0 {
                    continue;
                }
                for out in mdp.outcomes(s, a) {
                    let w = pi * out.prob;
                    let s2 = out.next_state;
                    let b = opt.beta(s2);
                    rhs_r += w * (mdp.reward(out) + (1.0 - b) * m.mr(s2, o));
                    rhs_l += w * (1.0 + (1.0 - b) * m.ml(s2, o));
                    for (x, p) in rhs_p.iter_mut().enumerate() {
                        *p += w * (1.0 - b) * m.mp(s2, o, x);
                    }
                    rhs_p[s2] += w * b;
                }
            }
            worst = worst.max((rhs_r - m.mr(s, o)).abs()).max((rhs_l - m.ml(s, o)).abs());
            for (x, p) in rhs_p.iter().enumerate() {
                worst = worst.max((p - m.mp(s, o, x)).abs());
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Policy chains over options

/// The termination-state chain of `μ`: `P(s, s') = Σ_o μ(o|s) mp(s'|s,o)`,
/// with per-state expected reward and duration.
fn policy_chain(models: &OptionModel, mu: &OptionPolicy) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let (n, no) = (models.num_states(), models.num_options());
    if mu.num_states() != n || mu.num_options() != no {
        return Err(Error::Shape(format!(
            "policy is {}x{}, models are {n}x{no}",
            mu.num_states(),
            mu.num_options()
        )));
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut r = DVector::<f64>::zeros(n);
    let mut l = DVector::<f64>::zeros(n);
    for s in 0..n {
        for o in 0..no {
            let w = mu.prob(s, o);
            if w == 0.0 {
                continue;
            }
            for (x, &v) in models.mp_row(s, o).iter().enumerate() {
                p[(s, x)] += w * v;
            }
            r[s] += w * models.mr(s, o);
            l[s] += w * models.ml(s, o);
        }
    }
    Ok((p, r, l))
}

/// Closed communicating classes of a chain, each sorted, ordered by their
/// smallest state.
pub fn closed_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * 4);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for s in 0..n {
        for x in 0..n {
            if p[(s, x)] > EDGE_TOL {
                g.add_edge(nodes[s], nodes[x], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            v.sort_unstable();
            v
        })
        .filter(|c| {
            c.iter().all(|&s| (0..n).all(|x| p[(s, x)] <= EDGE_TOL || c.binary_search(&x).is_ok()))
        })
        .collect();
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Stationary distribution of a closed class (zero elsewhere).
fn class_stationary(p: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (i, &s) in class.iter().enumerate() {
        for (j, &x) in class.iter().enumerate() {
            // Row j of (I − P)ᵀ.
            m[(j, i)] = if i == j { 1.0 } else { 0.0 } - p[(s, x)];
        }
    }
    let mut b = DVector::<f64>::zeros(k);
    for j in 0..k {
        m[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    let d = solve_checked(m, b).ok_or_else(|| Error::Solver("stationary distribution is singular".into()))?;
    let mut out = vec![0.0; p.nrows()];
    for (i, &s) in class.iter().enumerate() {
        out[s] = d[i].max(0.0);
    }
    Ok(out)
}

/// Stationary distribution over termination states for a unichain `μ`.
pub fn stationary_distribution(models: &OptionModel, mu: &OptionPolicy) -> Result<Vec<f64>> {
    let (p, _, _) = policy_chain(models, mu)?;
    let classes = closed_classes(&p);
    if classes.len() != 1 {
        return Err(Error::Multichain { classes: classes.len() });
    }
    class_stationary(&p, &classes[0])
}

fn class_rate(d: &[f64], r: &DVector<f64>, l: &DVector<f64>) -> f64 {
    let num: f64 = d.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
    let den: f64 = d.iter().zip(l.iter()).map(|(a, b)| a * b).sum();
    num / den
}

/// Long-run reward per primitive step from every start state. Handles
/// policies with several closed classes (for example a greedy policy that
/// bumps into a wall forever): each class has its own rate and transient
/// states average the rates by absorption probability.
pub fn policy_gains(models: &OptionModel, mu: &OptionPolicy) -> Result<Vec<f64>> {
    let (p, r, l) = policy_chain(models, mu)?;
    let n = p.nrows();
    let classes = closed_classes(&p);
    let mut gains = vec![f64::NAN; n];
    let mut class_of = vec![None; n];
    let mut rates = Vec::with_capacity(classes.len());
    for (k, class) in classes.iter().enumerate() {
        let d = class_stationary(&p, class)?;
        let rate = class_rate(&d, &r, &l);
        for &s in class {
            gains[s] = rate;
            class_of[s] = Some(k);
        }
        rates.push(rate);
    }
    let transient: Vec<usize> = (0..n).filter(|&s| class_of[s].is_none()).collect();
    if transient.is_empty() {
        return Ok(gains);
    }
    let t = transient.len();
    let mut m = DMatrix::<f64>::identity(t, t);
    let mut b = DMatrix::<f64>::zeros(t, classes.len());
    for (i, &s) in transient.iter().enumerate() {
        for x in 0..n {
            let v = p[(s, x)];
            match class_of[x] {
                Some(k) => b[(i, k)] += v,
                None => {
                    let j = transient.binary_search(&x).expect("transient index");
                    m[(i, j)] -= v;
                }
            }
        }
    }
    let absorb = solve_checked_matrix(m, b).ok_or_else(|| Error::Solver("absorption system is singular".into()))?;
    for (i, &s) in transient.iter().enumerate() {
        gains[s] = (0..classes.len()).map(|k| absorb[(i, k)] * rates[k]).sum();
    }
    Ok(gains)
}

/// Rate of the lowest-index greedy policy of `q`, started from `start`.
pub fn greedy_rate(models: &OptionModel, q: &[f64], start: usize) -> Result<f64> {
    let mu = OptionPolicy::greedy(models.num_states(), models.num_options(), q);
    Ok(policy_gains(models, &mu)?[start])
}

enum Pin {
    State(usize),
    Sum,
}

/// Solves `h = r − g l + P h` together with one normalisation equation.
fn solve_differential(p: &DMatrix<f64>, r: &DVector<f64>, l: &DVector<f64>, pin: Pin) -> Option<(f64, DVector<f64>)> {
    let n = p.nrows();
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::<f64>::zeros(n + 1);
    for s in 0..n {
        for x in 0..n {
            m[(s, x)] = if s == x { 1.0 } else { 0.0 } - p[(s, x)];
        }
        m[(s, n)] = l[s];
        b[s] = r[s];
    }
    match pin {
        Pin::State(s) => m[(n, s)] = 1.0,
        Pin::Sum => {
            for x in 0..n {
                m[(n, x)] = 1.0;
            }
        }
    }
    let sol = solve_checked(m, b)?;
    Some((sol[n], sol.rows(0, n).into_owned()))
}

/// `q(s,o) = mr(s,o) − g·ml(s,o) + Σ_x mp(x|s,o) h(x)`.
fn q_from_values(models: &OptionModel, g: f64, h: &[f64]) -> Vec<f64> {
    let (n, no) = (models.num_states(), models.num_options());
    let mut q = Vec::with_capacity(n * no);
    for s in 0..n {
        for o in 0..no {
            let next: f64 = models.mp_row(s, o).iter().zip(h).map(|(p, v)| p * v).sum();
            q.push(models.mr(s, o) - g * models.ml(s, o) + next);
        }
    }
    q
}

/// Max residual of the SMDP evaluation equation for `μ` (or optimality
/// equation when `mu` is `None`).
pub fn smdp_residual(models: &OptionModel, q: &[f64], rate: f64, mu: Option<&OptionPolicy>) -> f64 {
    let (n, no) = (models.num_states(), models.num_options());
    let v: Vec<f64> = (0..n)
        .map(|s| {
            let row = &q[s * no..(s + 1) * no];
            match mu {
                Some(mu) => mu.expectation(s, row),
                None => row[argmax(row)],
            }
        })
        .collect();
    let rhs = q_from_values(models, rate, &v);
    rhs.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Exact evaluation of a unichain policy over options.
///
/// The rate comes from the stationary distribution of the termination-state
/// chain; differential values are normalised so that state values sum to 0.
pub fn evaluate_policy(models: &OptionModel, mu: &OptionPolicy) -> Result<OracleSolution> {
    let (p, r, l) = policy_chain(models, mu)?;
    let classes = closed_classes(&p);
    if classes.len() != 1 {
        return Err(Error::Multichain { classes: classes.len() });
    }
    let d = class_stationary(&p, &classes[0])?;
    let rate = class_rate(&d, &r, &l);
    let (_, h) = solve_differential(&p, &r, &l, Pin::Sum)
        .ok_or_else(|| Error::Solver("evaluation system is singular".into()))?;
    let q = q_from_values(models, rate, h.as_slice());
    let residual = smdp_residual(models, &q, rate, Some(mu));
    Ok(OracleSolution { q, rate, residual, normalization: "state values sum to zero".into(), policy: mu.as_deterministic() })
}

/// Relative value iteration on the data-transformed SMDP; returns the greedy
/// policy once the span of successive differences is small.
fn rvi_warm_start(models: &OptionModel) -> Vec<usize> {
    let (n, no) = (models.num_states(), models.num_options());
    // Sparse rows keep each sweep cheap.
    let rows: Vec<Vec<(usize, f64)>> = (0..n * no)
        .map(|k| {
            models.mp_row(k / no, k % no).iter().enumerate().filter(|(_, &p)| p > EDGE_TOL).map(|(x, &p)| (x, p)).collect()
        })
        .collect();
    let mut tau = f64::INFINITY;
    for s in 0..n {
        for o in 0..no {
            let stay = models.mp(s, o, s);
            if stay < 1.0 - EDGE_TOL {
                tau = tau.min(models.ml(s, o) / (1.0 - stay));
            }
        }
    }
    let tau = if tau.is_finite() { 0.5 * tau } else { 1.0 };
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut choice = vec![0; n];
    for _ in 0..MAX_RVI_ITERS {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for o in 0..no {
                let ml = models.ml(s, o);
                let exp: f64 = rows[s * no + o].iter().map(|&(x, p)| p * h[x]).sum();
                let v = models.mr(s, o) / ml + tau / ml * (exp - h[s]);
                if v > best {
                    best = v;
                    choice[s] = o;
                }
            }
            next[s] = best + h[s];
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..n {
            let d = next[s] - h[s];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let offset = next[0];
        for s in 0..n {
            h[s] = next[s] - offset;
        }
        if hi - lo < RVI_TOL {
            break;
        }
    }
    choice
}

/// Optimal rate and differential option values by policy iteration over
/// deterministic policies, warm-started by relative value iteration.
///
/// Each evaluation pins `h(s_ref) = 0` at the lowest-index recurrent state,
/// so `q(s_ref, μ(s_ref)) = 0`. Fails with [`Error::Multichain`] if an
/// iterate has several recurrent classes and with [`Error::Solver`] if the
/// final residual exceeds `tol`.
pub fn smdp_policy_iteration(models: &OptionModel, tol: f64) -> Result<OracleSolution> {
    let (n, no) = (models.num_states(), models.num_options());
    let mut policy = rvi_warm_start(models);
    for _ in 0..MAX_PI_ITERS {
        let mu = OptionPolicy::deterministic(no, &policy)?;
        let (p, r, l) = policy_chain(models, &mu)?;
        let classes = closed_classes(&p);
        if classes.len() != 1 {
            return Err(Error::Multichain { classes: classes.len() });
        }
        let reference = classes[0][0];
        let (g, h) = solve_differential(&p, &r, &l, Pin::State(reference))
            .ok_or_else(|| Error::Solver("policy evaluation system is singular".into()))?;
        let q = q_from_values(models, g, h.as_slice());
        let mut changed = false;
        for s in 0..n {
            let row = &q[s * no..(s + 1) * no];
            let best = argmax(row);
            let current = row[policy[s]];
            if row[best] > current + 1e-11 * (1.0 + current.abs()) {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            let residual = smdp_residual(models, &q, g, None);
            if residual >= tol {
                return Err(Error::Solver(format!("optimality residual {residual:e} exceeds {tol:e}")));
            }
            return Ok(OracleSolution {
                q,
                rate: g,
                residual,
                normalization: format!("q(s_ref, mu(s_ref)) = 0 with s_ref = {reference}"),
                policy: Some(policy),
            });
        }
    }
    Err(Error::Solver("policy iteration did not converge (suspected multichain)".into()))
}

// ---------------------------------------------------------------------------
// Intra-option equations

/// Which bootstrap the intra-option equation uses at termination.
#[derive(Clone, Copy, Debug)]
pub enum IntraMode<'a> {
    /// `max_o' q(s', o')`.
    Optimality,
    /// `Σ_o' μ(o'|s') q(s', o')`.
    Evaluation(&'a OptionPolicy),
}

/// Right-hand side of the intra-option equation for every `(s, o)`.
pub fn intra_backup(mdp: &FiniteMdp, opts: &OptionSet, q: &[f64], rbar: f64, mode: IntraMode<'_>) -> Vec<f64> {
    let (n, no) = (mdp.num_states(), opts.len());
    assert_eq!(q.len(), n * no, "q table shape");
    let term: Vec<f64> = (0..n)
        .map(|s| {
            let row = &q[s * no..(s + 1) * no];
            match mode {
                IntraMode::Optimality => row[argmax(row)],
                IntraMode::Evaluation(mu) => mu.expectation(s, row),
            }
        })
        .collect();
    let mut out = vec![0.0; n * no];
    for s in 0..n {
        for (o, opt) in opts.options().iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..mdp.num_actions() {
                let pi = opt.pi(s, a);
                if pi == 0.0 {
                    continue;
                }
                for out in mdp.outcomes(s, a) {
                    let s2 = out.next_state;
                    let b = opt.beta(s2);
                    let u = (1.0 - b) * q[s2 * no + o] + b * term[s2];
                    acc += pi * out.prob * (mdp.reward(out) - rbar + u);
                }
            }
            out[s * no + o] = acc;
        }
    }
    out
}

/// `max_{s,o} |RHS(s,o) − q(s,o)|` of the intra-option equation.
pub fn intra_residual(mdp: &FiniteMdp, opts: &OptionSet, q: &[f64], rbar: f64, mode: IntraMode<'_>) -> f64 {
    intra_backup(mdp, opts, q, rbar, mode).iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Builds the linear intra-option evaluation system for a (possibly
/// stochastic) policy `μ` used at termination. Unknowns are `q` followed by
/// the rate; the last row is the normalisation.
fn intra_system(mdp: &FiniteMdp, opts: &OptionSet, mu: &OptionPolicy, pin: Option<usize>) -> (DMatrix<f64>, DVector<f64>) {
    let (n, no) = (mdp.num_states(), opts.len());
    let dim = n * no;
    let mut m = DMatrix::<f64>::zeros(dim + 1, dim + 1);
    let mut b = DVector::<f64>::zeros(dim + 1);
    for s in 0..n {
        for (o, opt) in opts.options().iter().enumerate() {
            let row = s * no + o;
            m[(row, row)] += 1.0;
            m[(row, dim)] = 1.0;
            for a in 0..mdp.num_actions() {
                let pi = opt.pi(s, a);
                if pi == 0.0 {
                    continue;
                }
                for out in mdp.outcomes(s, a) {
                    let w = pi * out.prob;
                    let s2 = out.next_state;
                    let beta = opt.beta(s2);
                    b[row] += w * mdp.reward(out);
                    m[(row, s2 * no + o)] -= w * (1.0 - beta);
                    for o2 in 0..no {
                        let p = mu.prob(s2, o2);
                        if p != 0.0 {
                            m[(row, s2 * no + o2)] -= w * beta * p;
                        }
                    }
                }
            }
        }
    }
    match pin {
        Some(k) => m[(dim, k)] = 1.0,
        None => {
            for k in 0..dim {
                m[(dim, k)] = 1.0;
            }
        }
    }
    (m, b)
}

/// Exact solution of the intra-option evaluation equation for `μ`,
/// normalised so that all option values sum to zero.
pub fn intra_evaluate(mdp: &FiniteMdp, opts: &OptionSet, mu: &OptionPolicy) -> Result<OracleSolution> {
    let dim = mdp.num_states() * opts.len();
    let (m, b) = intra_system(mdp, opts, mu, None);
    let sol = solve_checked(m, b).ok_or(Error::Multichain { classes: 2 })?;
    let q: Vec<f64> = sol.rows(0, dim).iter().copied().collect();
    let rate = sol[dim];
    let residual = intra_residual(mdp, opts, &q, rate, IntraMode::Evaluation(mu));
    Ok(OracleSolution { q, rate, residual, normalization: "option values sum to zero".into(), policy: mu.as_deterministic() })
}

/// Optimal solution of the intra-option optimality equation, computed without
/// option models: damped relative value iteration followed by policy
/// iteration on the option-continuation chain.
pub fn intra_policy_iteration(mdp: &FiniteMdp, opts: &OptionSet, tol: f64) -> Result<OracleSolution> {
    let (n, no) = (mdp.num_states(), opts.len());
    let dim = n * no;
    let mut q = vec![0.0; dim];
    for _ in 0..MAX_RVI_ITERS {
        let t = intra_backup(mdp, opts, &q, 0.0, IntraMode::Optimality);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..dim {
            let d = t[k] - q[k];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let offset = t[0];
        for k in 0..dim {
            q[k] = 0.5 * q[k] + 0.5 * (t[k] - offset);
        }
        if hi - lo < RVI_TOL {
            break;
        }
    }
    let mut policy = greedy_choice(n, no, &q);
    for _ in 0..MAX_PI_ITERS {
        let mu = OptionPolicy::deterministic(no, &policy)?;
        let pin = policy[0];
        let (m, b) = intra_system(mdp, opts, &mu, Some(pin));
        let sol = solve_checked(m, b).ok_or(Error::Multichain { classes: 2 })?;
        let rate = sol[dim];
        q = sol.rows(0, dim).iter().copied().collect();
        let mut changed = false;
        for s in 0..n {
            let row = &q[s * no..(s + 1) * no];
            let best = argmax(row);
            let current = row[policy[s]];
            if row[best] > current + 1e-11 * (1.0 + current.abs()) {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            let residual = intra_residual(mdp, opts, &q, rate, IntraMode::Optimality);
            if residual >= tol {
                return Err(Error::Solver(format!("intra-option residual {residual:e} exceeds {tol:e}")));
            }
            return Ok(OracleSolution {
                q,
                rate,
                residual,
                normalization: format!("q(0, mu(0)) = 0 with mu(0) = {pin}"),
                policy: Some(policy),
            });
        }
    }
    Err(Error::Solver("intra-option policy iteration did not converge".into()))
}

// ---------------------------------------------------------------------------
// Interruption

#[derive(Clone, Debug)]
pub struct InterruptionReport {
    /// `r(μ)` with the original options.
    pub rate: f64,
    /// `r(μ')` with the interrupted options.
    pub interrupted_rate: f64,
    /// Number of `(s, o)` pairs whose termination was raised to 1.
    pub flipped: usize,
    pub options: OptionSet,
}

/// Options whose termination is raised to 1 wherever continuing is worse
/// than the policy's state value: `β'(s, o) = 1` if `q_μ(s, o) < v_μ(s)`.
pub fn interrupted_options(opts: &OptionSet, mu: &OptionPolicy, q_mu: &[f64]) -> Result<(OptionSet, usize)> {
    let (n, no) = (opts.num_states(), opts.len());
    let mut flipped = 0;
    let mut new_opts = Vec::with_capacity(no);
    for (o, opt) in opts.options().iter().enumerate() {
        let beta: Vec<f64> = (0..n)
            .map(|s| {
                let row = &q_mu[s * no..(s + 1) * no];
                let v = mu.expectation(s, row);
                if row[o] < v - SOLVER_TOL * (1.0 + v.abs()) && opt.beta(s) < 1.0 {
                    flipped += 1;
                    1.0
                } else {
                    opt.beta(s)
                }
            })
            .collect();
        new_opts.push(opt.with_termination(beta)?);
    }
    Ok((OptionSet::new(new_opts, opts.labels().to_vec())?, flipped))
}

/// Exact `r(μ)` and `r(μ')`, where `μ'` runs `μ` over the interrupted options.
pub fn interrupted_policy_rate(mdp: &FiniteMdp, opts: &OptionSet, mu: &OptionPolicy) -> Result<InterruptionReport> {
    let models = exact_models(mdp, opts)?;
    let base = evaluate_policy(&models, mu)?;
    let (options, flipped) = interrupted_options(opts, mu, &base.q)?;
    let interrupted_rate = if flipped == 0 {
        base.rate
    } else {
        evaluate_policy(&exact_models(mdp, &options)?, mu)?.rate
    };
    Ok(InterruptionReport { rate: base.rate, interrupted_rate, flipped, options })
}

// ---------------------------------------------------------------------------
// Grid distances and residual bounds

/// Length of a shortest 4-neighbour path between two open cells.
pub fn bfs_distance(grid: &GridSpec, from: CellPos, to: CellPos) -> Result<usize> {
    if !grid.is_open(from) || !grid.is_open(to) {
        return Err(Error::Unreachable { from, to });
    }
    grid.bfs_from(from, |_| true)[to.0 * grid.width() + to.1].ok_or(Error::Unreachable { from, to })
}

/// `TQ(s,o) − Q(s,o)` with `TQ(s,o) = mr(s,o) − rbar·ml(s,o) + Σ_x mp(x|s,o) max_o' Q(x,o')`.
fn bellman_gap(models: &OptionModel, q: &[f64], rbar: f64) -> Vec<f64> {
    let (n, no) = (models.num_states(), models.num_options());
    assert_eq!(q.len(), n * no, "q table shape");
    let v: Vec<f64> = (0..n).map(|s| q[s * no + argmax(&q[s * no..(s + 1) * no])]).collect();
    q_from_values(models, rbar, &v).iter().zip(q).map(|(t, q)| t - q).collect()
}

fn span(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `span(TQ − Q)`; with `rbar = 0` the operator has no rate term.
pub fn bellman_residual_span(models: &OptionModel, q: &[f64], rbar: f64) -> f64 {
    span(bellman_gap(models, q, rbar).into_iter())
}

/// `span((TQ − Q) / ml)` with the rate-free operator. Both `r*` and the rate
/// of every greedy policy of `Q` lie between the min and max of the ratio.
pub fn duration_normalized_span(models: &OptionModel, q: &[f64]) -> f64 {
    let no = models.num_options();
    let gap = bellman_gap(models, q, 0.0);
    span(gap.iter().enumerate().map(|(k, g)| g / models.ml(k / no, k % no)))
}
