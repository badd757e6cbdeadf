//! Experiment configuration, seeded multi-run execution, sweeps, metrics and
//! CSV output.
//!
//! Config files are TOML with five sections:
//!
//! ```toml
//! [env]
//! goal = "G1"            # G1 | G2 | G3
//! # map_file = "my.map"  # optional map path (default: shipped map)
//! # mdp_file = "m.json"  # optional serialized FiniteMdp instead of a map
//! goal_reward = 1.0
//!
//! [options]
//! set = "A+H"            # A | H | A+H | custom
//! # path = "opts.json"   # serialized OptionSet when set = "custom"
//!
//! [algorithm]
//! name = "inter-dql"     # inter-dql | inter-dqe | inter-unscaled | gosavi
//!                        # | intra-dql | intra-dqe | combined
//! behavior = "epsilon-greedy"  # | uniform | uniform-primitives
//! interrupt = false
//! planning_steps = 10
//!
//! [params]
//! alpha = 0.125
//! beta = 0.5
//! eta = 0.1
//! epsilon = 0.1
//! schedule = "constant"  # | one_over_visits
//! ties = "random"        # | lowest (ε-greedy tie-breaking)
//!
//! [execution]
//! steps = 200000
//! runs = 10
//! seed = 0
//! snapshot_every = 1000
//! window = 1000
//! eval_greedy = "exact"  # | rollout | off
//! rollout_steps = 1000
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourroom::{build_fourroom_mdp, build_hallway_options, default_map, FourRoom, FourRoomConfig, GoalId};
use crate::learners::{
    run_inter_agent, run_intra_agent, Behavior, InterAlgo, IntraAlgo, LearnerParams, RunOptions, RunTrace, TieBreak,
};
use crate::mdp::{sample_index, seeded_rng, step, terminates, FiniteMdp, OptionSet, Rng, Transition};
use crate::option_model::{model_learning_update_with, OptionModel};
use crate::oracle::{exact_models, greedy_rate, interrupted_policy_rate, smdp_policy_iteration, InterruptionReport, SOLVER_TOL};
use crate::par::{map_indexed, ExecMode};
use crate::planners::run_combined_agent;
use crate::policy::{greedy_choice, OptionPolicy};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub options: OptionsConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub params: LearnerParams,
    #[serde(default)]
    pub execution: ExecutionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "default_goal")]
    pub goal: GoalId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp_file: Option<PathBuf>,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
}

fn default_goal() -> GoalId {
    GoalId::G1
}

fn default_goal_reward() -> f64 {
    1.0
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { goal: GoalId::G1, map_file: None, mdp_file: None, goal_reward: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionSetKind {
    A,
    H,
    #[default]
    #[serde(rename = "A+H")]
    AH,
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    #[serde(default)]
    pub set: OptionSetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    InterDql,
    InterDqe,
    InterUnscaled,
    Gosavi,
    IntraDql,
    IntraDqe,
    Combined,
}

impl AlgorithmName {
    pub fn is_prediction(self) -> bool {
        matches!(self, AlgorithmName::InterDqe | AlgorithmName::IntraDqe)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    #[default]
    EpsilonGreedy,
    /// Uniform over all options.
    Uniform,
    /// Uniform over the one-step primitive options.
    UniformPrimitives,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmName,
    #[serde(default)]
    pub behavior: BehaviorKind,
    #[serde(default)]
    pub interrupt: bool,
    #[serde(default = "default_planning_steps")]
    pub planning_steps: usize,
}

fn default_planning_steps() -> usize {
    10
}

impl AlgorithmConfig {
    pub fn new(name: AlgorithmName) -> Self {
        Self { name, behavior: BehaviorKind::EpsilonGreedy, interrupt: false, planning_steps: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Exact rate of the greedy policy from the oracle.
    #[default]
    Exact,
    /// Monte-Carlo rollout of the greedy policy.
    Rollout,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub snapshot_every: usize,
    pub window: usize,
    pub eval_greedy: EvalMode,
    pub rollout_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            steps: 200_000,
            runs: 10,
            seed: 0,
            snapshot_every: 1000,
            window: 1000,
            eval_greedy: EvalMode::Exact,
            rollout_steps: 1000,
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    /// A Four-Room config with the default learner parameters.
    pub fn fourroom(goal: GoalId, set: OptionSetKind, name: AlgorithmName) -> Self {
        Self {
            env: EnvConfig { goal, ..EnvConfig::default() },
            options: OptionsConfig { set, path: None },
            algorithm: AlgorithmConfig::new(name),
            params: LearnerParams::default(),
            execution: ExecutionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let e = &self.execution;
        let bad = |path: &str, msg: &str| Err(Error::Config { path: path.into(), msg: msg.into() });
        if e.steps == 0 {
            return bad("execution.steps", "must be at least 1");
        }
        if e.runs == 0 {
            return bad("execution.runs", "must be at least 1");
        }
        if e.window == 0 || e.window > e.steps {
            return bad("execution.window", "must lie in [1, steps]");
        }
        if e.snapshot_every == 0 {
            return bad("execution.snapshot_every", "must be at least 1");
        }
        if self.options.set == OptionSetKind::Custom && self.options.path.is_none() {
            return bad("options.path", "required when options.set = \"custom\"");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { path: String::new(), msg: e.to_string() })
    }
}

fn config_error(path: String, msg: impl std::fmt::Display) -> Error {
    Error::Config { path, msg: msg.to_string() }
}

/// Parses a config from TOML text. Errors name the offending field path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: toml::Value = toml::from_str(text).map_err(|e| config_error(String::new(), e.message()))?;
    config_from_value(value)
}

fn config_from_value(value: toml::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| config_error(e.path().to_string(), e.inner().message()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?)?;
    Ok(())
}

/// Applies `dotted.key=value` overrides. Values are parsed as TOML scalars,
/// falling back to plain strings (so `goal=G2` works unquoted).
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value = toml::Value::try_from(cfg).map_err(|e| config_error(String::new(), e))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_error(item.clone(), "override must look like key=value"))?;
        let key = key.trim();
        let parsed = parse_scalar(raw.trim());
        let mut cursor = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cursor
                .as_table_mut()
                .ok_or_else(|| config_error(key.to_string(), format!("`{part}` is not inside a section")))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), parsed.clone());
                break;
            }
            cursor = table.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    config_from_value(value)
}

fn parse_scalar(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Holder {
        v: toml::Value,
    }
    toml::from_str::<Holder>(&format!("v = {raw}")).map(|h| h.v).unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

// ---------------------------------------------------------------------------
// Environment and context

/// A built environment with its option set.
#[derive(Clone, Debug)]
pub struct Environment {
    pub mdp: FiniteMdp,
    pub start: usize,
    pub opts: OptionSet,
    pub fourroom: Option<FourRoom>,
}

pub fn build_environment(cfg: &ExperimentConfig) -> Result<Environment> {
    let (mdp, fourroom) = match &cfg.env.mdp_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mdp: FiniteMdp =
                serde_json::from_str(&text).map_err(|e| config_error("env.mdp_file".into(), e))?;
            let report = crate::mdp::validate_mdp(&mdp);
            if !report.is_empty() {
                return Err(Error::InvalidMdp(report.iter().map(ToString::to_string).collect()));
            }
            (mdp, None)
        }
        None => {
            let map_text = match &cfg.env.map_file {
                Some(path) => std::fs::read_to_string(path)?,
                None => default_map().to_string(),
            };
            let fr = build_fourroom_mdp(&FourRoomConfig {
                map_text,
                active_goal: cfg.env.goal,
                goal_reward: cfg.env.goal_reward,
            })?;
            (fr.mdp().clone(), Some(fr))
        }
    };
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let primitives = match &fourroom {
        Some(fr) => fr.primitive_options(),
        None => OptionSet::primitives(ns, na, &[]),
    };
    let hallways = || -> Result<OptionSet> {
        fourroom.as_ref().map(build_hallway_options).ok_or_else(|| {
            config_error("options.set".into(), "hallway options need a Four-Room map")
        })
    };
    let opts = match cfg.options.set {
        OptionSetKind::A => primitives,
        OptionSetKind::H => hallways()?,
        OptionSetKind::AH => primitives.concat(&hallways()?)?,
        OptionSetKind::Custom => {
            let path = cfg.options.path.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)?;
            let opts: OptionSet = serde_json::from_str(&text).map_err(|e| config_error("options.path".into(), e))?;
            if opts.num_states() != ns || opts.num_actions() != na {
                return Err(config_error("options.path".into(), "options do not match the MDP's spaces"));
            }
            opts
        }
    };
    let start = mdp.start_state().unwrap_or(0);
    Ok(Environment { mdp, start, opts, fourroom })
}

/// Everything shared (read-only) by the runs of one experiment.
#[derive(Clone, Debug)]
pub struct Context {
    pub env: Environment,
    /// Exact option models, when greedy evaluation or a target policy needs them.
    pub models: Option<OptionModel>,
    /// Target policy of prediction algorithms (an optimal deterministic policy).
    pub target: Option<OptionPolicy>,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = build_environment(cfg)?;
        let need_models = cfg.execution.eval_greedy == EvalMode::Exact || cfg.algorithm.name.is_prediction();
        let models = if need_models { Some(exact_models(&env.mdp, &env.opts)?) } else { None };
        let target = if cfg.algorithm.name.is_prediction() {
            let sol = smdp_policy_iteration(models.as_ref().expect("models computed"), SOLVER_TOL)?;
            Some(OptionPolicy::deterministic(env.opts.len(), sol.policy.as_ref().expect("optimality solve has a policy"))?)
        } else {
            None
        };
        Ok(Self { env, models, target })
    }

    pub fn behavior(&self, kind: BehaviorKind, p: &LearnerParams) -> Result<Behavior> {
        let (ns, no) = (self.env.mdp.num_states(), self.env.opts.len());
        Ok(match kind {
            BehaviorKind::EpsilonGreedy => match p.ties {
                TieBreak::Lowest => Behavior::EpsilonGreedy(p.epsilon),
                TieBreak::Random => Behavior::EpsilonGreedyRandomTies(p.epsilon),
            },
            BehaviorKind::Uniform => Behavior::Fixed(OptionPolicy::uniform(ns, no)),
            BehaviorKind::UniformPrimitives => {
                let prims = self.env.opts.primitive_indices();
                Behavior::Fixed(
                    OptionPolicy::uniform_over(ns, no, &prims)
                        .map_err(|_| config_error("algorithm.behavior".into(), "option set has no primitive options"))?,
                )
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Runs and records

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub step: usize,
    pub window_rate: f64,
    pub rbar: f64,
    pub greedy_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub series: Vec<SeriesPoint>,
    /// Mean reward per step over the whole run.
    pub mean_reward: f64,
    /// Reward rate over the last `window` steps.
    pub final_window_rate: f64,
    pub final_rbar: f64,
    pub final_q: Vec<f64>,
    /// Rate of the greedy policy of the final `Q`, when evaluation is on.
    pub final_greedy_rate: Option<f64>,
    /// Number of learner updates.
    pub updates: usize,
    /// Per-update `Q` increments (inter-option runs only).
    pub increments: Vec<f64>,
}

/// `(t, Σ rewards in (t − window, t] / window)` at every multiple of `window`.
pub fn reward_rate_curve(rewards: &[f64], window: usize) -> Vec<(usize, f64)> {
    assert!(window >= 1, "window must be positive");
    rewards
        .chunks_exact(window)
        .enumerate()
        .map(|(i, c)| ((i + 1) * window, c.iter().sum::<f64>() / window as f64))
        .collect()
}

/// Rate over the `window` steps ending at `t` (fewer if `t < window`).
fn trailing_rate(rewards: &[f64], t: usize, window: usize) -> f64 {
    let from = t.saturating_sub(window);
    rewards[from..t].iter().sum::<f64>() / (t - from) as f64
}

/// Exact greedy rates of a sequence of `Q` snapshots, from `start`.
pub fn greedy_snapshot_eval(models: &OptionModel, qs: &[&[f64]], start: usize) -> Result<Vec<f64>> {
    qs.iter().map(|q| greedy_rate(models, q, start)).collect()
}

/// Monte-Carlo estimate of the greedy policy's rate: options are chosen
/// greedily and run to termination for `steps` primitive steps.
pub fn rollout_rate(env: &Environment, q: &[f64], steps: usize, rng: &mut Rng) -> f64 {
    let (ns, no) = (env.mdp.num_states(), env.opts.len());
    let choice = greedy_choice(ns, no, q);
    let mut s = env.start;
    let mut o = choice[s];
    let mut total = 0.0;
    for _ in 0..steps {
        let a = sample_index(env.opts.get(o).policy_row(s), rng);
        let (s2, r) = step(&env.mdp, s, a, rng);
        total += r;
        s = s2;
        if terminates(env.opts.get(o).beta(s2), rng) {
            o = choice[s];
        }
    }
    total / steps as f64
}

/// Executes one run of `cfg` with seed `execution.seed + run_id`.
pub fn run_single(cfg: &ExperimentConfig, ctx: &Context, run_id: usize) -> Result<RunRecord> {
    let seed = cfg.execution.seed.wrapping_add(run_id as u64);
    let mut rng = seeded_rng(seed);
    let env = &ctx.env;
    let p = &cfg.params;
    let ex = &cfg.execution;
    let run = RunOptions { snapshot_every: ex.snapshot_every, ..RunOptions::default() };
    let behavior = ctx.behavior(cfg.algorithm.behavior, p)?;
    let target = || ctx.target.clone().expect("prediction context has a target");
    let trace: RunTrace = match cfg.algorithm.name {
        AlgorithmName::InterDql | AlgorithmName::InterDqe | AlgorithmName::InterUnscaled | AlgorithmName::Gosavi => {
            let algo = match cfg.algorithm.name {
                AlgorithmName::InterDql => InterAlgo::Dql,
                AlgorithmName::InterDqe => InterAlgo::Dqe(target()),
                AlgorithmName::InterUnscaled => InterAlgo::Unscaled,
                _ => InterAlgo::Gosavi,
            };
            run_inter_agent(&env.mdp, env.start, &env.opts, &algo, &behavior, p, ex.steps, &mut rng, &run)?
        }
        AlgorithmName::IntraDql | AlgorithmName::IntraDqe => {
            let algo = if cfg.algorithm.name == AlgorithmName::IntraDql { IntraAlgo::Dql } else { IntraAlgo::Dqe(target()) };
            run_intra_agent(
                &env.mdp,
                env.start,
                &env.opts,
                &algo,
                &behavior,
                p,
                ex.steps,
                &mut rng,
                cfg.algorithm.interrupt,
                &run,
            )?
        }
        AlgorithmName::Combined => {
            run_combined_agent(
                &env.mdp,
                env.start,
                &env.opts,
                &behavior,
                p,
                ex.steps,
                cfg.algorithm.planning_steps,
                &mut rng,
                &run,
            )?
            .trace
        }
    };
    let evaluate = |q: &[f64], rng: &mut Rng| -> Result<Option<f64>> {
        match ex.eval_greedy {
            EvalMode::Off => Ok(None),
            EvalMode::Exact => Ok(Some(greedy_rate(ctx.models.as_ref().expect("exact models"), q, env.start)?)),
            EvalMode::Rollout => Ok(Some(rollout_rate(env, q, ex.rollout_steps, rng))),
        }
    };
    let mut series = Vec::with_capacity(trace.snapshots.len());
    for snap in &trace.snapshots {
        series.push(SeriesPoint {
            step: snap.step,
            window_rate: trailing_rate(&trace.rewards, snap.step, ex.window),
            rbar: snap.rbar,
            greedy_rate: evaluate(&snap.q, &mut rng)?,
        });
    }
    let final_greedy_rate = evaluate(&trace.final_q, &mut rng)?;
    let n = trace.rewards.len();
    Ok(RunRecord {
        run_id,
        seed,
        series,
        mean_reward: trace.rewards.iter().sum::<f64>() / n as f64,
        final_window_rate: trailing_rate(&trace.rewards, n, ex.window),
        final_rbar: trace.final_rbar,
        final_q: trace.final_q,
        final_greedy_rate,
        updates: trace.updates,
        increments: trace.increments,
    })
}

/// All runs of `cfg`, ordered by run id.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_experiment_with(cfg, ExecMode::Parallel)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, mode: ExecMode) -> Result<Vec<RunRecord>> {
    let ctx = Context::new(cfg)?;
    map_indexed(cfg.execution.runs, mode, cfg.execution.jobs, |i| run_single(cfg, &ctx, i)).into_iter().collect()
}

/// Sample mean and standard error (sample standard deviation over `√n`).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    /// `(dotted key, value)` for every grid axis.
    pub assignment: Vec<(String, String)>,
    pub records: Vec<RunRecord>,
    /// Mean and standard error of the per-run mean reward.
    pub mean: f64,
    pub stderr: f64,
}

/// Parses `key=v1,v2,...` into a grid axis.
pub fn parse_grid_axis(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) =
        spec.split_once('=').ok_or_else(|| config_error(spec.to_string(), "grid axis must look like key=v1,v2"))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(config_error(key.to_string(), "grid axis has no values"));
    }
    Ok((key.trim().to_string(), values))
}

/// The cross product of grid axes, first axis varying slowest.
pub fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// Runs every grid point of `grid` over `cfg`. All (point, run) pairs are
/// scheduled together.
pub fn sweep(cfg: &ExperimentConfig, grid: &[(String, Vec<String>)]) -> Result<Vec<SweepPoint>> {
    sweep_with(cfg, grid, ExecMode::Parallel)
}

pub fn sweep_with(cfg: &ExperimentConfig, grid: &[(String, Vec<String>)], mode: ExecMode) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(config_error("grid".into(), "sweep needs at least one axis"));
    }
    let points = grid_points(grid);
    let mut configs = Vec::with_capacity(points.len());
    let mut contexts = Vec::with_capacity(points.len());
    for point in &points {
        let overrides: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let c = apply_overrides(cfg, &overrides)?;
        contexts.push(Context::new(&c)?);
        configs.push(c);
    }
    let runs = cfg.execution.runs;
    let flat = map_indexed(points.len() * runs, mode, cfg.execution.jobs, |k| {
        let (i, r) = (k / runs, k % runs);
        run_single(&configs[i], &contexts[i], r)
    });
    let mut flat = flat.into_iter();
    let mut out = Vec::with_capacity(points.len());
    for assignment in points {
        let records: Vec<RunRecord> = flat.by_ref().take(runs).collect::<Result<_>>()?;
        let metric: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
        let (mean, stderr) = mean_and_stderr(&metric);
        out.push(SweepPoint { assignment, records, mean, stderr });
    }
    Ok(out)
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// CSV with columns `run_id,seed,step,window_rate,rbar,greedy_rate`.
pub fn write_results<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run_id", "seed", "step", "window_rate", "rbar", "greedy_rate"])?;
    for r in records {
        for p in &r.series {
            w.write_record([
                r.run_id.to_string(),
                r.seed.to_string(),
                p.step.to_string(),
                format!("{:?}", p.window_rate),
                format!("{:?}", p.rbar),
                opt_f64(p.greedy_rate),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_results(records: &[RunRecord], path: &Path) -> Result<()> {
    write_results(records, std::fs::File::create(path)?)
}

/// One row per grid point: the axis values, then `mean,stderr,runs`.
pub fn write_sweep_summary<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = points.first() else {
        w.write_record(["mean", "stderr", "runs"])?;
        w.flush()?;
        return Ok(());
    };
    let mut header: Vec<String> = first.assignment.iter().map(|(k, _)| k.clone()).collect();
    header.extend(["mean".into(), "stderr".into(), "runs".into()]);
    w.write_record(&header)?;
    for p in points {
        let mut row: Vec<String> = p.assignment.iter().map(|(_, v)| v.clone()).collect();
        row.push(format!("{:?}", p.mean));
        row.push(format!("{:?}", p.stderr));
        row.push(p.records.len().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Oracle, model and interruption experiments

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub rate: f64,
    pub residual: f64,
    pub q: Vec<f64>,
    pub policy: Vec<usize>,
    pub models: OptionModel,
    pub labels: Vec<String>,
}

/// Exact optimal rate and option values for the configured environment.
pub fn solve(cfg: &ExperimentConfig) -> Result<SolveReport> {
    let env = build_environment(cfg)?;
    let models = exact_models(&env.mdp, &env.opts)?;
    let sol = smdp_policy_iteration(&models, SOLVER_TOL)?;
    Ok(SolveReport {
        rate: sol.rate,
        residual: sol.residual,
        q: sol.q,
        policy: sol.policy.unwrap_or_default(),
        models,
        labels: env.opts.labels().to_vec(),
    })
}

/// Writes a `q` table as `s,o,label,value` rows.
pub fn write_q_csv<W: Write>(q: &[f64], labels: &[String], writer: W) -> Result<()> {
    let no = labels.len();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["s", "o", "label", "value"])?;
    for (k, v) in q.iter().enumerate() {
        w.write_record([(k / no).to_string(), (k % no).to_string(), labels[k % no].clone(), format!("{v:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Learns option models from experience generated by `behavior` for `steps`
/// primitive steps. Stepsizes follow `p.alpha` and `p.schedule`.
#[allow(clippy::too_many_arguments)]
pub fn learn_model(
    env: &Environment,
    behavior: &Behavior,
    p: &LearnerParams,
    steps: usize,
    rng: &mut Rng,
) -> OptionModel {
    let (ns, no) = (env.mdp.num_states(), env.opts.len());
    let mut model = OptionModel::zeros(ns, no);
    let mut visits = vec![0.0; ns * no];
    let zeros = vec![0.0; no];
    let mut s = env.start;
    let mut o = behavior.select(&zeros, s, rng);
    for _ in 0..steps {
        let a = sample_index(env.opts.get(o).policy_row(s), rng);
        let (s2, r) = step(&env.mdp, s, a, rng);
        let t = Transition { state: s, action: a, reward: r, next_state: s2 };
        model_learning_update_with(&mut model, &t, o, &env.opts, |o2, rho| {
            let k = s * no + o2;
            visits[k] += rho;
            match p.schedule {
                crate::learners::Schedule::Constant => p.alpha,
                crate::learners::Schedule::OneOverVisits => p.alpha / visits[k].max(1.0),
            }
        });
        s = s2;
        if terminates(env.opts.get(o).beta(s2), rng) {
            o = behavior.select(&zeros, s, rng);
        }
    }
    model
}

#[derive(Clone, Debug)]
pub struct InterruptionComparison {
    pub plain: Vec<RunRecord>,
    pub interrupted: Vec<RunRecord>,
    /// Exact `r(μ)` vs `r(μ')` for an optimal policy over the configured options.
    pub oracle: InterruptionReport,
}

/// Runs intra-option Differential Q-learning with and without interruption
/// (same seeds), plus the exact interruption check for an optimal policy.
pub fn interruption_experiment(cfg: &ExperimentConfig) -> Result<InterruptionComparison> {
    let mut base = cfg.clone();
    base.algorithm.name = AlgorithmName::IntraDql;
    base.algorithm.interrupt = false;
    let mut with = base.clone();
    with.algorithm.interrupt = true;
    let plain = run_experiment(&base)?;
    let interrupted = run_experiment(&with)?;
    let env = build_environment(&base)?;
    let models = exact_models(&env.mdp, &env.opts)?;
    let sol = smdp_policy_iteration(&models, SOLVER_TOL)?;
    let mu = OptionPolicy::deterministic(env.opts.len(), sol.policy.as_ref().expect("policy"))?;
    let oracle = interrupted_policy_rate(&env.mdp, &env.opts, &mu)?;
    Ok(InterruptionComparison { plain, interrupted, oracle })
}
