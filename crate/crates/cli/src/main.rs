//! `avgopt` command-line entry point.
//!
//! Every subcommand resolves a config (file, then `--set` overrides, then
//! `--seed`/`--jobs`), writes its artifacts under `--out`, and lists them in
//! `manifest.json`. Exit codes: 0 success, 1 usage or config error, 2 runtime
//! failure.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use avgopt::fourroom::GoalId;
use avgopt::harness::{
    apply_overrides, build_environment, interruption_experiment, learn_model, mean_and_stderr, parse_grid_axis,
    read_config, run_experiment, save_results, solve, sweep, write_q_csv, write_sweep_summary, AlgorithmName,
    BehaviorKind, Context, ExperimentConfig, OptionSetKind, RunRecord,
};
use avgopt::mdp::seeded_rng;
use avgopt::option_model::model_error;
use avgopt::oracle::exact_models;
use avgopt::par::{map_indexed, ExecMode};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "avgopt", version, about = "Average-reward learning and planning with options")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config. Without it, built-in defaults are used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Config override `dotted.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact optimal reward rate and option values.
    Solve(Common),
    /// Run a learning algorithm over seeded runs.
    Learn(Common),
    /// Run the model-learning and planning agent.
    Plan(Common),
    /// Run a grid of configs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis `dotted.key=v1,v2,...`, repeatable. The first axis varies slowest.
        #[arg(long, required = true, value_name = "KEY=V1,V2")]
        grid: Vec<String>,
    },
    /// Intra-option learning with and without interruption, plus the exact check.
    Interrupt(Common),
    /// Learn option models from experience and compare with the exact models.
    Model(Common),
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

/// Config errors raised while running still count as usage errors.
fn classify(e: avgopt::Error) -> Failure {
    match e {
        avgopt::Error::Config { .. } => usage(e),
        other => runtime(other),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Solve(c) => cmd_solve(&c),
        Command::Learn(c) => cmd_learn(&c, None),
        Command::Plan(c) => cmd_learn(&c, Some(AlgorithmName::Combined)),
        Command::Sweep { common, grid } => cmd_sweep(&common, &grid),
        Command::Interrupt(c) => cmd_interrupt(&c),
        Command::Model(c) => cmd_model(&c),
    }
}

/// Resolves the config: file (or `default`), then `--set`, then `--seed` and `--jobs`.
fn resolve(c: &Common, default: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    let base = match &c.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(anyhow::anyhow!("config file {} does not exist", path.display())));
            }
            read_config(path).map_err(|e| usage(anyhow::Error::new(e).context(format!("reading {}", path.display()))))?
        }
        None => default,
    };
    let mut cfg = apply_overrides(&base, &c.set).map_err(usage)?;
    if let Some(seed) = c.seed {
        cfg.execution.seed = seed;
    }
    if let Some(jobs) = c.jobs {
        if jobs == 0 {
            return Err(usage(anyhow::anyhow!("--jobs must be at least 1")));
        }
        cfg.execution.jobs = Some(jobs);
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Collects artifacts written under the output directory.
struct Output {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path, command: &'static str, cfg: &ExperimentConfig) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;
        let mut out = Self { dir: dir.to_path_buf(), command, files: Vec::new() };
        let text = cfg.to_toml().map_err(classify)?;
        out.write("config.toml", |f| Ok(f.write_all(text.as_bytes())?))?;
        Ok(out)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut File) -> anyhow::Result<()>) -> CmdResult {
        let path = self.path(name);
        let mut f = File::create(&path).with_context(|| format!("creating {}", path.display())).map_err(runtime)?;
        body(&mut f).with_context(|| format!("writing {}", path.display())).map_err(runtime)
    }

    fn finish(self) -> CmdResult {
        let manifest = serde_json::json!({ "command": self.command, "artifacts": self.files });
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json") + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        eprintln!("wrote {} artifacts to {}", self.files.len(), self.dir.display());
        Ok(())
    }
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig::fourroom(GoalId::G1, OptionSetKind::AH, AlgorithmName::InterDql)
}

fn cmd_solve(c: &Common) -> CmdResult {
    let cfg = resolve(c, default_config())?;
    let report = solve(&cfg).map_err(classify)?;
    let mut out = Output::new(&c.out, "solve", &cfg)?;
    println!("r* = {:.6}", report.rate);
    println!("residual = {:.3e}", report.residual);
    out.write("q.csv", |f| Ok(write_q_csv(&report.q, &report.labels, f)?))?;
    let models_path = out.path("models.csv");
    report.models.save_csv(&models_path).map_err(runtime)?;
    out.write("policy.csv", |f| {
        writeln!(f, "s,o,label")?;
        for (s, &o) in report.policy.iter().enumerate() {
            writeln!(f, "{s},{o},{}", report.labels[o])?;
        }
        Ok(())
    })?;
    out.finish()
}

fn write_run_summary(records: &[RunRecord], f: &mut File) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["run_id", "seed", "mean_reward", "final_window_rate", "final_rbar", "final_greedy_rate", "updates"])?;
    for r in records {
        w.write_record([
            r.run_id.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.mean_reward),
            format!("{:?}", r.final_window_rate),
            format!("{:?}", r.final_rbar),
            r.final_greedy_rate.map(|g| format!("{g:?}")).unwrap_or_default(),
            r.updates.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn report_runs(label: &str, records: &[RunRecord]) {
    let rates: Vec<f64> = records.iter().map(|r| r.final_window_rate).collect();
    let (m, se) = mean_and_stderr(&rates);
    println!("{label}: final window rate {m:.6} ± {se:.6} over {} runs", records.len());
    let greedy: Vec<f64> = records.iter().filter_map(|r| r.final_greedy_rate).collect();
    if !greedy.is_empty() {
        let (m, se) = mean_and_stderr(&greedy);
        println!("{label}: final greedy rate {m:.6} ± {se:.6}");
    }
}

fn cmd_learn(c: &Common, force: Option<AlgorithmName>) -> CmdResult {
    let mut cfg = resolve(c, default_config())?;
    if let Some(name) = force {
        cfg.algorithm.name = name;
    }
    eprintln!(
        "{:?}: {} runs x {} steps (seed {})",
        cfg.algorithm.name, cfg.execution.runs, cfg.execution.steps, cfg.execution.seed
    );
    let records = run_experiment(&cfg).map_err(classify)?;
    let mut out = Output::new(&c.out, if force.is_some() { "plan" } else { "learn" }, &cfg)?;
    let results = out.path("results.csv");
    save_results(&records, &results).map_err(runtime)?;
    out.write("runs.csv", |f| write_run_summary(&records, f))?;
    report_runs("learn", &records);
    out.finish()
}

fn cmd_sweep(c: &Common, grid: &[String]) -> CmdResult {
    let cfg = resolve(c, default_config())?;
    let axes = grid.iter().map(|g| parse_grid_axis(g)).collect::<Result<Vec<_>, _>>().map_err(usage)?;
    // Check every override up front so a typo is a usage error.
    for (key, values) in &axes {
        apply_overrides(&cfg, &[format!("{key}={}", values[0])]).map_err(usage)?;
    }
    let n: usize = axes.iter().map(|(_, v)| v.len()).product();
    eprintln!("sweep: {n} points x {} runs x {} steps", cfg.execution.runs, cfg.execution.steps);
    let points = sweep(&cfg, &axes).map_err(classify)?;
    let mut out = Output::new(&c.out, "sweep", &cfg)?;
    out.write("sweep.csv", |f| Ok(write_sweep_summary(&points, f)?))?;
    let best = points.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).expect("non-empty grid");
    let assignment: Vec<String> = best.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("best: {} mean {:.6} ± {:.6}", assignment.join(" "), best.mean, best.stderr);
    out.finish()
}

fn interrupt_default() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::fourroom(GoalId::G3, OptionSetKind::H, AlgorithmName::IntraDql);
    cfg.execution.steps = 400_000;
    cfg
}

fn cmd_interrupt(c: &Common) -> CmdResult {
    let cfg = resolve(c, interrupt_default())?;
    eprintln!("interrupt: 2 x {} runs x {} steps", cfg.execution.runs, cfg.execution.steps);
    let cmp = interruption_experiment(&cfg).map_err(classify)?;
    let mut out = Output::new(&c.out, "interrupt", &cfg)?;
    let plain = out.path("plain.csv");
    save_results(&cmp.plain, &plain).map_err(runtime)?;
    let interrupted = out.path("interrupted.csv");
    save_results(&cmp.interrupted, &interrupted).map_err(runtime)?;
    report_runs("without interruption", &cmp.plain);
    report_runs("with interruption", &cmp.interrupted);
    let higher = cmp.plain.iter().zip(&cmp.interrupted).filter(|(p, i)| i.final_window_rate > p.final_window_rate).count();
    println!("interruption higher in {higher}/{} paired runs", cmp.plain.len());
    let o = &cmp.oracle;
    println!("oracle: r(mu) = {:.6}, r(mu') = {:.6}, {} state-option pairs now terminate", o.rate, o.interrupted_rate, o.flipped);
    out.write("report.json", |f| {
        let mean = |rs: &[RunRecord]| mean_and_stderr(&rs.iter().map(|r| r.final_window_rate).collect::<Vec<_>>());
        let (pm, pse) = mean(&cmp.plain);
        let (im, ise) = mean(&cmp.interrupted);
        let json = serde_json::json!({
            "plain": { "mean_final_window_rate": pm, "stderr": pse },
            "interrupted": { "mean_final_window_rate": im, "stderr": ise },
            "interrupted_higher": higher,
            "runs": cmp.plain.len(),
            "oracle": { "rate": o.rate, "interrupted_rate": o.interrupted_rate, "flipped_pairs": o.flipped },
        });
        writeln!(f, "{}", serde_json::to_string_pretty(&json)?)?;
        Ok(())
    })?;
    out.finish()
}

fn cmd_model(c: &Common) -> CmdResult {
    let cfg = resolve(c, default_config())?;
    let ctx = Context::new(&cfg).map_err(classify)?;
    // There are no values to be greedy about; fall back to uniform primitives.
    let kind = match cfg.algorithm.behavior {
        BehaviorKind::EpsilonGreedy => BehaviorKind::UniformPrimitives,
        k => k,
    };
    let behavior = ctx.behavior(kind, &cfg.params).map_err(classify)?;
    let env = build_environment(&cfg).map_err(classify)?;
    let exact = exact_models(&env.mdp, &env.opts).map_err(classify)?;
    let ex = &cfg.execution;
    eprintln!("model: {} runs x {} steps, behavior {kind:?}", ex.runs, ex.steps);
    let models = map_indexed(ex.runs, ExecMode::Parallel, ex.jobs, |i| {
        let mut rng = seeded_rng(ex.seed.wrapping_add(i as u64));
        learn_model(&env, &behavior, &cfg.params, ex.steps, &mut rng)
    });
    let mut out = Output::new(&c.out, "model", &cfg)?;
    let mut errors = Vec::with_capacity(models.len());
    for m in &models {
        errors.push(model_error(m, &exact).map_err(runtime)?);
    }
    out.write("model_error.csv", |f| {
        writeln!(f, "run_id,seed,mp,mr,ml")?;
        for (i, (p, r, l)) in errors.iter().enumerate() {
            writeln!(f, "{i},{},{p:?},{r:?},{l:?}", ex.seed.wrapping_add(i as u64))?;
        }
        Ok(())
    })?;
    let learned = out.path("model_run0.csv");
    models[0].save_csv(&learned).map_err(runtime)?;
    let exact_path = out.path("model_exact.csv");
    exact.save_csv(&exact_path).map_err(runtime)?;
    for (i, (p, r, l)) in errors.iter().enumerate() {
        println!("run {i}: model_error mp={p:.6} mr={r:.6} ml={l:.6}");
    }
    out.finish()
}
