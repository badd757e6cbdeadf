use std::collections::VecDeque;
use std::path::Path;
use std::process::{Command, Output};

use avgopt::mdp::{FiniteMdp, Outcome};
use avgopt::option_model::model_error;
use avgopt::OptionModel;

fn avgopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avgopt")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect()
}

fn tiny_run() -> Vec<&'static str> {
    vec![
        "--set",
        "execution.steps=400",
        "--set",
        "execution.window=100",
        "--set",
        "execution.snapshot_every=100",
        "--set",
        "execution.runs=3",
    ]
}

#[test]
fn solve_prints_optimal_rate_and_lists_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let o = avgopt(&["solve", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("r* = 0.062500"), "{}", stdout(&o));
    let files = manifest(&out);
    for f in ["config.toml", "q.csv", "models.csv", "policy.csv"] {
        assert!(files.contains(&f.to_string()));
        assert!(out.join(f).is_file());
    }
}

#[test]
fn solve_two_state_fixture() {
    let dir = tempfile::tempdir().unwrap();
    // Action 0 stays, action 1 switches; leaving state 1 pays 1.
    let mdp = FiniteMdp::checked(
        2,
        2,
        vec![0.0, 1.0],
        vec![
            vec![Outcome { next_state: 0, reward_index: 0, prob: 1.0 }],
            vec![Outcome { next_state: 1, reward_index: 0, prob: 1.0 }],
            vec![Outcome { next_state: 1, reward_index: 0, prob: 1.0 }],
            vec![Outcome { next_state: 0, reward_index: 1, prob: 1.0 }],
        ],
        Some(0),
    )
    .unwrap();
    let path = dir.path().join("chain.json");
    std::fs::write(&path, serde_json::to_string(&mdp).unwrap()).unwrap();
    let set = format!("env.mdp_file={}", path.display());
    let out = dir.path().join("o");
    let o = avgopt(&["solve", "--set", &set, "--set", "options.set=A", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("r* = 0.500000"));
}

fn bfs(map: &str, from: (usize, usize), to: (usize, usize)) -> usize {
    let rows: Vec<Vec<char>> = map.lines().map(|l| l.chars().collect()).collect();
    let mut dist = vec![vec![usize::MAX; rows[0].len()]; rows.len()];
    dist[from.0][from.1] = 0;
    let mut q = VecDeque::from([from]);
    while let Some((r, c)) = q.pop_front() {
        for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
            if rows[nr][nc] != '#' && dist[nr][nc] == usize::MAX {
                dist[nr][nc] = dist[r][c] + 1;
                q.push_back((nr, nc));
            }
        }
    }
    dist[to.0][to.1]
}

#[test]
fn solve_custom_map_matches_bfs() {
    let dir = tempfile::tempdir().unwrap();
    let map = "#########\n#S..#...#\n#.#...#.#\n#.###.#1#\n#.....#.#\n#########\n";
    let path = dir.path().join("maze.map");
    std::fs::write(&path, map).unwrap();
    let expected = 1.0 / bfs(map, (1, 1), (3, 7)) as f64;
    let set = format!("env.map_file={}", path.display());
    let out = dir.path().join("o");
    let o = avgopt(&["solve", "--set", &set, "--set", "options.set=A", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("r* = {expected:.6}")), "{}", stdout(&o));
}

#[test]
fn learn_writes_results_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["learn", "--out", out.to_str().unwrap()];
        args.extend(tiny_run());
        args.extend(extra);
        let o = avgopt(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed", "7"]);
    let d = run("d", &["--jobs", "1"]);
    assert_eq!(a, b);
    assert_eq!(a, d);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 4);
    assert!(manifest(&dir.path().join("a")).contains(&"runs.csv".to_string()));
}

#[test]
fn plan_runs_the_combined_agent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let mut args = vec!["plan", "--out", out.to_str().unwrap()];
    args.extend(tiny_run());
    let o = avgopt(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(cfg.contains("name = \"combined\""));
}

#[test]
fn sweep_over_a_five_by_five_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let mut args = vec!["sweep", "--out", out.to_str().unwrap(), "--set", "execution.eval_greedy=off"];
    args.extend(tiny_run());
    args.extend(["--grid", "params.alpha=0.015625,0.03125,0.0625,0.125,0.25", "--grid", "params.eta=0.01,0.03,0.1,0.3,1"]);
    let o = avgopt(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(stdout(&o).starts_with("best: "));
}

#[test]
fn model_reports_error_against_exact_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = avgopt(&[
        "model",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "execution.steps=3000",
        "--set",
        "execution.runs=2",
        "--set",
        "params.alpha=0.1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let learned = OptionModel::load_csv(&out.join("model_run0.csv")).unwrap();
    let exact = OptionModel::load_csv(&out.join("model_exact.csv")).unwrap();
    let (p, r, l) = model_error(&learned, &exact).unwrap();
    let line = format!("run 0: model_error mp={p:.6} mr={r:.6} ml={l:.6}");
    assert!(stdout(&o).contains(&line), "{}\n{line}", stdout(&o));
}

#[test]
fn interrupt_reports_both_variants_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("i");
    let mut args = vec!["interrupt", "--out", out.to_str().unwrap()];
    args.extend(tiny_run());
    let o = avgopt(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = manifest(&out);
    assert!(files.contains(&"plain.csv".to_string()) && files.contains(&"interrupted.csv".to_string()));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let oracle = &report["oracle"];
    assert!(oracle["interrupted_rate"].as_f64().unwrap() >= oracle["rate"].as_f64().unwrap());
    assert_eq!(report["runs"], 3);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u");
    let out = out.to_str().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["solve", "--config", "/definitely/not/here.toml", "--out", out],
        vec!["learn", "--set", "params.alfa=0.1", "--out", out],
        vec!["learn", "--set", "algorithm.name=sarsa", "--out", out],
        vec!["learn", "--jobs", "0", "--out", out],
        vec!["sweep", "--grid", "params.nope=1,2", "--out", out],
        vec!["sweep", "--out", out],
    ] {
        let o = avgopt(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // Probabilities do not sum to one.
    let bad = FiniteMdp::new(1, 1, vec![0.0], vec![vec![Outcome { next_state: 0, reward_index: 0, prob: 0.5 }]], Some(0));
    let bad = serde_json::to_string(&bad).unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    let set = format!("env.mdp_file={}", path.display());
    let o = avgopt(&["solve", "--set", &set, "--set", "options.set=A", "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
