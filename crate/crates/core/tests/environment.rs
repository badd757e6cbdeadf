use std::collections::VecDeque;

use avgopt::fourroom::{build_fourroom_mdp, build_hallway_options, default_map, parse_map, FourRoomConfig, GoalId, UP};
use avgopt::mdp::{execute_option, sample_index, seeded_rng, step, validate_mdp, FiniteMdp, OptionSet, Outcome};
use avgopt::Error;
use proptest::prelude::*;

/// BFS over the raw map text, walls are `#`.
fn text_distances(map: &str, from: (usize, usize)) -> Vec<Vec<Option<usize>>> {
    let rows: Vec<Vec<char>> = map.lines().map(|l| l.chars().collect()).collect();
    let mut dist = vec![vec![None; rows[0].len()]; rows.len()];
    dist[from.0][from.1] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r][c].unwrap();
        for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
            if rows[nr][nc] != '#' && dist[nr][nc].is_none() {
                dist[nr][nc] = Some(d + 1);
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

#[test]
fn sampled_frequencies_match_row_probabilities() {
    let mdp = FiniteMdp::checked(
        2,
        1,
        vec![0.0],
        vec![
            vec![Outcome { next_state: 0, reward_index: 0, prob: 0.5 }, Outcome { next_state: 1, reward_index: 0, prob: 0.5 }],
            vec![Outcome { next_state: 0, reward_index: 0, prob: 1.0 }],
        ],
        None,
    )
    .unwrap();
    let mut rng = seeded_rng(11);
    let n = 100_000;
    let ones = (0..n).filter(|_| step(&mdp, 0, 0, &mut rng).0 == 1).count();
    assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
}

#[test]
fn invalid_rows_are_all_reported() {
    let mdp = FiniteMdp::new(
        2,
        1,
        vec![0.0],
        vec![
            vec![Outcome { next_state: 5, reward_index: 0, prob: 0.7 }],
            vec![Outcome { next_state: 0, reward_index: 3, prob: -1.0 }],
        ],
        None,
    );
    let report = validate_mdp(&mdp);
    assert!(report.len() >= 4, "{report:?}");
    assert!(matches!(FiniteMdp::checked(1, 1, vec![0.0], vec![vec![]], None), Err(Error::InvalidMdp(_))));
}

#[test]
fn shipped_map_counts_and_distances() {
    let grid = parse_map(default_map()).unwrap();
    let open = default_map().chars().filter(|c| !matches!(c, '#' | '\n')).count();
    assert_eq!(grid.open_cells().len(), open);
    assert_eq!(open, 104);
    let dist = text_distances(default_map(), grid.start());
    for (goal, expected) in [(GoalId::G1, 16), (GoalId::G2, 14)] {
        let (r, c) = grid.goal(goal).unwrap();
        assert_eq!(dist[r][c], Some(expected));
    }
}

#[test]
fn wall_bump_and_goal_teleport() {
    let e = build_fourroom_mdp(&FourRoomConfig::new(GoalId::G1)).unwrap();
    let s = e.start_state();
    let mut rng = seeded_rng(0);
    assert_eq!(step(e.mdp(), s, UP, &mut rng), (s, 0.0));
    // Every transition into the goal cell pays 1 and lands on the start.
    let goal = e.goal_cell();
    let mut entries = 0;
    for s in 0..e.num_states() {
        for a in 0..4 {
            let next = e.grid().open_neighbor(e.cell_of(s), a);
            let out = &e.mdp().outcomes(s, a)[0];
            if next == Some(goal) {
                entries += 1;
                assert_eq!((out.next_state, e.mdp().reward(out)), (e.start_state(), 1.0));
            } else {
                assert_eq!(e.mdp().reward(out), 0.0);
            }
        }
    }
    assert!(entries >= 1);
}

#[test]
fn inactive_goals_are_floor() {
    let e = build_fourroom_mdp(&FourRoomConfig::new(GoalId::G1)).unwrap();
    for g in [GoalId::G2, GoalId::G3] {
        let cell = e.grid().goal(g).unwrap();
        assert!(e.state_of(cell).is_some());
    }
    assert!(e.state_of(e.goal_cell()).is_none());
    assert_eq!(e.num_states(), 103);
}

#[test]
fn hallway_options_reach_targets_in_bfs_steps() {
    let e = build_fourroom_mdp(&FourRoomConfig::new(GoalId::G2)).unwrap();
    let h = build_hallway_options(&e);
    assert_eq!(h.len(), 8);
    let mut rng = seeded_rng(3);
    for (o, label) in h.labels().iter().enumerate() {
        let target = e.grid().hallways().iter().find(|hw| label.ends_with(&format!("({},{})", hw.cell.0, hw.cell.1)));
        let target = target.unwrap().cell;
        // With G2 active the lower hallway is not a state; skip its options.
        if e.state_of(target).is_none() {
            continue;
        }
        let dist = text_distances(default_map(), target);
        for s in 0..e.num_states() {
            if h.get(o).beta(s) != 0.0 {
                continue;
            }
            let (r, c) = e.cell_of(s);
            let seg = execute_option(e.mdp(), &h, o, s, &mut rng, 1000);
            // Shortest paths inside the option's region match the unrestricted
            // BFS on this map, since rooms are convex.
            assert_eq!(Some(seg.length), dist[r][c], "{label} from {:?}", (r, c));
            assert_eq!(e.cell_of(seg.end_state), target);
            assert!(!seg.truncated);
        }
    }
}

#[test]
fn custom_map_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.map");
    std::fs::write(&path, "#######\n#S..#.#\n#...H1#\n#..3#2#\n#######\n").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg = FourRoomConfig { map_text: text, active_goal: GoalId::G1, goal_reward: 1.0 };
    let e = build_fourroom_mdp(&cfg).unwrap();
    assert_eq!(e.grid().hallways().len(), 1);
    let dist = text_distances(&cfg.map_text, (1, 1));
    assert_eq!(dist[2][5], Some(5));
}

#[test]
fn map_errors_name_the_cell() {
    match parse_map("#####\n#S.x#\n#####\n") {
        Err(Error::Map { row, col, .. }) => assert_eq!((row, col), (1, 3)),
        other => panic!("{other:?}"),
    }
    assert!(parse_map("#####\n#S#1#\n#####\n").is_err());
    assert!(parse_map("###\n#S.#\n###\n").is_err());
}

proptest! {
    #[test]
    fn random_walks_stay_on_open_cells(seed in 0u64..1000, steps in 1usize..500) {
        let e = build_fourroom_mdp(&FourRoomConfig::new(GoalId::G3)).unwrap();
        let mut rng = seeded_rng(seed);
        let mut s = e.start_state();
        let uniform = [0.25; 4];
        for _ in 0..steps {
            let a = sample_index(&uniform, &mut rng);
            let (s2, r) = step(e.mdp(), s, a, &mut rng);
            prop_assert!(s2 < e.num_states());
            prop_assert!(r == 0.0 || (r == 1.0 && s2 == e.start_state()));
            s = s2;
        }
    }

    #[test]
    fn primitive_options_last_one_step(seed in 0u64..200, s in 0usize..103, a in 0usize..4) {
        let e = build_fourroom_mdp(&FourRoomConfig::new(GoalId::G1)).unwrap();
        let opts: OptionSet = e.primitive_options();
        let seg = execute_option(e.mdp(), &opts, a, s, &mut seeded_rng(seed), 10);
        prop_assert_eq!(seg.length, 1);
        prop_assert_eq!(seg.transitions[0].action, a);
    }
}
