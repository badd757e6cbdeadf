//! Continuing Four-Room gridworld and its hallway options.
//!
//! Map format: UTF-8 text, one row per line, rectangular, wall border.
//!
//! | char | meaning |
//! |------|---------|
//! | `#`  | wall |
//! | `.`  | floor |
//! | `H`  | hallway |
//! | `S`  | start (exactly one) |
//! | `1` `2` `3` | goal cells G1..G3 (each at most once) |
//!
//! A goal cell sitting in a doorway (walls on two opposite sides, open on the
//! other two) is also treated as a hallway.
//!
//! Entering the active goal pays the goal reward and teleports the agent to
//! the start cell, so the goal itself is never occupied and is not a state.
//! Inactive goal cells behave as floor.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, OptionDef, OptionSet, Outcome};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const NUM_ACTIONS: usize = 4;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["up", "down", "left", "right"];

const DELTAS: [(isize, isize); NUM_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

const DEFAULT_MAP: &str = "\
#############
#S....#.....#
#.....#.....#
#.....H.....#
#.....#.....#
#.....#.....#
##H####.....#
#.....###H###
#.....#.....#
#.....#.....#
#.....2.1...#
#...3.#.....#
#############
";

/// The shipped 13×13 map.
pub fn default_map() -> &'static str {
    DEFAULT_MAP
}

pub type CellPos = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalId {
    G1,
    G2,
    G3,
}

impl GoalId {
    fn from_char(c: char) -> Option<Self> {
        match c {
            '1' => Some(GoalId::G1),
            '2' => Some(GoalId::G2),
            '3' => Some(GoalId::G3),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            GoalId::G1 => 0,
            GoalId::G2 => 1,
            GoalId::G3 => 2,
        }
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.index() + 1)
    }
}

impl FromStr for GoalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G1" | "1" => Ok(GoalId::G1),
            "G2" | "2" => Ok(GoalId::G2),
            "G3" | "3" => Ok(GoalId::G3),
            other => Err(Error::Config { path: "env.goal".into(), msg: format!("unknown goal `{other}`") }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Floor,
    Hallway,
    Start,
    Goal(GoalId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hallway {
    pub cell: CellPos,
    /// The two rooms the hallway connects, in ascending order.
    pub rooms: [usize; 2],
}

/// A parsed map with its derived room partition.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: CellPos,
    goals: [Option<CellPos>; 3],
    /// Room index of every non-wall, non-hallway cell.
    room_of: Vec<Option<usize>>,
    rooms: Vec<Vec<CellPos>>,
    hallways: Vec<Hallway>,
}

impl GridSpec {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, pos: CellPos) -> Cell {
        self.cells[pos.0 * self.width + pos.1]
    }

    pub fn is_open(&self, pos: CellPos) -> bool {
        pos.0 < self.height && pos.1 < self.width && self.cell(pos) != Cell::Wall
    }

    pub fn start(&self) -> CellPos {
        self.start
    }

    pub fn goal(&self, id: GoalId) -> Option<CellPos> {
        self.goals[id.index()]
    }

    pub fn rooms(&self) -> &[Vec<CellPos>] {
        &self.rooms
    }

    pub fn room_of(&self, pos: CellPos) -> Option<usize> {
        self.room_of[pos.0 * self.width + pos.1]
    }

    pub fn hallways(&self) -> &[Hallway] {
        &self.hallways
    }

    /// Non-wall cells in row-major order.
    pub fn open_cells(&self) -> Vec<CellPos> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&p| self.cell(p) != Cell::Wall)
            .collect()
    }

    /// The cell reached by `action` from `pos`, ignoring walls.
    pub fn neighbor(&self, pos: CellPos, action: usize) -> Option<CellPos> {
        let (dr, dc) = DELTAS[action];
        let r = pos.0.checked_add_signed(dr)?;
        let c = pos.1.checked_add_signed(dc)?;
        (r < self.height && c < self.width).then_some((r, c))
    }

    /// The open cell reached by `action` from `pos`, if the move is not blocked.
    pub fn open_neighbor(&self, pos: CellPos, action: usize) -> Option<CellPos> {
        self.neighbor(pos, action).filter(|&n| self.is_open(n))
    }

    /// Breadth-first distances from `from` over open cells accepted by `allowed`.
    pub fn bfs_from(&self, from: CellPos, allowed: impl Fn(CellPos) -> bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.width * self.height];
        if !self.is_open(from) {
            return dist;
        }
        dist[from.0 * self.width + from.1] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            let d = dist[p.0 * self.width + p.1].unwrap();
            for a in 0..NUM_ACTIONS {
                if let Some(n) = self.open_neighbor(p, a) {
                    let k = n.0 * self.width + n.1;
                    if dist[k].is_none() && allowed(n) {
                        dist[k] = Some(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    fn index(&self, pos: CellPos) -> usize {
        pos.0 * self.width + pos.1
    }
}

fn is_doorway(cells: &[Cell], width: usize, height: usize, (r, c): CellPos) -> bool {
    if r == 0 || c == 0 || r + 1 >= height || c + 1 >= width {
        return false;
    }
    let wall = |rr: usize, cc: usize| cells[rr * width + cc] == Cell::Wall;
    let vertical_walls = wall(r - 1, c) && wall(r + 1, c) && !wall(r, c - 1) && !wall(r, c + 1);
    let horizontal_walls = wall(r, c - 1) && wall(r, c + 1) && !wall(r - 1, c) && !wall(r + 1, c);
    vertical_walls || horizontal_walls
}

/// Parses a map and derives rooms and hallways.
pub fn parse_map(text: &str) -> Result<GridSpec> {
    let rows: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()).collect();
    if rows.is_empty() {
        return Err(Error::MapShape("map is empty".into()));
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut cells = Vec::with_capacity(width * height);
    let mut start = None;
    let mut goals = [None; 3];
    for (r, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::Map {
                row: r,
                col: row.chars().count().min(width),
                msg: format!("ragged row: expected {width} columns, found {}", row.chars().count()),
            });
        }
        for (c, ch) in row.chars().enumerate() {
            let cell = match ch {
                '#' => Cell::Wall,
                '.' => Cell::Floor,
                'H' => Cell::Hallway,
                'S' => {
                    if start.is_some() {
                        return Err(Error::Map { row: r, col: c, msg: "second start cell".into() });
                    }
                    start = Some((r, c));
                    Cell::Start
                }
                d => match GoalId::from_char(d) {
                    Some(g) => {
                        if goals[g.index()].is_some() {
                            return Err(Error::Map { row: r, col: c, msg: format!("goal {g} appears twice") });
                        }
                        goals[g.index()] = Some((r, c));
                        Cell::Goal(g)
                    }
                    None => return Err(Error::Map { row: r, col: c, msg: format!("unknown character `{d}`") }),
                },
            };
            let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
            if border && cell != Cell::Wall {
                return Err(Error::Map { row: r, col: c, msg: "border must be wall".into() });
            }
            cells.push(cell);
        }
    }
    let start = start.ok_or_else(|| Error::MapShape("missing start cell `S`".into()))?;

    let is_hallway: Vec<bool> = (0..cells.len())
        .map(|k| {
            let pos = (k / width, k % width);
            match cells[k] {
                Cell::Hallway => true,
                Cell::Goal(_) => is_doorway(&cells, width, height, pos),
                _ => false,
            }
        })
        .collect();

    // Rooms: connected components of open, non-hallway cells.
    let mut room_of: Vec<Option<usize>> = vec![None; cells.len()];
    let mut rooms: Vec<Vec<CellPos>> = Vec::new();
    for k in 0..cells.len() {
        if cells[k] == Cell::Wall || is_hallway[k] || room_of[k].is_some() {
            continue;
        }
        let id = rooms.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([k]);
        room_of[k] = Some(id);
        while let Some(j) = queue.pop_front() {
            let (r, c) = (j / width, j % width);
            members.push((r, c));
            for (dr, dc) in DELTAS {
                let (Some(nr), Some(nc)) = (r.checked_add_signed(dr), c.checked_add_signed(dc)) else {
                    continue;
                };
                if nr >= height || nc >= width {
                    continue;
                }
                let n = nr * width + nc;
                if cells[n] != Cell::Wall && !is_hallway[n] && room_of[n].is_none() {
                    room_of[n] = Some(id);
                    queue.push_back(n);
                }
            }
        }
        members.sort_unstable();
        rooms.push(members);
    }

    let mut hallways = Vec::new();
    for (k, _) in is_hallway.iter().enumerate().filter(|(_, &h)| h) {
        let (r, c) = (k / width, k % width);
        let mut neighbor_rooms = Vec::new();
        let mut open = 0;
        for (dr, dc) in DELTAS {
            let n = (r as isize + dr) as usize * width + (c as isize + dc) as usize;
            if cells[n] != Cell::Wall {
                open += 1;
                if let Some(room) = room_of[n] {
                    neighbor_rooms.push(room);
                }
            }
        }
        if open != 2 || neighbor_rooms.len() != 2 || neighbor_rooms[0] == neighbor_rooms[1] {
            return Err(Error::Map {
                row: r,
                col: c,
                msg: "hallway must border exactly two cells in different rooms".into(),
            });
        }
        neighbor_rooms.sort_unstable();
        hallways.push(Hallway { cell: (r, c), rooms: [neighbor_rooms[0], neighbor_rooms[1]] });
    }

    let grid = GridSpec { width, height, cells, start, goals, room_of, rooms, hallways };
    let open = grid.open_cells();
    let dist = grid.bfs_from(start, |_| true);
    if let Some(&(r, c)) = open.iter().find(|&&p| dist[grid.index(p)].is_none()) {
        return Err(Error::Map { row: r, col: c, msg: "cell is not reachable from the start".into() });
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourRoomConfig {
    pub map_text: String,
    pub active_goal: GoalId,
    pub goal_reward: f64,
}

impl FourRoomConfig {
    pub fn new(active_goal: GoalId) -> Self {
        Self { map_text: default_map().to_string(), active_goal, goal_reward: 1.0 }
    }
}

/// A built Four-Room instance: grid, state indexing, and dynamics.
#[derive(Clone, Debug)]
pub struct FourRoom {
    grid: GridSpec,
    goal: CellPos,
    state_of: Vec<Option<usize>>,
    cells: Vec<CellPos>,
    mdp: FiniteMdp,
}

impl FourRoom {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn goal_cell(&self) -> CellPos {
        self.goal
    }

    pub fn start_state(&self) -> usize {
        self.state_of(self.grid.start).expect("start is a state")
    }

    pub fn state_of(&self, pos: CellPos) -> Option<usize> {
        if pos.0 >= self.grid.height || pos.1 >= self.grid.width {
            return None;
        }
        self.state_of[self.grid.index(pos)]
    }

    pub fn cell_of(&self, state: usize) -> CellPos {
        self.cells[state]
    }

    pub fn num_states(&self) -> usize {
        self.cells.len()
    }

    /// The primitive actions as one-step options (`A`).
    pub fn primitive_options(&self) -> OptionSet {
        OptionSet::primitives(self.num_states(), NUM_ACTIONS, &ACTION_NAMES)
    }

    /// Primitive actions followed by hallway options (`A+H`).
    pub fn primitives_and_hallways(&self) -> OptionSet {
        self.primitive_options().concat(&build_hallway_options(self)).expect("same spaces")
    }
}

/// States are open cells other than the active goal, in row-major order.
/// Actions are up, down, left, right.
pub fn build_fourroom_mdp(cfg: &FourRoomConfig) -> Result<FourRoom> {
    let grid = parse_map(&cfg.map_text)?;
    let goal = grid
        .goal(cfg.active_goal)
        .ok_or_else(|| Error::MapShape(format!("active goal {} is not on the map", cfg.active_goal)))?;
    let mut state_of = vec![None; grid.width * grid.height];
    let mut cells = Vec::new();
    for p in grid.open_cells() {
        if p != goal {
            state_of[grid.index(p)] = Some(cells.len());
            cells.push(p);
        }
    }
    let start = state_of[grid.index(grid.start)].expect("start differs from goal");
    let mut dynamics = Vec::with_capacity(cells.len() * NUM_ACTIONS);
    for &p in &cells {
        for a in 0..NUM_ACTIONS {
            let outcome = match grid.open_neighbor(p, a) {
                None => Outcome { next_state: state_of[grid.index(p)].unwrap(), reward_index: 0, prob: 1.0 },
                Some(n) if n == goal => Outcome { next_state: start, reward_index: 1, prob: 1.0 },
                Some(n) => Outcome { next_state: state_of[grid.index(n)].unwrap(), reward_index: 0, prob: 1.0 },
            };
            dynamics.push(vec![outcome]);
        }
    }
    let mdp = FiniteMdp::checked(cells.len(), NUM_ACTIONS, vec![0.0, cfg.goal_reward], dynamics, Some(start))?;
    Ok(FourRoom { grid, goal, state_of, cells, mdp })
}

/// One option per (room, adjoining hallway) pair.
///
/// The arrow region of an option is its room plus the room's other adjoining
/// hallways. On the arrow region the policy steps along a shortest path to the
/// target hallway (first improving action in up/down/left/right order) and
/// never terminates; everywhere else the policy is uniform and β = 1.
pub fn build_hallway_options(env: &FourRoom) -> OptionSet {
    let grid = &env.grid;
    let ns = env.num_states();
    let mut options = Vec::new();
    let mut labels = Vec::new();
    for (room, members) in grid.rooms.iter().enumerate() {
        let adjoining: Vec<&Hallway> = grid.hallways.iter().filter(|h| h.rooms.contains(&room)).collect();
        for target in &adjoining {
            let in_region = |p: CellPos| {
                grid.room_of(p) == Some(room) || adjoining.iter().any(|h| h.cell == p && h.cell != target.cell)
            };
            let dist = grid.bfs_from(target.cell, in_region);
            let mut policy = vec![0.25; ns * NUM_ACTIONS];
            let mut termination = vec![1.0; ns];
            for s in 0..ns {
                let p = env.cell_of(s);
                if !in_region(p) {
                    continue;
                }
                let d = dist[grid.index(p)].expect("arrow region is connected to its hallway");
                let best = (0..NUM_ACTIONS)
                    .find(|&a| grid.open_neighbor(p, a).and_then(|n| dist[grid.index(n)]) == Some(d.wrapping_sub(1)))
                    .expect("every arrow cell has an improving move");
                let row = &mut policy[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS];
                row.fill(0.0);
                row[best] = 1.0;
                termination[s] = 0.0;
            }
            debug_assert!(members.iter().all(|&p| in_region(p)));
            options.push(OptionDef::new(ns, NUM_ACTIONS, policy, termination).expect("hallway option is valid"));
            labels.push(format!("room{room}→hall({},{})", target.cell.0, target.cell.1));
        }
    }
    OptionSet::new(options, labels).expect("map has at least one hallway")
}
