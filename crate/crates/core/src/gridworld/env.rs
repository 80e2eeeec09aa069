use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::map::{Cell, Color, GridMap, Pos};
use super::GridError;

pub const TREASURE_REWARD: f64 = 100.0;
pub const WALL_PENALTY: f64 = -0.1;
pub const REMOVABLE_PENALTY: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stand,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stand];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stand => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stand => "stand",
        }
    }

    /// Index into [`Observation::neighbors`] of the cell this move enters.
    pub fn neighbor_index(self) -> Option<usize> {
        match self {
            Action::Up => Some(1),
            Action::Left => Some(3),
            Action::Right => Some(4),
            Action::Down => Some(6),
            Action::Stand => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, GridError> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| GridError::InvalidAction(s.to_string()))
    }
}

/// What an agent sees in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Empty,
    Wall,
    Removable,
    Yellow,
    Purple,
    Skyblue,
    Green,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Empty => "empty",
            Block::Wall => "wall",
            Block::Removable => "removable",
            Block::Yellow => "yellow",
            Block::Purple => "purple",
            Block::Skyblue => "skyblue",
            Block::Green => "green",
        }
    }

    pub fn of_color(c: Color) -> Block {
        match c {
            Color::Yellow => Block::Yellow,
            Color::Purple => Block::Purple,
            Color::Skyblue => Block::Skyblue,
            Color::Green => Block::Green,
        }
    }

    pub fn color(self) -> Option<Color> {
        match self {
            Block::Yellow => Some(Color::Yellow),
            Block::Purple => Some(Color::Purple),
            Block::Skyblue => Some(Color::Skyblue),
            Block::Green => Some(Color::Green),
            _ => None,
        }
    }

    pub fn passable(self) -> bool {
        !matches!(self, Block::Wall | Block::Removable)
    }
}

/// Neighbour order: up-left, up, up-right, left, right, down-left, down, down-right.
pub const NEIGHBOR_NAMES: [&str; 8] = ["ul", "u", "ur", "l", "r", "dl", "d", "dr"];
const NEIGHBOR_DELTAS: [(i32, i32); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub neighbors: [Block; 8],
    /// Position minus treasure position.
    pub dx: i32,
    pub dy: i32,
    pub on: Block,
    /// Indexed like [`Color::VISITABLE`].
    pub visited: [bool; 3],
}

impl Observation {
    pub fn has_visited(&self, c: Color) -> bool {
        c.visit_index().is_some_and(|i| self.visited[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub reward: f64,
    pub penalties: [f64; 2],
    pub removable_hits: [bool; 2],
    pub won_by: Option<usize>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    map: GridMap,
    pub positions: [Pos; 2],
    pub visited: [[bool; 3]; 2],
    pub lever_open: bool,
    pub door_open: bool,
    pub t: usize,
    pub done: bool,
    pub won: bool,
}

impl Env {
    pub fn new(map: GridMap) -> Self {
        let positions = map.starts;
        let mut env = Env {
            map,
            positions,
            visited: [[false; 3]; 2],
            lever_open: false,
            door_open: false,
            t: 0,
            done: false,
            won: false,
        };
        env.update_flags();
        env
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn gate_open(&self) -> bool {
        self.positions
            .iter()
            .any(|&p| self.map.cell(p) == Cell::Special(Color::Skyblue))
    }

    pub fn block_at(&self, p: Pos) -> Block {
        match self.map.cell(p) {
            Cell::Floor => Block::Empty,
            Cell::Wall => Block::Wall,
            Cell::Removable if self.lever_open => Block::Empty,
            Cell::Removable => Block::Removable,
            Cell::Door if self.door_open => Block::Empty,
            Cell::Gate if self.gate_open() => Block::Empty,
            Cell::Door | Cell::Gate => Block::Wall,
            Cell::Special(c) => Block::of_color(c),
        }
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let p = self.positions[agent];
        let mut neighbors = [Block::Empty; 8];
        for (n, (dx, dy)) in neighbors.iter_mut().zip(NEIGHBOR_DELTAS) {
            *n = self.block_at(p.offset(dx, dy));
        }
        Observation {
            neighbors,
            dx: p.x - self.map.treasure.x,
            dy: p.y - self.map.treasure.y,
            on: self.block_at(p),
            visited: self.visited[agent],
        }
    }

    pub fn observe_all(&self) -> [Observation; 2] {
        [self.observe(0), self.observe(1)]
    }

    pub fn team_visited(&self, c: Color) -> bool {
        c.visit_index().is_some_and(|i| self.visited[0][i] || self.visited[1][i])
    }

    fn update_flags(&mut self) {
        for a in 0..2 {
            if let Cell::Special(c) = self.map.cell(self.positions[a]) {
                if let Some(i) = c.visit_index() {
                    self.visited[a][i] = true;
                }
                match c {
                    Color::Purple => self.lever_open = true,
                    Color::Yellow => self.door_open = true,
                    _ => {}
                }
            }
        }
    }

    /// Simultaneous move of both agents.
    ///
    /// Blocked moves keep the agent in place and cost the wall penalty
    /// (removable walls cost more). Two agents entering the same cell, or
    /// swapping cells, both stay put without penalty.
    pub fn step(&mut self, actions: [Action; 2]) -> Result<StepResult, GridError> {
        if self.done {
            return Err(GridError::EpisodeDone);
        }
        let start = self.positions;
        let mut next = start;
        let mut penalties = [0.0; 2];
        let mut removable_hits = [false; 2];
        for a in 0..2 {
            let (dx, dy) = actions[a].delta();
            if (dx, dy) == (0, 0) {
                continue;
            }
            let target = start[a].offset(dx, dy);
            match self.block_at(target) {
                Block::Wall => penalties[a] = WALL_PENALTY,
                Block::Removable => {
                    penalties[a] = REMOVABLE_PENALTY;
                    removable_hits[a] = true;
                }
                _ => next[a] = target,
            }
        }
        loop {
            let mut changed = false;
            if next[0] == next[1] || (next[0] == start[1] && next[1] == start[0]) {
                for a in 0..2 {
                    if next[a] != start[a] {
                        next[a] = start[a];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.positions = next;
        self.update_flags();
        self.t += 1;
        let won_by = (0..2).find(|&a| self.positions[a] == self.map.treasure);
        let mut reward = penalties[0] + penalties[1];
        if won_by.is_some() {
            reward += TREASURE_REWARD;
            self.won = true;
            self.done = true;
        }
        if self.t >= self.map.max_steps {
            self.done = true;
        }
        Ok(StepResult {
            reward,
            penalties,
            removable_hits,
            won_by,
            done: self.done,
        })
    }
}
