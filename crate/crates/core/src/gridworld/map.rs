use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GridError;

pub const FIXTURE_MAP: &str = include_str!("../../data/alice_bob_v1.map");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Pos {
        Pos::new(self.x + dx, self.y + dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Yellow,
    Purple,
    Skyblue,
    Green,
}

impl Color {
    /// Colors an agent can have visited; green ends the episode.
    pub const VISITABLE: [Color; 3] = [Color::Yellow, Color::Purple, Color::Skyblue];

    pub fn name(self) -> &'static str {
        match self {
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Skyblue => "skyblue",
            Color::Green => "green",
        }
    }

    pub fn visit_index(self) -> Option<usize> {
        Color::VISITABLE.iter().position(|&c| c == self)
    }
}

impl FromStr for Color {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, GridError> {
        match s {
            "yellow" => Ok(Color::Yellow),
            "purple" => Ok(Color::Purple),
            "skyblue" => Ok(Color::Skyblue),
            "green" => Ok(Color::Green),
            other => Err(GridError::Map(format!("unknown color `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Floor,
    Wall,
    Removable,
    Door,
    Gate,
    Special(Color),
}

pub const AGENT_NAMES: [&str; 2] = ["alice", "bob"];

pub fn agent_index(name: &str) -> Result<usize, GridError> {
    AGENT_NAMES
        .iter()
        .position(|&a| a == name)
        .ok_or_else(|| GridError::Map(format!("unknown agent `{name}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub agent: usize,
    pub color: Color,
    pub hold: bool,
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", AGENT_NAMES[self.agent], self.color.name())?;
        if self.hold {
            write!(f, ":hold")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub name: String,
    pub width: i32,
    pub height: i32,
    cells: Vec<Cell>,
    pub starts: [Pos; 2],
    pub treasure: Pos,
    pub max_steps: usize,
    pub plan: Vec<PlanStep>,
}

impl GridMap {
    pub fn fixture() -> Self {
        GridMap::parse(FIXTURE_MAP).expect("bundled map parses")
    }

    /// Header `key = value` lines, a `---` line, then one row per line.
    /// `#` at the start of a header line begins a comment.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let mut name = String::from("unnamed");
        let mut max_steps = 50;
        let mut plan = Vec::new();
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "---" {
                break;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GridError::Map(format!("bad header line `{line}`")))?;
            match k.trim() {
                "name" => name = v.trim().to_string(),
                "max_steps" => {
                    max_steps = v
                        .trim()
                        .parse()
                        .map_err(|_| GridError::Map(format!("bad max_steps `{}`", v.trim())))?
                }
                "plan" => plan = parse_plan(v)?,
                other => return Err(GridError::Map(format!("unknown header key `{other}`"))),
            }
        }
        let rows: Vec<&str> = lines.map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(GridError::Map("map has no rows".into()));
        }
        let width = rows[0].chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        let mut starts = [None, None];
        let mut treasure = None;
        let mut seen_special = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(GridError::Map(format!("row {y} has width {}, expected {width}", row.chars().count())));
            }
            for (x, ch) in row.chars().enumerate() {
                let pos = Pos::new(x as i32, y as i32);
                let cell = match ch {
                    '.' => Cell::Floor,
                    '#' => Cell::Wall,
                    'R' => Cell::Removable,
                    'D' => Cell::Door,
                    'G' => Cell::Gate,
                    'P' => Cell::Special(Color::Purple),
                    'Y' => Cell::Special(Color::Yellow),
                    'S' => Cell::Special(Color::Skyblue),
                    'T' => {
                        treasure = Some(pos);
                        Cell::Special(Color::Green)
                    }
                    'A' | 'B' => {
                        starts[(ch == 'B') as usize] = Some(pos);
                        Cell::Floor
                    }
                    other => return Err(GridError::Map(format!("unknown cell `{other}` at ({x}, {y})"))),
                };
                if let Cell::Special(c) = cell {
                    if seen_special.contains(&c) {
                        return Err(GridError::Map(format!("duplicate {} block", c.name())));
                    }
                    seen_special.push(c);
                }
                cells.push(cell);
            }
        }
        let missing = |what: &str| GridError::Map(format!("map has no {what}"));
        let map = GridMap {
            name,
            width: width as i32,
            height: rows.len() as i32,
            cells,
            starts: [starts[0].ok_or_else(|| missing("alice start"))?, starts[1].ok_or_else(|| missing("bob start"))?],
            treasure: treasure.ok_or_else(|| missing("treasure"))?,
            max_steps,
            plan,
        };
        for step in &map.plan {
            map.special(step.color)
                .ok_or_else(|| GridError::Map(format!("plan step {step} names a missing block")))?;
        }
        Ok(map)
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    /// Out-of-bounds reads as wall.
    pub fn cell(&self, p: Pos) -> Cell {
        if self.in_bounds(p) {
            self.cells[(p.y * self.width + p.x) as usize]
        } else {
            Cell::Wall
        }
    }

    pub fn special(&self, color: Color) -> Option<Pos> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
            .find(|&p| self.cell(p) == Cell::Special(color))
    }

    /// Subgoal colors in plan order, deduplicated.
    pub fn subgoal_order(&self) -> Vec<Color> {
        let mut out = Vec::new();
        for s in &self.plan {
            if !out.contains(&s.color) {
                out.push(s.color);
            }
        }
        out
    }

    pub fn hold_colors(&self) -> Vec<Color> {
        self.plan.iter().filter(|s| s.hold).map(|s| s.color).collect()
    }
}

fn parse_plan(v: &str) -> Result<Vec<PlanStep>, GridError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let parts: Vec<&str> = s.split(':').collect();
            match parts.as_slice() {
                [a, c] => Ok(PlanStep {
                    agent: agent_index(a)?,
                    color: c.parse()?,
                    hold: false,
                }),
                [a, c, "hold"] => Ok(PlanStep {
                    agent: agent_index(a)?,
                    color: c.parse()?,
                    hold: true,
                }),
                _ => Err(GridError::Map(format!("bad plan step `{s}`"))),
            }
        })
        .collect()
}
