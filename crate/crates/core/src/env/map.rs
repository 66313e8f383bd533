use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::seeding::splitmix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Wall,
}

/// One of the four axis-aligned headings, counter-clockwise from +x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    #[serde(rename = "0")]
    East,
    #[serde(rename = "90")]
    North,
    #[serde(rename = "180")]
    West,
    #[serde(rename = "270")]
    South,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::East, Heading::North, Heading::West, Heading::South];

    pub fn degrees(self) -> u32 {
        self.index() as u32 * 90
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    pub fn from_degrees(deg: u32) -> Option<Heading> {
        (deg.is_multiple_of(90) && deg < 360).then(|| Self::from_index(deg as usize / 90))
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    /// Grid offset of one forward move; heading 90° increases `y`.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Heading::East => (1, 0),
            Heading::North => (0, 1),
            Heading::West => (-1, 0),
            Heading::South => (0, -1),
        }
    }

    pub fn radians(self) -> f64 {
        (self.degrees() as f64).to_radians()
    }
}

/// Agent pose: a free cell plus a heading. Simulator-internal; the agent
/// only ever sees rendered observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: usize, y: usize, heading: Heading) -> Self {
        Self { x, y, heading }
    }

    pub fn cell(&self) -> (usize, usize) {
        (self.x, self.y)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{}°)", self.x, self.y, self.heading.degrees())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// An immutable, validated grid maze.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    palette: Vec<[f64; 3]>,
    start: Pose,
    seed: u64,
}

impl MazeMap {
    /// Parses the ASCII grammar (`#` wall, `.` free, `S` start) and validates it.
    pub fn parse(text: &str, map_seed: u64) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        let rows: Vec<&str> = {
            let end = rows
                .iter()
                .rposition(|r| !r.trim().is_empty())
                .map_or(0, |i| i + 1);
            rows[..end].to_vec()
        };
        if rows.is_empty() {
            return Err(EnvError::Parse("empty map".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::Parse(format!(
                    "row {y} has {} columns, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, ch) in row.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'S' => {
                        if start.replace(Pose::new(x, y, Heading::East)).is_some() {
                            return Err(EnvError::Parse("more than one start marker".into()));
                        }
                        Cell::Free
                    }
                    other => {
                        return Err(EnvError::Parse(format!(
                            "unexpected character {other:?} at row {y}, column {x}"
                        )))
                    }
                };
                let border = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
                if border && cell != Cell::Wall {
                    return Err(EnvError::Parse(format!(
                        "border cell ({x},{y}) is not a wall"
                    )));
                }
                cells.push(cell);
            }
        }
        let start = start.ok_or(EnvError::MissingStart)?;
        let palette = (0..height)
            .flat_map(|y| (0..width).map(move |x| wall_color(map_seed, x, y)))
            .collect();
        let map = Self {
            width,
            height,
            cells,
            palette,
            start,
            seed: map_seed,
        };
        let reached = map
            .distances_from(start.x, start.y)
            .iter()
            .filter(|d| d.is_some())
            .count();
        if reached != map.free_cells().count() {
            return Err(EnvError::DisconnectedMap);
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start_pose(&self) -> Pose {
        self.start
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    /// `Wall` for coordinates outside the grid.
    pub fn cell_at(&self, x: isize, y: isize) -> Cell {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            Cell::Wall
        } else {
            self.cell(x as usize, y as usize)
        }
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.cell(x, y) == Cell::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_free(x, y))
    }

    pub fn wall_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| !self.is_free(x, y))
    }

    pub fn is_valid_pose(&self, pose: &Pose) -> bool {
        self.is_free(pose.x, pose.y)
    }

    /// Color of the wall cell at `(x, y)`; free cells carry a color too but it is never rendered.
    pub fn wall_color(&self, x: usize, y: usize) -> [f64; 3] {
        self.palette[y * self.width + x]
    }

    /// Overrides one cell color; used to build rendering fixtures.
    pub fn set_wall_color(&mut self, x: usize, y: usize, color: [f64; 3]) {
        self.palette[y * self.width + x] = color;
    }

    /// BFS hop counts over 4-connected free cells, indexed `y * width + x`.
    pub fn distances_from(&self, x: usize, y: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.width * self.height];
        if !self.is_free(x, y) {
            return dist;
        }
        let mut queue = VecDeque::from([(x, y)]);
        dist[y * self.width + x] = Some(0);
        while let Some((cx, cy)) = queue.pop_front() {
            let d = dist[cy * self.width + cx].unwrap();
            for h in Heading::ALL {
                let (dx, dy) = h.offset();
                let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                if self.cell_at(nx, ny) == Cell::Free {
                    let i = ny as usize * self.width + nx as usize;
                    if dist[i].is_none() {
                        dist[i] = Some(d + 1);
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
        dist
    }

    /// ASCII rendering in the input grammar.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if (x, y) == self.start.cell() {
                    'S'
                } else if self.is_free(x, y) {
                    '.'
                } else {
                    '#'
                });
            }
            s.push('\n');
        }
        s
    }
}

/// Procedural wall color: a pure function of the map seed and cell coordinates.
pub fn wall_color(seed: u64, x: usize, y: usize) -> [f64; 3] {
    let mut h = splitmix64(seed ^ splitmix64((x as u64) << 32 | y as u64));
    let mut channel = || {
        h = splitmix64(h);
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    [channel(), channel(), channel()]
}
