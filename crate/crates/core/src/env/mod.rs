//! Deterministic grid-maze simulator with egocentric raycast observations.
//!
//! Forward moves one cell, turns rotate by 90°, and a blocked forward move
//! leaves the pose unchanged. The map is immutable once loaded.

mod map;
mod render;

pub use map::{wall_color, Action, Cell, Heading, MazeMap, Pose};
pub use render::{render, Observation, CHANNELS, DEFAULT_RAYS, FIELD_OF_VIEW_DEG};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("map parse error: {0}")]
    Parse(String),
    #[error("map has free cells unreachable from the start")]
    DisconnectedMap,
    #[error("map has no start marker")]
    MissingStart,
}

/// Maps that ship with the crate.
pub mod fixtures {
    /// 15×15, five rooms joined by doorways.
    pub const ROOMS_15: &str = include_str!("../../maps/rooms15.txt");
    /// 19×19, two wings around a central hall.
    pub const WINGS_19: &str = include_str!("../../maps/wings19.txt");
    /// 31×31, long halls and many small rooms.
    pub const HALLS_31: &str = include_str!("../../maps/halls31.txt");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "rooms15" => Some(ROOMS_15),
            "wings19" => Some(WINGS_19),
            "halls31" => Some(HALLS_31),
            _ => None,
        }
    }
}

pub fn load_map(text: &str, map_seed: u64) -> Result<MazeMap, EnvError> {
    MazeMap::parse(text, map_seed)
}

/// Applies one action. Total: blocked moves are silent no-ops.
pub fn step(map: &MazeMap, pose: Pose, action: Action) -> Pose {
    match action {
        Action::TurnLeft => Pose {
            heading: pose.heading.left(),
            ..pose
        },
        Action::TurnRight => Pose {
            heading: pose.heading.right(),
            ..pose
        },
        Action::Forward => {
            let (dx, dy) = pose.heading.offset();
            let (nx, ny) = (pose.x as isize + dx, pose.y as isize + dy);
            if map.cell_at(nx, ny) == Cell::Free {
                Pose {
                    x: nx as usize,
                    y: ny as usize,
                    ..pose
                }
            } else {
                pose
            }
        }
    }
}

/// Shortest 4-connected path length between the cells of two poses, ignoring heading.
///
/// Evaluation and baselines only; never an input to self-supervised training.
pub fn oracle_distance(map: &MazeMap, a: &Pose, b: &Pose) -> u32 {
    map.distances_from(a.x, a.y)[b.y * map.width() + b.x].expect("valid poses on a connected map")
}
