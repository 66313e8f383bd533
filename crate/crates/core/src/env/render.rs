use std::sync::Arc;

use super::map::{Cell, MazeMap, Pose};

pub const DEFAULT_RAYS: usize = 64;
pub const FIELD_OF_VIEW_DEG: f64 = 90.0;
pub const CHANNELS: usize = 3;

/// Egocentric view: one color per ray, row-major `[rays × 3]`, values in `[0, 1]`.
///
/// The strip is shared, so clones are cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    rays: usize,
    strip: Arc<[f64]>,
}

impl Observation {
    pub fn new(rays: usize, strip: Vec<f64>) -> Option<Self> {
        (strip.len() == rays * CHANNELS && strip.iter().all(|v| (0.0..=1.0).contains(v))).then(
            || Self {
                rays,
                strip: strip.into(),
            },
        )
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn strip(&self) -> &[f64] {
        &self.strip
    }

    pub fn ray(&self, i: usize) -> [f64; 3] {
        [
            self.strip[i * 3],
            self.strip[i * 3 + 1],
            self.strip[i * 3 + 2],
        ]
    }

    /// Channel-major copy `[3 × rays]`, the layout the convolution stacks read.
    pub fn channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.strip.len()];
        for r in 0..self.rays {
            for c in 0..CHANNELS {
                out[c * self.rays + r] = self.strip[r * CHANNELS + c];
            }
        }
        out
    }

    pub fn l2_distance(&self, other: &Observation) -> f64 {
        self.strip
            .iter()
            .zip(other.strip.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Exact bit pattern, usable as a hash key.
    pub fn bit_key(&self) -> Vec<u64> {
        self.strip.iter().map(|v| v.to_bits()).collect()
    }
}

/// Casts `rays` rays across a 90° field of view centered on the heading.
///
/// Ray `i` sits at the center of its angular bin, leftmost first. Each ray
/// reports the first wall cell it enters; its value is that cell's color
/// scaled by `1 / (1 + d)`, with `d` the Euclidean distance between the
/// agent's cell and the hit cell in cell units.
pub fn render(map: &MazeMap, pose: &Pose, rays: usize) -> Observation {
    let mut strip = Vec::with_capacity(rays * CHANNELS);
    let fov = FIELD_OF_VIEW_DEG.to_radians();
    let (ox, oy) = (pose.x as f64 + 0.5, pose.y as f64 + 0.5);
    for i in 0..rays {
        let offset = fov * (0.5 - (i as f64 + 0.5) / rays as f64);
        let angle = pose.heading.radians() + offset;
        let (hx, hy) = cast(map, ox, oy, angle.cos(), angle.sin());
        let dx = hx as f64 - pose.x as f64;
        let dy = hy as f64 - pose.y as f64;
        let shade = 1.0 / (1.0 + (dx * dx + dy * dy).sqrt());
        let color = map.wall_color(hx as usize, hy as usize);
        strip.extend(color.iter().map(|c| c * shade));
    }
    Observation {
        rays,
        strip: strip.into(),
    }
}

/// Grid traversal (Amanatides–Woo) from `(ox, oy)` until a wall cell.
fn cast(map: &MazeMap, ox: f64, oy: f64, dx: f64, dy: f64) -> (isize, isize) {
    let (mut cx, mut cy) = (ox.floor() as isize, oy.floor() as isize);
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let boundary = |o: f64, c: isize, s: isize| {
        if s > 0 {
            (c + 1) as f64 - o
        } else {
            o - c as f64
        }
    };
    let mut t_max_x = if dx != 0.0 {
        boundary(ox, cx, step_x) / dx.abs()
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        boundary(oy, cy, step_y) / dy.abs()
    } else {
        f64::INFINITY
    };
    let t_dx = if dx != 0.0 {
        1.0 / dx.abs()
    } else {
        f64::INFINITY
    };
    let t_dy = if dy != 0.0 {
        1.0 / dy.abs()
    } else {
        f64::INFINITY
    };
    // maps are walled in, so the walk always terminates within width + height steps
    for _ in 0..(map.width() + map.height()) * 2 + 4 {
        if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_dx;
        } else {
            cy += step_y;
            t_max_y += t_dy;
        }
        if map.cell_at(cx, cy) == Cell::Wall {
            return (
                cx.clamp(0, map.width() as isize - 1),
                cy.clamp(0, map.height() as isize - 1),
            );
        }
    }
    unreachable!("ray escaped a walled map")
}
