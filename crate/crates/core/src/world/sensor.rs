//! Radius / field-of-view / line-of-sight observation model.

use serde::{Deserialize, Serialize};

use super::grid::{Cell, OccupancyGrid};
use super::Pose;
use crate::features::FeatureVector;
use crate::scene::{Box3, ObjectId, ObjectInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Sensing radius, meters.
    pub radius: f64,
    /// Full field-of-view angle, radians. `2π` or more sees all around.
    pub fov: f64,
    pub occlusion: bool,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            radius: 2.5,
            fov: std::f64::consts::TAU,
            occlusion: true,
        }
    }
}

impl SensorConfig {
    /// Unlimited radius, all-around, no occlusion.
    pub fn omniscient() -> Self {
        Self {
            radius: f64::INFINITY,
            fov: std::f64::consts::TAU,
            occlusion: false,
        }
    }
}

/// One perceived object. Captions and features come from ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub object_id: ObjectId,
    pub observed_box: Box3,
    pub centroid: [f64; 3],
    pub observed_captions: Vec<String>,
    pub text_feature: FeatureVector,
    pub visual_feature: FeatureVector,
    pub mean_depth: f64,
}

impl Observation {
    pub fn of(object: &ObjectInstance, mean_depth: f64) -> Self {
        Self {
            object_id: object.id.clone(),
            observed_box: object.bbox,
            centroid: object.centroid,
            observed_captions: object.captions.clone(),
            text_feature: object.text_feature.clone(),
            visual_feature: object.visual_feature.clone(),
            mean_depth,
        }
    }

    /// The observation as an object instance, for geometric predicates.
    pub fn to_instance(&self) -> ObjectInstance {
        ObjectInstance {
            id: self.object_id.clone(),
            captions: self.observed_captions.clone(),
            bbox: self.observed_box,
            centroid: self.centroid,
            text_feature: self.text_feature.clone(),
            visual_feature: self.visual_feature.clone(),
            room_id: None,
        }
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Cells crossed by the segment `from → to` (Amanatides–Woo traversal),
/// excluding the starting cell.
pub fn ray_cells(grid: &OccupancyGrid, from: [f64; 2], to: [f64; 2]) -> Vec<Cell> {
    let res = grid.resolution;
    let fx = (from[0] - grid.origin[0]) / res;
    let fy = (from[1] - grid.origin[1]) / res;
    let tx = (to[0] - grid.origin[0]) / res;
    let ty = (to[1] - grid.origin[1]) / res;
    let (mut x, mut y) = (fx.floor() as isize, fy.floor() as isize);
    let (ex, ey) = (tx.floor() as isize, ty.floor() as isize);
    let dx = tx - fx;
    let dy = ty - fy;
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (fx.floor() + 1.0 - fx) * delta_x
    } else if dx < 0.0 {
        (fx - fx.floor()) * delta_x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (fy.floor() + 1.0 - fy) * delta_y
    } else if dy < 0.0 {
        (fy - fy.floor()) * delta_y
    } else {
        f64::INFINITY
    };
    let mut out = Vec::new();
    let limit = (ex - x).abs() + (ey - y).abs() + 2;
    for _ in 0..limit {
        if x == ex && y == ey {
            break;
        }
        if t_max_x < t_max_y {
            x += step_x;
            t_max_x += delta_x;
        } else {
            y += step_y;
            t_max_y += delta_y;
        }
        if grid.in_bounds(x, y) {
            out.push(Cell::new(x as usize, y as usize));
        }
    }
    out
}

/// Whether the straight line between the two points crosses no blocked cell
/// of `occluders` (the target's own cell does not count).
pub fn line_of_sight(occluders: &OccupancyGrid, from: [f64; 2], to: [f64; 2]) -> bool {
    let target = occluders.cell_of(to);
    ray_cells(occluders, from, to)
        .into_iter()
        .filter(|c| Some(*c) != target)
        .all(|c| occluders.is_free(c))
}

/// Objects visible from `pose`, sorted by id.
pub fn observe_objects<'a>(
    objects: impl IntoIterator<Item = &'a ObjectInstance>,
    occluders: &OccupancyGrid,
    pose: &Pose,
    sensor: &SensorConfig,
) -> Vec<Observation> {
    let mut seen: Vec<Observation> = objects
        .into_iter()
        .filter_map(|o| {
            let dx = o.centroid[0] - pose.position[0];
            let dy = o.centroid[1] - pose.position[1];
            let dist = dx.hypot(dy);
            if dist > sensor.radius {
                return None;
            }
            if sensor.fov < std::f64::consts::TAU && dist > 0.0 && angle_diff(dy.atan2(dx), pose.heading) > sensor.fov / 2.0 {
                return None;
            }
            if sensor.occlusion && !line_of_sight(occluders, pose.position, o.xy()) {
                return None;
            }
            Some(Observation::of(o, dist))
        })
        .collect();
    seen.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parametric length of the segment inside an axis-aligned box.
    fn clip_length(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            let d = b[k] - a[k];
            if d == 0.0 {
                if a[k] <= lo[k] || a[k] >= hi[k] {
                    return 0.0;
                }
                continue;
            }
            let (mut u, mut v) = ((lo[k] - a[k]) / d, (hi[k] - a[k]) / d);
            if u > v {
                std::mem::swap(&mut u, &mut v);
            }
            t0 = t0.max(u);
            t1 = t1.min(v);
        }
        (t1 - t0).max(0.0)
    }

    #[test]
    fn ray_matches_exact_clipping() {
        let g = OccupancyGrid::new(20, 20, 0.5, [0.0, 0.0]);
        let cases = [([0.3, 0.3], [7.7, 3.1]), ([9.2, 9.87], [0.1, 2.2]), ([1.25, 1.25], [1.25, 8.75])];
        for (a, b) in cases {
            let mut got = ray_cells(&g, a, b);
            got.sort();
            let start = g.cell_of(a).unwrap();
            let mut want = Vec::new();
            for y in 0..g.height {
                for x in 0..g.width {
                    let c = Cell::new(x, y);
                    let lo = [x as f64 * g.resolution, y as f64 * g.resolution];
                    let hi = [lo[0] + g.resolution, lo[1] + g.resolution];
                    if c != start && clip_length(a, b, lo, hi) > 1e-9 {
                        want.push(c);
                    }
                }
            }
            want.sort();
            assert_eq!(got, want, "{a:?} -> {b:?}");
        }
    }

    #[test]
    fn wall_blocks_sight() {
        let mut g = OccupancyGrid::new(10, 10, 1.0, [0.0, 0.0]);
        for y in 0..10 {
            g.set_blocked(Cell::new(5, y), true);
        }
        assert!(!line_of_sight(&g, [1.5, 1.5], [8.5, 1.5]));
        assert!(line_of_sight(&g, [1.5, 1.5], [4.5, 8.5]));
    }

    #[test]
    fn angle_wraps() {
        assert!((angle_diff(0.1, std::f64::consts::TAU - 0.1) - 0.2).abs() < 1e-12);
    }
}
