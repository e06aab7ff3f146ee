//! Deterministic grid world: ground-truth scene, planning, sensing along
//! paths, and displacement of carried objects.

pub mod grid;
pub mod sensor;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{assign_carried, carrying_predicate, nearest_carrier, CrsgConfig};
use crate::scene::{synthesize_features, Box3, ObjectId, ObjectInstance, SceneMap};

pub use grid::{Cell, OccupancyGrid};
pub use sensor::{observe_objects, Observation, SensorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 2],
    #[serde(default)]
    pub heading: f64,
}

impl Pose {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            position: [x, y],
            heading: 0.0,
        }
    }
}

/// A planned route: cells from start to goal inclusive (empty when already there).
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementKind {
    Move,
    Add,
    Remove,
}

/// Payload of an `add` event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewObject {
    pub captions: Vec<String>,
    /// Box size (x, y, z), meters.
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementEvent {
    pub kind: DisplacementKind,
    pub object_id: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_carrier_id: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_object: Option<NewObject>,
}

impl DisplacementEvent {
    pub fn moved(object: impl Into<String>, carrier: impl Into<String>) -> Self {
        Self {
            kind: DisplacementKind::Move,
            object_id: ObjectId::new(object),
            target_carrier_id: Some(ObjectId::new(carrier)),
            new_object: None,
        }
    }

    pub fn added(object: impl Into<String>, carrier: impl Into<String>, captions: &[&str], size: [f64; 3]) -> Self {
        Self {
            kind: DisplacementKind::Add,
            object_id: ObjectId::new(object),
            target_carrier_id: Some(ObjectId::new(carrier)),
            new_object: Some(NewObject {
                captions: captions.iter().map(|c| (*c).to_owned()).collect(),
                size,
            }),
        }
    }

    pub fn removed(object: impl Into<String>) -> Self {
        Self {
            kind: DisplacementKind::Remove,
            object_id: ObjectId::new(object),
            target_carrier_id: None,
            new_object: None,
        }
    }
}

/// Observations gathered at one cell of a traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pose: Pose,
    pub observations: Vec<Observation>,
    /// Carriers whose whole carried set (per ground truth) was in view here.
    pub fully_observed: Vec<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub length: f64,
}

impl Trajectory {
    /// Union of observations, keeping each object's first sighting.
    pub fn first_sightings(&self) -> BTreeMap<ObjectId, Observation> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            for o in &s.observations {
                out.entry(o.object_id.clone()).or_insert_with(|| o.clone());
            }
        }
        out
    }

    pub fn extend(&mut self, other: Trajectory) {
        self.samples.extend(other.samples);
        self.length += other.length;
    }
}

/// Ground truth world for one episode or sequence.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub scene: SceneMap,
    pub carriers: BTreeSet<ObjectId>,
    pub config: CrsgConfig,
    pub sensor: SensorConfig,
    pub robot: Pose,
    /// Walls only; furniture does not block sight of table tops.
    walls: OccupancyGrid,
    /// Walls plus ground-standing furniture.
    occupancy: OccupancyGrid,
    reachable: Vec<bool>,
    rng: ChaCha8Rng,
}

impl GridWorld {
    pub fn new(
        scene: SceneMap,
        carriers: impl IntoIterator<Item = ObjectId>,
        config: CrsgConfig,
        sensor: SensorConfig,
        robot: Pose,
        seed: u64,
    ) -> Result<Self> {
        let g = &scene.grid;
        let mut walls = OccupancyGrid::new(g.width, g.height, g.resolution, g.origin);
        for c in &g.blocked_cells {
            walls.set_blocked(Cell::new(c[0], c[1]), true);
        }
        let mut occupancy = walls.clone();
        for o in &scene.objects {
            if occupancy.cell_of(o.xy()).is_none() {
                return Err(Error::Validation(format!("object {} lies outside the grid", o.id)));
            }
            if is_obstacle(o, &config) {
                rasterize(&mut occupancy, &o.bbox);
            }
        }
        let carriers: BTreeSet<ObjectId> = carriers.into_iter().collect();
        if let Some(missing) = carriers.iter().find(|c| scene.object(c).is_none()) {
            return Err(Error::UnknownCarrier(missing.to_string()));
        }
        let start = occupancy
            .cell_of(robot.position)
            .ok_or_else(|| Error::Validation("robot starts outside the grid".into()))?;
        if occupancy.is_blocked(start) {
            return Err(Error::Validation("robot starts in an occupied cell".into()));
        }
        let reachable = occupancy.reachable_from(start);
        Ok(Self {
            scene,
            carriers,
            config,
            sensor,
            robot,
            walls,
            occupancy,
            reachable,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    pub fn walls(&self) -> &OccupancyGrid {
        &self.walls
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectInstance> {
        self.scene.object(id)
    }

    pub fn robot_cell(&self) -> Cell {
        self.occupancy.cell_of(self.robot.position).expect("robot inside grid")
    }

    /// Reachable free cell nearest to `p`: where the robot stands to reach it.
    pub fn approach_cell(&self, p: [f64; 2]) -> Result<Cell> {
        self.occupancy
            .nearest_allowed(p, &self.reachable)
            .ok_or(Error::Unreachable(p[0], p[1]))
    }

    /// Optimal 8-connected path from `from` to the approach cell of `to`.
    pub fn shortest_path(&self, from: &Pose, to: [f64; 2]) -> Result<Path> {
        let start = self
            .occupancy
            .cell_of(from.position)
            .ok_or(Error::Unreachable(from.position[0], from.position[1]))?;
        let goal = self.approach_cell(to)?;
        let (cells, length) = self.occupancy.astar(start, goal).ok_or(Error::Unreachable(to[0], to[1]))?;
        Ok(Path { cells, length })
    }

    /// Path distances from the robot's current cell to every cell.
    pub fn distance_field(&self) -> Vec<f64> {
        self.occupancy.distance_field(self.robot_cell())
    }

    /// Distance from the robot to the approach cell of `p`, read off a field.
    pub fn distance_via(&self, field: &[f64], p: [f64; 2]) -> f64 {
        self.approach_cell(p)
            .map(|c| field[self.occupancy.index(c)])
            .unwrap_or(f64::INFINITY)
    }

    pub fn observe(&self, pose: &Pose) -> Vec<Observation> {
        observe_objects(&self.scene.objects, &self.walls, pose, &self.sensor)
    }

    /// Ground-truth carrying relation: predicate plus nearest-carrier rule.
    pub fn ground_truth_carried(&self) -> BTreeMap<ObjectId, BTreeSet<ObjectId>> {
        let (carriers, others): (Vec<&ObjectInstance>, Vec<&ObjectInstance>) =
            self.scene.objects.iter().partition(|o| self.carriers.contains(&o.id));
        assign_carried(&carriers, &others, &self.config).0
    }

    fn fully_observed(&self, observations: &[Observation], truth: &BTreeMap<ObjectId, BTreeSet<ObjectId>>) -> Vec<ObjectId> {
        let seen: BTreeSet<&ObjectId> = observations.iter().map(|o| &o.object_id).collect();
        truth
            .iter()
            .filter(|(cid, carried)| seen.contains(cid) && carried.iter().all(|id| seen.contains(id)))
            .map(|(cid, _)| cid.clone())
            .collect()
    }

    /// Observation at the robot's current pose, with full-view certification.
    pub fn look(&self) -> Sample {
        let truth = self.ground_truth_carried();
        let observations = self.observe(&self.robot);
        let fully_observed = self.fully_observed(&observations, &truth);
        Sample {
            pose: self.robot,
            observations,
            fully_observed,
        }
    }

    /// Drives the robot along `path`, sensing at every cell.
    pub fn travel(&mut self, path: &Path) -> Trajectory {
        if path.cells.is_empty() {
            return Trajectory::default();
        }
        let truth = self.ground_truth_carried();
        let mut samples = Vec::with_capacity(path.cells.len());
        let mut heading = self.robot.heading;
        for (i, cell) in path.cells.iter().enumerate() {
            let position = self.occupancy.center_of(*cell);
            if let Some(next) = path.cells.get(i + 1) {
                let n = self.occupancy.center_of(*next);
                heading = (n[1] - position[1]).atan2(n[0] - position[0]);
            }
            let pose = Pose { position, heading };
            let observations = self.observe(&pose);
            let fully_observed = self.fully_observed(&observations, &truth);
            samples.push(Sample {
                pose,
                observations,
                fully_observed,
            });
        }
        self.robot = samples.last().expect("non-empty path").pose;
        Trajectory {
            samples,
            length: self.occupancy.path_length(&path.cells),
        }
    }

    /// Plans to `to` and travels there.
    pub fn go_to(&mut self, to: [f64; 2]) -> Result<Trajectory> {
        let path = self.shortest_path(&self.robot, to)?;
        Ok(self.travel(&path))
    }

    pub fn apply_displacement(&mut self, event: &DisplacementEvent) -> Result<()> {
        match event.kind {
            DisplacementKind::Remove => {
                let idx = self.movable_index(&event.object_id)?;
                self.scene.objects.remove(idx);
            }
            DisplacementKind::Move => {
                let idx = self.movable_index(&event.object_id)?;
                let carrier = self.target_carrier(event)?;
                let object = self.scene.objects[idx].clone();
                let placed = self.place_on(&carrier, &object)?;
                self.scene.objects[idx] = placed;
            }
            DisplacementKind::Add => {
                if self.scene.object(&event.object_id).is_some() {
                    return Err(Error::Validation(format!("object {} already exists", event.object_id)));
                }
                let payload = event
                    .new_object
                    .as_ref()
                    .ok_or_else(|| Error::Validation("add event without payload".into()))?;
                if payload.captions.is_empty() {
                    return Err(Error::Validation("added object needs captions".into()));
                }
                let carrier = self.target_carrier(event)?;
                let encoder = self.scene.encoder();
                let (text_feature, visual_feature) = synthesize_features(&payload.captions, &encoder);
                let bbox = Box3::from_base([0.0, 0.0], payload.size, 0.0);
                let object = ObjectInstance {
                    id: event.object_id.clone(),
                    captions: payload.captions.clone(),
                    centroid: bbox.center(),
                    bbox,
                    text_feature,
                    visual_feature,
                    room_id: None,
                };
                let placed = self.place_on(&carrier, &object)?;
                self.scene.objects.push(placed);
            }
        }
        Ok(())
    }

    fn movable_index(&self, id: &ObjectId) -> Result<usize> {
        if self.carriers.contains(id) {
            return Err(Error::Validation(format!("carrier {id} cannot be displaced")));
        }
        self.scene
            .objects
            .iter()
            .position(|o| &o.id == id)
            .ok_or_else(|| Error::UnknownObject(id.to_string()))
    }

    fn target_carrier(&self, event: &DisplacementEvent) -> Result<ObjectInstance> {
        let cid = event
            .target_carrier_id
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("event for {} names no carrier", event.object_id)))?;
        if !self.carriers.contains(cid) {
            return Err(Error::UnknownCarrier(cid.to_string()));
        }
        self.scene.object(cid).cloned().ok_or_else(|| Error::UnknownCarrier(cid.to_string()))
    }

    /// Re-centers `object` on the carrier's top at the first free spot of a
    /// square spiral that starts from a seeded point on the top.
    fn place_on(&mut self, carrier: &ObjectInstance, object: &ObjectInstance) -> Result<ObjectInstance> {
        const STEP: f64 = 0.05;
        const MARGIN: f64 = 0.02;
        let size = object.bbox.size();
        let top = carrier.bbox;
        let lo = [top.min[0] + size[0] / 2.0 + MARGIN, top.min[1] + size[1] / 2.0 + MARGIN];
        let hi = [top.max[0] - size[0] / 2.0 - MARGIN, top.max[1] - size[1] / 2.0 - MARGIN];
        if lo[0] > hi[0] || lo[1] > hi[1] {
            return Err(Error::NoFreeSpot(carrier.id.to_string()));
        }
        let start = [self.rng.gen_range(lo[0]..=hi[0]), self.rng.gen_range(lo[1]..=hi[1])];

        let carriers: Vec<&ObjectInstance> = self
            .scene
            .objects
            .iter()
            .filter(|o| self.carriers.contains(&o.id))
            .collect();
        let neighbours: Vec<Box3> = self
            .scene
            .objects
            .iter()
            .filter(|o| o.id != object.id && !self.carriers.contains(&o.id))
            .filter(|o| o.bbox.footprint_overlap(&top) > 0.0)
            .map(|o| o.bbox)
            .collect();

        let reach = ((top.extent(0).max(top.extent(1))) / STEP).ceil() as i64 + 1;
        for ring in 0..=reach {
            for (i, j) in spiral_ring(ring) {
                let x = start[0] + i as f64 * STEP;
                let y = start[1] + j as f64 * STEP;
                if x < lo[0] || x > hi[0] || y < lo[1] || y > hi[1] {
                    continue;
                }
                let center = [x, y, top.max[2] + size[2] / 2.0];
                let candidate = object.recentered(center);
                let padded = Box3::new(
                    [candidate.bbox.min[0] - MARGIN, candidate.bbox.min[1] - MARGIN, candidate.bbox.min[2]],
                    [candidate.bbox.max[0] + MARGIN, candidate.bbox.max[1] + MARGIN, candidate.bbox.max[2]],
                );
                if neighbours.iter().any(|b| b.footprint_overlap(&padded) > 0.0) {
                    continue;
                }
                let holds = nearest_carrier(&candidate, carriers.iter().copied(), &self.config)
                    .is_some_and(|c| c.id == carrier.id);
                if holds && carrying_predicate(carrier, &candidate, &self.config) {
                    return Ok(candidate);
                }
            }
        }
        Err(Error::NoFreeSpot(carrier.id.to_string()))
    }
}

/// Ground-standing furniture that the robot must drive around.
pub fn is_obstacle(o: &ObjectInstance, config: &CrsgConfig) -> bool {
    o.bbox.min[2] <= config.ground_contact_eps && o.bbox.footprint_area() >= config.min_footprint_area
}

fn rasterize(grid: &mut OccupancyGrid, b: &Box3) {
    let mut any = false;
    for y in 0..grid.height {
        for x in 0..grid.width {
            let c = Cell::new(x, y);
            let p = grid.center_of(c);
            if p[0] >= b.min[0] && p[0] <= b.max[0] && p[1] >= b.min[1] && p[1] <= b.max[1] {
                grid.set_blocked(c, true);
                any = true;
            }
        }
    }
    if !any {
        let center = [(b.min[0] + b.max[0]) / 2.0, (b.min[1] + b.max[1]) / 2.0];
        if let Some(c) = grid.cell_of(center) {
            grid.set_blocked(c, true);
        }
    }
}

fn spiral_ring(ring: i64) -> Vec<(i64, i64)> {
    if ring == 0 {
        return vec![(0, 0)];
    }
    let mut out = Vec::with_capacity((8 * ring) as usize);
    for i in -ring..=ring {
        out.push((i, -ring));
    }
    for j in (-ring + 1)..=ring {
        out.push((ring, j));
    }
    for i in (-ring..ring).rev() {
        out.push((i, ring));
    }
    for j in ((-ring + 1)..ring).rev() {
        out.push((-ring, j));
    }
    out
}
