//! Scenario files and the seeded scenario generator.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crsg_core::features::{token_bucket, HashEmbedder, DEFAULT_DIM};
use crsg_core::graph::{CrsgConfig, DEFAULT_CARRIER_REFERENCE};
use crsg_core::oracle::affinity;
use crsg_core::query::TargetQuery;
use crsg_core::scene::{
    load_scene, scene_to_string, Box3, FeatureMode, GridSpec, ObjectId, ObjectInstance, Room, SceneHeader, SceneMap,
};
use crsg_core::world::{DisplacementEvent, DisplacementKind, GridWorld, Pose, SensorConfig};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const COLORS: &[&str] = &[
    "red", "blue", "black", "white", "green", "grey", "pink", "brown", "orange", "purple", "silver",
];

/// Item nouns with box sizes (x, y, z) in meters.
pub const ITEMS: &[(&str, [f64; 3])] = &[
    ("plate", [0.22, 0.22, 0.03]),
    ("book", [0.20, 0.15, 0.04]),
    ("clock", [0.12, 0.08, 0.10]),
    ("controller", [0.15, 0.10, 0.05]),
    ("bottle", [0.08, 0.08, 0.25]),
    ("phone", [0.15, 0.08, 0.01]),
    ("keys", [0.08, 0.05, 0.02]),
    ("glasses", [0.14, 0.05, 0.04]),
    ("towel", [0.30, 0.20, 0.05]),
    ("vase", [0.12, 0.12, 0.30]),
    ("laptop", [0.35, 0.25, 0.03]),
    ("pen", [0.14, 0.02, 0.02]),
    ("remote", [0.18, 0.05, 0.03]),
    ("mug", [0.09, 0.09, 0.10]),
];

/// Carrier types with box sizes.
pub const CARRIERS: &[(&str, [f64; 3])] = &[
    ("table", [1.2, 0.7, 0.75]),
    ("desk", [1.2, 0.6, 0.75]),
    ("shelf", [0.9, 0.35, 1.8]),
    ("cabinet", [0.8, 0.45, 0.9]),
    ("counter", [1.6, 0.6, 0.9]),
    ("sofa", [1.8, 0.8, 0.45]),
    ("bed", [1.8, 1.2, 0.5]),
    ("dresser", [1.0, 0.5, 0.8]),
    ("toilet", [0.4, 0.6, 0.4]),
];

const ROOM_NAMES: &[&str] = &["kitchen", "living room", "bedroom", "office", "bathroom", "study"];

pub const ROOM_W: f64 = 6.0;
pub const ROOM_H: f64 = 5.0;
pub const RESOLUTION: f64 = 0.1;
const WALL_MARGIN: f64 = 0.5;
const CLEARANCE: f64 = 0.6;
const DOOR: (f64, f64) = (2.0, 3.0);

/// Every token the generator can emit.
pub fn vocabulary() -> BTreeSet<&'static str> {
    let mut v: BTreeSet<&str> = COLORS.iter().copied().collect();
    v.extend(ITEMS.iter().map(|(n, _)| *n));
    v.extend(CARRIERS.iter().map(|(n, _)| *n));
    v.extend(["small", "wooden"]);
    v
}

pub fn item_captions(color: &str, noun: &str) -> Vec<String> {
    vec![format!("{color} {noun}"), noun.to_owned(), format!("small {color} {noun}")]
}

pub fn carrier_captions(color: &str, kind: &str) -> Vec<String> {
    vec![format!("{color} {kind}"), kind.to_owned(), format!("{color} wooden {kind}")]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub query: TargetQuery,
    pub target_id: ObjectId,
    /// Displacements applied to the world just before this task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<DisplacementEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Scene file, relative to the scenario file.
    pub scene: String,
    pub seed: u64,
    pub start: Pose,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub graph: CrsgConfig,
    pub tasks: Vec<Task>,
}

/// A scenario with its scene loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub scene: SceneMap,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| BenchError::Io(path.display().to_string(), e))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| BenchError::Invalid(format!("{}: {e}", path.display())))?;
    let scene_path = path.parent().unwrap_or(Path::new(".")).join(&scenario.scene);
    let scene = load_scene(&scene_path)?;
    validate_scenario(&scenario, &scene)?;
    Ok(LoadedScenario { scenario, scene })
}

/// Scenario files (`scenario_*.json`) in a directory, sorted by name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<LoadedScenario>, BenchError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| BenchError::Io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scenario_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(load_scenario).collect()
}

pub fn validate_scenario(scenario: &Scenario, scene: &SceneMap) -> Result<(), BenchError> {
    if scenario.tasks.is_empty() {
        return Err(BenchError::Invalid(format!("scenario {} has no tasks", scenario.name)));
    }
    if !scene.grid.contains_point(scenario.start.position) {
        return Err(BenchError::Invalid(format!("scenario {} starts outside the grid", scenario.name)));
    }
    scenario.graph.validate()?;
    Ok(())
}

/// Writes `scene_NNNN.json` and `scenario_NNNN.json` pairs.
pub fn write_scenarios(dir: impl AsRef<Path>, scenarios: &[LoadedScenario]) -> Result<Vec<PathBuf>, BenchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| BenchError::Io(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    for s in scenarios {
        let scene_path = dir.join(&s.scenario.scene);
        fs::write(&scene_path, scene_to_string(&s.scene)? + "\n")
            .map_err(|e| BenchError::Io(scene_path.display().to_string(), e))?;
        let path = dir.join(format!("{}.json", s.scenario.name));
        let text = serde_json::to_string_pretty(&s.scenario).map_err(|e| BenchError::Invalid(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| BenchError::Io(path.display().to_string(), e))?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_rooms: usize,
    pub n_carriers: usize,
    /// Distinct item categories, one instance each.
    pub n_items: usize,
    /// Extra instances sharing a category with an item but not its color.
    pub n_distractors: usize,
    pub sequence_length: usize,
    /// How many task targets are moved before the first task.
    pub displacement_count: usize,
    /// Probability that a task is posed as an image query.
    pub image_query_rate: f64,
    pub sensor: SensorConfig,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_rooms: 3,
            n_carriers: 8,
            n_items: 8,
            n_distractors: 4,
            sequence_length: 5,
            displacement_count: 5,
            image_query_rate: 0.0,
            sensor: SensorConfig::default(),
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = [self.n_rooms, self.n_carriers, self.n_items, self.sequence_length];
        if positive.contains(&0) {
            return Err(BenchError::Invalid("rooms, carriers, items and sequence length must be positive".into()));
        }
        if self.n_items > ITEMS.len() {
            return Err(BenchError::Capacity(format!("at most {} item categories", ITEMS.len())));
        }
        if self.sequence_length > self.n_items {
            return Err(BenchError::Capacity("sequence longer than the item count".into()));
        }
        if self.displacement_count > self.sequence_length {
            return Err(BenchError::Invalid("displacement count exceeds the sequence length".into()));
        }
        if self.n_carriers > self.n_rooms * 4 {
            return Err(BenchError::Capacity("at most four carriers per room".into()));
        }
        if self.n_carriers > CARRIERS.len() * COLORS.len() {
            return Err(BenchError::Capacity("not enough distinct carrier captions".into()));
        }
        if self.n_distractors > self.n_items * (COLORS.len() - 1) {
            return Err(BenchError::Capacity("not enough colors for distractors".into()));
        }
        if !(0.0..=1.0).contains(&self.image_query_rate) {
            return Err(BenchError::Invalid("image_query_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Walls between neighboring rooms with a 1 m door, rooms in a row.
fn layout(n_rooms: usize) -> (GridSpec, Vec<Room>) {
    let cells_w = (ROOM_W / RESOLUTION).round() as usize;
    let cells_h = (ROOM_H / RESOLUTION).round() as usize;
    let door = ((DOOR.0 / RESOLUTION).round() as usize, (DOOR.1 / RESOLUTION).round() as usize);
    let mut blocked = Vec::new();
    for k in 1..n_rooms {
        for y in 0..cells_h {
            if !(door.0..door.1).contains(&y) {
                blocked.push([k * cells_w, y]);
            }
        }
    }
    let rooms = (0..n_rooms)
        .map(|k| {
            let x0 = k as f64 * ROOM_W + if k > 0 { RESOLUTION } else { 0.0 };
            let x1 = (k + 1) as f64 * ROOM_W;
            Room {
                id: format!("room_{k}"),
                name: ROOM_NAMES[k % ROOM_NAMES.len()].to_owned(),
                polygon: vec![[x0, 0.0], [x1, 0.0], [x1, ROOM_H], [x0, ROOM_H]],
            }
        })
        .collect();
    let grid = GridSpec {
        resolution: RESOLUTION,
        width: cells_w * n_rooms,
        height: cells_h,
        origin: [0.0, 0.0],
        blocked_cells: blocked,
    };
    (grid, rooms)
}

fn room_bounds(k: usize) -> ([f64; 2], [f64; 2]) {
    let x0 = k as f64 * ROOM_W;
    ([x0, 0.0], [x0 + ROOM_W, ROOM_H])
}

fn expanded(b: &Box3, by: f64) -> Box3 {
    Box3::new([b.min[0] - by, b.min[1] - by, b.min[2]], [b.max[0] + by, b.max[1] + by, b.max[2]])
}

fn carrier_objects(rng: &mut ChaCha8Rng, params: &GenParams, encoder: &HashEmbedder) -> Result<Vec<ObjectInstance>, BenchError> {
    let mut used = BTreeSet::new();
    let mut out: Vec<ObjectInstance> = Vec::new();
    for i in 0..params.n_carriers {
        let room = i % params.n_rooms;
        let (lo, hi) = room_bounds(room);
        let mut placed = None;
        for _ in 0..20 {
            let (kind, size) = *CARRIERS.choose(rng).expect("non-empty table");
            let color = *COLORS.choose(rng).expect("non-empty table");
            if used.contains(&(kind, color)) {
                continue;
            }
            let size = if rng.gen_bool(0.5) { [size[1], size[0], size[2]] } else { size };
            for _ in 0..200 {
                let x = rng.gen_range(lo[0] + WALL_MARGIN + size[0] / 2.0..=hi[0] - WALL_MARGIN - size[0] / 2.0);
                let y = rng.gen_range(lo[1] + WALL_MARGIN + size[1] / 2.0..=hi[1] - WALL_MARGIN - size[1] / 2.0);
                let x = (x * 100.0).round() / 100.0;
                let y = (y * 100.0).round() / 100.0;
                let b = Box3::from_base([x, y], size, 0.0);
                if out.iter().all(|o| expanded(&o.bbox, CLEARANCE).footprint_overlap(&b) <= 0.0) {
                    placed = Some((kind, color, b));
                    break;
                }
            }
            if placed.is_some() {
                break;
            }
        }
        let (kind, color, bbox) = placed.ok_or_else(|| BenchError::Capacity(format!("no room for carrier {i} in room_{room}")))?;
        used.insert((kind, color));
        let captions = carrier_captions(color, kind);
        let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
        out.push(ObjectInstance::synthesized(format!("{kind}_{i}"), &refs, bbox, encoder));
    }
    Ok(out)
}

fn kind_of(o: &ObjectInstance) -> &str {
    o.captions.get(1).map(String::as_str).unwrap_or("")
}

/// Picks a carrier with probability proportional to squared affinity.
fn pick_carrier<'a>(rng: &mut ChaCha8Rng, noun: &str, carriers: &'a [ObjectInstance], exclude: Option<&ObjectId>) -> Option<&'a ObjectInstance> {
    let pool: Vec<&ObjectInstance> = carriers.iter().filter(|c| Some(&c.id) != exclude).collect();
    let weights: Vec<f64> = pool.iter().map(|c| affinity(Some(noun), Some(kind_of(c))).powi(2)).collect();
    let dist = WeightedIndex::new(&weights).ok()?;
    Some(pool[dist.sample(rng)])
}

fn empty_scene(name: &str, grid: GridSpec, rooms: Vec<Room>, objects: Vec<ObjectInstance>) -> SceneMap {
    SceneMap {
        name: name.to_owned(),
        header: SceneHeader {
            feature_mode: FeatureMode::Synthesize,
            embedding_dim: DEFAULT_DIM,
            ..SceneHeader::default()
        },
        rooms,
        objects,
        grid,
    }
}

/// Free cell in room 0, clear of furniture, from which every carrier is reachable.
fn pick_start(rng: &mut ChaCha8Rng, scene: &SceneMap, carriers: &[ObjectId], graph: &CrsgConfig, sensor: SensorConfig) -> Result<Pose, BenchError> {
    let (lo, hi) = room_bounds(0);
    for _ in 0..500 {
        let x = rng.gen_range(lo[0] + 0.3..hi[0] - 0.3);
        let y = rng.gen_range(lo[1] + 0.3..hi[1] - 0.3);
        let cx = ((x / RESOLUTION).floor() + 0.5) * RESOLUTION;
        let cy = ((y / RESOLUTION).floor() + 0.5) * RESOLUTION;
        let pose = Pose::at((cx * 1000.0).round() / 1000.0, (cy * 1000.0).round() / 1000.0);
        let Ok(world) = GridWorld::new(scene.clone(), carriers.iter().cloned(), graph.clone(), sensor, pose, 0) else {
            continue;
        };
        if scene.objects.iter().all(|o| world.shortest_path(&pose, o.xy()).is_ok()) {
            return Ok(pose);
        }
    }
    Err(BenchError::Capacity("no start cell reaches every carrier".into()))
}

fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

/// One scenario: scene, start, displacement events and task list.
/// A draw that runs out of space is redrawn from the next sub-seed.
pub fn generate_scenario(seed: u64, index: usize, params: &GenParams) -> Result<LoadedScenario, BenchError> {
    params.validate()?;
    let mut last = None;
    for attempt in 0..16u64 {
        match draw_scenario(derive_seed(seed, index as u64 | attempt << 48), index, params) {
            Err(BenchError::Capacity(e)) => last = Some(e),
            other => return other,
        }
    }
    Err(BenchError::Capacity(last.unwrap_or_default()))
}

fn draw_scenario(scenario_seed: u64, index: usize, params: &GenParams) -> Result<LoadedScenario, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
    let encoder = HashEmbedder::default();
    let graph = CrsgConfig::default();
    let name = format!("scenario_{index:04}");
    let (grid, rooms) = layout(params.n_rooms);
    let carriers = carrier_objects(&mut rng, params, &encoder)?;
    let carrier_ids: Vec<ObjectId> = carriers.iter().map(|c| c.id.clone()).collect();

    // items are placed by the simulator's own placement routine
    let base = empty_scene(&name, grid, rooms, carriers.clone());
    let mut placer = GridWorld::new(
        base.clone(),
        carrier_ids.iter().cloned(),
        graph.clone(),
        params.sensor,
        Pose::at(0.05, 0.05),
        rng.gen(),
    )
    .or_else(|_| {
        GridWorld::new(base.clone(), carrier_ids.iter().cloned(), graph.clone(), params.sensor, Pose::at(ROOM_W / 2.0, 0.05), 0)
    })?;

    let mut nouns: Vec<(&str, [f64; 3])> = ITEMS.to_vec();
    nouns.shuffle(&mut rng);
    let mut specs: Vec<(String, String, [f64; 3])> = Vec::new();
    let mut palette: BTreeSet<(String, String)> = BTreeSet::new();
    for (noun, size) in nouns.iter().take(params.n_items) {
        let color = *COLORS.choose(&mut rng).expect("non-empty table");
        palette.insert((color.to_owned(), (*noun).to_owned()));
        specs.push((color.to_owned(), (*noun).to_owned(), *size));
    }
    let items = specs.clone();
    for k in 0..params.n_distractors {
        let (_, noun, size) = &items[k % items.len()];
        let color = loop {
            let c = *COLORS.choose(&mut rng).expect("non-empty table");
            if palette.insert((c.to_owned(), noun.clone())) {
                break c;
            }
        };
        specs.push((color.to_owned(), noun.clone(), *size));
    }
    for (i, (color, noun, size)) in specs.iter().enumerate() {
        let id = format!("{noun}_{i}");
        let captions = item_captions(color, noun);
        let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
        let mut ok = false;
        for _ in 0..30 {
            let carrier = pick_carrier(&mut rng, noun, &carriers, None).expect("carriers exist");
            let ev = DisplacementEvent::added(id.clone(), carrier.id.to_string(), &refs, *size);
            if placer.apply_displacement(&ev).is_ok() {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(BenchError::Capacity(format!("could not place {id}")));
        }
    }
    let mut scene = placer.scene.clone();
    scene.name = name.clone();
    let start = pick_start(&mut rng, &scene, &carrier_ids, &graph, params.sensor)?;

    // tasks and displacements, validated on a world identical to the runtime one
    let targets: Vec<usize> = {
        let mut idx: Vec<usize> = (0..params.n_items).collect();
        idx.shuffle(&mut rng);
        idx.truncate(params.sequence_length);
        idx
    };
    let world_seed: u64 = rng.gen();
    let mut world = GridWorld::new(scene.clone(), carrier_ids.iter().cloned(), graph.clone(), params.sensor, start, world_seed)?;
    let truth = world.ground_truth_carried();
    let mut events = Vec::new();
    for &t in targets.iter().take(params.displacement_count) {
        let (_, noun, _) = &specs[t];
        let id = ObjectId::new(format!("{noun}_{t}"));
        let current = truth.iter().find(|(_, set)| set.contains(&id)).map(|(c, _)| c.clone());
        let mut moved = false;
        for _ in 0..30 {
            let Some(carrier) = pick_carrier(&mut rng, noun, &carriers, current.as_ref()) else {
                break;
            };
            let ev = DisplacementEvent::moved(id.to_string(), carrier.id.to_string());
            // trial on a copy so a failed attempt leaves the world's rng untouched
            let mut trial = world.clone();
            if trial.apply_displacement(&ev).is_ok() {
                world = trial;
                events.push(ev);
                moved = true;
                break;
            }
        }
        if !moved {
            return Err(BenchError::Capacity(format!("could not displace {id}")));
        }
    }
    let mut tasks = Vec::new();
    for (k, &t) in targets.iter().enumerate() {
        let (color, noun, _) = &specs[t];
        let query = if rng.gen_bool(params.image_query_rate) {
            TargetQuery::image(format!("img:{color}_{noun}"))
        } else {
            TargetQuery::text(format!("{color} {noun}"))
        };
        tasks.push(Task {
            query,
            target_id: ObjectId::new(format!("{noun}_{t}")),
            events: if k == 0 { std::mem::take(&mut events) } else { Vec::new() },
        });
    }
    let scenario = Scenario {
        name: name.clone(),
        scene: format!("scene_{index:04}.json"),
        seed: world_seed,
        start,
        sensor: params.sensor,
        graph,
        tasks,
    };
    Ok(LoadedScenario { scenario, scene })
}

/// `count` scenarios from one seed; deterministic.
pub fn generate_scenarios(seed: u64, params: &GenParams, count: usize) -> Result<Vec<LoadedScenario>, BenchError> {
    (0..count).map(|i| generate_scenario(seed, i, params)).collect()
}

/// Random move/add/remove events applied to `world`; returns those that succeeded.
pub fn random_displacements(world: &mut GridWorld, rng: &mut ChaCha8Rng, count: usize) -> Vec<DisplacementEvent> {
    let carriers: Vec<ObjectId> = world.carriers.iter().cloned().collect();
    let mut palette: BTreeSet<String> = world
        .scene
        .objects
        .iter()
        .filter_map(|o| o.captions.first().cloned())
        .collect();
    let mut applied = Vec::new();
    let mut fresh = 0usize;
    for _ in 0..count {
        let items: Vec<ObjectId> = world
            .scene
            .objects
            .iter()
            .filter(|o| !world.carriers.contains(&o.id))
            .map(|o| o.id.clone())
            .collect();
        let kind = match rng.gen_range(0..4) {
            0 | 1 => DisplacementKind::Move,
            2 => DisplacementKind::Add,
            _ => DisplacementKind::Remove,
        };
        let event = match kind {
            DisplacementKind::Move | DisplacementKind::Remove if items.is_empty() => continue,
            DisplacementKind::Move => DisplacementEvent::moved(
                items.choose(rng).expect("non-empty").to_string(),
                carriers.choose(rng).expect("carriers exist").to_string(),
            ),
            DisplacementKind::Remove => DisplacementEvent::removed(items.choose(rng).expect("non-empty").to_string()),
            DisplacementKind::Add => {
                let (noun, size) = *ITEMS.choose(rng).expect("non-empty table");
                let Some(color) = COLORS.iter().find(|c| !palette.contains(&format!("{c} {noun}"))) else {
                    continue;
                };
                palette.insert(format!("{color} {noun}"));
                fresh += 1;
                let captions = item_captions(color, noun);
                let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
                DisplacementEvent::added(
                    format!("new_{noun}_{fresh}"),
                    carriers.choose(rng).expect("carriers exist").to_string(),
                    &refs,
                    size,
                )
            }
        };
        let mut trial = world.clone();
        if trial.apply_displacement(&event).is_ok() {
            *world = trial;
            applied.push(event);
        }
    }
    applied
}

/// Whether the generator vocabulary hashes without collisions.
pub fn vocabulary_is_collision_free(dim: usize) -> bool {
    let mut buckets = BTreeSet::new();
    vocabulary().iter().all(|t| buckets.insert(token_bucket(t, dim)))
}

/// Reference tokens that collide with generator item words.
pub fn reference_collisions(dim: usize) -> Vec<String> {
    let item_words: BTreeSet<usize> = COLORS
        .iter()
        .chain(ITEMS.iter().map(|(n, _)| n))
        .chain(["small"].iter())
        .map(|t| token_bucket(t, dim))
        .collect();
    crsg_core::features::tokenize(DEFAULT_CARRIER_REFERENCE)
        .filter(|t| item_words.contains(&token_bucket(t, dim)))
        .collect()
}
