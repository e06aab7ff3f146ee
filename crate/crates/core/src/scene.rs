//! Scene model: objects with 3D boxes, declared rooms, grid metadata and the
//! JSON scene file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EncoderOracle, FeatureVector, HashEmbedder, DEFAULT_DIM};

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_RESOLUTION: f64 = 0.05;
/// Room id given to objects outside every declared room.
pub const HALLWAY: &str = "hallway";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ObjectId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Box with the given footprint center, size and base height.
    pub fn from_base(center_xy: [f64; 2], size: [f64; 3], base_z: f64) -> Self {
        Self {
            min: [
                center_xy[0] - size[0] / 2.0,
                center_xy[1] - size[1] / 2.0,
                base_z,
            ],
            max: [
                center_xy[0] + size[0] / 2.0,
                center_xy[1] + size[1] / 2.0,
                base_z + size[2],
            ],
        }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] <= self.max[k])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.extent(0), self.extent(1), self.extent(2)]
    }

    pub fn footprint_area(&self) -> f64 {
        self.extent(0) * self.extent(1)
    }

    pub fn height(&self) -> f64 {
        self.extent(2)
    }

    pub fn center(&self) -> [f64; 3] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    pub fn footprint_diagonal(&self) -> f64 {
        self.extent(0).hypot(self.extent(1))
    }

    /// Area of the x-y intersection of the two footprints.
    pub fn footprint_overlap(&self, other: &Box3) -> f64 {
        let dx = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let dy = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        dx * dy
    }

    pub fn contains(&self, p: [f64; 3], eps: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - eps && p[k] <= self.max[k] + eps)
    }

    pub fn translated(&self, d: [f64; 3]) -> Self {
        Self {
            min: [self.min[0] + d[0], self.min[1] + d[1], self.min[2] + d[2]],
            max: [self.max[0] + d[0], self.max[1] + d[1], self.max[2] + d[2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    /// Most frequent caption first.
    pub captions: Vec<String>,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub centroid: [f64; 3],
    pub text_feature: FeatureVector,
    pub visual_feature: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_id: Option<String>,
}

impl ObjectInstance {
    /// Object with features synthesized from its captions.
    pub fn synthesized(
        id: impl Into<String>,
        captions: &[&str],
        bbox: Box3,
        encoder: &dyn EncoderOracle,
    ) -> Self {
        let captions: Vec<String> = captions.iter().map(|c| (*c).to_owned()).collect();
        let (text_feature, visual_feature) = synthesize_features(&captions, encoder);
        Self {
            id: ObjectId::new(id),
            captions,
            centroid: bbox.center(),
            bbox,
            text_feature,
            visual_feature,
            room_id: None,
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.centroid[0], self.centroid[1]]
    }

    pub fn horizontal_distance(&self, other: &ObjectInstance) -> f64 {
        (self.centroid[0] - other.centroid[0]).hypot(self.centroid[1] - other.centroid[1])
    }

    /// The first three captions, as used for carrier plausibility checks.
    pub fn top_captions(&self) -> &[String] {
        &self.captions[..self.captions.len().min(3)]
    }

    pub fn label(&self) -> &str {
        self.captions.first().map(String::as_str).unwrap_or("")
    }

    /// Moves the object so that its box is re-centered at `center`.
    pub fn recentered(&self, center: [f64; 3]) -> Self {
        let c = self.bbox.center();
        let d = [center[0] - c[0], center[1] - c[1], center[2] - c[2]];
        let mut moved = self.clone();
        moved.bbox = self.bbox.translated(d);
        moved.centroid = [
            self.centroid[0] + d[0],
            self.centroid[1] + d[1],
            self.centroid[2] + d[2],
        ];
        moved
    }
}

/// Text feature from all captions, visual feature from the leading caption.
pub fn synthesize_features(
    captions: &[String],
    encoder: &dyn EncoderOracle,
) -> (FeatureVector, FeatureVector) {
    let text = encoder.encode_text(&captions.join(" "));
    let visual = encoder.encode_text(captions.first().map(String::as_str).unwrap_or(""));
    (text, visual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub polygon: Vec<[f64; 2]>,
}

impl Room {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        point_in_polygon(p, &self.polygon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub blocked_cells: Vec<[usize; 2]>,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

impl GridSpec {
    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        let w = self.width as f64 * self.resolution;
        let h = self.height as f64 * self.resolution;
        p[0] >= self.origin[0] && p[1] >= self.origin[1] && p[0] < self.origin[0] + w && p[1] < self.origin[1] + h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Embedded,
    Synthesize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub version: u32,
    pub feature_mode: FeatureMode,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl Default for SceneHeader {
    fn default() -> Self {
        Self {
            version: SCENE_FORMAT_VERSION,
            feature_mode: FeatureMode::Synthesize,
            embedding_dim: DEFAULT_DIM,
        }
    }
}

/// Instance map of one building. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub name: String,
    pub header: SceneHeader,
    pub rooms: Vec<Room>,
    pub objects: Vec<ObjectInstance>,
    pub grid: GridSpec,
}

impl SceneMap {
    pub fn object(&self, id: &ObjectId) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn object_mut(&mut self, id: &ObjectId) -> Option<&mut ObjectInstance> {
        self.objects.iter_mut().find(|o| &o.id == id)
    }

    pub fn encoder(&self) -> HashEmbedder {
        HashEmbedder::new(self.header.embedding_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let mut room_ids = BTreeSet::new();
        for room in &self.rooms {
            if !room_ids.insert(room.id.as_str()) {
                return Err(Error::Validation(format!("duplicate room id {}", room.id)));
            }
            if room.polygon.len() < 3 {
                return Err(Error::Validation(format!(
                    "room {} has fewer than 3 vertices",
                    room.id
                )));
            }
            if !polygon_is_simple(&room.polygon) {
                return Err(Error::Validation(format!(
                    "room {} polygon self-intersects",
                    room.id
                )));
            }
        }

        let dim = self.header.embedding_dim;
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(&o.id) {
                return Err(Error::Validation(format!("duplicate object id {}", o.id)));
            }
            if o.captions.is_empty() {
                return Err(Error::Validation(format!("object {} has no captions", o.id)));
            }
            if !o.bbox.is_valid() {
                return Err(Error::Validation(format!("object {} has an invalid box", o.id)));
            }
            if !o.bbox.contains(o.centroid, 1e-9) {
                return Err(Error::Validation(format!(
                    "object {} centroid lies outside its box",
                    o.id
                )));
            }
            for (name, f) in [("text", &o.text_feature), ("visual", &o.visual_feature)] {
                if f.dim() != dim {
                    return Err(Error::Validation(format!(
                        "object {} {name} feature has dimension {} (expected {dim})",
                        o.id,
                        f.dim()
                    )));
                }
                if !f.is_finite() {
                    return Err(Error::Validation(format!(
                        "object {} {name} feature is not finite",
                        o.id
                    )));
                }
            }
            if let Some(room) = &o.room_id {
                if room != HALLWAY && !room_ids.contains(room.as_str()) {
                    return Err(Error::Validation(format!(
                        "object {} names unknown room {room}",
                        o.id
                    )));
                }
            }
        }

        let g = &self.grid;
        if !(g.resolution > 0.0 && g.resolution.is_finite()) {
            return Err(Error::Validation("grid resolution must be positive".into()));
        }
        if g.width == 0 || g.height == 0 {
            return Err(Error::Validation("grid must be non-empty".into()));
        }
        if let Some(c) = g.blocked_cells.iter().find(|c| c[0] >= g.width || c[1] >= g.height) {
            return Err(Error::Validation(format!(
                "blocked cell ({}, {}) out of bounds",
                c[0], c[1]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRecord {
    id: ObjectId,
    captions: Vec<String>,
    #[serde(rename = "box")]
    bbox: Box3,
    centroid: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_feature: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual_feature: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    room_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    header: SceneHeader,
    #[serde(default = "default_name")]
    name: String,
    rooms: Vec<Room>,
    objects: Vec<ObjectRecord>,
    grid: GridSpec,
}

fn default_name() -> String {
    "scene".to_owned()
}

pub fn parse_scene(text: &str) -> Result<SceneMap> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.header.embedding_dim == 0 {
        return Err(Error::Validation("embedding_dim must be positive".into()));
    }
    let encoder = HashEmbedder::new(file.header.embedding_dim);
    let mut objects = Vec::with_capacity(file.objects.len());
    for rec in file.objects {
        let (text_feature, visual_feature) = match file.header.feature_mode {
            FeatureMode::Synthesize => synthesize_features(&rec.captions, &encoder),
            FeatureMode::Embedded => match (rec.text_feature, rec.visual_feature) {
                (Some(t), Some(v)) => (t, v),
                _ => {
                    return Err(Error::Validation(format!(
                        "object {} is missing embedded features",
                        rec.id
                    )))
                }
            },
        };
        objects.push(ObjectInstance {
            id: rec.id,
            captions: rec.captions,
            bbox: rec.bbox,
            centroid: rec.centroid,
            text_feature,
            visual_feature,
            room_id: rec.room_id,
        });
    }
    let scene = SceneMap {
        name: file.name,
        header: file.header,
        rooms: file.rooms,
        objects,
        grid: file.grid,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene(&text)
}

pub fn scene_to_string(scene: &SceneMap) -> Result<String> {
    let embedded = scene.header.feature_mode == FeatureMode::Embedded;
    let file = SceneFile {
        header: scene.header.clone(),
        name: scene.name.clone(),
        rooms: scene.rooms.clone(),
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id.clone(),
                captions: o.captions.clone(),
                bbox: o.bbox,
                centroid: o.centroid,
                text_feature: embedded.then(|| o.text_feature.clone()),
                visual_feature: embedded.then(|| o.visual_feature.clone()),
                room_id: o.room_id.clone(),
            })
            .collect(),
        grid: scene.grid.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_scene(scene: &SceneMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = scene_to_string(scene)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges touch.
pub fn polygon_is_simple(polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (polygon[i], polygon[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Assigns each object to the first room whose polygon contains its centroid's
/// x-y projection, or to [`HALLWAY`].
pub fn assign_rooms(objects: &[ObjectInstance], rooms: &[Room]) -> BTreeMap<ObjectId, String> {
    objects
        .iter()
        .map(|o| {
            let room = rooms
                .iter()
                .find(|r| r.contains(o.xy()))
                .map(|r| r.id.clone())
                .unwrap_or_else(|| HALLWAY.to_owned());
            (o.id.clone(), room)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::embed_text;

    fn square(id: &str, x0: f64, y0: f64, side: f64) -> Room {
        Room {
            id: id.into(),
            name: id.into(),
            polygon: vec![[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]],
        }
    }

    const MINIMAL: &str = r#"{
      "header": {"version": 1, "feature_mode": "synthesize", "embedding_dim": 256},
      "rooms": [{"id": "r1", "name": "kitchen", "polygon": [[0,0],[4,0],[4,4],[0,4]]}],
      "objects": [
        {"id": "table_1", "captions": ["black table", "table", "black wooden table"],
         "box": {"min": [1.0, 1.0, 0.0], "max": [2.2, 1.6, 0.75]}, "centroid": [1.6, 1.3, 0.375]},
        {"id": "cup_1", "captions": ["red cup", "cup", "small red cup"],
         "box": {"min": [1.56, 1.26, 0.75], "max": [1.64, 1.34, 0.85]}, "centroid": [1.6, 1.3, 0.8]}
      ],
      "grid": {"resolution": 0.05, "width": 80, "height": 80, "origin": [0, 0], "blocked_cells": []}
    }"#;

    #[test]
    fn minimal_scene_loads() {
        let scene = parse_scene(MINIMAL).unwrap();
        assert_eq!(scene.objects.len(), 2);
        assert_eq!(scene.rooms.len(), 1);
        assert_eq!(scene.name, "scene");
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = MINIMAL.replace("\"cup_1\"", "\"obj_3\"").replace("\"table_1\"", "\"obj_3\"");
        let err = parse_scene(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("obj_3"), "{err}");
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(parse_scene("{ not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn synthesized_features_match_embedder() {
        let scene = parse_scene(MINIMAL).unwrap();
        for o in &scene.objects {
            assert_eq!(o.text_feature, embed_text(&o.captions.join(" ")));
            assert_eq!(o.visual_feature, embed_text(&o.captions[0]));
        }
    }

    #[test]
    fn embedded_mode_requires_features() {
        let text = MINIMAL.replace("synthesize", "embedded");
        assert!(matches!(parse_scene(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn centroid_outside_box_rejected() {
        let text = MINIMAL.replace("[1.6, 1.3, 0.8]", "[3.0, 3.0, 0.8]");
        assert!(parse_scene(&text).unwrap_err().to_string().contains("centroid"));
    }

    #[test]
    fn unknown_room_rejected() {
        let text = MINIMAL.replace(
            "\"centroid\": [1.6, 1.3, 0.8]}",
            "\"centroid\": [1.6, 1.3, 0.8], \"room_id\": \"attic\"}",
        );
        assert!(parse_scene(&text).unwrap_err().to_string().contains("attic"));
    }

    #[test]
    fn self_intersecting_room_rejected() {
        let text = MINIMAL.replace("[[0,0],[4,0],[4,4],[0,4]]", "[[0,0],[4,4],[4,0],[0,4]]");
        assert!(parse_scene(&text).unwrap_err().to_string().contains("self-intersects"));
    }

    #[test]
    fn round_trip_both_modes() {
        let scene = parse_scene(MINIMAL).unwrap();
        let again = parse_scene(&scene_to_string(&scene).unwrap()).unwrap();
        assert_eq!(scene, again);

        let mut embedded = scene.clone();
        embedded.header.feature_mode = FeatureMode::Embedded;
        embedded.objects[0].text_feature.0[3] = 0.25;
        let again = parse_scene(&scene_to_string(&embedded).unwrap()).unwrap();
        assert_eq!(embedded, again);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let scene = parse_scene(MINIMAL).unwrap();
        save_scene(&scene, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), scene);
        assert!(matches!(load_scene(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn room_assignment() {
        let rooms = vec![square("r1", 0.5, 0.5, 1.0), square("r2", 3.0, 0.0, 2.0)];
        let e = HashEmbedder::default();
        let inside = ObjectInstance::synthesized("a", &["cup"], Box3::from_base([1.0, 1.0], [0.1, 0.1, 0.1], 0.0), &e);
        let other = ObjectInstance::synthesized("b", &["cup"], Box3::from_base([4.0, 1.0], [0.1, 0.1, 0.1], 0.0), &e);
        let outside = ObjectInstance::synthesized("c", &["cup"], Box3::from_base([9.0, 9.0], [0.1, 0.1, 0.1], 0.0), &e);
        let map = assign_rooms(&[inside, other, outside], &rooms);
        assert_eq!(map[&ObjectId::from("a")], "r1");
        assert_eq!(map[&ObjectId::from("b")], "r2");
        assert_eq!(map[&ObjectId::from("c")], HALLWAY);
    }

    #[test]
    fn simple_polygons() {
        assert!(polygon_is_simple(&square("r", 0.0, 0.0, 1.0).polygon));
        assert!(polygon_is_simple(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [1.0, 1.0], [0.0, 2.0]]));
        assert!(!polygon_is_simple(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]));
        assert!(!polygon_is_simple(&[[0.0, 0.0], [1.0, 0.0]]));
    }

    #[test]
    fn box_geometry() {
        let table = Box3::new([0.0, 0.0, 0.0], [1.2, 0.6, 0.75]);
        assert!((table.footprint_area() - 0.72).abs() < 1e-12);
        let cup = Box3::from_base([1.2, 0.3], [0.1, 0.1, 0.1], 0.75);
        // half of the cup hangs over the edge
        assert!((cup.footprint_overlap(&table) - 0.005).abs() < 1e-12);
    }
}
