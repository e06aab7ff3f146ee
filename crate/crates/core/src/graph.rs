//! Carrier-relationship scene graph: building, rooms, a fixed layer of
//! carrier furniture, and the movable objects each carrier holds.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, EncoderOracle};
use crate::oracle::CarrierPrior;
use crate::scene::{assign_rooms, ObjectId, ObjectInstance, Room, SceneMap};

/// Reference phrase for the carrier similarity stage, extended with carrier
/// nouns so that a bag-of-tokens encoder can see the overlap.
pub const DEFAULT_CARRIER_REFERENCE: &str =
    "furniture for holding objects table desk shelf cabinet counter nightstand sofa bed dresser toilet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrsgConfig {
    /// Similarity threshold against the carrier reference text.
    pub sigma: f64,
    pub reference_text: String,
    pub min_footprint_area: f64,
    pub min_height: f64,
    pub ground_contact_eps: f64,
    /// Fraction of the carried object's footprint that must overlap the carrier.
    pub overlap_rate: f64,
    pub z_gap_max: f64,
    pub max_carried_footprint: f64,
}

impl Default for CrsgConfig {
    fn default() -> Self {
        Self {
            sigma: 0.15,
            reference_text: DEFAULT_CARRIER_REFERENCE.to_owned(),
            min_footprint_area: 0.10,
            min_height: 0.25,
            ground_contact_eps: 0.05,
            overlap_rate: 0.5,
            z_gap_max: 0.15,
            max_carried_footprint: 0.25,
        }
    }
}

impl CrsgConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("min_footprint_area", self.min_footprint_area),
            ("min_height", self.min_height),
            ("ground_contact_eps", self.ground_contact_eps),
            ("z_gap_max", self.z_gap_max),
            ("max_carried_footprint", self.max_carried_footprint),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| v.is_nan() || *v <= 0.0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if !(self.overlap_rate > 0.0 && self.overlap_rate <= 1.0) {
            return Err(Error::Validation("overlap_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarrierNode {
    pub object: ObjectInstance,
    pub carried: BTreeMap<ObjectId, ObjectInstance>,
    pub explored: bool,
}

/// Where the graph believes an object is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "carrier")]
pub enum Placement {
    Carrier,
    Carried(ObjectId),
    Orphan,
    /// Known object whose last carrier was seen without it.
    Unplaced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crsg {
    pub building: String,
    pub rooms: Vec<Room>,
    pub room_of: BTreeMap<ObjectId, String>,
    pub carriers: BTreeMap<ObjectId, CarrierNode>,
    pub orphans: BTreeMap<ObjectId, ObjectInstance>,
    pub unplaced: BTreeMap<ObjectId, ObjectInstance>,
}

impl Crsg {
    pub fn is_empty(&self) -> bool {
        self.carriers.is_empty() && self.orphans.is_empty() && self.unplaced.is_empty()
    }

    pub fn len(&self) -> usize {
        self.carriers.values().map(|c| 1 + c.carried.len()).sum::<usize>() + self.orphans.len() + self.unplaced.len()
    }

    pub fn carrier_of(&self, id: &ObjectId) -> Option<&ObjectId> {
        self.carriers
            .iter()
            .find(|(_, node)| node.carried.contains_key(id))
            .map(|(cid, _)| cid)
    }

    pub fn lookup(&self, id: &ObjectId) -> Option<(&ObjectInstance, Placement)> {
        if let Some(node) = self.carriers.get(id) {
            return Some((&node.object, Placement::Carrier));
        }
        for (cid, node) in &self.carriers {
            if let Some(o) = node.carried.get(id) {
                return Some((o, Placement::Carried(cid.clone())));
            }
        }
        if let Some(o) = self.orphans.get(id) {
            return Some((o, Placement::Orphan));
        }
        self.unplaced.get(id).map(|o| (o, Placement::Unplaced))
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.lookup(id).is_some()
    }

    /// Every object with its placement, carriers first, in id order per group.
    pub fn objects(&self) -> Vec<(&ObjectInstance, Placement)> {
        let mut out = Vec::with_capacity(self.len());
        for node in self.carriers.values() {
            out.push((&node.object, Placement::Carrier));
        }
        for (cid, node) in &self.carriers {
            for o in node.carried.values() {
                out.push((o, Placement::Carried(cid.clone())));
            }
        }
        out.extend(self.orphans.values().map(|o| (o, Placement::Orphan)));
        out.extend(self.unplaced.values().map(|o| (o, Placement::Unplaced)));
        out
    }

    /// Carrier id → ids of carried objects.
    pub fn carried_relation(&self) -> BTreeMap<ObjectId, BTreeSet<ObjectId>> {
        self.carriers
            .iter()
            .map(|(cid, node)| (cid.clone(), node.carried.keys().cloned().collect()))
            .collect()
    }

    /// Detaches an object from wherever it currently sits.
    pub fn detach(&mut self, id: &ObjectId) -> Option<ObjectInstance> {
        for node in self.carriers.values_mut() {
            if let Some(o) = node.carried.remove(id) {
                return Some(o);
            }
        }
        self.orphans.remove(id).or_else(|| self.unplaced.remove(id))
    }

    /// Checks the disjointness invariants; used by tests and after updates.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, _) in self.objects() {
            if !seen.insert(id.id.clone()) {
                return Err(Error::Validation(format!("object {} appears twice in the graph", id.id)));
            }
        }
        for (cid, node) in &self.carriers {
            if &node.object.id != cid {
                return Err(Error::Validation(format!("carrier key {cid} does not match its object")));
            }
        }
        Ok(())
    }

    pub fn dump(&self) -> GraphDump {
        let room = |id: &ObjectId| self.room_of.get(id).cloned().unwrap_or_else(|| crate::scene::HALLWAY.to_owned());
        GraphDump {
            building: self.building.clone(),
            rooms: self
                .rooms
                .iter()
                .map(|r| RoomDump {
                    id: r.id.clone(),
                    name: r.name.clone(),
                })
                .collect(),
            carriers: self
                .carriers
                .iter()
                .map(|(cid, node)| CarrierDump {
                    id: cid.clone(),
                    room: room(cid),
                    captions: node.object.captions.clone(),
                    carried: node.carried.keys().cloned().collect(),
                })
                .collect(),
            orphans: self.orphans.keys().cloned().collect(),
            unplaced: self.unplaced.keys().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomDump {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierDump {
    pub id: ObjectId,
    pub room: String,
    pub captions: Vec<String>,
    pub carried: Vec<ObjectId>,
}

/// Text dump of a graph, stable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub building: String,
    pub rooms: Vec<RoomDump>,
    pub carriers: Vec<CarrierDump>,
    pub orphans: Vec<ObjectId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unplaced: Vec<ObjectId>,
}

/// Objects whose text feature is more similar than `sigma` to the reference text.
pub fn select_carrier_candidates<'a>(
    objects: &'a [ObjectInstance],
    encoder: &dyn EncoderOracle,
    config: &CrsgConfig,
) -> Vec<&'a ObjectInstance> {
    let reference = encoder.encode_text(&config.reference_text);
    objects
        .iter()
        .filter(|o| cosine_similarity(&o.text_feature, &reference).is_ok_and(|s| s > config.sigma))
        .collect()
}

/// Keeps candidates whose top three captions the prior accepts as carriers.
pub fn filter_by_prior<'a>(
    candidates: &[&'a ObjectInstance],
    prior: &dyn CarrierPrior,
) -> Result<Vec<&'a ObjectInstance>> {
    let mut kept = Vec::with_capacity(candidates.len());
    for o in candidates {
        if prior.is_carrier(o.top_captions())? {
            kept.push(*o);
        }
    }
    Ok(kept)
}

/// Size and ground-contact filter for carrier furniture.
pub fn geometric_carrier_filter<'a>(candidates: &[&'a ObjectInstance], config: &CrsgConfig) -> Vec<&'a ObjectInstance> {
    candidates
        .iter()
        .copied()
        .filter(|o| {
            o.bbox.footprint_area() >= config.min_footprint_area
                && o.bbox.height() >= config.min_height
                && o.bbox.min[2] <= config.ground_contact_eps
        })
        .collect()
}

/// Whether `carrier` holds `obj`: small enough, mostly over the carrier's
/// footprint, resting on (or inside the upper half of) it, and near its center.
pub fn carrying_predicate(carrier: &ObjectInstance, obj: &ObjectInstance, config: &CrsgConfig) -> bool {
    let area = obj.bbox.footprint_area();
    if area > config.max_carried_footprint {
        return false;
    }
    if carrier.bbox.footprint_overlap(&obj.bbox) < config.overlap_rate * area {
        return false;
    }
    let gap = obj.bbox.min[2] - carrier.bbox.max[2];
    let resting = gap >= -1e-9 && gap <= config.z_gap_max;
    let top_half_lo = (carrier.bbox.min[2] + carrier.bbox.max[2]) / 2.0;
    let in_top_half = obj.bbox.min[2] <= carrier.bbox.max[2] && obj.bbox.max[2] >= top_half_lo;
    if !(resting || in_top_half) {
        return false;
    }
    carrier.horizontal_distance(obj) <= carrier.bbox.footprint_diagonal() / 2.0
}

/// The satisfying carrier with the nearest centroid; ties go to the smaller id.
pub fn nearest_carrier<'a, I>(obj: &ObjectInstance, carriers: I, config: &CrsgConfig) -> Option<&'a ObjectInstance>
where
    I: IntoIterator<Item = &'a ObjectInstance>,
{
    carriers
        .into_iter()
        .filter(|c| carrying_predicate(c, obj, config))
        .min_by(|a, b| {
            a.horizontal_distance(obj)
                .total_cmp(&b.horizontal_distance(obj))
                .then_with(|| a.id.cmp(&b.id))
        })
}

/// Carried assignment: carrier id → carried ids, plus the ids nothing carries.
pub fn assign_carried(
    carriers: &[&ObjectInstance],
    others: &[&ObjectInstance],
    config: &CrsgConfig,
) -> (BTreeMap<ObjectId, BTreeSet<ObjectId>>, BTreeSet<ObjectId>) {
    let mut carried: BTreeMap<ObjectId, BTreeSet<ObjectId>> =
        carriers.iter().map(|c| (c.id.clone(), BTreeSet::new())).collect();
    let mut orphans = BTreeSet::new();
    for obj in others {
        match nearest_carrier(obj, carriers.iter().copied(), config) {
            Some(c) => {
                carried.entry(c.id.clone()).or_default().insert(obj.id.clone());
            }
            None => {
                orphans.insert(obj.id.clone());
            }
        }
    }
    (carried, orphans)
}

/// Carrier ids selected by the three-stage pipeline.
pub fn select_carriers(
    scene: &SceneMap,
    config: &CrsgConfig,
    prior: &dyn CarrierPrior,
    encoder: &dyn EncoderOracle,
) -> Result<Vec<ObjectId>> {
    let candidates = select_carrier_candidates(&scene.objects, encoder, config);
    let plausible = filter_by_prior(&candidates, prior)?;
    Ok(geometric_carrier_filter(&plausible, config)
        .into_iter()
        .map(|o| o.id.clone())
        .collect())
}

/// Like [`select_carriers`], but a failing prior degrades to the identity filter.
pub fn select_carriers_or_identity(
    scene: &SceneMap,
    config: &CrsgConfig,
    prior: &dyn CarrierPrior,
    encoder: &dyn EncoderOracle,
) -> Vec<ObjectId> {
    let candidates = select_carrier_candidates(&scene.objects, encoder, config);
    let plausible = filter_by_prior(&candidates, prior).unwrap_or_else(|e| {
        warn!("carrier prior failed ({e}); keeping all similarity candidates");
        candidates.clone()
    });
    geometric_carrier_filter(&plausible, config)
        .into_iter()
        .map(|o| o.id.clone())
        .collect()
}

/// Builds the graph from a fixed carrier set.
pub fn build_with_carriers(scene: &SceneMap, carrier_ids: &[ObjectId], config: &CrsgConfig) -> Crsg {
    let carrier_set: BTreeSet<&ObjectId> = carrier_ids.iter().collect();
    let (carriers, others): (Vec<&ObjectInstance>, Vec<&ObjectInstance>) =
        scene.objects.iter().partition(|o| carrier_set.contains(&o.id));
    let (relation, orphan_ids) = assign_carried(&carriers, &others, config);
    let by_id: BTreeMap<&ObjectId, &ObjectInstance> = scene.objects.iter().map(|o| (&o.id, o)).collect();

    let carriers = relation
        .into_iter()
        .map(|(cid, carried)| {
            let node = CarrierNode {
                object: by_id[&cid].clone(),
                carried: carried.into_iter().map(|id| (id.clone(), by_id[&id].clone())).collect(),
                explored: false,
            };
            (cid, node)
        })
        .collect();
    Crsg {
        building: scene.name.clone(),
        rooms: scene.rooms.clone(),
        room_of: assign_rooms(&scene.objects, &scene.rooms),
        carriers,
        orphans: orphan_ids.into_iter().map(|id| (id.clone(), by_id[&id].clone())).collect(),
        unplaced: BTreeMap::new(),
    }
}

pub fn build_crsg(
    scene: &SceneMap,
    config: &CrsgConfig,
    prior: &dyn CarrierPrior,
    encoder: &dyn EncoderOracle,
) -> Result<Crsg> {
    config.validate()?;
    let carriers = select_carriers(scene, config, prior, encoder)?;
    Ok(build_with_carriers(scene, &carriers, config))
}
