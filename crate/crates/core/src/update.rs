//! Keeping the graph in step with what the robot sees: carrier matching,
//! carried-set reconciliation, re-homing, and a replayable journal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::cosine_similarity;
use crate::graph::{nearest_carrier, Crsg, CrsgConfig};
use crate::scene::{ObjectId, ObjectInstance};
use crate::world::{Observation, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub max_center_dist: f64,
    pub max_size_ratio_dev: f64,
    pub min_text_sim: f64,
    pub min_visual_sim: f64,
    pub carried_match_center_dist: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_center_dist: 0.5,
            max_size_ratio_dev: 0.3,
            min_text_sim: 0.7,
            min_visual_sim: 0.7,
            carried_match_center_dist: 0.3,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.max_center_dist, self.max_size_ratio_dev, self.carried_match_center_dist];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation("match distances and size deviation must be positive".into()));
        }
        for s in [self.min_text_sim, self.min_visual_sim] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Validation("similarity gates must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriedDiff {
    pub carrier_id: ObjectId,
    pub added: Vec<Observation>,
    pub removed: Vec<ObjectId>,
    pub kept: Vec<ObjectId>,
}

impl CarriedDiff {
    pub fn is_noop(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// What `apply_update` did with each added observation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub created: Vec<ObjectId>,
    /// (object, previous carrier; `None` when it was unplaced or an orphan).
    pub rehomed: Vec<(ObjectId, Option<ObjectId>)>,
    pub unplaced: Vec<ObjectId>,
}

fn size_ok(a: &ObjectInstance, b: &ObjectInstance, dev: f64) -> bool {
    let (sa, sb) = (a.bbox.size(), b.bbox.size());
    (0..3).all(|k| {
        if sb[k] <= 0.0 {
            return sa[k] <= 0.0;
        }
        let r = sa[k] / sb[k];
        (1.0 - dev..=1.0 + dev).contains(&r)
    })
}

fn centroid_dist(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
    (0..3).map(|k| (a.centroid[k] - b.centroid[k]).powi(2)).sum::<f64>().sqrt()
}

/// Appearance gates: text similarity always, visual similarity when both
/// sides carry a visual feature.
fn appearance_ok(a: &ObjectInstance, b: &ObjectInstance, config: &MatchConfig) -> bool {
    let text = match cosine_similarity(&a.text_feature, &b.text_feature) {
        Ok(s) => s >= config.min_text_sim,
        Err(_) => false,
    };
    if !text {
        return false;
    }
    if a.visual_feature.is_zero() || b.visual_feature.is_zero() {
        return true;
    }
    cosine_similarity(&a.visual_feature, &b.visual_feature).is_ok_and(|s| s >= config.min_visual_sim)
}

fn appearance_score(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
    let t = cosine_similarity(&a.text_feature, &b.text_feature).unwrap_or(0.0);
    let v = cosine_similarity(&a.visual_feature, &b.visual_feature).unwrap_or(0.0);
    t + v
}

fn gates(obs: &ObjectInstance, node: &ObjectInstance, max_dist: f64, config: &MatchConfig) -> bool {
    centroid_dist(obs, node) <= max_dist && size_ok(obs, node, config.max_size_ratio_dev) && appearance_ok(obs, node, config)
}

/// The graph carrier this observation shows, if any; the nearest qualifier wins.
pub fn match_carrier(obs: &Observation, crsg: &Crsg, config: &MatchConfig) -> Option<ObjectId> {
    let inst = obs.to_instance();
    crsg.carriers
        .iter()
        .filter(|(_, node)| gates(&inst, &node.object, config.max_center_dist, config))
        .min_by(|(ia, a), (ib, b)| {
            centroid_dist(&inst, &a.object)
                .total_cmp(&centroid_dist(&inst, &b.object))
                .then_with(|| ia.cmp(ib))
        })
        .map(|(id, _)| id.clone())
}

/// Graph carrier whose top holds the observed object, by the carrying predicate.
pub fn carrier_of_observation(obs: &Observation, crsg: &Crsg, graph_config: &CrsgConfig) -> Option<ObjectId> {
    let inst = obs.to_instance();
    nearest_carrier(&inst, crsg.carriers.values().map(|n| &n.object), graph_config).map(|c| c.id.clone())
}

/// Observations split into carrier sightings and carried-object sightings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SortedView {
    /// Graph carrier ids seen, with the world id that produced each sighting.
    pub carriers: BTreeMap<ObjectId, ObjectId>,
    /// Non-carrier observations with the graph carrier holding them.
    pub items: Vec<(Observation, Option<ObjectId>)>,
}

pub fn sort_observations<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    crsg: &Crsg,
    config: &MatchConfig,
    graph_config: &CrsgConfig,
) -> SortedView {
    let mut view = SortedView::default();
    for obs in observations {
        match match_carrier(obs, crsg, config) {
            Some(cid) => {
                view.carriers.entry(cid).or_insert_with(|| obs.object_id.clone());
            }
            None => {
                let holder = carrier_of_observation(obs, crsg, graph_config);
                view.items.push((obs.clone(), holder));
            }
        }
    }
    view
}

/// Carriers certified fully observed somewhere along the samples, with the
/// carried observations from the last such sample.
pub fn certified_views(
    samples: &[Sample],
    crsg: &Crsg,
    config: &MatchConfig,
    graph_config: &CrsgConfig,
) -> BTreeMap<ObjectId, Vec<Observation>> {
    let mut out = BTreeMap::new();
    for sample in samples {
        if sample.fully_observed.is_empty() {
            continue;
        }
        let view = sort_observations(&sample.observations, crsg, config, graph_config);
        for (graph_id, world_id) in &view.carriers {
            if !sample.fully_observed.contains(world_id) {
                continue;
            }
            let carried: Vec<Observation> = view
                .items
                .iter()
                .filter(|(_, holder)| holder.as_ref() == Some(graph_id))
                .map(|(o, _)| o.clone())
                .collect();
            out.insert(graph_id.clone(), carried);
        }
    }
    out
}

/// Matches a full view of a carrier's top against its carried set.
/// Pairs are taken greedily by center distance.
pub fn reconcile_carried(
    carrier_id: &ObjectId,
    observations: &[Observation],
    crsg: &Crsg,
    config: &MatchConfig,
) -> Result<CarriedDiff> {
    let node = crsg
        .carriers
        .get(carrier_id)
        .ok_or_else(|| Error::UnknownCarrier(carrier_id.to_string()))?;
    let insts: Vec<ObjectInstance> = observations.iter().map(Observation::to_instance).collect();
    let mut pairs: Vec<(f64, &ObjectId, usize)> = Vec::new();
    for (id, entry) in &node.carried {
        for (j, inst) in insts.iter().enumerate() {
            if gates(inst, entry, config.carried_match_center_dist, config) {
                pairs.push((centroid_dist(inst, entry), id, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    let mut kept = BTreeSet::new();
    let mut used = vec![false; insts.len()];
    for (_, id, j) in pairs {
        if kept.contains(id) || used[j] {
            continue;
        }
        kept.insert(id.clone());
        used[j] = true;
    }
    let removed = node.carried.keys().filter(|id| !kept.contains(*id)).cloned().collect();
    let added = observations
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(o, _)| o.clone())
        .collect();
    Ok(CarriedDiff {
        carrier_id: carrier_id.clone(),
        added,
        removed,
        kept: kept.into_iter().collect(),
    })
}

enum Home {
    Carried(ObjectId),
    Unplaced,
    Orphan,
}

/// Best known object elsewhere in the graph for an added observation:
/// unplaced objects first, then appearance score, then distance, then id.
fn find_known(crsg: &Crsg, inst: &ObjectInstance, skip_carrier: &ObjectId, config: &MatchConfig) -> Option<(ObjectId, Home)> {
    let mut best: Option<((u8, f64, f64), ObjectId, Home)> = None;
    let mut consider = |o: &ObjectInstance, rank: u8, home: Home| {
        if !size_ok(inst, o, config.max_size_ratio_dev) || !appearance_ok(inst, o, config) {
            return;
        }
        let key = (rank, -appearance_score(inst, o), centroid_dist(inst, o));
        let better = match &best {
            None => true,
            Some((k, id, _)) => {
                key.0 < k.0
                    || (key.0 == k.0 && key.1 < k.1)
                    || (key.0 == k.0 && key.1 == k.1 && key.2 < k.2)
                    || (key.0 == k.0 && key.1 == k.1 && key.2 == k.2 && o.id < *id)
            }
        };
        if better {
            best = Some((key, o.id.clone(), home));
        }
    };
    for o in crsg.unplaced.values() {
        consider(o, 0, Home::Unplaced);
    }
    for (cid, node) in &crsg.carriers {
        if cid == skip_carrier {
            continue;
        }
        for o in node.carried.values() {
            consider(o, 1, Home::Carried(cid.clone()));
        }
    }
    for o in crsg.orphans.values() {
        consider(o, 2, Home::Orphan);
    }
    best.map(|(_, id, home)| (id, home))
}

fn fresh_id(crsg: &Crsg, wanted: &ObjectId) -> ObjectId {
    if !crsg.contains(wanted) {
        return wanted.clone();
    }
    (1..)
        .map(|k| ObjectId::new(format!("{wanted}#{k}")))
        .find(|id| !crsg.contains(id))
        .expect("unbounded id space")
}

/// Applies a diff. Removed entries become unplaced; added observations are
/// matched to known objects (re-homed) or become new nodes. Idempotent.
pub fn apply_update(crsg: &mut Crsg, diff: &CarriedDiff, config: &MatchConfig) -> Result<UpdateOutcome> {
    if !crsg.carriers.contains_key(&diff.carrier_id) {
        return Err(Error::UnknownCarrier(diff.carrier_id.to_string()));
    }
    let mut outcome = UpdateOutcome::default();
    for id in &diff.removed {
        let node = crsg.carriers.get_mut(&diff.carrier_id).expect("checked above");
        if let Some(obj) = node.carried.remove(id) {
            crsg.unplaced.insert(id.clone(), obj);
            outcome.unplaced.push(id.clone());
        }
    }
    for obs in &diff.added {
        let mut inst = obs.to_instance();
        let node = &crsg.carriers[&diff.carrier_id];
        let already = node
            .carried
            .values()
            .any(|o| gates(&inst, o, config.carried_match_center_dist, config));
        if already {
            continue;
        }
        match find_known(crsg, &inst, &diff.carrier_id, config) {
            Some((id, home)) => {
                let previous = match home {
                    Home::Carried(cid) => {
                        crsg.carriers.get_mut(&cid).expect("listed carrier").carried.remove(&id);
                        Some(cid)
                    }
                    Home::Unplaced => {
                        crsg.unplaced.remove(&id);
                        None
                    }
                    Home::Orphan => {
                        crsg.orphans.remove(&id);
                        None
                    }
                };
                outcome.unplaced.retain(|u| u != &id);
                inst.id = id.clone();
                outcome.rehomed.push((id, previous));
            }
            None => {
                inst.id = fresh_id(crsg, &obs.object_id);
                outcome.created.push(inst.id.clone());
            }
        }
        inst.room_id = crsg.room_of.get(&diff.carrier_id).cloned();
        if let Some(room) = &inst.room_id {
            crsg.room_of.insert(inst.id.clone(), room.clone());
        }
        crsg.carriers
            .get_mut(&diff.carrier_id)
            .expect("checked above")
            .carried
            .insert(inst.id.clone(), inst);
    }
    Ok(outcome)
}

/// Reconciles every certified carrier in the samples. Returns the diffs
/// that changed something, in carrier order.
pub fn update_from_samples(
    crsg: &mut Crsg,
    samples: &[Sample],
    config: &MatchConfig,
    graph_config: &CrsgConfig,
) -> Result<Vec<CarriedDiff>> {
    let views = certified_views(samples, crsg, config, graph_config);
    let mut applied = Vec::new();
    for (cid, carried) in views {
        let diff = reconcile_carried(&cid, &carried, crsg, config)?;
        if diff.is_noop() {
            continue;
        }
        apply_update(crsg, &diff, config)?;
        applied.push(diff);
    }
    Ok(applied)
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    /// Logical clock: position in the journal.
    pub timestamp: u64,
    pub carrier: ObjectId,
    pub added: Vec<ObjectId>,
    pub removed: Vec<ObjectId>,
    pub diff: CarriedDiff,
}

/// Append-only JSONL log of applied diffs.
#[derive(Debug, Default)]
pub struct UpdateJournal {
    entries: Vec<JournalEntry>,
}

impl UpdateJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn record(&mut self, diff: &CarriedDiff) {
        self.entries.push(JournalEntry {
            timestamp: self.entries.len() as u64,
            carrier: diff.carrier_id.clone(),
            added: diff.added.iter().map(|o| o.object_id.clone()).collect(),
            removed: diff.removed.clone(),
            diff: diff.clone(),
        });
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(out, "{line}").map_err(|source| Error::Io {
                path: "<journal>".into(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|source| Error::Io {
                path: "<journal>".into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?);
        }
        Ok(Self { entries })
    }

    /// Re-applies every entry in order.
    pub fn replay(&self, crsg: &mut Crsg, config: &MatchConfig) -> Result<()> {
        for e in &self.entries {
            apply_update(crsg, &e.diff, config)?;
        }
        Ok(())
    }
}
