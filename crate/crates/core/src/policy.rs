//! Fixed exploration policy over carriers and candidate targets.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, image_token, EncoderOracle, FeatureVector};
use crate::graph::{Crsg, CrsgConfig, Placement};
use crate::oracle::{CarrierPrior, CarrierSummary, TargetDescriptor};
use crate::query::{query_target, QueryDescriptor, QueryHit, TargetQuery};
use crate::scene::ObjectId;
use crate::update::{carrier_of_observation, certified_views, sort_observations, update_from_samples, MatchConfig};
use crate::world::{GridWorld, Observation, Pose, Sample, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreRule {
    /// Ask the commonsense prior.
    #[default]
    Prior,
    /// Seeded uniform pick.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub omega1: f64,
    pub alpha: f64,
    pub omega2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Image-vs-text mix for confirmation. `None`: 0.5 for image queries, else 0.
    pub beta: Option<f64>,
    /// Whether objects sighted en route become candidates.
    pub admit_new_candidates: bool,
    pub explore: ExploreRule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            omega1: 3.0,
            alpha: 0.1,
            omega2: 1.0,
            sigma1: 0.6,
            sigma2: 0.75,
            beta: None,
            admit_new_candidates: true,
            explore: ExploreRule::Prior,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.omega1, self.alpha, self.omega2].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("omega1, alpha and omega2 must be non-negative".into()));
        }
        if self.sigma1 > self.sigma2 {
            return Err(Error::Validation("sigma1 must not exceed sigma2".into()));
        }
        if let Some(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Validation("beta must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn beta_for(&self, image_query: bool) -> f64 {
        self.beta.unwrap_or(if image_query { 0.5 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTarget {
    pub object_id: ObjectId,
    pub carrier_id: ObjectId,
    pub ss: f64,
    /// Path distance from the robot, refreshed before every decision.
    pub d: f64,
    /// Mean depth at first sighting.
    pub d_tilde: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub robot_pose: Pose,
    pub unexplored_carriers: BTreeSet<ObjectId>,
    /// Sorted by object id.
    pub candidates: Vec<CandidateTarget>,
    pub found: bool,
    pub step_index: usize,
}

impl NavState {
    pub fn check_invariants(&self) -> Result<()> {
        for c in &self.candidates {
            if !self.unexplored_carriers.contains(&c.carrier_id) {
                return Err(Error::Validation(format!(
                    "candidate {} sits on explored carrier {}",
                    c.object_id, c.carrier_id
                )));
            }
            if !(c.d >= 0.0 && c.d_tilde >= 0.0) {
                return Err(Error::Validation(format!("candidate {} has a negative distance", c.object_id)));
            }
        }
        Ok(())
    }

    fn candidate(&self, id: &ObjectId) -> Option<&CandidateTarget> {
        self.candidates.iter().find(|c| &c.object_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NavAction {
    Stop,
    Explore(ObjectId),
    Goto(CandidateTarget),
}

impl fmt::Display for NavAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NavAction::Stop => write!(f, "stop"),
            NavAction::Explore(c) => write!(f, "explore({c})"),
            NavAction::Goto(c) => write!(f, "goto({}@{})", c.object_id, c.carrier_id),
        }
    }
}

/// How an episode starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Mdp(NavState),
    /// Target is static furniture: drive straight there.
    Bypass(ObjectId, [f64; 2]),
}

/// Initial state: every carrier unexplored, the queried object as the only candidate.
/// `d` is the path distance from `start` to the queried object.
pub fn init_state(crsg: &Crsg, start: Pose, hit: &QueryHit, d: f64) -> Result<Start> {
    if crsg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let candidates = match &hit.placement {
        Placement::Carrier | Placement::Orphan => return Ok(Start::Bypass(hit.object.id.clone(), hit.object.xy())),
        Placement::Carried(cid) => vec![CandidateTarget {
            object_id: hit.object.id.clone(),
            carrier_id: cid.clone(),
            ss: hit.score,
            d,
            d_tilde: 0.0,
            position: hit.object.xy(),
        }],
        Placement::Unplaced => Vec::new(),
    };
    Ok(Start::Mdp(NavState {
        robot_pose: start,
        unexplored_carriers: crsg.carriers.keys().cloned().collect(),
        candidates,
        found: false,
        step_index: 0,
    }))
}

pub fn priority(c: &CandidateTarget, config: &PolicyConfig) -> f64 {
    config.omega1 * c.ss * (-config.alpha * c.d_tilde).exp() / (1.0 + config.omega2 * c.d)
}

fn nearest(carriers: &[CarrierSummary]) -> Option<&CarrierSummary> {
    carriers
        .iter()
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)))
}

/// Policy rules: stop when done, else best candidate, else the carrier the
/// prior (or the random rule) picks. `carriers` summarizes the unexplored set.
pub fn decide(
    state: &NavState,
    config: &PolicyConfig,
    prior: &dyn CarrierPrior,
    target: &TargetDescriptor,
    carriers: &[CarrierSummary],
    rng: &mut ChaCha8Rng,
) -> NavAction {
    if state.found || state.unexplored_carriers.is_empty() {
        return NavAction::Stop;
    }
    if let Some(best) = state.candidates.iter().reduce(|best, c| {
        let (p, q) = (priority(c, config), priority(best, config));
        if p > q || (p == q && c.object_id < best.object_id) {
            c
        } else {
            best
        }
    }) {
        return NavAction::Goto(best.clone());
    }
    let open: Vec<CarrierSummary> = carriers
        .iter()
        .filter(|c| state.unexplored_carriers.contains(&c.id))
        .cloned()
        .collect();
    let pick = match config.explore {
        ExploreRule::Random => {
            let mut ids: Vec<&ObjectId> = state.unexplored_carriers.iter().collect();
            ids.sort();
            ids.choose(rng).map(|id| (*id).clone())
        }
        ExploreRule::Prior => match prior.rank_carriers(&open, target) {
            Ok(ranked) => match ranked.first() {
                Some(id) if state.unexplored_carriers.contains(id) => Some(id.clone()),
                _ => {
                    warn!("prior returned an unusable ranking; exploring the nearest carrier");
                    nearest(&open).map(|c| c.id.clone())
                }
            },
            Err(e) => {
                warn!("prior failed ({e}); exploring the nearest carrier");
                nearest(&open).map(|c| c.id.clone())
            }
        },
    };
    match pick.or_else(|| state.unexplored_carriers.iter().next().cloned()) {
        Some(id) => NavAction::Explore(id),
        None => NavAction::Stop,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionInputs {
    pub cr_observed: BTreeSet<ObjectId>,
    pub ct_new: Vec<CandidateTarget>,
    pub ct_star: Vec<CandidateTarget>,
}

/// Bookkeeping from one leg's observations.
pub fn collect_transition_inputs(
    samples: &[Sample],
    crsg: &Crsg,
    state: &NavState,
    probe: &FeatureVector,
    config: &PolicyConfig,
    matching: &MatchConfig,
    graph_config: &CrsgConfig,
) -> TransitionInputs {
    let mut first: Vec<&Observation> = Vec::new();
    let mut ids = BTreeSet::new();
    for s in samples {
        for o in &s.observations {
            if ids.insert(&o.object_id) {
                first.push(o);
            }
        }
    }
    let view = sort_observations(first, crsg, matching, graph_config);
    let mut hot = BTreeSet::new();
    let mut ct_new: Vec<CandidateTarget> = Vec::new();
    for (obs, holder) in &view.items {
        let Some(cid) = holder else { continue };
        let ss = cosine_similarity(&obs.text_feature, probe).unwrap_or(0.0);
        if ss <= config.sigma1 {
            continue;
        }
        hot.insert(cid.clone());
        if !config.admit_new_candidates || !state.unexplored_carriers.contains(cid) {
            continue;
        }
        if state
            .candidate(&obs.object_id)
            .is_some_and(|c| &c.carrier_id == cid)
        {
            continue;
        }
        ct_new.push(CandidateTarget {
            object_id: obs.object_id.clone(),
            carrier_id: cid.clone(),
            ss,
            d: 0.0,
            d_tilde: obs.mean_depth,
            position: [obs.centroid[0], obs.centroid[1]],
        });
    }
    let cr_observed: BTreeSet<ObjectId> = certified_views(samples, crsg, matching, graph_config)
        .into_keys()
        .filter(|c| state.unexplored_carriers.contains(c) && !hot.contains(c))
        .collect();
    let ct_star = state
        .candidates
        .iter()
        .filter(|c| !cr_observed.contains(&c.carrier_id))
        .filter(|c| !ct_new.iter().any(|n| n.object_id == c.object_id))
        .cloned()
        .collect();
    TransitionInputs {
        cr_observed,
        ct_new,
        ct_star,
    }
}

pub fn transition(
    state: &NavState,
    action: &NavAction,
    inputs: &TransitionInputs,
    found: bool,
    pose: Pose,
) -> Result<NavState> {
    if state.found {
        return Err(Error::StaleAction("episode already finished".into()));
    }
    let mut cr = state.unexplored_carriers.clone();
    let mut ct: Vec<CandidateTarget> = inputs.ct_star.clone();
    ct.extend(inputs.ct_new.iter().cloned());
    match action {
        NavAction::Stop => return Err(Error::StaleAction("stop has no successor state".into())),
        NavAction::Explore(c) => {
            if !cr.remove(c) {
                return Err(Error::StaleAction(format!("carrier {c} is not unexplored")));
            }
        }
        NavAction::Goto(t) => {
            if state.candidate(&t.object_id).is_none() {
                return Err(Error::StaleAction(format!("{} is not a candidate", t.object_id)));
            }
            cr.remove(&t.carrier_id);
            ct.retain(|c| c.object_id != t.object_id || c.carrier_id != t.carrier_id);
        }
    }
    for c in &inputs.cr_observed {
        cr.remove(c);
    }
    ct.retain(|c| cr.contains(&c.carrier_id));
    ct.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    ct.dedup_by(|a, b| a.object_id == b.object_id);
    Ok(NavState {
        robot_pose: pose,
        unexplored_carriers: cr,
        candidates: ct,
        found,
        step_index: state.step_index + 1,
    })
}

/// Folds observations made without moving into the state; nothing is
/// explored and the step index is unchanged.
pub fn observe_in_place(state: &NavState, inputs: &TransitionInputs) -> NavState {
    let mut next = state.clone();
    for c in &inputs.cr_observed {
        next.unexplored_carriers.remove(c);
    }
    let mut ct = inputs.ct_star.clone();
    ct.extend(inputs.ct_new.iter().cloned());
    ct.retain(|c| next.unexplored_carriers.contains(&c.carrier_id));
    ct.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    ct.dedup_by(|a, b| a.object_id == b.object_id);
    next.candidates = ct;
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confirmation {
    /// Best-scoring carried object and its score.
    pub best: Option<(ObjectId, f64)>,
    pub confirmed: bool,
}

/// Scores each carried object against the target and accepts the best one
/// if it clears `sigma2`.
pub fn confirm_target(
    carried: &[Observation],
    probe: &FeatureVector,
    target_image: &str,
    beta: f64,
    prior: &dyn CarrierPrior,
    sigma2: f64,
) -> Confirmation {
    let mut best: Option<(ObjectId, f64)> = None;
    for obs in carried {
        let text = cosine_similarity(&obs.text_feature, probe).unwrap_or(0.0);
        let score = if beta > 0.0 {
            let token = image_token(obs.observed_captions.first().map(String::as_str).unwrap_or(""));
            match prior.compare_images(&token, target_image) {
                Ok(img) => (1.0 - beta) * text + beta * img,
                Err(e) => {
                    warn!("image comparison failed ({e}); using text similarity");
                    text
                }
            }
        } else {
            text
        };
        let better = match &best {
            None => true,
            Some((id, s)) => score > *s || (score == *s && obs.object_id < *id),
        };
        if better {
            best = Some((obs.object_id.clone(), score));
        }
    }
    let confirmed = best.as_ref().is_some_and(|(_, s)| *s > sigma2);
    Confirmation { best, confirmed }
}

/// One line of the action trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub action: String,
    /// Pose when the action was chosen.
    pub pose: [f64; 2],
    pub cr: usize,
    pub ct: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<f64>,
    /// Planner length of the leg this action drove.
    pub leg: f64,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} pose=({:.2},{:.2}) |CR|={} |CT|={} priority=",
            self.t, self.action, self.pose[0], self.pose[1], self.cr, self.ct
        )?;
        match self.priority {
            Some(p) => write!(f, "{p:.6}")?,
            None => write!(f, "-")?,
        }
        write!(f, " leg={:.3}", self.leg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_index: usize,
    pub success: bool,
    pub traveled: f64,
    /// Shortest path from the start to the target's true location; `None`
    /// when the target is gone or unreachable.
    pub shortest: Option<f64>,
    pub actions: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl EpisodeResult {
    pub fn trace_lines(&self) -> Vec<String> {
        self.actions.iter().map(ToString::to_string).collect()
    }

    /// Number of non-stop actions.
    pub fn moves(&self) -> usize {
        self.actions.iter().filter(|a| a.action != "stop").count()
    }
}

/// Collaborators and switches for one task.
pub struct TaskContext<'a> {
    pub prior: &'a dyn CarrierPrior,
    pub encoder: &'a dyn EncoderOracle,
    pub policy: &'a PolicyConfig,
    pub matching: &'a MatchConfig,
    /// Whether observations update the graph.
    pub update: bool,
}

struct Episode<'w, 'g, 'c, 'r> {
    world: &'w mut GridWorld,
    crsg: &'g mut Crsg,
    ctx: &'c TaskContext<'c>,
    rng: &'r mut ChaCha8Rng,
    trace: Vec<TraceStep>,
    traveled: f64,
}

impl Episode<'_, '_, '_, '_> {
    fn drive(&mut self, to: [f64; 2]) -> Option<Trajectory> {
        match self.world.go_to(to) {
            Ok(mut traj) => {
                if traj.samples.is_empty() {
                    traj.samples.push(self.world.look());
                }
                self.traveled += traj.length;
                Some(traj)
            }
            Err(e) => {
                debug!("cannot reach ({:.2}, {:.2}): {e}", to[0], to[1]);
                None
            }
        }
    }

    fn absorb(&mut self, samples: &[Sample]) {
        if !self.ctx.update {
            return;
        }
        if let Err(e) = update_from_samples(self.crsg, samples, self.ctx.matching, &self.world.config) {
            warn!("graph update failed: {e}");
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, t: usize, action: String, pose: Pose, cr: usize, ct: usize, priority: Option<f64>, leg: f64) {
        self.trace.push(TraceStep {
            t,
            action,
            pose: pose.position,
            cr,
            ct,
            priority,
            leg,
        });
    }
}

/// Runs one navigation task to completion. Unreachable goals count as failures.
pub fn run_task(
    world: &mut GridWorld,
    crsg: &mut Crsg,
    query: &TargetQuery,
    target_id: &ObjectId,
    ctx: &TaskContext<'_>,
    rng: &mut ChaCha8Rng,
) -> EpisodeResult {
    let clock = Instant::now();
    let start = world.robot;
    let shortest = world
        .object(target_id)
        .and_then(|o| world.shortest_path(&start, o.xy()).ok())
        .map(|p| p.length);
    let mut ep = Episode {
        world,
        crsg,
        ctx,
        rng,
        trace: Vec::new(),
        traveled: 0.0,
    };
    let outcome = run_inner(&mut ep, query);
    let (found, error) = match outcome {
        Ok(found) => (found, None),
        Err(e) => (None, Some(e.to_string())),
    };
    let success = found.as_ref() == Some(target_id);
    EpisodeResult {
        task_index: 0,
        success,
        traveled: ep.traveled,
        shortest,
        actions: ep.trace,
        found,
        error,
        wall_time: clock.elapsed().as_secs_f64(),
    }
}

fn run_inner(ep: &mut Episode<'_, '_, '_, '_>, query: &TargetQuery) -> Result<Option<ObjectId>> {
    let ctx = ep.ctx;
    let config = ctx.policy;
    let hit = query_target(ep.crsg, query, ctx.encoder)?;
    let field = ep.world.distance_field();
    let d0 = ep.world.distance_via(&field, hit.object.xy());
    let start = ep.world.robot;
    let mut state = match init_state(ep.crsg, start, &hit, if d0.is_finite() { d0 } else { 0.0 })? {
        Start::Bypass(id, at) => {
            let before = ep.traveled;
            let traj = ep.drive(at);
            ep.push(0, format!("goto_static({id})"), start, 0, 0, None, ep.traveled - before);
            return Ok(traj.map(|t| {
                ep.absorb(&t.samples);
                id
            }));
        }
        Start::Mdp(s) => s,
    };

    let probe = hit.object.text_feature.clone();
    let descriptor = query.prior_descriptor(&hit.object);
    let target_image = match &query.descriptor {
        QueryDescriptor::Image(token) => token.clone(),
        QueryDescriptor::Text(text) => image_token(text),
    };
    let beta = config.beta_for(query.is_image());
    let mut found = None;

    // what is visible from the start pose counts before the first decision
    let here = vec![ep.world.look()];
    let inputs = collect_transition_inputs(&here, ep.crsg, &state, &probe, config, ctx.matching, &ep.world.config);
    ep.absorb(&here);
    state = observe_in_place(&state, &inputs);

    loop {
        let field = ep.world.distance_field();
        for c in &mut state.candidates {
            let d = ep.world.distance_via(&field, c.position);
            c.d = if d.is_finite() { d } else { f64::MAX };
        }
        let summaries: Vec<CarrierSummary> = state
            .unexplored_carriers
            .iter()
            .map(|id| {
                let node = &ep.crsg.carriers[id];
                CarrierSummary {
                    id: id.clone(),
                    captions: node.object.captions.clone(),
                    distance: ep.world.distance_via(&field, node.object.xy()),
                }
            })
            .collect();
        let action = decide(&state, config, ctx.prior, &descriptor, &summaries, ep.rng);
        let pose = ep.world.robot;
        let (cr_n, ct_n) = (state.unexplored_carriers.len(), state.candidates.len());
        let (dest, dest_carrier, prio) = match &action {
            NavAction::Stop => {
                ep.push(state.step_index, action.to_string(), pose, cr_n, ct_n, None, 0.0);
                break;
            }
            NavAction::Explore(c) => (ep.crsg.carriers[c].object.xy(), c.clone(), None),
            NavAction::Goto(t) => (t.position, t.carrier_id.clone(), Some(priority(t, config))),
        };
        let before = ep.traveled;
        let mut samples = Vec::new();
        let mut confirmed_here = None;
        if let Some(traj) = ep.drive(dest) {
            samples = traj.samples;
            let last = samples.last().expect("drive yields a sample");
            let carried: Vec<Observation> = last
                .observations
                .iter()
                .filter(|o| carrier_of_observation(o, ep.crsg, &ep.world.config).as_ref() == Some(&dest_carrier))
                .cloned()
                .collect();
            let conf = confirm_target(&carried, &probe, &target_image, beta, ctx.prior, config.sigma2);
            if conf.confirmed {
                let (id, _) = conf.best.expect("confirmed implies a best object");
                let at = carried.iter().find(|o| o.object_id == id).expect("scored object");
                if let Some(last_leg) = ep.drive([at.centroid[0], at.centroid[1]]) {
                    samples.extend(last_leg.samples);
                    confirmed_here = Some(id);
                }
            }
        }
        let inputs = collect_transition_inputs(&samples, ep.crsg, &state, &probe, config, ctx.matching, &ep.world.config);
        ep.absorb(&samples);
        ep.push(state.step_index, action.to_string(), pose, cr_n, ct_n, prio, ep.traveled - before);
        state = transition(&state, &action, &inputs, confirmed_here.is_some(), ep.world.robot)?;
        if confirmed_here.is_some() {
            found = confirmed_here;
            let pose = ep.world.robot;
            let (cr_n, ct_n) = (state.unexplored_carriers.len(), state.candidates.len());
            ep.push(state.step_index, NavAction::Stop.to_string(), pose, cr_n, ct_n, None, 0.0);
            break;
        }
    }
    Ok(found)
}
