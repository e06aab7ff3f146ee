//! Running scenarios under ablation variants and aggregating reports.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use crsg_core::features::{EncoderOracle, HashEmbedder};
use crsg_core::graph::{build_crsg, Crsg};
use crsg_core::oracle::{CarrierPrior, HeuristicPrior};
use crsg_core::policy::{run_task, EpisodeResult, ExploreRule, PolicyConfig, TaskContext};
use crsg_core::update::MatchConfig;
use crsg_core::world::GridWorld;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{episode_spl, mean, tasks_sr};
use crate::scenario::LoadedScenario;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ours")]
    Ours,
    #[serde(rename = "ours-Text")]
    OursText,
    #[serde(rename = "ours-LLM")]
    OursLlm,
    #[serde(rename = "only-carriers_Random")]
    OnlyCarriersRandom,
    #[serde(rename = "only-carriers_LLM")]
    OnlyCarriersLlm,
    #[serde(rename = "no-update")]
    NoUpdate,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Ours,
        Variant::OursText,
        Variant::OursLlm,
        Variant::OnlyCarriersRandom,
        Variant::OnlyCarriersLlm,
        Variant::NoUpdate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::OursText => "ours-Text",
            Variant::OursLlm => "ours-LLM",
            Variant::OnlyCarriersRandom => "only-carriers_Random",
            Variant::OnlyCarriersLlm => "only-carriers_LLM",
            Variant::NoUpdate => "no-update",
        }
    }

    pub fn policy(self, base: &PolicyConfig) -> PolicyConfig {
        let mut p = base.clone();
        match self {
            Variant::Ours | Variant::NoUpdate => {}
            Variant::OursText => p.beta = Some(0.0),
            Variant::OursLlm => p.beta = Some(1.0),
            Variant::OnlyCarriersRandom => {
                p.admit_new_candidates = false;
                p.explore = ExploreRule::Random;
            }
            Variant::OnlyCarriersLlm => p.admit_new_candidates = false,
        }
        p
    }

    pub fn updates(self) -> bool {
        self != Variant::NoUpdate
    }

    fn index(self) -> u64 {
        Variant::ALL.iter().position(|v| *v == self).expect("listed") as u64
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::Invalid(format!("unknown variant {s:?}")))
    }
}

/// Collaborators shared by every run.
pub struct Harness<'a> {
    pub prior: &'a dyn CarrierPrior,
    pub encoder: &'a dyn EncoderOracle,
    pub policy: PolicyConfig,
    pub matching: MatchConfig,
}

impl Harness<'static> {
    pub fn offline() -> Self {
        static PRIOR: OnceLock<HeuristicPrior> = OnceLock::new();
        static ENCODER: OnceLock<HashEmbedder> = OnceLock::new();
        Harness {
            prior: PRIOR.get_or_init(HeuristicPrior::default),
            encoder: ENCODER.get_or_init(HashEmbedder::default),
            policy: PolicyConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub scenario: String,
    pub variant: Variant,
    pub episodes: Vec<EpisodeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SequenceResult {
    pub fn successes(&self) -> Vec<bool> {
        self.episodes.iter().map(|e| e.success).collect()
    }
}

fn task_seed(seed: u64, variant: Variant, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe_f00d_d00d);
    rng.set_stream(variant.index() * 1_000 + task as u64);
    rng
}

/// Runs every task of a scenario in order on one world and one graph.
pub fn run_sequence(s: &LoadedScenario, variant: Variant, harness: &Harness<'_>) -> SequenceResult {
    run_sequence_seeded(s, variant, harness, 0)
}

/// As [`run_sequence`], with `seed` salting the policy's random choices.
pub fn run_sequence_seeded(s: &LoadedScenario, variant: Variant, harness: &Harness<'_>, seed: u64) -> SequenceResult {
    let scenario = &s.scenario;
    let mut result = SequenceResult {
        scenario: scenario.name.clone(),
        variant,
        episodes: Vec::new(),
        error: None,
    };
    let mut crsg: Crsg = match build_crsg(&s.scene, &scenario.graph, harness.prior, harness.encoder) {
        Ok(g) => g,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    let carriers = crsg.carriers.keys().cloned().collect::<Vec<_>>();
    let mut world = match GridWorld::new(
        s.scene.clone(),
        carriers,
        scenario.graph.clone(),
        scenario.sensor,
        scenario.start,
        scenario.seed,
    ) {
        Ok(w) => w,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    let policy = variant.policy(&harness.policy);
    let ctx = TaskContext {
        prior: harness.prior,
        encoder: harness.encoder,
        policy: &policy,
        matching: &harness.matching,
        update: variant.updates(),
    };
    for (i, task) in scenario.tasks.iter().enumerate() {
        let clock = Instant::now();
        let mut event_error = None;
        for ev in &task.events {
            if let Err(e) = world.apply_displacement(ev) {
                event_error = Some(format!("event for {}: {e}", ev.object_id));
            }
        }
        let mut rng = task_seed(scenario.seed ^ seed, variant, i);
        let mut ep = run_task(&mut world, &mut crsg, &task.query, &task.target_id, &ctx, &mut rng);
        ep.task_index = i;
        if ep.error.is_none() {
            ep.error = event_error;
        }
        ep.wall_time = clock.elapsed().as_secs_f64();
        result.episodes.push(ep);
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub variant: Variant,
    pub sequences: Vec<SequenceResult>,
    pub sr: f64,
    pub mean_spl: f64,
    /// Tasks_SR(i) for i = 1..=k.
    pub tasks_sr: Vec<f64>,
}

impl SuiteReport {
    pub fn from_sequences(variant: Variant, sequences: Vec<SequenceResult>) -> Self {
        let episodes: Vec<&EpisodeResult> = sequences.iter().flat_map(|s| &s.episodes).collect();
        let sr = mean(episodes.iter().map(|e| if e.success { 1.0 } else { 0.0 }));
        let mean_spl = mean(episodes.iter().map(|e| episode_spl(e.success, e.shortest, e.traveled)));
        let successes: Vec<Vec<bool>> = sequences.iter().map(SequenceResult::successes).collect();
        let k = successes.iter().map(Vec::len).max().unwrap_or(0);
        let tasks_sr = (1..=k).map(|i| tasks_sr(&successes, i)).collect();
        Self {
            variant,
            sequences,
            sr,
            mean_spl,
            tasks_sr,
        }
    }

    /// Mean SPL of the tasks at `index` across sequences.
    pub fn spl_at(&self, index: usize) -> f64 {
        mean(
            self.sequences
                .iter()
                .filter_map(|s| s.episodes.get(index))
                .map(|e| episode_spl(e.success, e.shortest, e.traveled)),
        )
    }

    /// Mean SPL of tasks with index in `range`.
    pub fn spl_over(&self, range: std::ops::Range<usize>) -> f64 {
        mean(
            self.sequences
                .iter()
                .flat_map(|s| s.episodes.iter().filter(|e| range.contains(&e.task_index)))
                .map(|e| episode_spl(e.success, e.shortest, e.traveled)),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteOptions {
    /// Worker threads; `None` uses the global pool, `Some(1)` runs inline.
    pub workers: Option<usize>,
    /// Salt for the policy's random choices.
    pub seed: u64,
}

fn run_jobs(jobs: &[(usize, Variant)], scenarios: &[LoadedScenario], harness: &Harness<'_>, options: &SuiteOptions) -> Vec<SequenceResult> {
    let one = |&(i, v): &(usize, Variant)| run_sequence_seeded(&scenarios[i], v, harness, options.seed);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match options.workers {
            Some(1) => jobs.iter().map(one).collect(),
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| jobs.par_iter().map(one).collect()),
                Err(e) => {
                    log::warn!("thread pool unavailable ({e}); running sequentially");
                    jobs.iter().map(one).collect()
                }
            },
            None => jobs.par_iter().map(one).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(one).collect()
    }
}

/// Runs every scenario under every variant. Results are keyed and sorted, so
/// the output does not depend on the worker count.
pub fn run_suite(scenarios: &[LoadedScenario], variants: &[Variant], harness: &Harness<'_>, options: &SuiteOptions) -> Vec<SuiteReport> {
    let jobs: Vec<(usize, Variant)> = variants
        .iter()
        .flat_map(|v| (0..scenarios.len()).map(move |i| (i, *v)))
        .collect();
    let mut results = run_jobs(&jobs, scenarios, harness, options);
    results.sort_by(|a, b| a.variant.cmp(&b.variant).then_with(|| a.scenario.cmp(&b.scenario)));
    variants
        .iter()
        .map(|v| {
            let mine = results.iter().filter(|r| r.variant == *v).cloned().collect();
            SuiteReport::from_sequences(*v, mine)
        })
        .collect()
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    record: &'static str,
    variant: Variant,
    scenario: &'a str,
    task: usize,
    success: bool,
    traveled: f64,
    shortest: Option<f64>,
    spl: f64,
    moves: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    found: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    trace: Vec<String>,
}

#[derive(Serialize)]
struct SummaryLine {
    record: &'static str,
    variant: Variant,
    sequences: usize,
    episodes: usize,
    sr: f64,
    mean_spl: f64,
    tasks_sr: Vec<f64>,
}

/// Line-delimited results: one record per episode, then one summary per variant.
pub fn results_jsonl(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for s in &r.sequences {
            for e in &s.episodes {
                let line = EpisodeLine {
                    record: "episode",
                    variant: r.variant,
                    scenario: &s.scenario,
                    task: e.task_index,
                    success: e.success,
                    traveled: e.traveled,
                    shortest: e.shortest,
                    spl: episode_spl(e.success, e.shortest, e.traveled),
                    moves: e.moves(),
                    found: e.found.as_ref().map(|f| f.as_str()),
                    error: e.error.as_deref(),
                    trace: e.trace_lines(),
                };
                out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
                out.push('\n');
            }
        }
    }
    for r in reports {
        let line = SummaryLine {
            record: "summary",
            variant: r.variant,
            sequences: r.sequences.len(),
            episodes: r.sequences.iter().map(|s| s.episodes.len()).sum(),
            sr: r.sr,
            mean_spl: r.mean_spl,
            tasks_sr: r.tasks_sr.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

/// Human-readable table of the aggregates.
pub fn summary_table(reports: &[SuiteReport]) -> String {
    let mut out = format!("{:<22} {:>6} {:>8}  tasks_sr\n", "variant", "SR", "SPL");
    for r in reports {
        let tsr: Vec<String> = r.tasks_sr.iter().map(|v| format!("{v:.3}")).collect();
        out.push_str(&format!("{:<22} {:>6.3} {:>8.3}  {}\n", r.variant.label(), r.sr, r.mean_spl, tsr.join(" ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, GenParams};

    fn params() -> GenParams {
        GenParams {
            n_rooms: 2,
            n_carriers: 5,
            n_items: 6,
            n_distractors: 2,
            sequence_length: 3,
            displacement_count: 1,
            ..GenParams::default()
        }
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.label()));
        }
        assert!("best".parse::<Variant>().is_err());
    }

    #[test]
    fn traveled_is_sum_of_legs_and_spl_bounded() {
        let s = generate_scenario(21, 0, &params()).unwrap();
        let h = Harness::offline();
        let r = run_sequence(&s, Variant::Ours, &h);
        assert!(r.error.is_none());
        assert_eq!(r.episodes.len(), 3);
        for e in &r.episodes {
            let legs: f64 = e.actions.iter().map(|a| a.leg).sum();
            assert!((legs - e.traveled).abs() < 1e-9);
            if e.success {
                assert!(e.traveled + 1e-9 >= e.shortest.unwrap());
            }
        }
        let report = SuiteReport::from_sequences(Variant::Ours, vec![r]);
        assert!(report.mean_spl <= report.sr + 1e-12);
    }

    #[test]
    fn undisplaced_first_task_matches_without_updates() {
        let p = GenParams {
            displacement_count: 0,
            ..params()
        };
        let s = generate_scenario(4, 0, &p).unwrap();
        let h = Harness::offline();
        let a = run_sequence(&s, Variant::Ours, &h);
        let b = run_sequence(&s, Variant::NoUpdate, &h);
        assert_eq!(a.episodes[0].traveled, b.episodes[0].traveled);
        assert_eq!(a.episodes[0].success, b.episodes[0].success);
        assert!(a.episodes[0].success);
        assert_eq!(episode_spl(true, a.episodes[0].shortest, a.episodes[0].traveled), 1.0);
    }

    #[test]
    fn single_carrier_world_makes_variants_agree() {
        let p = GenParams {
            n_rooms: 1,
            n_carriers: 1,
            n_items: 3,
            n_distractors: 1,
            sequence_length: 2,
            displacement_count: 0,
            ..GenParams::default()
        };
        let s = generate_scenario(8, 0, &p).unwrap();
        let h = Harness::offline();
        let base = run_sequence(&s, Variant::Ours, &h);
        for v in Variant::ALL {
            let r = run_sequence(&s, v, &h);
            let a: Vec<(bool, f64)> = r.episodes.iter().map(|e| (e.success, e.traveled)).collect();
            let b: Vec<(bool, f64)> = base.episodes.iter().map(|e| (e.success, e.traveled)).collect();
            assert_eq!(a, b, "{v}");
        }
    }

    #[test]
    fn suite_is_worker_count_independent() {
        let scenarios: Vec<LoadedScenario> = (0..4).map(|i| generate_scenario(2, i, &params()).unwrap()).collect();
        let h = Harness::offline();
        let variants = [Variant::Ours, Variant::OnlyCarriersRandom];
        let one = run_suite(&scenarios, &variants, &h, &SuiteOptions { workers: Some(1), seed: 0 });
        let four = run_suite(&scenarios, &variants, &h, &SuiteOptions { workers: Some(4), seed: 0 });
        assert_eq!(results_jsonl(&one), results_jsonl(&four));
        assert!(results_jsonl(&one).lines().count() == 4 * 3 * 2 + 2);
    }
}
