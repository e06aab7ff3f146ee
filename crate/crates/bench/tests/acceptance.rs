//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use crsg_bench::metrics::spl;
use crsg_bench::scenario::{generate_scenario, generate_scenarios, random_displacements, GenParams, LoadedScenario, CARRIERS};
use crsg_bench::suite::{run_suite, Harness, SuiteOptions, SuiteReport, Variant};
use crsg_core::graph::{build_crsg, Crsg, CrsgConfig};
use crsg_core::policy::{priority, run_task, CandidateTarget, PolicyConfig, TaskContext};
use crsg_core::query::{query_target, TargetQuery};
use crsg_core::scene::{ObjectId, ObjectInstance};
use crsg_core::update::{update_from_samples, MatchConfig};
use crsg_core::world::{DisplacementEvent, GridWorld, SensorConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn world_and_graph(s: &LoadedScenario, sensor: SensorConfig) -> (GridWorld, Crsg) {
    let h = Harness::offline();
    let crsg = build_crsg(&s.scene, &s.scenario.graph, h.prior, h.encoder).expect("graph builds");
    let carriers: Vec<ObjectId> = crsg.carriers.keys().cloned().collect();
    let world = GridWorld::new(s.scene.clone(), carriers, s.scenario.graph.clone(), sensor, s.scenario.start, s.scenario.seed)
        .expect("world builds");
    (world, crsg)
}

// exp(x) for x >= 0 from its power series; every term is positive
fn exp_series(x: f64) -> f64 {
    let (mut term, mut sum, mut n) = (1.0f64, 1.0f64, 1.0f64);
    while term > 1e-22 * sum {
        term *= x / n;
        sum += term;
        n += 1.0;
    }
    sum
}

fn formula_fidelity() -> Outcome {
    let cfg = PolicyConfig::default();
    let cand = |ss: f64, d: f64, d_tilde: f64| CandidateTarget {
        object_id: ObjectId::new("x"),
        carrier_id: ObjectId::new("c"),
        ss,
        d,
        d_tilde,
        position: [0.0, 0.0],
    };
    let unit = priority(&cand(1.0, 0.0, 0.0), &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (ss, d, dt) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..10.0));
        let reference = 3.0 * ss / (exp_series(0.1 * dt) * (1.0 + 1.0 * d));
        worst = worst.max((priority(&cand(ss, d, dt), &cfg) - reference).abs());
    }
    Outcome::new(unit == 3.0 && worst <= 1e-12, format!("P(1,0,0) = {unit}, max abs error {worst:.2e} over 20 inputs"))
}

fn spl_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..100 {
        let ok = rng.gen_bool(0.7);
        let (l, p): (f64, f64) = (rng.gen_range(0.01..50.0), rng.gen_range(0.01..80.0));
        let oracle = if ok { l / l.max(p) } else { 0.0 };
        if spl(ok, l, p).ok() != Some(oracle) {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches}/100 mismatches"))
}

// carrying predicate written out from its definition
fn holds(c: &ObjectInstance, o: &ObjectInstance) -> bool {
    let (cb, ob) = (&c.bbox, &o.bbox);
    let area = (ob.max[0] - ob.min[0]) * (ob.max[1] - ob.min[1]);
    let ox = (cb.max[0].min(ob.max[0]) - cb.min[0].max(ob.min[0])).max(0.0);
    let oy = (cb.max[1].min(ob.max[1]) - cb.min[1].max(ob.min[1])).max(0.0);
    let gap = ob.min[2] - cb.max[2];
    let on_top = (-1e-9..=0.15).contains(&gap);
    let in_upper_half = ob.min[2] <= cb.max[2] && ob.max[2] >= (cb.min[2] + cb.max[2]) / 2.0;
    let diag = (cb.max[0] - cb.min[0]).hypot(cb.max[1] - cb.min[1]);
    let dist = (c.centroid[0] - o.centroid[0]).hypot(c.centroid[1] - o.centroid[1]);
    area <= 0.25 && ox * oy >= 0.5 * area && (on_top || in_upper_half) && dist <= diag / 2.0
}

fn brute_force(objects: &[ObjectInstance], carriers: &BTreeSet<ObjectId>) -> BTreeMap<ObjectId, BTreeSet<ObjectId>> {
    let mut out: BTreeMap<ObjectId, BTreeSet<ObjectId>> = carriers.iter().map(|c| (c.clone(), BTreeSet::new())).collect();
    for o in objects.iter().filter(|o| !carriers.contains(&o.id)) {
        let mut best: Option<(f64, &ObjectId)> = None;
        for c in objects.iter().filter(|c| carriers.contains(&c.id)) {
            if !holds(c, o) {
                continue;
            }
            let d = (c.centroid[0] - o.centroid[0]).hypot(c.centroid[1] - o.centroid[1]);
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && &c.id < bid)) {
                best = Some((d, &c.id));
            }
        }
        if let Some((_, cid)) = best {
            out.get_mut(cid).expect("carrier listed").insert(o.id.clone());
        }
    }
    out
}

fn crsg_oracle() -> Outcome {
    let h = Harness::offline();
    let kinds: BTreeSet<&str> = CARRIERS.iter().map(|(k, _)| *k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut agree, mut max_objects) = (0, 0);
    for i in 0..50 {
        let n_rooms = rng.gen_range(1..=3);
        let n_carriers = rng.gen_range(2 * n_rooms..=4 * n_rooms);
        let params = GenParams {
            n_rooms,
            n_carriers,
            n_items: rng.gen_range(3..=8.min(2 * n_carriers + 2)),
            n_distractors: rng.gen_range(0..=3.min(n_carriers)),
            sequence_length: 1,
            displacement_count: 1,
            ..GenParams::default()
        };
        let s = generate_scenario(1100, i, &params).expect("scenario");
        let (mut world, _) = world_and_graph(&s, SensorConfig::default());
        random_displacements(&mut world, &mut rng, 2);
        let scene = &world.scene;
        max_objects = max_objects.max(scene.objects.len());
        let crsg = build_crsg(scene, &CrsgConfig::default(), h.prior, h.encoder).expect("graph");
        let selected: BTreeSet<ObjectId> = crsg.carriers.keys().cloned().collect();
        let expected_carriers: BTreeSet<ObjectId> = scene
            .objects
            .iter()
            .filter(|o| o.captions.get(1).is_some_and(|k| kinds.contains(k.as_str())))
            .map(|o| o.id.clone())
            .collect();
        if selected == expected_carriers && crsg.carried_relation() == brute_force(&scene.objects, &selected) {
            agree += 1;
        }
    }
    Outcome::new(
        agree == 50 && max_objects <= 25,
        format!("{agree}/50 scenes equal the brute-force assignment, largest scene {max_objects} objects"),
    )
}

fn query_property() -> Outcome {
    let h = Harness::offline();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut plain_ok, mut plain_n, mut inst_ok, mut inst_n) = (0, 0, 0, 0);
    let mut index = 0;
    while plain_n < 100 || inst_n < 100 {
        let s = generate_scenario(1200, index, &GenParams::default()).expect("scenario");
        index += 1;
        let (mut world, crsg) = world_and_graph(&s, SensorConfig::default());
        let truth = world.ground_truth_carried();
        let holder = |id: &ObjectId| truth.iter().find(|(_, v)| v.contains(id)).map(|(c, _)| c.clone());

        // plain text queries against same-noun, different-color distractors
        for o in s.scene.objects.iter().filter(|o| !crsg.carriers.contains_key(&o.id)) {
            if plain_n == 100 {
                break;
            }
            let hit = query_target(&crsg, &TargetQuery::text(o.captions[0].clone()), h.encoder).expect("query");
            plain_n += 1;
            plain_ok += usize::from(hit.object.id == o.id);
        }

        // an exact twin on a second carrier, told apart only by the carrier
        if inst_n == 100 {
            continue;
        }
        let items: Vec<&ObjectInstance> = s.scene.objects.iter().filter(|o| holder(&o.id).is_some()).collect();
        let original = *items.choose(&mut rng).expect("items");
        let home = holder(&original.id).expect("carried");
        let others: Vec<&ObjectId> = crsg.carriers.keys().filter(|c| **c != home).collect();
        let Some(&other) = others.choose(&mut rng) else { continue };
        let caps: Vec<&str> = original.captions.iter().map(String::as_str).collect();
        let size = original.bbox.size();
        let twin = ObjectId::new(format!("twin_{index}"));
        if world
            .apply_displacement(&DisplacementEvent::added(twin.to_string(), other.to_string(), &caps, size))
            .is_err()
        {
            continue;
        }
        let crsg = build_crsg(&world.scene, &CrsgConfig::default(), h.prior, h.encoder).expect("graph");
        let truth = world.ground_truth_carried();
        for (carrier, expect) in [(&home, &original.id), (other, &twin)] {
            let label = crsg.carriers[carrier].object.captions[0].clone();
            let q = TargetQuery::text(original.captions[0].clone()).on_carrier(label);
            let hit = query_target(&crsg, &q, h.encoder).expect("query");
            inst_n += 1;
            inst_ok += usize::from(&hit.object.id == expect && truth[carrier].contains(expect));
        }
    }
    let pass = inst_ok * 100 >= 99 * inst_n && plain_ok * 100 >= 99 * plain_n;
    Outcome::new(pass, format!("carrier-qualified {inst_ok}/{inst_n}, plain {plain_ok}/{plain_n}"))
}

fn permutations(items: &[ObjectId]) -> Vec<Vec<ObjectId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

// some visiting order reaches the target's carrier
fn exhaustive_finds(world: &GridWorld, target: &ObjectId) -> bool {
    let truth = world.ground_truth_carried();
    let carriers: Vec<ObjectId> = truth.keys().cloned().collect();
    permutations(&carriers).iter().any(|order| {
        let mut at = world.robot;
        for c in order {
            let Some(obj) = world.object(c) else { return false };
            let Ok(path) = world.shortest_path(&at, obj.xy()) else { return false };
            if truth[c].contains(target) {
                return true;
            }
            if let Some(last) = path.cells.last() {
                at = crsg_core::world::Pose::at(
                    world.occupancy().center_of(*last)[0],
                    world.occupancy().center_of(*last)[1],
                );
            }
        }
        false
    })
}

fn mdp_termination() -> Outcome {
    let h = Harness::offline();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut over_budget, mut full_present, mut full_success, mut disagree) = (0, 0, 0, 0);
    for e in 0..1000 {
        let n_rooms = rng.gen_range(1..=2);
        let params = GenParams {
            n_rooms,
            n_carriers: rng.gen_range(2..=4.min(n_rooms * 4)),
            n_items: rng.gen_range(3..=6),
            n_distractors: rng.gen_range(0..=2),
            sequence_length: 1,
            displacement_count: rng.gen_range(0..=1),
            ..GenParams::default()
        };
        let s = generate_scenario(1300, e, &params).expect("scenario");
        let full = e % 2 == 0;
        let sensor = if full { SensorConfig::omniscient() } else { SensorConfig::default() };
        let (mut world, mut crsg) = world_and_graph(&s, sensor);
        let task = &s.scenario.tasks[0];
        for ev in &task.events {
            world.apply_displacement(ev).expect("event applies");
        }
        if rng.gen_bool(0.3) {
            let n = rng.gen_range(1..=3);
            random_displacements(&mut world, &mut rng, n);
        }
        let variant = *Variant::ALL.choose(&mut rng).expect("variants");
        let policy = variant.policy(&h.policy);
        let ctx = TaskContext {
            prior: h.prior,
            encoder: h.encoder,
            policy: &policy,
            matching: &h.matching,
            update: variant.updates(),
        };
        let cr0 = crsg.carriers.len();
        let oracle = exhaustive_finds(&world, &task.target_id);
        let mut prng = ChaCha8Rng::seed_from_u64(e as u64);
        let ep = run_task(&mut world, &mut crsg, &task.query, &task.target_id, &ctx, &mut prng);
        if ep.actions.len() > cr0 + 1 {
            over_budget += 1;
        }
        if full {
            if oracle {
                full_present += 1;
                full_success += usize::from(ep.success);
            }
            disagree += usize::from(oracle != ep.success);
        }
    }
    let pass = over_budget == 0 && full_success == full_present && disagree == 0;
    Outcome::new(
        pass,
        format!(
            "{over_budget} episodes over |CR0|+1 actions; full sensing: {full_success}/{full_present} present targets found, {disagree} oracle disagreements"
        ),
    )
}

fn reports(scenarios: &[LoadedScenario], variants: &[Variant]) -> Vec<SuiteReport> {
    run_suite(scenarios, variants, &Harness::offline(), &SuiteOptions::default())
}

fn errors(reports: &[SuiteReport]) -> usize {
    reports
        .iter()
        .flat_map(|r| &r.sequences)
        .map(|s| usize::from(s.error.is_some()) + s.episodes.iter().filter(|e| e.error.is_some()).count())
        .sum()
}

fn ablation_ordering() -> Outcome {
    let params = GenParams {
        sequence_length: 1,
        displacement_count: 1,
        ..GenParams::default()
    };
    let scenarios = generate_scenarios(1400, &params, 100).expect("scenarios");
    let r = reports(&scenarios, &[Variant::Ours, Variant::OnlyCarriersLlm, Variant::OnlyCarriersRandom]);
    let (a, b, c) = (r[0].mean_spl, r[1].mean_spl, r[2].mean_spl);
    let bad = errors(&r);
    Outcome::new(
        a - b > 0.02 && b - c > 0.02 && bad == 0,
        format!("100 episodes: ours {a:.3} > only-carriers_LLM {b:.3} > only-carriers_Random {c:.3}, {bad} errors"),
    )
}

fn update_effect() -> Outcome {
    let scenarios = generate_scenarios(1500, &GenParams::default(), 1500).expect("scenarios");
    let r = reports(&scenarios, &[Variant::Ours, Variant::NoUpdate]);
    let gap = |r: &SuiteReport| r.spl_over(1..5) - r.spl_at(0);
    let (with, without) = (gap(&r[0]), gap(&r[1]));
    let bad = errors(&r);
    Outcome::new(
        with >= 0.1 && without < 0.02 && bad == 0,
        format!(
            "1500 sequences: tasks 2-5 minus task 1 SPL = {with:+.3} with updates ({:.3} vs {:.3}), {without:+.3} without ({:.3} vs {:.3}), {bad} errors",
            r[0].spl_over(1..5),
            r[0].spl_at(0),
            r[1].spl_over(1..5),
            r[1].spl_at(0)
        ),
    )
}

fn convergence() -> Outcome {
    let matching = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut equal = 0;
    for i in 0..100 {
        let s = generate_scenario(1600, i, &GenParams::default()).expect("scenario");
        let (mut world, mut crsg) = world_and_graph(&s, SensorConfig::default());
        let n = rng.gen_range(1..=8);
        random_displacements(&mut world, &mut rng, n);
        let config = world.config.clone();
        update_from_samples(&mut crsg, &[world.look()], &matching, &config).expect("update");
        let tour: Vec<ObjectId> = world.carriers.iter().cloned().collect();
        for c in &tour {
            let at = world.object(c).expect("carrier").xy();
            let traj = world.go_to(at).expect("reachable");
            update_from_samples(&mut crsg, &traj.samples, &matching, &config).expect("update");
        }
        equal += usize::from(crsg.carried_relation() == world.ground_truth_carried());
    }
    Outcome::new(equal == 100, format!("{equal}/100 worlds match ground truth after the tour"))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_crsg");
    let dir = tempfile::tempdir().expect("tempdir");
    let run = |args: &[&str]| Command::new(bin).args(args).output().expect("binary runs");
    let scen = dir.path().join("scenarios");
    let scen = scen.to_str().expect("utf-8 path");
    let gen = run(&["gen-scenarios", "--seed", "17", "--count", "12", "--out", scen, "--sequence-length", "3", "--displacement-count", "2"]);
    if !gen.status.success() {
        return Outcome::new(false, format!("gen-scenarios failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    let variants = Variant::ALL.map(Variant::label).join(",");
    let mut outputs = Vec::new();
    for (name, workers) in [("a", None), ("b", None), ("one", Some("1")), ("four", Some("4"))] {
        let out = dir.path().join(format!("{name}.jsonl"));
        let out_s = out.to_str().expect("utf-8 path");
        let mut args = vec!["run-suite", scen, "--variants", &variants, "--seed", "3", "--out", out_s];
        if let Some(w) = workers {
            args.extend(["--workers", w]);
        }
        let o = run(&args);
        if !o.status.success() {
            return Outcome::new(false, format!("run-suite failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        outputs.push(std::fs::read(&out).expect("results file"));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(
        same && !outputs[0].is_empty(),
        format!("4 runs ({} bytes each), repeated and 1 vs 4 workers identical: {same}", outputs[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("formula fidelity", formula_fidelity, Duration::from_secs(1)),
        ("SPL fidelity", spl_fidelity, Duration::from_secs(1)),
        ("graph construction oracle", crsg_oracle, Duration::from_secs(10)),
        ("query property", query_property, Duration::from_secs(60)),
        ("policy termination", mdp_termination, Duration::from_secs(120)),
        ("ablation ordering", ablation_ordering, Duration::from_secs(120)),
        ("update-effect trend", update_effect, Duration::from_secs(300)),
        ("graph convergence", convergence, Duration::from_secs(120)),
        ("determinism", determinism, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let clock = Instant::now();
        let mut out = check();
        let took = clock.elapsed();
        if took > budget {
            out.pass = false;
            out.detail += &format!("; over the {}s budget", budget.as_secs());
        }
        failed += usize::from(!out.pass);
        println!("[{}] {name}: {} ({:.2}s)", if out.pass { "PASS" } else { "FAIL" }, out.detail, took.as_secs_f64());
    }
    println!("acceptance: {}/9 criteria pass", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
