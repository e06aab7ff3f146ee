use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crsg_bench::scenario::{generate_scenarios, load_dir, load_scenario, write_scenarios, GenParams};
use crsg_bench::suite::{results_jsonl, run_sequence_seeded, run_suite, summary_table, Harness, SuiteOptions, Variant};
use crsg_bench::BenchError;
use crsg_core::graph::{build_crsg, CrsgConfig};
use crsg_core::query::{query_target, TargetQuery};
use crsg_core::scene::load_scene;

#[derive(Parser)]
#[command(name = "crsg", version, about = "Carrier-graph navigation benchmark")]
struct Cli {
    /// Use the language-model prior configured through CRSG_LLM_* variables.
    #[arg(long, global = true)]
    llm: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scene graph and print a summary or a JSON dump.
    BuildGraph {
        scene: PathBuf,
        #[arg(long)]
        dump: bool,
    },
    /// Resolve a text or image query against a scene.
    Query {
        scene: PathBuf,
        text: Option<String>,
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        carrier: Option<String>,
    },
    /// Run every task of one scenario file.
    RunEpisode {
        scenario: PathBuf,
        #[arg(long, default_value = "ours")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run all scenarios in a directory under several variants.
    RunSuite(SuiteArgs),
    /// Write generated scene and scenario files.
    GenScenarios(GenArgs),
}

#[derive(Args)]
struct SuiteArgs {
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "ours,only-carriers_LLM,only-carriers_Random")]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    n_rooms: Option<usize>,
    #[arg(long)]
    n_carriers: Option<usize>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    n_distractors: Option<usize>,
    #[arg(long)]
    sequence_length: Option<usize>,
    #[arg(long)]
    displacement_count: Option<usize>,
}

fn harness(llm: bool) -> Result<Harness<'static>, BenchError> {
    let h = Harness::offline();
    if !llm {
        return Ok(h);
    }
    #[cfg(feature = "llm-http")]
    {
        let prior = crsg_bench::llm::LlmPrior::from_env()?
            .ok_or_else(|| BenchError::Invalid(format!("--llm needs {}", crsg_bench::llm::ENV_ENDPOINT)))?;
        Ok(Harness {
            prior: Box::leak(Box::new(prior)),
            ..h
        })
    }
    #[cfg(not(feature = "llm-http"))]
    Err(BenchError::Invalid("built without the llm-http feature".into()))
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let h = harness(cli.llm)?;
    match cli.command {
        Command::BuildGraph { scene, dump } => {
            let scene = load_scene(&scene)?;
            let g = build_crsg(&scene, &CrsgConfig::default(), h.prior, h.encoder)?;
            if dump {
                println!("{}", serde_json::to_string_pretty(&g.dump()).map_err(|e| BenchError::Invalid(e.to_string()))?);
            } else {
                let carried: usize = g.carriers.values().map(|c| c.carried.len()).sum();
                println!(
                    "{}: {} rooms, {} carriers, {} carried, {} orphans",
                    scene.name,
                    g.rooms.len(),
                    g.carriers.len(),
                    carried,
                    g.orphans.len()
                );
                for (cid, node) in &g.carriers {
                    let items: Vec<&str> = node.carried.keys().map(|k| k.as_str()).collect();
                    println!("  {cid}: [{}]", items.join(", "));
                }
            }
        }
        Command::Query {
            scene,
            text,
            image,
            carrier,
        } => {
            let scene = load_scene(&scene)?;
            let mut q = match (text, image) {
                (_, Some(img)) => TargetQuery::image(img),
                (Some(t), None) => TargetQuery::text(t),
                (None, None) => return Err(BenchError::Invalid("give a query text or --image".into())),
            };
            if let Some(c) = carrier {
                q = q.on_carrier(c);
            }
            let g = build_crsg(&scene, &CrsgConfig::default(), h.prior, h.encoder)?;
            let hit = query_target(&g, &q, h.encoder)?;
            let out = serde_json::json!({
                "object": hit.object.id,
                "score": hit.score,
                "placement": hit.placement,
                "centroid": hit.object.centroid,
            });
            println!("{out}");
        }
        Command::RunEpisode { scenario, variant, seed } => {
            let s = load_scenario(&scenario)?;
            let r = run_sequence_seeded(&s, variant, &h, seed);
            if let Some(e) = &r.error {
                return Err(BenchError::Core(crsg_core::Error::Validation(e.clone())));
            }
            for e in &r.episodes {
                println!(
                    "task {} success={} traveled={:.3} shortest={}",
                    e.task_index,
                    e.success,
                    e.traveled,
                    e.shortest.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into())
                );
                for line in e.trace_lines() {
                    println!("  {line}");
                }
            }
        }
        Command::RunSuite(args) => {
            let scenarios = load_dir(&args.dir)?;
            if scenarios.is_empty() {
                return Err(BenchError::Invalid(format!("no scenario files in {}", args.dir.display())));
            }
            let options = SuiteOptions {
                workers: args.workers,
                seed: args.seed,
            };
            let reports = run_suite(&scenarios, &args.variants, &h, &options);
            fs::write(&args.out, results_jsonl(&reports)).map_err(|e| BenchError::Io(args.out.display().to_string(), e))?;
            print!("{}", summary_table(&reports));
        }
        Command::GenScenarios(args) => {
            let mut params = match &args.params {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| BenchError::Io(p.display().to_string(), e))?;
                    serde_json::from_str(&text).map_err(|e| BenchError::Invalid(format!("{}: {e}", p.display())))?
                }
                None => GenParams::default(),
            };
            let overrides = [
                (args.n_rooms, &mut params.n_rooms),
                (args.n_carriers, &mut params.n_carriers),
                (args.n_items, &mut params.n_items),
                (args.n_distractors, &mut params.n_distractors),
                (args.sequence_length, &mut params.sequence_length),
                (args.displacement_count, &mut params.displacement_count),
            ];
            for (value, slot) in overrides {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            let scenarios = generate_scenarios(args.seed, &params, args.count)?;
            let written = write_scenarios(&args.out, &scenarios)?;
            println!("wrote {} scenarios to {}", written.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
