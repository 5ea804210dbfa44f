use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use bird_cli::server::{router, AppState, DynPipeline};
use bird_cli::AppConfig;
use bird_core::bundle::{abduce_bundle, train_bundle};
use bird_core::eval::{self, compare_ablation, render_table, EvalReport};
use bird_core::pipeline::Pipeline;
use bird_core::{
    infer, BundleCatalog, EstimatorKind, OutcomeEstimate, PartialObservation, PreferenceOverride, Scenario,
    ScenarioBundle, SessionStore,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bird", version, about = "Bayesian inference over LLM-abduced factors")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recorded completions to replay instead of calling a model.
    #[arg(long = "fixture", global = true)]
    fixtures: Vec<PathBuf>,
    /// Response cache file (JSON lines), read and appended.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and prune factors for a scenario.
    Abduce {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// List factors in one step instead of generate-then-summarize.
        #[arg(long)]
        direct: bool,
    },
    /// Elicit targets for sampled assignments and train the table.
    Train {
        bundle: PathBuf,
        /// Write the bundle with its trained table here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write only the trained table here.
        #[arg(long)]
        table_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of sampled assignments.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Estimate outcome probabilities under a condition.
    Infer(InferArgs),
    /// Score a labelled dataset.
    Evaluate {
        task: TaskArg,
        dataset: PathBuf,
        /// Bundle files or directories.
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long = "estimator")]
        estimators: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Ablation studies.
    Ablate {
        #[command(subcommand)]
        what: Ablation,
    },
    /// Run the HTTP decision service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long = "bundles")]
        bundles: Vec<PathBuf>,
        /// Session log; kept in memory when absent.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InferArgs {
    bundle: PathBuf,
    #[arg(long)]
    condition: Option<String>,
    /// Observed value as FACTOR=VALUE; wins over entailed values.
    #[arg(long = "observe", value_parser = parse_observed)]
    observe: Vec<(String, String)>,
    #[arg(long)]
    estimator: Option<String>,
    /// Replacement probability as FACTOR=VALUE:P.
    #[arg(long = "override", value_parser = parse_override)]
    overrides: Vec<(String, String, f64)>,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Ablation {
    /// Direct versus two-stage factor generation, scored on decisions.
    Factors {
        scenario: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long, default_value = "fixed")]
        estimator: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Pairwise,
    Decisions,
}

fn parse_observed(s: &str) -> Result<(String, String), String> {
    let (f, v) = s.split_once('=').ok_or_else(|| format!("expected FACTOR=VALUE, got `{s}`"))?;
    Ok((f.trim().to_string(), v.trim().to_string()))
}

fn parse_override(s: &str) -> Result<(String, String, f64), String> {
    let (fv, p) = s.rsplit_once(':').ok_or_else(|| format!("expected FACTOR=VALUE:P, got `{s}`"))?;
    let (f, v) = parse_observed(fv)?;
    let p = p.trim().parse::<f64>().map_err(|e| format!("bad probability in `{s}`: {e}"))?;
    Ok((f, v, p))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if !cli.fixtures.is_empty() {
        config.provider.fixtures = cli.fixtures.clone();
    }
    if cli.cache.is_some() {
        config.provider.cache = cli.cache.clone();
    }

    match cli.command {
        Command::Abduce { scenario, out, direct } => {
            config.pipeline.direct_generation |= direct;
            let scenario: Scenario = read_json(&scenario)?;
            let bundle = abduce_bundle(&pipeline(&config)?, &scenario)?;
            emit(&bundle.to_json_pretty()?, out.as_deref())
        }
        Command::Train { bundle, out, table_out, seed, samples } => {
            let mut training = config.training.clone();
            if let Some(seed) = seed {
                training.seed = seed;
            }
            if let Some(n) = samples {
                training.sample_count = n;
            }
            let mut loaded = ScenarioBundle::load(&bundle).with_context(|| format!("loading {}", bundle.display()))?;
            let trained = train_bundle(&pipeline(&config)?, &loaded, &training)?;
            let table_json = serde_json::to_string_pretty(&trained)?;
            loaded.provenance.train_seed = Some(training.seed);
            let loaded = loaded.with_trained(trained)?;
            if let Some(path) = &out {
                loaded.save(path)?;
            }
            if table_out.is_some() || out.is_none() {
                emit(&table_json, table_out.as_deref())?;
            }
            Ok(())
        }
        Command::Infer(args) => run_infer(&config, args),
        Command::Evaluate { task, dataset, bundles, estimators, json } => {
            let catalog = BundleCatalog::load(&bundles)?;
            let kinds = estimator_list(&catalog, &estimators)?;
            let pipeline = pipeline(&config)?;
            let reader = std::io::BufReader::new(
                std::fs::File::open(&dataset).with_context(|| format!("opening {}", dataset.display()))?,
            );
            let reports = match task {
                TaskArg::Pairwise => eval::sweep_pairwise(&eval::read_pairwise(reader)?, &catalog, &kinds, &pipeline)?,
                TaskArg::Decisions => eval::sweep_decisions(&eval::read_decisions(reader)?, &catalog, &kinds, &pipeline)?,
            };
            print_reports(&reports, json)
        }
        Command::Ablate { what: Ablation::Factors { scenario, decisions, estimator, json } } => {
            let scenario: Scenario = read_json(&scenario)?;
            let kind: EstimatorKind = estimator.parse()?;
            let records = eval::read_decisions(std::io::BufReader::new(std::fs::File::open(&decisions)?))?;
            let mut reports = Vec::new();
            for direct in [true, false] {
                let mut variant = config.clone();
                variant.pipeline.direct_generation = direct;
                let pipeline = pipeline(&variant)?;
                let mut bundle = abduce_bundle(&pipeline, &scenario)?;
                if kind == EstimatorKind::Trained {
                    let trained = train_bundle(&pipeline, &bundle, &variant.training)?;
                    bundle = bundle.with_trained(trained)?;
                }
                let mut catalog = BundleCatalog::new();
                catalog.insert(bundle);
                reports.push(eval::run_decisions(&records, &catalog, kind, &pipeline)?);
            }
            let abduction = reports.pop().expect("two reports");
            let direct = reports.pop().expect("two reports");
            let comparison = compare_ablation(direct, abduction);
            if json {
                println!("{}", serde_json::to_string_pretty(&comparison)?);
            } else {
                print!("{}", render_table(&[comparison.direct.clone(), comparison.abduction.clone()]));
                let gain = comparison.accuracy_gain.map_or_else(|| "-".to_string(), |g| format!("{:+.1} points", 100.0 * g));
                println!("accuracy gain: {gain}");
                println!("unknown-rate reduction: {:+.1} points", 100.0 * comparison.unknown_rate_reduction);
            }
            Ok(())
        }
        Command::Serve { port, host, bundles, sessions } => {
            let bundles = if bundles.is_empty() { config.server.bundles.clone() } else { bundles };
            if bundles.is_empty() {
                bail!("no bundles to serve; pass --bundles or set server.bundles");
            }
            let catalog = BundleCatalog::load(&bundles)?;
            let store = match sessions.or_else(|| config.server.sessions.clone()) {
                Some(path) => SessionStore::open(&path).with_context(|| format!("opening {}", path.display()))?,
                None => {
                    log::warn!("no session log configured; sessions are lost on exit");
                    SessionStore::in_memory()
                }
            };
            // Built before the runtime: the blocking HTTP client must not be
            // created or dropped inside async code.
            let state = Arc::new(AppState::new(catalog, store, pipeline(&config)?, config.server.followup));
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            let app = router(state.clone());
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            drop(runtime);
            drop(state);
            Ok(())
        }
    }
}

fn pipeline(config: &AppConfig) -> Result<DynPipeline> {
    Ok(Pipeline::new(config.provider()?, config.prompt_set()?, config.pipeline.clone())?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn estimator_list(catalog: &BundleCatalog, names: &[String]) -> Result<Vec<EstimatorKind>> {
    if !names.is_empty() {
        return Ok(names.iter().map(|n| n.parse()).collect::<bird_core::Result<_>>()?);
    }
    let all_trained = catalog.iter().all(|b| b.trained.is_some());
    Ok(EstimatorKind::ALL.into_iter().filter(|&k| all_trained || k != EstimatorKind::Trained).collect())
}

fn print_reports(reports: &[EvalReport], json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(reports)?);
    } else {
        print!("{}", render_table(reports));
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct InferOutput<'a> {
    scenario_id: &'a str,
    estimator: EstimatorKind,
    observation: &'a PartialObservation,
    overrides: &'a PreferenceOverride,
    estimate: &'a OutcomeEstimate,
}

fn run_infer(config: &AppConfig, args: InferArgs) -> Result<()> {
    let bundle = ScenarioBundle::load(&args.bundle).with_context(|| format!("loading {}", args.bundle.display()))?;
    let kind = match &args.estimator {
        Some(name) => name.parse()?,
        None if bundle.trained.is_some() => EstimatorKind::Trained,
        None => EstimatorKind::FixedInit,
    };
    let mut observation = match args.condition.as_deref().filter(|c| !c.trim().is_empty()) {
        Some(text) => pipeline(config)?.entail(&bundle.space, text)?,
        None => PartialObservation::new(),
    };
    for (f, v) in &args.observe {
        observation.insert(f, v);
    }
    let mut overrides = PreferenceOverride::new();
    for (f, v, p) in &args.overrides {
        overrides.set(f, v, *p);
    }
    let table = bundle.table_for(kind)?;
    overrides.validate(&bundle.space, table.delta())?;
    let estimate = infer(&bundle.space, &table, &observation, kind, Some(&overrides))?;

    if args.json {
        let out = InferOutput {
            scenario_id: bundle.scenario_id(),
            estimator: kind,
            observation: &observation,
            overrides: &overrides,
            estimate: &estimate,
        };
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        print!("{}", describe(&bundle, kind, &observation, &estimate));
    }
    Ok(())
}

fn describe(bundle: &ScenarioBundle, kind: EstimatorKind, obs: &PartialObservation, est: &OutcomeEstimate) -> String {
    let scenario = bundle.scenario();
    let observed: Vec<String> = obs.iter().map(|(f, v)| format!("{f}={v}")).collect();
    let verdict = serde_json::to_value(est.verdict).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(out, "scenario    {}", scenario.text);
    let _ = writeln!(out, "observed    {}", if observed.is_empty() { "(nothing)".to_string() } else { observed.join(" ") });
    let _ = writeln!(out, "estimator   {kind}");
    let _ = writeln!(out, "verdict     {verdict}");
    let _ = writeln!(out, "outcome1    {:.6}  {}", est.p_outcome1, scenario.outcome1);
    let _ = writeln!(out, "outcome2    {:.6}  {}", est.p_outcome2, scenario.outcome2);
    let _ = writeln!(out, "contributions (weight, P(outcome1 | values)):");
    for c in &est.contributions {
        let _ = writeln!(out, "  {:<24} {:.6}  {:.6}", c.values.join(" "), c.weight, c.p_outcome1);
    }
    out
}
