use std::collections::BTreeSet;
use std::error::Error;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use hazard_sim::{
    fit_models, load_dataset_csv, run_vote_sweep, split_trace, export_results, ScenarioSpec, Segmentation, SimMetrics,
};
use iip_core::clock::SystemClock;
use iip_core::directory::DeviceDirectory;
use iip_core::engine::{Change, EngineConfig, PolicyEngine};
use iip_core::expr::FunctionRegistry;
use iip_core::lint::{has_errors, validate_policy};
use iip_core::store::{read_bundle, PolicyStore, StoreError};
use iip_plane::{http, InProcessBroker, MqttPubSub, PlaneService, PubSub};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "mgmt", version, about = "Identity-independent policy management plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Policy bundle: a JSON policy or array of policies.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Device records: a JSON file or a directory of them.
    #[arg(long)]
    devices: Option<PathBuf>,
    /// Persistent policy store file; created if missing.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Deny changes no policy applies to.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the admin API and the change consumer.
    Serve {
        #[command(flatten)]
        inputs: Inputs,
        /// Broker to consume changes from, e.g. mqtt://localhost:1883. Without it an in-process broker is used.
        #[arg(long)]
        mqtt_url: Option<String>,
        #[arg(long, default_value_t = 8080)]
        http_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Evaluate one change and print its effect.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        /// JSON change.
        #[arg(long)]
        change: PathBuf,
    },
    /// Validate policies and add them to a store file.
    AddPolicy {
        #[arg(long)]
        store: PathBuf,
        files: Vec<PathBuf>,
    },
    /// List the policies in a store file.
    ListPolicies {
        #[arg(long)]
        store: PathBuf,
    },
    /// Remove a policy from a store file.
    RemovePolicy {
        #[arg(long)]
        store: PathBuf,
        id: String,
    },
    /// Check policy bundles without loading them anywhere.
    Validate { files: Vec<PathBuf> },
    /// Run k-vote hazard detection simulations.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON (sensors, train and test schedules). Defaults to the 1σ-overlap preset.
    #[arg(long, conflicts_with = "dataset")]
    spec: Option<PathBuf>,
    /// Recorded data: timestamp, one column per sensor, label.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Fraction of each label run used to fit models when reading a dataset.
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Split dataset hazard runs into episodes of at most this many readings.
    #[arg(long)]
    max_episode_len: Option<usize>,
    /// Vote thresholds to compare.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,8")]
    policies: Vec<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for summary.csv and curves.csv.
    #[arg(long, default_value = "simulation")]
    out: PathBuf,
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("MGMT_LOG_LEVEL").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn open_store(path: Option<&Path>) -> Res<PolicyStore> {
    let functions = FunctionRegistry::default();
    let clock = Arc::new(SystemClock);
    Ok(match path {
        Some(p) => PolicyStore::open(p, functions, clock)?,
        None => PolicyStore::new(functions, clock),
    })
}

fn load_policies(store: &PolicyStore, bundle: &Path) -> Res<()> {
    for spec in read_bundle(bundle)? {
        let id = spec.id.clone();
        match store.add(spec) {
            Ok(warnings) => {
                for w in warnings {
                    tracing::warn!(policy = %id, "{w}");
                }
            }
            Err(StoreError::DuplicateId(_)) => tracing::info!(policy = %id, "already in the store"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn build_engine(inputs: &Inputs) -> Res<Arc<PolicyEngine>> {
    let store = open_store(inputs.store.as_deref())?;
    if let Some(bundle) = &inputs.policies {
        load_policies(&store, bundle)?;
    }
    let directory = DeviceDirectory::new(Arc::new(SystemClock));
    if let Some(devices) = &inputs.devices {
        let n = directory.load_path(devices)?;
        tracing::info!("loaded {n} device records");
    }
    tracing::info!("loaded {} policies", store.len());
    let config = EngineConfig {
        strict: inputs.strict,
        ..EngineConfig::default()
    };
    Ok(Arc::new(PolicyEngine::new(Arc::new(store), Arc::new(directory)).with_config(config)))
}

async fn consume<P: PubSub>(engine: Arc<PolicyEngine>, bus: P) -> Res<()> {
    let service = Arc::new(PlaneService::new(engine, bus));
    let sub = service.subscribe().await?;
    tokio::spawn(service.run(sub));
    Ok(())
}

async fn serve(inputs: Inputs, mqtt_url: Option<String>, bind: String, port: u16) -> Res<()> {
    let engine = build_engine(&inputs)?;
    match mqtt_url {
        Some(url) => {
            let (bus, _eventloop) = MqttPubSub::connect(&url, 1024)?;
            consume(engine.clone(), bus).await?;
            tracing::info!("consuming changes from {url}");
        }
        None => consume(engine.clone(), InProcessBroker::default()).await?,
    }
    let addr: SocketAddr = format!("{bind}:{port}").parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("admin API listening on http://{addr}");
    axum::serve(listener, http::router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn print_sim(results: &[SimMetrics]) {
    println!("{:>3} {:>14} {:>10} {:>10} {:>15}", "k", "detection_rate", "latency", "accuracy", "false_positives");
    for m in results {
        println!(
            "{:>3} {:>14.4} {:>10.3} {:>10} {:>15}",
            m.k,
            m.detection_rate,
            m.mean_detection_latency,
            format!("{}/{}", m.accuracy, m.segments),
            m.false_positives
        );
    }
}

fn simulate(args: SimulateArgs) -> Res<()> {
    let (train, test) = match &args.dataset {
        Some(path) => {
            let seg = Segmentation {
                max_episode_len: args.max_episode_len,
                ..Segmentation::default()
            };
            split_trace(&load_dataset_csv(path, &seg)?, args.train_fraction)?
        }
        None => {
            let spec = match &args.spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => ScenarioSpec::overlap_1sigma(),
            };
            spec.traces(args.seed)?
        }
    };
    let models = fit_models(&train)?;
    let ks: Vec<usize> = args.policies.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let results = run_vote_sweep(&models, &test, &ks)?;
    print_sim(&results);
    let (summary, curves) = export_results(&results, &args.out)?;
    println!("wrote {} and {}", summary.display(), curves.display());
    Ok(())
}

fn run(cli: Cli) -> Res<ExitCode> {
    match cli.command {
        Command::Serve {
            inputs,
            mqtt_url,
            http_port,
            bind,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(inputs, mqtt_url, bind, http_port))?;
        }
        Command::Evaluate { inputs, change } => {
            let engine = build_engine(&inputs)?;
            let change: Change = serde_json::from_str(&std::fs::read_to_string(&change)?)?;
            let effect = engine.evaluate_change(&change)?;
            println!("{}", serde_json::to_string_pretty(&effect)?);
        }
        Command::AddPolicy { store, files } => {
            let store = open_store(Some(&store))?;
            for f in files {
                load_policies(&store, &f)?;
            }
            println!("{} policies in store", store.len());
        }
        Command::ListPolicies { store } => {
            let store = open_store(Some(&store))?;
            for p in store.snapshot().policies() {
                println!("{}\t{}\t{}\t{}", p.id(), p.spec.priority, p.spec.response, p.spec.description);
            }
        }
        Command::RemovePolicy { store, id } => {
            let store = open_store(Some(&store))?;
            if store.remove(&id)?.is_none() {
                eprintln!("no policy `{id}`");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Validate { files } => {
            let functions = FunctionRegistry::default();
            let now = chrono::Utc::now();
            let mut failed = false;
            let mut ids = BTreeSet::new();
            for f in files {
                for spec in read_bundle(&f)? {
                    if !ids.insert(spec.id.clone()) {
                        println!("{}: {}: error: duplicate policy id", f.display(), spec.id);
                        failed = true;
                    }
                    let diags = validate_policy(&spec, &functions, now);
                    failed |= has_errors(&diags);
                    for d in diags {
                        println!("{}: {}: {d}", f.display(), spec.id);
                    }
                }
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
            println!("ok");
        }
        Command::Simulate(args) => simulate(args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
