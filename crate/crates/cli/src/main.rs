use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use gma_core::bench::{run_boed, run_experiment, run_lma_fit, BoedConfig, LmaFitConfig, RunConfig};

#[derive(Parser)]
#[command(name = "gma", version, about = "Gaussian mixture approximation samplers for unnormalized densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed. GMA_SEED is used when neither is set.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads for the parallel map regions.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampler and write its ensemble and trace.
    Sample(Common),
    /// Run a sampler against a reference and write the metrics table.
    Benchmark(Common),
    /// Fit a mixture to points in a CSV file.
    LmaFit(Common),
    /// Allocate replicates over a dose grid.
    Boed(Common),
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error, Option<PathBuf>),
}

fn load(common: &Common) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))
        .map_err(Failure::Config)?;
    let mut doc: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", common.config.display()))
        .map_err(Failure::Config)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("config must be a JSON object")))?;
    if let Some(seed) = common.seed {
        obj.insert("seed".into(), json!(seed));
    } else if obj.get("seed").is_none_or(Value::is_null) {
        if let Ok(env) = std::env::var("GMA_SEED") {
            let seed: u64 = env
                .trim()
                .parse()
                .with_context(|| format!("GMA_SEED='{env}' is not an unsigned integer"))
                .map_err(Failure::Config)?;
            obj.insert("seed".into(), json!(seed));
        }
    }
    if let Some(dir) = &common.output_dir {
        obj.insert("output_dir".into(), json!(dir));
    }
    Ok(doc)
}

fn parse<T: serde::de::DeserializeOwned>(doc: Value, what: &str) -> Result<T, Failure> {
    serde_json::from_value(doc)
        .with_context(|| format!("invalid {what} config"))
        .map_err(Failure::Config)
}

fn run(command: Command) -> Result<(), Failure> {
    let (common, kind) = match &command {
        Command::Sample(c) => (c, "sample"),
        Command::Benchmark(c) => (c, "benchmark"),
        Command::LmaFit(c) => (c, "lma-fit"),
        Command::Boed(c) => (c, "boed"),
    };
    if common.threads == 0 {
        return Err(Failure::Config(anyhow::anyhow!("--threads must be >= 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .context("starting the thread pool")
        .map_err(|e| Failure::Runtime(e, None))?;
    let doc = load(common)?;
    match kind {
        "sample" | "benchmark" => {
            let mut cfg: RunConfig = parse(doc, kind)?;
            if kind == "sample" {
                cfg.metrics = None;
            } else if cfg.metrics.is_none() {
                return Err(Failure::Config(anyhow::anyhow!(
                    "benchmark needs a \"metrics\" section with a reference"
                )));
            }
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let out = cfg.output_dir.clone();
            let summary = run_experiment(&cfg).map_err(|e| Failure::Runtime(e.into(), Some(out)))?;
            for row in &summary.metrics {
                println!("{}\t{}\t{}", row.method, row.metric, row.value);
            }
            log::info!("wrote {} artifacts to {}", summary.artifacts.len(), cfg.output_dir.display());
        }
        "lma-fit" => {
            let cfg: LmaFitConfig = parse(doc, kind)?;
            if cfg.seed.is_none() {
                return Err(Failure::Config(anyhow::anyhow!(
                    "no seed: set it in the config, pass --seed, or export GMA_SEED"
                )));
            }
            let out = cfg.output_dir.clone();
            let mix = run_lma_fit(&cfg).map_err(|e| Failure::Runtime(e.into(), Some(out)))?;
            println!("fitted {} components", mix.len());
        }
        _ => {
            let cfg: BoedConfig = parse(doc, kind)?;
            let out = cfg.output_dir.clone();
            let (_, counts) = run_boed(&cfg).map_err(|e| Failure::Runtime(e.into(), Some(out)))?;
            println!("{}", counts.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        }
    }
    Ok(())
}

fn report(kind: &str, err: &anyhow::Error, dir: Option<&Path>) {
    let record = json!({
        "status": "error",
        "kind": kind,
        "message": format!("{err:#}"),
    });
    let text = serde_json::to_string_pretty(&record).unwrap_or_default();
    eprintln!("{text}");
    if let Some(dir) = dir {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), &text);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            report("config", &e, None);
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e, dir)) => {
            report("runtime", &e, dir.as_deref());
            ExitCode::from(1)
        }
    }
}
