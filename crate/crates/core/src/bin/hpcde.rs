use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use hpcde::checkpoint;
use hpcde::config::RunConfig;
use hpcde::data::{fingerprint, Dataset, LoadOptions};
use hpcde::hawkes::{generate_hawkes, ExpHawkesParams, GeneratorRecord};
use hpcde::metrics;
use hpcde::cde::SolverConfig;
use hpcde::train::{self, EpochRecord, StopReason};
use hpcde::{rng, Error, Result};

#[derive(Parser)]
#[command(name = "hpcde", version, about = "Neural-CDE Hawkes process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an exponential Hawkes process into train/test datasets.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint, curve and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvalArgs),
    /// Compare exact and Monte Carlo non-event integration.
    Ablate(AblateArgs),
    /// Print dataset statistics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory. Relative paths resolve under HPCDE_OUTPUT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "HPCDE_OUTPUT_ROOT", hide_env_values = true)]
    output_root: Option<PathBuf>,
}

impl OutputArgs {
    fn resolve(&self, command: &str) -> PathBuf {
        let root = self.output_root.clone().unwrap_or_else(|| PathBuf::from("."));
        match &self.out {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join(command),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Base rates, one per type.
    #[arg(long, value_delimiter = ',', required = true)]
    mu: Vec<f64>,
    /// A single self-excitation value, or a K*K row-major matrix `alpha[k][src]`.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Decay rate shared by every pair.
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    horizon: f64,
    /// Training sequences.
    #[arg(long)]
    n: usize,
    /// Test sequences; defaults to n / 5.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Training data; overrides the config file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long, env = "HPCDE_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    substeps: usize,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[arg(long, env = "HPCDE_WORKERS", default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    config: Value,
    seed: u64,
    /// Input path to SHA-256 of its contents.
    datasets: BTreeMap<String, String>,
    artifacts: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<StopReason>,
}

const MANIFEST: &str = "manifest.json";

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    fn new(command: &str, config: Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            datasets: BTreeMap::new(),
            artifacts: Vec::new(),
            started_unix: now(),
            finished_unix: 0.0,
            stop: None,
        }
    }

    fn add_dataset(&mut self, path: &Path) -> Result<()> {
        self.datasets.insert(path.display().to_string(), fingerprint(path)?);
        Ok(())
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now();
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}

fn write_artifact(dir: &Path, manifest: &mut RunManifest, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    manifest.artifacts.push(name.to_string());
    Ok(())
}

fn load_data(path: &Path, time_scale: f64) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::Data(format!("dataset {} does not exist", path.display())));
    }
    Dataset::load(
        path,
        &LoadOptions {
            time_scale: Some(time_scale),
            ..LoadOptions::default()
        },
    )
    .map_err(|e| match e {
        Error::Io(_) | Error::Json(_) => Error::Data(format!("{}: {e}", path.display())),
        other => other.context(path.display()),
    })
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let k = args.mu.len();
    let params = match args.alpha.len() {
        1 => ExpHawkesParams::self_exciting(args.mu.clone(), args.alpha[0], args.beta, args.horizon),
        n if n == k * k => ExpHawkesParams {
            mu: args.mu.clone(),
            alpha: args.alpha.chunks(k).map(<[f64]>::to_vec).collect(),
            beta_decay: vec![vec![args.beta; k]; k],
            horizon: args.horizon,
        },
        n => {
            return Err(Error::Config(format!(
                "--alpha needs 1 or {} values for {k} types, got {n}",
                k * k
            )))
        }
    };
    params.validate().map_err(|e| match e {
        Error::Data(m) => Error::Config(m),
        other => other,
    })?;
    let n_test = args.n_test.unwrap_or(args.n / 5);
    let dir = args.output.resolve("generate");
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(
        "generate",
        serde_json::json!({ "params": params, "n": args.n, "n_test": n_test }),
        args.seed,
    );
    let mut records = BTreeMap::new();
    for (name, n, stream) in [("train", args.n, 0u64), ("test", n_test, 1)] {
        let seed = rng::derive_seed(args.seed, stream);
        let all = generate_hawkes(&params, n, seed)?;
        let kept: Vec<_> = all.into_iter().filter(|s| !s.is_empty()).collect();
        let dropped = n - kept.len();
        let data = Dataset::new(k, kept)?;
        write_artifact(&dir, &mut manifest, &format!("{name}.json"), &data.to_json_string()?)?;
        records.insert(
            name,
            GeneratorRecord {
                params: params.clone(),
                seed,
                n_sequences: n,
                dropped_empty: dropped,
            },
        );
    }
    write_artifact(&dir, &mut manifest, "generator.json", &serde_json::to_string_pretty(&records)?)?;
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<ExitCode> {
    let mut run = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::from_preset(name)?,
        (None, None) => RunConfig::from_preset("synthetic")?,
    };
    if let Some(p) = &args.data {
        run.train_data = Some(p.clone());
    }
    let t = &mut run.train;
    if let Some(v) = args.max_iter {
        t.max_iter = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.substeps {
        t.substeps_per_segment = v;
    }
    if let Some(v) = args.workers {
        t.workers = v;
    }
    if let Some(v) = args.time_scale {
        run.time_scale = v;
    }
    run.train.validate()?;
    let data_path = run
        .train_data
        .clone()
        .ok_or_else(|| Error::Config("no training data: pass --data or set train_data".into()))?;
    let data = load_data(&data_path, run.time_scale)?;
    let dir = args.output.resolve("train");

    let out = train::train(&data, &run.train)?;
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(&run)?, run.train.seed);
    manifest.add_dataset(&data_path)?;
    checkpoint::save(&dir, &out.params)?;
    manifest.artifacts.push(checkpoint::WEIGHTS_FILE.into());
    manifest.artifacts.push(checkpoint::MANIFEST_FILE.into());
    let mut csv = String::from(EpochRecord::CSV_HEADER);
    csv.push('\n');
    for r in &out.curve {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_artifact(&dir, &mut manifest, "curve.csv", &csv)?;
    manifest.stop = Some(out.stop.clone());
    manifest.write(&dir)?;
    if let Some(last) = out.curve.last() {
        println!(
            "epoch {}: loss {:.6}, log-likelihood/event {:.6}",
            last.epoch, last.loss, last.log_likelihood_per_event
        );
    }
    println!("wrote {}", dir.display());
    if let StopReason::NonFinite { epoch, detail } = &out.stop {
        eprintln!("error: training stopped at epoch {epoch}: non-finite value {detail}; kept the last finite parameters");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn prepare_eval(args: &EvalArgs) -> Result<(hpcde::model::ModelParams, Dataset, SolverConfig)> {
    let params = checkpoint::load(&args.checkpoint).map_err(|e| match e {
        Error::Io(err) => Error::Data(format!("cannot read checkpoint {}: {err}", args.checkpoint.display())),
        other => other,
    })?;
    let data = load_data(&args.data, args.time_scale)?;
    let solver = SolverConfig::new(args.substeps)?;
    if args.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    Ok((params, data, solver))
}

fn evaluate_cmd(args: &EvalArgs) -> Result<()> {
    let (params, data, solver) = prepare_eval(args)?;
    let report = metrics::evaluate(&params, &data, &solver, args.workers)?;
    let dir = args.output.resolve("evaluate");
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(
        "evaluate",
        serde_json::json!({ "checkpoint": args.checkpoint, "substeps": args.substeps, "time_scale": args.time_scale }),
        0,
    );
    manifest.add_dataset(&args.data)?;
    write_artifact(&dir, &mut manifest, "metrics.json", &serde_json::to_string_pretty(&report)?)?;
    write_artifact(&dir, &mut manifest, "metrics.csv", &report.to_csv())?;
    manifest.write(&dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn ablate_cmd(args: &AblateArgs) -> Result<()> {
    let e = &args.eval;
    let (params, data, solver) = prepare_eval(e)?;
    let report = metrics::ablate_integration(&params, &data, &solver, args.samples, args.seed, e.workers)?;
    let dir = e.output.resolve("ablate");
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(
        "ablate",
        serde_json::json!({ "checkpoint": e.checkpoint, "substeps": e.substeps, "time_scale": e.time_scale, "samples": args.samples }),
        args.seed,
    );
    manifest.add_dataset(&e.data)?;
    write_artifact(&dir, &mut manifest, "ablation.json", &serde_json::to_string_pretty(&report)?)?;
    write_artifact(&dir, &mut manifest, "ablation.csv", &report.to_csv())?;
    manifest.write(&dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let data = load_data(&args.data, args.time_scale)?;
    println!("{}", data.stats());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Ablate(a) => ablate_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Inspect(a) => inspect(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
