//! `dnn`: experiment runner for distributed nearest-neighbor classification.
//!
//! Every subcommand writes into a fresh timestamped directory under `--out`
//! together with a `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dnn_core::experiment::{
    emit_constants, read_risk_csv, read_speedup_csv, resolve_oracle, run_experiment_with,
    table1, write_outputs, ExperimentConfig, RISK_FILE, SPEEDUP_FILE, TUNING_FILE,
};
use dnn_core::simgen::simulation_spec;
use dnn_core::{Dataset, SeededRng};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dnn", version, about = "Distributed weighted nearest-neighbor experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Parent directory for the timestamped output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full grid of methods × γ and write the result tables.
    Run(ConfigArgs),
    /// Cross-validate the oracle parameters the config leaves open.
    Tune(ConfigArgs),
    /// Draw a sample from a simulation design and write it as CSV.
    Simulate(SimulateArgs),
    /// Write the table of dimension constants.
    Constants(ConstantsArgs),
    /// Summarize a finished run as a markdown table.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation design: 1, 2 or 3.
    #[arg(long, default_value_t = 1)]
    simulation: u8,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long, default_value_t = 1)]
    d_min: usize,
    #[arg(long, default_value_t = 30)]
    d_max: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `dnn run`.
    run_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when the command ran but some grid cells failed.
fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Run(args) => cmd_run(&cli, args),
        Command::Tune(args) => cmd_tune(&cli, args).map(|()| true),
        Command::Simulate(args) => cmd_simulate(&cli, args).map(|()| true),
        Command::Constants(args) => cmd_constants(&cli, args).map(|()| true),
        Command::Report(args) => cmd_report(&cli, args).map(|()| true),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Creates `<base>/<command>-<UTC timestamp>`, adding a counter if taken.
fn output_dir(cli: &Cli, fallback: Option<&Path>, command: &str) -> Result<PathBuf> {
    let base = cli
        .out
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let mut dir = base.join(format!("{command}-{stamp}"));
    let mut i = 1;
    while dir.exists() {
        dir = base.join(format!("{command}-{stamp}-{i}"));
        i += 1;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn cmd_run(cli: &Cli, args: &ConfigArgs) -> Result<bool> {
    let config = load_config(args)?;
    let source = config.data_source()?;
    let dir = output_dir(cli, config.out_dir.as_deref(), "run")?;
    log::info!("writing to {}", dir.display());
    let outcome = run_experiment_with(&config, &source)?;
    write_outputs(&outcome, &dir)?;
    let speed = read_speedup_csv(&dir.join(SPEEDUP_FILE))?;
    let risk = read_risk_csv(&dir.join(RISK_FILE))?;
    println!("{}", table1(&risk, &speed));
    println!("results in {}", dir.display());
    for f in &outcome.failures {
        eprintln!("cell {} γ={} failed: {}", f.method, f.gamma, f.error);
    }
    Ok(outcome.all_succeeded())
}

fn cmd_tune(cli: &Cli, args: &ConfigArgs) -> Result<()> {
    let config = load_config(args)?;
    let source = config.data_source()?;
    let dir = output_dir(cli, config.out_dir.as_deref(), "tune")?;
    let mut forced = config.clone();
    forced.tune_k = forced.oracle_k.is_none();
    let (oracle, tuning) = resolve_oracle(&forced, &source, &SeededRng::new(forced.seed, 0))?;
    let mut w = csv_writer(&dir.join(TUNING_FILE))?;
    w.write_record(["family", "value", "cv_risk", "cv_se", "selected"])?;
    for t in &tuning {
        for (i, v) in t.grid.iter().enumerate() {
            w.write_record([
                format!("{:?}", t.family).to_lowercase(),
                v.to_string(),
                t.cv_risk[i].to_string(),
                t.cv_stderr[i].to_string(),
                (*v == t.selected).to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_manifest(
        &dir,
        json!({
            "command": "tune",
            "package_version": env!("CARGO_PKG_VERSION"),
            "seed": forced.seed,
            "config": forced,
            "oracle": oracle,
        }),
    )?;
    println!(
        "K = {}, OWNN m = {}, BNN q = {}",
        oracle.k,
        oracle.ownn_m.map_or("-".into(), |m| m.to_string()),
        oracle.bnn_q.map_or("-".into(), |q| q.to_string())
    );
    println!("results in {}", dir.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let spec = simulation_spec(args.simulation, args.dim)?;
    let data: Dataset = spec.sample(args.n, &mut SeededRng::new(args.seed, 0))?;
    let dir = output_dir(cli, None, "simulate")?;
    let mut w = csv_writer(&dir.join("sample.csv"))?;
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in data.rows().zip(data.labels()) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_manifest(
        &dir,
        json!({
            "command": "simulate",
            "package_version": env!("CARGO_PKG_VERSION"),
            "seed": args.seed,
            "simulation": args.simulation,
            "dim": args.dim,
            "n": args.n,
            "spec": spec,
        }),
    )?;
    println!("results in {}", dir.display());
    Ok(())
}

fn cmd_constants(cli: &Cli, args: &ConstantsArgs) -> Result<()> {
    if args.d_min == 0 || args.d_min > args.d_max {
        bail!("need 1 <= d-min <= d-max");
    }
    let dir = output_dir(cli, None, "constants")?;
    emit_constants(args.d_min..=args.d_max, &dir.join("constants.csv"))?;
    write_manifest(
        &dir,
        json!({
            "command": "constants",
            "package_version": env!("CARGO_PKG_VERSION"),
            "d_min": args.d_min,
            "d_max": args.d_max,
        }),
    )?;
    println!("results in {}", dir.display());
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let risk = read_risk_csv(&args.run_dir.join(RISK_FILE))
        .with_context(|| format!("reading run in {}", args.run_dir.display()))?;
    let speed_path = args.run_dir.join(SPEEDUP_FILE);
    let speed = if speed_path.exists() {
        read_speedup_csv(&speed_path)?
    } else {
        Vec::new()
    };
    let table = table1(&risk, &speed);
    let dir = output_dir(cli, None, "report")?;
    fs::write(dir.join("table.md"), &table)?;
    write_manifest(
        &dir,
        json!({
            "command": "report",
            "package_version": env!("CARGO_PKG_VERSION"),
            "run_dir": args.run_dir,
        }),
    )?;
    print!("{table}");
    Ok(())
}
