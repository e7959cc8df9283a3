use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use deepfactor::data::{
    load_panel, load_series, simulate_market, split, write_panel, write_series, DataPaths, KeyValueConfig,
    LoadOptions, PanelDataset, ReturnSeries, SimConfig, TRUTH_FILE,
};
use deepfactor::pipeline::{build_report, load_run, run_pipeline, write_run, ReportInputs, RunConfig, REPORT_DIR};
use deepfactor::report::{render_report, Report};
use deepfactor::training::{gradient_check_full, shrink_dataset, Benchmark, CellSpec, GradCheckStatus, Prepared, TrainConfig};

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_LIMIT: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "deepfactor", version, about = "Deep factor models trained on pricing errors")]
struct Cli {
    /// Worker threads for grid training and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market with planted factors.
    Simulate(SimulateArgs),
    /// Select, refit and test the benchmark, deep and conditional models.
    Train(TrainArgs),
    /// Rebuild the report from saved checkpoints.
    Evaluate(EvaluateArgs),
    /// Price held-out portfolios with saved models.
    Dissect(DissectArgs),
    /// Compare analytic and finite-difference gradients of the full stack.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Flat key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    firms: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    true_factors: Option<usize>,
    /// Also write holdout.csv with portfolios sorted on unused characteristics.
    #[arg(long)]
    holdout: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding firms.csv, macro.csv, factors.csv and portfolios.csv.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Anomaly return file for the significance table.
    #[arg(long)]
    anomalies: Option<PathBuf>,
    /// Held-out portfolio files for the dissection table.
    #[arg(long = "holdout")]
    holdouts: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// capm, ff3 or ff4.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden layer counts, e.g. 1-3 or 1,2.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    conditions: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_months: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory written by `train`.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    /// Report directory (default: <run>/report).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DissectArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    run: PathBuf,
    /// Held-out portfolio files.
    #[arg(long = "holdout", required = true)]
    holdouts: Vec<PathBuf>,
    /// Where table_dissect.csv goes (default: <run>/report).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Data directory; a small simulated market when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    factors: usize,
    #[arg(long, default_value_t = 1)]
    conditions: usize,
    #[arg(long, default_value_t = 12)]
    months: usize,
    #[arg(long, default_value_t = 8)]
    firms: usize,
    #[arg(long, default_value_t = 3)]
    portfolios: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "capm")]
    benchmark: Benchmark,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<KeyValueConfig> {
    Ok(match path {
        Some(p) => KeyValueConfig::load(p)?,
        None => KeyValueConfig::default(),
    })
}

fn override_kv<T: ToString>(kv: &mut KeyValueConfig, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        kv.set(key, v.to_string());
    }
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let mut kv = load_config(args.config.as_deref())?;
    override_kv(&mut kv, "firms", &args.firms);
    override_kv(&mut kv, "months", &args.months);
    override_kv(&mut kv, "seed", &args.seed);
    override_kv(&mut kv, "noise", &args.noise);
    override_kv(&mut kv, "true_factors", &args.true_factors);
    let config = SimConfig::from_kv(&kv)?;
    let sim = simulate_market(&config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_panel(&sim.dataset, &DataPaths::in_dir(&args.out))?;
    write_series(args.out.join(TRUTH_FILE), &sim.truth.factor_returns)?;
    if args.holdout {
        write_series(args.out.join("holdout.csv"), &sim.truth.holdout)?;
    }
    println!(
        "simulated {} months, {} firms, {} portfolios into {}",
        sim.dataset.num_months(),
        config.firms,
        sim.dataset.num_portfolios(),
        args.out.display()
    );
    Ok(())
}

fn load_data(dir: &Path) -> anyhow::Result<PanelDataset> {
    Ok(load_panel(&DataPaths::in_dir(dir), LoadOptions::default())?)
}

fn read_series(path: &Path) -> anyhow::Result<ReturnSeries> {
    let (series, filled) = load_series(path, false)?;
    if !filled.is_empty() {
        bail!("{}: {} missing values", path.display(), filled.len());
    }
    Ok(series)
}

fn set_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn report_inputs(args: &DataArgs) -> anyhow::Result<ReportInputs> {
    Ok(ReportInputs {
        anomalies: args.anomalies.as_deref().map(read_series).transpose()?,
        holdouts: args
            .holdouts
            .iter()
            .map(|p| Ok((set_name(p), read_series(p)?)))
            .collect::<anyhow::Result<_>>()?,
    })
}

fn print_oos(report: &Report) {
    for r in &report.oos {
        println!("{:<14} ins R2 {:>8.4} vld R2 {:>8.4} test R2 {:>8.4}", r.model, r.ins_r2, r.vld_r2, r.test_r2);
    }
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut kv = load_config(args.config.as_deref())?;
    override_kv(&mut kv, "benchmark", &args.benchmark);
    override_kv(&mut kv, "epochs", &args.epochs);
    override_kv(&mut kv, "layers", &args.layers);
    override_kv(&mut kv, "factors", &args.factors);
    override_kv(&mut kv, "conditions", &args.conditions);
    override_kv(&mut kv, "seeds", &args.seeds);
    override_kv(&mut kv, "seed", &args.seed);
    override_kv(&mut kv, "learning_rate", &args.learning_rate);
    override_kv(&mut kv, "batch_months", &args.batch_months);
    let config = RunConfig::from_kv(&kv)?;
    let inputs = report_inputs(&args.data)?;
    let dataset = load_data(&args.data.data)?;
    let prep = Prepared::new(&dataset)?;
    let sp = split(&dataset.dates, &config.split)?;
    let run = run_pipeline(&prep, &sp, &config)?;
    let report = build_report(&prep, &sp, &run.models, &inputs)?;
    write_run(&args.out, &run, &report)?;
    print_oos(&report);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let (manifest, models) = load_run(&args.run)?;
    let inputs = report_inputs(&args.data)?;
    let dataset = load_data(&args.data.data)?;
    let prep = Prepared::new(&dataset)?;
    let sp = split(&dataset.dates, &manifest.config.split)?;
    let report = build_report(&prep, &sp, &models, &inputs)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join(REPORT_DIR));
    render_report(&report, &out)?;
    print_oos(&report);
    Ok(())
}

fn dissect(args: &DissectArgs) -> anyhow::Result<()> {
    let (manifest, models) = load_run(&args.run)?;
    let inputs = ReportInputs {
        anomalies: None,
        holdouts: args
            .holdouts
            .iter()
            .map(|p| Ok((set_name(p), read_series(p)?)))
            .collect::<anyhow::Result<_>>()?,
    };
    let dataset = load_data(&args.data)?;
    let prep = Prepared::new(&dataset)?;
    let sp = split(&dataset.dates, &manifest.config.split)?;
    let mut report = build_report(&prep, &sp, &models, &inputs)?;
    report.oos.clear();
    report.curves.clear();
    report.references.clear();
    let out = args.out.clone().unwrap_or_else(|| args.run.join(REPORT_DIR));
    render_report(&report, &out)?;
    for r in &report.dissect {
        println!("{:<12} {:<14} vld R2 {:>8.4} test R2 {:>8.4}", r.set, r.model, r.vld_r2, r.test_r2);
    }
    Ok(())
}

/// Exit status 3 when the check fails.
fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let full = match &args.data {
        Some(dir) => load_data(dir)?,
        None => {
            simulate_market(&SimConfig {
                firms: 30.max(args.firms),
                months: args.months,
                missing: 0.0,
                seed: args.seed,
                ..SimConfig::default()
            })?
            .dataset
        }
    };
    let dataset = shrink_dataset(&full, args.months, args.firms, args.portfolios)?;
    let prep = Prepared::new(&dataset)?;
    let cell = CellSpec {
        layers: args.layers,
        factors: args.factors,
        conditions: args.conditions,
    };
    let config = TrainConfig {
        p_keep: 1.0,
        ..TrainConfig::default()
    };
    let g = gradient_check_full(&prep, cell, args.benchmark, &config, args.seed)?;
    match (g.status, g.max_relative_error) {
        (GradCheckStatus::Checked, Some(e)) => {
            let ok = e <= GRADCHECK_LIMIT;
            println!(
                "{cell}: {} parameters, max relative error {e:.3e} {}",
                g.parameters,
                if ok { "ok" } else { "FAILED" }
            );
            Ok(ok)
        }
        _ => bail!("the configured sort is not differentiable"),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<deepfactor::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Dissect(a) => dissect(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
