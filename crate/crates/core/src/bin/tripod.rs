//! Command-line entry points: train, eval, traverse, sweep, bench,
//! oracle, dump-data.
//!
//! Exit codes: 0 success, 1 internal/IO error, 2 config error,
//! 3 numerical failure, 4 no checkpoint passed the PSNR filter.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tripod_core::config::{HpMode, KlmMode, RunConfig};
use tripod_core::data::{SyntheticProcess, IMAGE_PIXELS, IMAGE_SIDE};
use tripod_core::image::{heatmap_pixels, tile_grid, write_pgm, write_ppm};
use tripod_core::metrics::traversal_row;
use tripod_core::model::checkpoint::Checkpoint;
use tripod_core::model::train::{
    eval_latents, evaluate_model, occupied_ranges, select_checkpoint, train, ModelDecoder,
    TrainResult,
};
use tripod_core::model::Autoencoder;
use tripod_core::oracle;
use tripod_core::report::{
    write_eval_log_csv, write_report_csv, write_report_json, write_step_log_csv, Provenance,
};
use tripod_core::tensor::rng::RngState;
use tripod_core::tensor::TensorError;

#[derive(Parser)]
#[command(name = "tripod", version = tripod_core::VERSION, about = "Desk-scale disentangled representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus step/eval logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint: metrics report and NMI heatmap.
    Eval(EvalArgs),
    /// Render latent-traversal grids for a probe image.
    Traverse(TraverseArgs),
    /// Grid-sweep regularization weights, one run per grid point.
    Sweep(SweepArgs),
    /// Measure seconds/iteration for the leg configurations.
    Bench(BenchArgs),
    /// Run verification suites against brute-force oracles.
    Oracle(OracleArgs),
    /// Dump a dataset as PGM images plus a CSV of source labels.
    DumpData(DumpArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat-JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config (and TRIPOD_SEED) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<hash>-s<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the dataset embedded in the checkpoint.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstruction gate in dB; defaults to the config's threshold.
    #[arg(long)]
    psnr_threshold: Option<f64>,
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index into the dataset's enumerated configuration table.
    #[arg(long)]
    image_index: usize,
    /// Sweep steps per latent.
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid, e.g. "lambda_klm=0,1e-4,1e-2;lambda_nhp=0,1e-2".
    #[arg(long)]
    grid: String,
    /// Seeds per grid point (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Timed iterations per leg configuration.
    #[arg(long, default_value_t = 30)]
    steps: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// all | gradcheck | kde | hutchinson | prop31 | prop32
    #[arg(long, default_value = "all")]
    suite: String,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Internal(String),
    Config(String),
    Numerical(String),
    NoCheckpoint,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NoCheckpoint => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Internal(m) => format!("error: {m}"),
            CliError::Config(m) => format!("config error: {m}"),
            CliError::Numerical(m) => format!("numerical failure: {m}"),
            CliError::NoCheckpoint => "no checkpoint passed the PSNR filter".into(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TensorError::NoCheckpointPassed => CliError::NoCheckpoint,
            TensorError::Domain { .. } => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<tripod_core::model::checkpoint::CheckpointError> for CliError {
    fn from(e: tripod_core::model::checkpoint::CheckpointError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Traverse(args) => cmd_traverse(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::DumpData(args) => cmd_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Seed priority: --seed flag, then TRIPOD_SEED, then the config file.
fn load_config(path: &Path, seed_flag: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Ok(env_seed) = std::env::var("TRIPOD_SEED") {
        config.seed = env_seed
            .parse()
            .map_err(|_| CliError::Config(format!("TRIPOD_SEED `{env_seed}` is not a u64")))?;
    }
    if let Some(seed) = seed_flag {
        config.seed = seed;
    }
    Ok(config)
}

fn write_run_outputs(
    dir: &Path,
    config: &RunConfig,
    result: &TrainResult,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::new(config.hash(), config.seed);
    std::fs::write(dir.join("config.json"), config.to_json() + "\n")?;
    write_step_log_csv(&dir.join("steps.csv"), &result.steps, &prov)?;
    write_eval_log_csv(&dir.join("evals.csv"), &result.evals, &prov)?;
    for ckpt in &result.checkpoints {
        ckpt.write_to(&dir.join(format!("checkpoint_{:06}.trpd", ckpt.step)))?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    let dir = args.out.unwrap_or_else(|| {
        PathBuf::from(format!("runs/{:08x}-s{}", config.hash() as u32, config.seed))
    });
    let result = train(&config)?;
    write_run_outputs(&dir, &config, &result)?;
    let last = result.evals.last();
    println!(
        "trained {} steps; checkpoints={} last_psnr={:.2} dB; outputs in {}",
        config.max_updates,
        result.checkpoints.len(),
        last.map_or(f64::NAN, |e| e.psnr),
        dir.display()
    );
    Ok(())
}

fn load_model(
    path: &Path,
    dataset_override: Option<&str>,
) -> Result<(RunConfig, SyntheticProcess, Autoencoder, Checkpoint), CliError> {
    let ckpt = Checkpoint::read_from(path)?;
    let mut config = RunConfig::from_json(&ckpt.config_json)?;
    if let Some(ds) = dataset_override {
        config.dataset = ds.to_string();
        config.validate()?;
    }
    let proc = config
        .process()
        .ok_or_else(|| CliError::Config(format!("unknown dataset `{}`", config.dataset)))?;
    let mut rng = RngState::new(config.seed);
    let mut model = Autoencoder::build(&config, &proc, &mut rng)?;
    if model.params.entries.len() != ckpt.params.entries.len() {
        return Err(CliError::Config(
            "checkpoint parameters do not match the embedded architecture".into(),
        ));
    }
    model.params = ckpt.params.clone();
    Ok((config, proc, model, ckpt))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let (config, proc, model, ckpt) = load_model(&args.checkpoint, args.dataset.as_deref())?;
    let report = evaluate_model(&model, &proc, ckpt.step, config.seed)?;
    let dir = args
        .out
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    let prov = Provenance::new(config.hash(), config.seed);
    write_report_json(&dir.join("report.json"), &report, &prov)?;
    write_report_csv(&dir.join("report.csv"), &report, &prov)?;
    let (px, w, h) = heatmap_pixels(&report.heatmap, 32);
    write_ppm(&dir.join("heatmap.ppm"), &px, w, h)?;
    println!(
        "step {}: PSNR {:.2} dB InfoMEC=({:.3},{:.3},{:.3}) DCI=({:.3},{:.3},{:.3})",
        report.step,
        report.psnr,
        report.info_m,
        report.info_c,
        report.info_e,
        report.dci_d,
        report.dci_c,
        report.dci_i
    );
    let threshold = args.psnr_threshold.unwrap_or(config.psnr_threshold);
    if report.psnr < threshold {
        return Err(CliError::NoCheckpoint);
    }
    Ok(())
}

fn cmd_traverse(args: TraverseArgs) -> Result<(), CliError> {
    let (config, proc, model, _ckpt) = load_model(&args.checkpoint, None)?;
    let set = proc.enumerate_all();
    if args.image_index >= set.len() {
        return Err(CliError::Config(format!(
            "image index {} out of range ({} configurations)",
            args.image_index,
            set.len()
        )));
    }
    let (le, _) = eval_latents(&model, &set)?;
    let active = tripod_core::metrics::active_latents(&le);
    let ranges = occupied_ranges(&le);
    let base_z = le.values[args.image_index].clone();
    let decoder = ModelDecoder { model: &model };
    let mut rows = Vec::new();
    for (j, (&is_active, &(lo, hi))) in active.iter().zip(&ranges).enumerate() {
        if !is_active {
            continue;
        }
        let images = traversal_row(&decoder, &base_z, j, lo, hi, args.steps)?;
        rows.push(images);
    }
    if rows.is_empty() {
        return Err(CliError::Numerical("no active latents to traverse".into()));
    }
    let (pixels, w, h) = tile_grid(&rows, IMAGE_SIDE);
    let dir = args
        .out
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("traversal_{:04}.pgm", args.image_index));
    write_pgm(&path, &pixels, w, h)?;
    println!(
        "wrote {} ({} active latents x {} steps); config hash {:016x}",
        path.display(),
        rows.len(),
        args.steps,
        config.hash()
    );
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let mut out = Vec::new();
    for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid entry `{part}` missing `=`")))?;
        let key = key.trim();
        if key != "lambda_klm" && key != "lambda_nhp" {
            return Err(CliError::Config(format!(
                "grid parameter `{key}` not sweepable (use lambda_klm/lambda_nhp)"
            )));
        }
        let vals: Result<Vec<f64>, _> =
            values.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| CliError::Config(format!("bad grid value in `{part}`: {e}")))?;
        if vals.is_empty() {
            return Err(CliError::Config(format!("grid entry `{part}` has no values")));
        }
        out.push((key.to_string(), vals));
    }
    if out.is_empty() {
        return Err(CliError::Config("empty grid".into()));
    }
    Ok(out)
}

struct SweepRow {
    lambda_klm: f64,
    lambda_nhp: f64,
    seed: u64,
    best_step: u64,
    psnr: f64,
    info_m: f64,
    info_c: f64,
    info_e: f64,
    dci_d: f64,
    dci_c: f64,
    dci_i: f64,
}

/// Trains one config, selects the best checkpoint by the PSNR filter,
/// and fully evaluates it.
fn run_and_score(
    config: &RunConfig,
) -> Result<(u64, tripod_core::metrics::MetricsReport), CliError> {
    let result = train(config)?;
    let best = select_checkpoint(&result.checkpoints, &result.evals, config.psnr_threshold)?;
    let proc = config.process().expect("validated");
    let mut rng = RngState::new(config.seed);
    let mut model = Autoencoder::build(config, &proc, &mut rng)?;
    model.params = best.params.clone();
    let report = evaluate_model(&model, &proc, best.step, config.seed)?;
    Ok((best.step, report))
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = load_config(&args.config, None)?;
    let grid = parse_grid(&args.grid)?;
    let mut points: Vec<(f64, f64)> = vec![(base.lambda_klm, base.lambda_nhp)];
    for (key, values) in &grid {
        let mut next = Vec::new();
        for &(klm, nhp) in &points {
            for &v in values {
                next.push(match key.as_str() {
                    "lambda_klm" => (v, nhp),
                    _ => (klm, v),
                });
            }
        }
        points = next;
    }
    points.dedup();

    let mut jobs = Vec::new();
    for &(klm, nhp) in &points {
        for s in 0..args.seeds {
            let mut cfg = base.clone();
            cfg.lambda_klm = klm;
            cfg.lambda_nhp = nhp;
            cfg.seed = base.seed + s;
            jobs.push(cfg);
        }
    }

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (tx, rx) = mpsc::channel();
    let jobs_iter = std::sync::Mutex::new(jobs.clone().into_iter().enumerate());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            let tx = tx.clone();
            let jobs_iter = &jobs_iter;
            scope.spawn(move || loop {
                let next = jobs_iter.lock().unwrap().next();
                let Some((i, cfg)) = next else { break };
                let outcome =
                    run_and_score(&cfg).map(|(step, report)| (cfg.clone(), step, report));
                let _ = tx.send((i, outcome));
            });
        }
    });
    drop(tx);
    let mut results: Vec<_> = rx.into_iter().collect();
    results.sort_by_key(|(i, _)| *i);

    let mut rows = Vec::new();
    for (_, outcome) in results {
        let (cfg, step, report) = outcome?;
        rows.push(SweepRow {
            lambda_klm: cfg.lambda_klm,
            lambda_nhp: cfg.lambda_nhp,
            seed: cfg.seed,
            best_step: step,
            psnr: report.psnr,
            info_m: report.info_m,
            info_c: report.info_c,
            info_e: report.info_e,
            dci_d: report.dci_d,
            dci_c: report.dci_c,
            dci_i: report.dci_i,
        });
    }

    let mut csv = format!(
        "# config_hash={:016x} seed={} version={}\n",
        base.hash(),
        base.seed,
        tripod_core::VERSION
    );
    csv.push_str(
        "lambda_klm,lambda_nhp,seed,best_step,psnr,info_m,info_c,info_e,dci_d,dci_c,dci_i\n",
    );
    println!("lambda_klm  lambda_nhp  seed  step    PSNR   InfoM  InfoC  InfoE  D      C      I");
    for r in &rows {
        csv.push_str(&format!(
            "{:e},{:e},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.lambda_klm,
            r.lambda_nhp,
            r.seed,
            r.best_step,
            r.psnr,
            r.info_m,
            r.info_c,
            r.info_e,
            r.dci_d,
            r.dci_c,
            r.dci_i
        ));
        println!(
            "{:<11e} {:<11e} {:<5} {:<7} {:<6.2} {:<6.3} {:<6.3} {:<6.3} {:<6.3} {:<6.3} {:<6.3}",
            r.lambda_klm,
            r.lambda_nhp,
            r.seed,
            r.best_step,
            r.psnr,
            r.info_m,
            r.info_c,
            r.info_e,
            r.dci_d,
            r.dci_c,
            r.dci_i
        );
    }
    let dir = args.out.unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep_summary.csv"), csv)?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let base = load_config(&args.config, None)?;
    let variants = [
        ("recon_only", KlmMode::Off, HpMode::Off),
        ("klm_no_hp", base.klm_mode, HpMode::Off),
        ("full", base.klm_mode, base.hp_mode),
    ];
    let mut timings = Vec::new();
    for (name, klm, hp) in variants {
        let cfg = RunConfig {
            klm_mode: klm,
            hp_mode: hp,
            max_updates: args.steps,
            eval_every: 0,
            ..base.clone()
        };
        // one warmup step outside the timer
        let warm = RunConfig { max_updates: 1, ..cfg.clone() };
        train(&warm)?;
        let t0 = Instant::now();
        train(&cfg)?;
        let per_iter = t0.elapsed().as_secs_f64() / args.steps as f64;
        println!("{name}: {per_iter:.4} s/iter");
        timings.push((name, per_iter));
    }
    let off = timings
        .iter()
        .find(|(n, _)| *n == "klm_no_hp")
        .map(|(_, t)| *t)
        .unwrap();
    let on = timings.iter().find(|(n, _)| *n == "full").map(|(_, t)| *t).unwrap();
    println!("hp_on/hp_off ratio: {:.2}", on / off);
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let checks = oracle::run_suite(&args.suite)?;
    let mut all_pass = true;
    for c in &checks {
        println!("{c}");
        all_pass &= c.pass;
    }
    println!(
        "{}: {}/{} checks passed",
        args.suite,
        checks.iter().filter(|c| c.pass).count(),
        checks.len()
    );
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Internal("oracle checks failed".into()))
    }
}

fn cmd_dump(args: DumpArgs) -> Result<(), CliError> {
    let proc = SyntheticProcess::by_name(&args.dataset)
        .ok_or_else(|| CliError::Config(format!("unknown dataset `{}`", args.dataset)))?;
    std::fs::create_dir_all(&args.out)?;
    let mut labels = String::from("index");
    for (name, _) in &proc.sources {
        labels.push(',');
        labels.push_str(name);
    }
    labels.push('\n');
    for (i, (s, x)) in proc.enumerate_all().iter().enumerate() {
        debug_assert_eq!(x.len(), IMAGE_PIXELS);
        write_pgm(
            &args.out.join(format!("img_{i:05}.pgm")),
            x,
            IMAGE_SIDE,
            IMAGE_SIDE,
        )?;
        labels.push_str(&i.to_string());
        for v in s {
            labels.push(',');
            labels.push_str(&v.to_string());
        }
        labels.push('\n');
    }
    std::fs::write(args.out.join("labels.csv"), labels)?;
    println!(
        "wrote {} images and labels.csv to {}",
        proc.total_configurations(),
        args.out.display()
    );
    Ok(())
}
