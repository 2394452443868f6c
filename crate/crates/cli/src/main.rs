//! `bss`: simulate scenes, separate mixtures, score results, sweep STFT sizes.

mod config;
mod error;
mod eval;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bss_core::audio_io::{read_wav, write_wav, TimeSignal, WavFormat};
use bss_core::chain::{separate, Algorithm, InitMode, SeparationConfig, SeparationReport};
use bss_core::metrics::{mean, median, Metric, SdrCdf};
use bss_core::simulate::{mix_scene, Mixing, SceneParams, SourceModel};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{inside_out_dir, parse_keyword, RunConfig, SEED_ENV};
use error::CliError;
use eval::{evaluate, evaluate_scene, plot, scene_dirs, SceneEval, CDF_THRESHOLD_DB};

#[derive(Parser)]
#[command(name = "bss", version, about = "Multichannel blind source separation")]
struct Cli {
    /// Caps the worker threads used inside a run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic mixtures.
    Simulate(SimulateArgs),
    /// Separate one multichannel WAV file.
    Separate(SeparateArgs),
    /// Score estimates against simulated references.
    Eval(EvalArgs),
    /// Run a grid of algorithms and STFT sizes over a scene corpus.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Falls back to BSS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with scene parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    microphones: Option<usize>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// instantaneous, delays or exp_decay_rir.
    #[arg(long, value_parser = parse_keyword::<Mixing>)]
    mixing: Option<Mixing>,
    #[arg(long)]
    rir_length: Option<usize>,
    /// Reverberation decay time constant in seconds.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long, conflicts_with = "no_noise")]
    snr_db: Option<f64>,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    sir_db: Option<f64>,
    /// am_noise or am_tones.
    #[arg(long, value_parser = parse_keyword::<SourceModel>)]
    source_model: Option<SourceModel>,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat JSON file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: SeparationFlags,
    /// Write stage artifacts into this directory (relative to --out).
    #[arg(long)]
    dump_intermediate: Option<PathBuf>,
}

#[derive(Args, Default)]
struct SeparationFlags {
    /// cacgmm, overiva or chain.
    #[arg(long, value_parser = parse_keyword::<Algorithm>)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    smm_classes: Option<usize>,
    #[arg(long)]
    smm_stft_size: Option<usize>,
    #[arg(long)]
    smm_shift: Option<usize>,
    #[arg(long)]
    iva_stft_size: Option<usize>,
    #[arg(long)]
    iva_shift: Option<usize>,
    #[arg(long)]
    smm_iterations: Option<usize>,
    #[arg(long)]
    iva_iterations: Option<usize>,
    /// identity, pca or smm.
    #[arg(long, value_parser = parse_keyword::<InitMode>)]
    init: Option<InitMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ref_channel: Option<usize>,
    #[arg(long)]
    no_permutation_solver: bool,
    /// Mask the reference channel instead of beamforming (debugging aid).
    #[arg(long)]
    mask_multiply: bool,
}

impl SeparationFlags {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            algorithm: self.algorithm,
            sources: self.sources,
            smm_classes: self.smm_classes,
            smm_stft_size: self.smm_stft_size,
            smm_shift: self.smm_shift,
            iva_stft_size: self.iva_stft_size,
            iva_shift: self.iva_shift,
            smm_iterations: self.smm_iterations,
            iva_iterations: self.iva_iterations,
            init: self.init,
            seed: self.seed,
            ref_channel: self.ref_channel,
            permutation_solver: self.no_permutation_solver.then_some(false),
            mask_multiply: self.mask_multiply.then_some(true),
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with est_*.wav, or a corpus of scene_* directories.
    #[arg(long)]
    est: PathBuf,
    /// Scene directory with image_*.wav, or a corpus of them.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Filtered SDR with this many taps instead of SI-SDR.
    #[arg(long, num_args = 0..=1, default_missing_value = "512")]
    filter_taps: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the CDF as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Corpus of scene_* directories.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base run configuration; grid values override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "chain", value_parser = parse_keyword::<Algorithm>)]
    algorithms: Vec<Algorithm>,
    /// Sizes of the final stage (SMM for cacgmm, IVA otherwise).
    #[arg(long, value_delimiter = ',', default_value = "1024,2048")]
    stft_sizes: Vec<usize>,
    /// Shift is the size divided by this.
    #[arg(long, default_value_t = 4)]
    shift_divisor: usize,
    #[arg(long)]
    filter_taps: Option<usize>,
    #[command(flatten)]
    params: SeparationFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match &cli.command {
        Command::Separate(args) => match (&args.config, cli.threads) {
            (_, Some(n)) => Some(n),
            (Some(path), None) => RunConfig::from_file(path)?.threads,
            (None, None) => None,
        },
        _ => cli.threads,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Separate(args) => cmd_separate(args, threads),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct SceneRecord<'a> {
    seed: u64,
    params: &'a SceneParams,
}

/// Seed of scene `index` in a corpus generated from `seed`.
fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut params = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SceneParams::default(),
    };
    if let Some(v) = args.microphones {
        params.microphones = v;
    }
    if let Some(v) = args.sources {
        params.sources = v;
    }
    if let Some(v) = args.duration {
        params.duration_s = v;
    }
    if let Some(v) = args.sample_rate {
        params.sample_rate = v;
    }
    if let Some(v) = args.mixing {
        params.mixing = v;
    }
    if let Some(v) = args.rir_length {
        params.rir_length = v;
    }
    if let Some(v) = args.decay {
        params.decay_s = v;
    }
    if let Some(v) = args.snr_db {
        params.snr_db = Some(v);
    }
    if args.no_noise {
        params.snr_db = None;
    }
    if let Some(v) = args.sir_db {
        params.sir_db = v;
    }
    if let Some(v) = args.source_model {
        params.source_model = v;
    }
    params.validate()?;
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    create_dir(&args.out)?;
    for i in 0..args.scenes {
        let s = scene_seed(seed, i);
        let scene = mix_scene(&params, s)?;
        let dir = args.out.join(format!("scene_{i:04}"));
        create_dir(&dir)?;
        write_wav(dir.join("mixture.wav"), &scene.mixture, WavFormat::Float32)?;
        for (k, image) in scene.images.iter().enumerate() {
            write_wav(dir.join(format!("image_{k}.wav")), image, WavFormat::Float32)?;
        }
        for (k, source) in scene.sources.iter().enumerate() {
            write_wav(dir.join(format!("source_{k}.wav")), source, WavFormat::Float32)?;
        }
        write_wav(dir.join("noise.wav"), &scene.noise, WavFormat::Float32)?;
        write_json(&dir.join("scene.json"), &SceneRecord { seed: s, params: &params })?;
    }
    println!("wrote {} scene(s) to {}", args.scenes, args.out.display());
    Ok(())
}

fn read_multichannel(path: &Path) -> Result<TimeSignal, CliError> {
    let signal = read_wav(path)?;
    if signal.num_channels() < 2 {
        return Err(CliError::Config(format!(
            "{}: separation requires at least two channels, got {}",
            path.display(),
            signal.num_channels()
        )));
    }
    Ok(signal)
}

fn write_estimates(dir: &Path, estimates: &TimeSignal) -> Result<(), CliError> {
    for k in 0..estimates.num_channels() {
        let mono = TimeSignal::mono(estimates.channel_vec(k), estimates.sample_rate())?;
        write_wav(dir.join(format!("est_{k}.wav")), &mono, WavFormat::Float32)?;
    }
    Ok(())
}

fn cmd_separate(args: SeparateArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mut run = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut flags = args.params.to_config();
    flags.input = args.input.clone();
    flags.out = args.out.clone();
    flags.dump_intermediate = args.dump_intermediate.clone();
    flags.threads = threads;
    run.overlay(&flags);
    let (run, sep) = run.resolve()?;
    let input = run.input.clone().ok_or_else(|| CliError::Config("no input given (--input)".into()))?;
    let out = run.out.clone().ok_or_else(|| CliError::Config("no output directory given (--out)".into()))?;
    let dump = run.dump_intermediate.as_deref().map(|d| inside_out_dir(&out, d)).transpose()?;

    let signal = read_multichannel(&input)?;
    create_dir(&out)?;
    write_json(&out.join("run.json"), &run)?;
    let result = separate(&signal, &sep)?;
    write_estimates(&out, &result.estimates)?;
    write_json(&out.join("report.json"), &result.report)?;
    if let Some(dir) = dump {
        create_dir(&dir)?;
        result.intermediates.save(&dir)?;
    }
    println!(
        "separated {} source(s) from {} channel(s) into {}",
        result.estimates.num_channels(),
        signal.num_channels(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let metric = Metric::from_taps(args.filter_taps.unwrap_or(0));
    let summary = evaluate(&args.est, &args.reference, metric)?;
    for s in &summary.scenes {
        match s.result.improvement {
            Some(imp) => println!("{}: {:.2} dB ({imp:+.2} dB over input)", s.scene, s.result.mean),
            None => println!("{}: {:.2} dB", s.scene, s.result.mean),
        }
    }
    println!(
        "mean {:.2} dB, median {:.2} dB, fraction <= {CDF_THRESHOLD_DB} dB: {:.3}",
        summary.mean, summary.median, summary.cdf_at_7db
    );
    if let Some(path) = &args.json {
        write_json(path, &summary)?;
    }
    if let Some(path) = &args.plot {
        let label = match metric {
            Metric::SiSdr => "SI-SDR".to_string(),
            Metric::Filtered { taps } => format!("SDR ({taps} taps)"),
        };
        std::fs::write(path, plot(&summary, &label)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepCell {
    algorithm: Algorithm,
    stft_size: usize,
    shift: usize,
    mean: f64,
    median: f64,
    cdf_at_7db: f64,
    failures: usize,
    scenes: Vec<SceneEval>,
    errors: Vec<String>,
}

fn cell_config(base: &RunConfig, algorithm: Algorithm, size: usize, shift: usize) -> Result<SeparationConfig, CliError> {
    let mut cfg = base.clone();
    cfg.algorithm = Some(algorithm);
    if algorithm == Algorithm::Cacgmm {
        cfg.smm_stft_size = Some(size);
        cfg.smm_shift = Some(shift);
    } else {
        cfg.iva_stft_size = Some(size);
        cfg.iva_shift = Some(shift);
    }
    if algorithm == Algorithm::Overiva && cfg.init == Some(InitMode::Smm) {
        cfg.init = Some(InitMode::Identity);
    }
    Ok(cfg.resolve()?.1)
}

fn run_cell(scenes: &[PathBuf], sep: &SeparationConfig, metric: Metric) -> (Vec<SceneEval>, Vec<String>) {
    let mut evals = Vec::new();
    let mut errors = Vec::new();
    for scene in scenes {
        let name = scene.file_name().expect("scene dir has a name").to_string_lossy().into_owned();
        let attempt = || -> Result<SceneEval, CliError> {
            let signal = read_multichannel(&scene.join("mixture.wav"))?;
            let out = separate(&signal, sep)?;
            let report: &SeparationReport = &out.report;
            let result = evaluate_scene(&out.estimates.channels(), &report.reference_channels, scene, metric)?;
            Ok(SceneEval {
                scene: name.clone(),
                result,
            })
        };
        match attempt() {
            Ok(e) => evals.push(e),
            Err(e) => errors.push(format!("{name}: {e}")),
        }
    }
    (evals, errors)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut base = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    base.overlay(&args.params.to_config());
    if args.shift_divisor == 0 {
        return Err(CliError::Config("--shift-divisor must be positive".into()));
    }
    let metric = Metric::from_taps(args.filter_taps.unwrap_or(0));
    let scenes = scene_dirs(&args.scenes)?;
    if scenes.is_empty() {
        return Err(CliError::Config(format!("no scene_* directories in {}", args.scenes.display())));
    }
    // validate the whole grid before spending time on any cell
    let mut grid = Vec::new();
    for &algorithm in &args.algorithms {
        for &size in &args.stft_sizes {
            let shift = size / args.shift_divisor;
            grid.push((algorithm, size, shift, cell_config(&base, algorithm, size, shift)?));
        }
    }
    create_dir(&args.out)?;
    let mut csv = String::from("algorithm,stft_size,shift,mean,median,cdf_at_7db,failures\n");
    let mut cells = Vec::new();
    for (algorithm, size, shift, sep) in grid {
        let (evals, errors) = run_cell(&scenes, &sep, metric);
        let means: Vec<f64> = evals.iter().map(|e| e.result.mean).collect();
        let cdf_at = SdrCdf::from_values(&means)
            .map(|c| c.fraction_at(CDF_THRESHOLD_DB))
            .unwrap_or(f64::NAN);
        let name = algorithm_name(algorithm);
        let cell = SweepCell {
            algorithm,
            stft_size: size,
            shift,
            mean: mean(&means),
            median: median(&means),
            cdf_at_7db: cdf_at,
            failures: errors.len(),
            scenes: evals,
            errors,
        };
        csv.push_str(&format!(
            "{name},{size},{shift},{:.4},{:.4},{:.4},{}\n",
            cell.mean, cell.median, cell.cdf_at_7db, cell.failures
        ));
        println!("{name} size {size} shift {shift}: mean {:.2} dB, {} failure(s)", cell.mean, cell.failures);
        cells.push(cell);
    }
    let path = args.out.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    write_json(&args.out.join("sweep.json"), &cells)?;
    Ok(())
}

fn algorithm_name(algorithm: Algorithm) -> String {
    serde_json::to_value(algorithm)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
