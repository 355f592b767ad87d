//! The `ldct` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;

use std::ffi::OsString;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{validate_simulation, DataConfig, ExtractorConfig, RunConfig};

use crate::error::Error;
use crate::evalkit::{apply_window, eval_dataset, report_csv, save_png, WindowSpec};
use crate::io::{list_slices, load_slice, save_slice, write_atomic, SliceMeta};
use crate::network::{build_arch, count_weights, describe, forward, init_glorot, Variant};
use crate::perceptual::{FeatureExtractor, FeatureExtractorSpec};
use crate::physics::phantom::body_phantom;
use crate::physics::{
    pixels_to_hu, simulate_low_dose, Calibration, CtImage, HuConvention, NoiseModel,
    SimulationConfig, Unit,
};
use crate::trainer::{
    denormalize, fingerprint, load_model, model_container, normalize, read_loss_log, split_index,
    train, write_loss_log, Checkpoint, EpochRecord, PatchSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping worker threads; 1 runs everything on one
/// thread.
pub const THREADS_ENV: &str = "LDCT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ldct",
    version,
    about = "Low-dose CT simulation and dilated residual denoising"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate low-dose slices from normal-dose 16-bit PGM slices.
    Simulate(SimulateArgs),
    /// Train a denoising network.
    Train(TrainArgs),
    /// Denoise full-size slices with a trained model.
    Denoise(DenoiseArgs),
    /// PSNR/SSIM report of predictions against references.
    Eval(EvalArgs),
    /// Print the architecture table, receptive field and weight counts.
    Inspect(InspectArgs),
    /// Write synthetic body phantoms as 16-bit PGM slices.
    Phantom(PhantomArgs),
    /// Write randomly initialized feature-extractor weights.
    InitExtractor(InitExtractorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Drl,
    DrlE,
}

impl From<ArchArg> for Variant {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Drl => Variant::Drl,
            ArchArg::DrlE => Variant::DrlE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    /// MSE only.
    M,
    /// Perceptual only.
    P,
    /// MSE plus perceptual.
    Mp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Abdomen,
    Lung,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Poisson,
    Mean,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Incident photons per detector bin.
    #[arg(long)]
    pub i0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub angles: Option<usize>,
    /// Linear attenuation of water, 1/mm.
    #[arg(long)]
    pub mu_water: Option<f64>,
    /// Stored values are HU already (no rescale).
    #[arg(long)]
    pub hu_literal: bool,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    /// Run config whose `simulation` section supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub low_dose: Option<PathBuf>,
    #[arg(long)]
    pub normal_dose: Option<PathBuf>,
    /// Stop after this many completed epochs (the checkpoint can be resumed).
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub window: WindowArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Low-dose inputs, adds the baseline columns.
    #[arg(long)]
    pub low: Option<PathBuf>,
    /// CSV destination; printed to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_enum, default_value = "drl-e")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 64)]
    pub filters: usize,
    /// Describe the architecture stored in a checkpoint instead.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Field of view in mm; the voxel is `fov / size`.
    #[arg(long, default_value_t = 384.0)]
    pub fov: f64,
}

#[derive(Debug, Args)]
pub struct InitExtractorArgs {
    #[arg(long)]
    pub output: PathBuf,
    /// Block widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

/// Process entry: logging, the thread cap, then [`run`].
pub fn main_entry() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    if let Err(f) = configure_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        eprintln!("error: {f}");
        return f.code();
    }
    run(std::env::args_os())
}

fn configure_threads(value: Option<&str>) -> CliResult {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        usage(format!(
            "{THREADS_ENV} must be a positive integer, got '{v}'"
        ))
    })?;
    // a second initialization in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::InitExtractor(a) => cmd_init_extractor(a),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Input slices of a directory; missing or empty directories are usage
/// errors.
fn input_slices(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let files = list_slices(dir).map_err(usage)?;
    if files.is_empty() {
        return Err(usage(format!("no .pgm slices in {}", dir.display())));
    }
    Ok(files)
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

/// Per-slice seed from the run seed and the file name, so a slice's noise
/// does not depend on which other files are present.
pub fn slice_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn report_failures(failures: &[(String, String)], what: &str) -> CliResult {
    for (name, err) in failures {
        eprintln!("skipped {name}: {err}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!(
            "{} of the slices could not be {what}",
            failures.len()
        )))
    }
}

pub fn cmd_simulate(a: SimulateArgs) -> CliResult {
    let mut sim = match &a.config {
        Some(p) => RunConfig::load(p).map_err(usage)?.simulation,
        None => SimulationConfig::default(),
    };
    if let Some(v) = a.i0 {
        sim.i0 = v;
    }
    if let Some(v) = a.seed {
        sim.seed = v;
    }
    if let Some(v) = a.angles {
        sim.angles = v;
    }
    if let Some(v) = a.mu_water {
        sim.mu_water = v;
    }
    if a.hu_literal {
        sim.convention = HuConvention::Literal;
    }
    if let Some(n) = a.noise {
        sim.noise = match n {
            NoiseArg::Poisson => NoiseModel::Poisson,
            NoiseArg::Mean => NoiseModel::Mean,
        };
    }
    validate_simulation(&sim).map_err(usage)?;
    let files = input_slices(&a.input)?;
    create_dir(&a.output)?;

    let results: Vec<Result<Option<String>, (String, String)>> = files
        .par_iter()
        .map(|path| {
            let name = file_name(path);
            let fail = |e: Error| (name.clone(), e.to_string());
            let (img, meta) = load_slice(path).map_err(fail)?;
            let cfg = SimulationConfig {
                seed: slice_seed(sim.seed, &name),
                ..sim.clone()
            };
            let out = simulate_low_dose(&img, &cfg).map_err(fail)?;
            let out_meta = SliceMeta {
                simulation: Some(cfg),
                clamp_fraction: Some(out.clamp_fraction),
                source: Some(name.clone()),
                ..SliceMeta::from_calibration(meta.calibration())
            };
            let clamped = save_slice(&a.output.join(&name), &out.image, &out_meta).map_err(fail)?;
            if clamped > 0 {
                log::info!("{name}: {clamped} samples clamped into the 16-bit range");
            }
            Ok(out.warning.map(|w| format!("{name}: {w}")))
        })
        .collect();
    let mut failures = Vec::new();
    let mut done = 0;
    for r in results {
        match r {
            Ok(Some(w)) => {
                eprintln!("warning: {w}");
                done += 1;
            }
            Ok(None) => done += 1,
            Err(f) => failures.push(f),
        }
    }
    println!(
        "simulated {done} slices at I0 = {} into {}",
        sim.i0,
        a.output.display()
    );
    report_failures(&failures, "simulated")
}

/// Loads every slice of `dir` as normalized tensors, in file-name order.
fn load_normalized(files: &[PathBuf]) -> CliResult<Vec<crate::tensor::Tensor<f32>>> {
    files
        .par_iter()
        .map(|p| {
            let (img, _) = load_slice(p).map_err(usage)?;
            Ok(normalize(&img).map_err(usage)?.tensor)
        })
        .collect()
}

fn apply_loss_mode(cfg: &mut crate::trainer::TrainConfig, mode: LossArg) {
    let defaults = crate::perceptual::LossConfig::default();
    let or_default = |v: f64, d: f64| if v > 0.0 { v } else { d };
    let (m, p) = (
        or_default(cfg.loss.lambda_mse, defaults.lambda_mse),
        or_default(cfg.loss.lambda_p, defaults.lambda_p),
    );
    (cfg.loss.lambda_mse, cfg.loss.lambda_p) = match mode {
        LossArg::M => (m, 0.0),
        LossArg::P => (0.0, p),
        LossArg::Mp => (m, p),
    };
}

pub fn cmd_train(a: TrainArgs) -> CliResult {
    let mut run = RunConfig::load(&a.config).map_err(usage)?;
    if let Some(v) = a.arch {
        run.train.variant = v.into();
    }
    if let Some(mode) = a.loss {
        apply_loss_mode(&mut run.train, mode);
    }
    if let Some(o) = a.output {
        run.output = Some(o);
    }
    match (a.low_dose, a.normal_dose, &mut run.data) {
        (Some(l), Some(n), d) => {
            *d = Some(DataConfig {
                low_dose: l,
                normal_dose: n,
            })
        }
        (l, n, Some(d)) => {
            if let Some(l) = l {
                d.low_dose = l;
            }
            if let Some(n) = n {
                d.normal_dose = n;
            }
        }
        (_, _, None) => {
            return Err(usage(
                "no data directories (config `data` or --low-dose/--normal-dose)",
            ))
        }
    }
    run.validate().map_err(usage)?;
    let cfg = run.train.clone();
    let data = run.data.clone().expect("set above");
    let out_dir = run
        .output
        .clone()
        .ok_or_else(|| usage("no output directory (config `output` or --output)"))?;

    let extractor = if cfg.loss.needs_extractor() {
        let e = run.extractor.as_ref().ok_or_else(|| {
            usage("the perceptual term needs pretrained extractor weights (config `extractor.weights`)")
        })?;
        if !e.weights.is_file() {
            return Err(usage(format!(
                "missing pretrained extractor weights: {}",
                e.weights.display()
            )));
        }
        Some(
            FeatureExtractor::<f32>::load(e.spec(), &e.weights).map_err(|err| {
                usage(format!("extractor weights {}: {err}", e.weights.display()))
            })?,
        )
    } else {
        None
    };

    let low_files = input_slices(&data.low_dose)?;
    let normal_files = input_slices(&data.normal_dose)?;
    let low_names: Vec<String> = low_files.iter().map(|p| file_name(p)).collect();
    let normal_names: Vec<String> = normal_files.iter().map(|p| file_name(p)).collect();
    if low_names != normal_names {
        let only = |a: &[String], b: &[String]| {
            a.iter()
                .filter(|n| !b.contains(n))
                .cloned()
                .collect::<Vec<_>>()
        };
        return Err(usage(format!(
            "low-dose and normal-dose sets differ: only low-dose {:?}, only normal-dose {:?}",
            only(&low_names, &normal_names),
            only(&normal_names, &low_names)
        )));
    }
    let n_train = split_index(low_names.len()).map_err(usage)?;
    let low = load_normalized(&low_files[..n_train])?;
    let normal = load_normalized(&normal_files[..n_train])?;
    let mut patches = PatchSet::new(cfg.patch);
    for (i, (l, n)) in low.iter().zip(&normal).enumerate() {
        patches
            .extract(i, l, n, cfg.stride)
            .map_err(|e| usage(format!("{}: {e}", low_names[i])))?;
    }

    let resume = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            if ck.fingerprint != fingerprint(&cfg, extractor.as_ref()).map_err(usage)? {
                return Err(usage(format!(
                    "{} was written with a different configuration",
                    p.display()
                )));
            }
            Some(ck)
        }
        None => None,
    };

    create_dir(&out_dir)?;
    let ck_path = out_dir.join("checkpoint.ldws");
    let log_path = out_dir.join("loss.csv");
    let mut records: Vec<EpochRecord> = match &resume {
        Some(ck) if log_path.is_file() => read_loss_log(&log_path)
            .map_err(runtime)?
            .into_iter()
            .filter(|r| r.epoch <= ck.epoch)
            .collect(),
        _ => Vec::new(),
    };
    let split = serde_json::json!({
        "train": &low_names[..n_train],
        "test": &low_names[n_train..],
    });
    write_atomic(
        &out_dir.join("split.json"),
        serde_json::to_string_pretty(&split)
            .map_err(runtime)?
            .as_bytes(),
    )
    .map_err(runtime)?;
    println!(
        "training {} on {} patches from {} slices ({} held out)",
        cfg.variant.name(),
        patches.len(),
        n_train,
        low_names.len() - n_train
    );
    let stop = a.stop_after;
    let outcome = train(&cfg, &patches, extractor.as_ref(), resume, |rec, ck| {
        ck.save(&ck_path)?;
        records.push(*rec);
        write_loss_log(&log_path, &records)?;
        Ok(if stop.is_some_and(|s| rec.epoch >= s) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    })
    .map_err(|e| {
        runtime(format!(
            "{e}; last good checkpoint kept at {}",
            ck_path.display()
        ))
    })?;
    println!(
        "finished epoch {} of {}; checkpoint {}",
        outcome.checkpoint.epoch,
        cfg.total_epochs(),
        ck_path.display()
    );
    Ok(())
}

pub fn cmd_denoise(a: DenoiseArgs) -> CliResult {
    let (arch, params) =
        load_model(&a.model).map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    let window = match a.window {
        WindowArg::Abdomen => Some(WindowSpec::ABDOMEN),
        WindowArg::Lung => Some(WindowSpec::LUNG),
        WindowArg::None => None,
    };
    let files = input_slices(&a.input)?;
    create_dir(&a.output)?;
    let failures: Vec<(String, String)> = files
        .iter()
        .filter_map(|path| {
            let name = file_name(path);
            let go = || -> crate::Result<()> {
                let (img, meta) = load_slice(path)?;
                let x = normalize(&img)?.tensor;
                let y = forward(&arch, &params, &x)?;
                let out = CtImage::new(
                    img.height(),
                    img.width(),
                    denormalize(&y),
                    Unit::Pixel,
                    img.calibration(),
                )?;
                let out_meta = SliceMeta {
                    source: Some(name.clone()),
                    ..SliceMeta::from_calibration(meta.calibration())
                };
                let dst = a.output.join(&name);
                save_slice(&dst, &out, &out_meta)?;
                if let Some(w) = window {
                    let hu = pixels_to_hu(&out, HuConvention::Rescale, None)?;
                    save_png(
                        &dst.with_extension("png"),
                        out.width(),
                        out.height(),
                        &apply_window(&hu, w)?,
                    )?;
                }
                Ok(())
            };
            go().err().map(|e| (name, e.to_string()))
        })
        .collect();
    println!(
        "denoised {} slices into {}",
        files.len() - failures.len(),
        a.output.display()
    );
    report_failures(&failures, "denoised")
}

pub fn cmd_eval(a: EvalArgs) -> CliResult {
    for d in [Some(&a.pred), Some(&a.reference), a.low.as_ref()]
        .into_iter()
        .flatten()
    {
        if !d.is_dir() {
            return Err(usage(format!("{} is not a directory", d.display())));
        }
    }
    let report = eval_dataset(&a.pred, &a.reference, a.low.as_deref()).map_err(runtime)?;
    let csv = report_csv(&report).map_err(runtime)?;
    match &a.output {
        Some(p) => {
            write_atomic(p, &csv).map_err(runtime)?;
            if let Some(m) = report.mean_pred {
                println!(
                    "{} images, mean psnr {} ssim {}",
                    report.rows.len(),
                    m.psnr,
                    m.ssim
                );
            }
        }
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    for m in &report.missing {
        eprintln!("missing counterpart: {m}");
    }
    if report.missing.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!(
            "{} files had no counterpart",
            report.missing.len()
        )))
    }
}

pub fn cmd_inspect(a: InspectArgs) -> CliResult {
    let arch = match &a.model {
        Some(p) => {
            load_model(p)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
                .0
        }
        None => build_arch(a.arch.into(), a.filters).map_err(usage)?,
    };
    print!("{}", describe(&arch));
    let n = arch.layers[0].out_channels as u64;
    let layers = arch.layers.len() as u64;
    let closed = count_weights(3, n, 1, layers).map_err(usage)?;
    println!(
        "closed-form weights of a plain {layers}-layer 3x3 network (n = {n}, c = 1): {closed}"
    );
    Ok(())
}

pub fn cmd_phantom(a: PhantomArgs) -> CliResult {
    if a.count == 0 || a.size < 8 {
        return Err(usage("need --count >= 1 and --size >= 8"));
    }
    if !(a.fov.is_finite() && a.fov > 0.0) {
        return Err(usage(format!("--fov must be > 0, got {}", a.fov)));
    }
    create_dir(&a.output)?;
    let cal = Calibration {
        voxel: a.fov / a.size as f64,
        ..Calibration::default()
    };
    (0..a.count)
        .into_par_iter()
        .map(|k| {
            let img = body_phantom(a.size, a.seed.wrapping_add(k as u64), cal)?;
            save_slice(
                &a.output.join(format!("phantom_{k:04}.pgm")),
                &img,
                &SliceMeta::from_calibration(cal),
            )?;
            Ok(())
        })
        .collect::<crate::Result<()>>()
        .map_err(runtime)?;
    println!(
        "wrote {} phantoms of {}x{} to {}",
        a.count,
        a.size,
        a.size,
        a.output.display()
    );
    Ok(())
}

pub fn cmd_init_extractor(a: InitExtractorArgs) -> CliResult {
    let widths: [usize; 4] = a
        .widths
        .as_slice()
        .try_into()
        .map_err(|_| usage("--widths needs exactly four values"))?;
    if widths.contains(&0) {
        return Err(usage("block widths must be >= 1"));
    }
    let ext = FeatureExtractor::<f32>::random(FeatureExtractorSpec::with_widths(widths), a.seed)
        .map_err(runtime)?;
    ext.to_container()
        .and_then(|c| c.save(&a.output))
        .map_err(runtime)?;
    println!(
        "wrote random extractor weights {:?} to {}",
        widths,
        a.output.display()
    );
    Ok(())
}

/// Writes a fresh Glorot model; used by tests and the FFI.
pub fn write_fresh_model(
    path: &Path,
    variant: Variant,
    n_filters: usize,
    seed: u64,
) -> crate::Result<()> {
    let arch = build_arch(variant, n_filters)?;
    let params = init_glorot::<f32>(&arch, seed)?;
    model_container(&arch, &params)?.save(path)
}
