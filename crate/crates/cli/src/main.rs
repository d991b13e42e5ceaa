//! Command-line front end for the disparity engine: synthesize rectified
//! stereo pairs, compute disparity maps, evaluate them against ground truth,
//! and benchmark throughput.
//!
//! Exit codes: 0 success, 2 unreadable or malformed input file, 3 image
//! dimension mismatch, 4 bad configuration or scene parameters.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stereolk::bench::run_benchmark;
use stereolk::config::SolverConfig;
use stereolk::error::Error;
use stereolk::eval::{evaluate, CameraIntrinsics, EvalReport};
use stereolk::fusion::{DisparityMap, FusionMode};
use stereolk::image::{from_gray8, GrayImage};
use stereolk::pfm;
use stereolk::pipeline::{compute_disparity_with_stats, PipelineStats};
use stereolk::synth::{render_pair, DisparityModel, SpecularSpot};

const EXIT_UNREADABLE: u8 = 2;
const EXIT_DIMENSION: u8 = 3;
const EXIT_CONFIG: u8 = 4;

/// Disparity codes in 16-bit PNG output: `round(disparity × 256)`, 0 = invalid.
const PNG_DISPARITY_SCALE: f64 = 256.0;

#[derive(Parser)]
#[command(
    name = "stereolk",
    version,
    about = "Patch-based stereo disparity engine",
    long_about = "Computes dense disparity maps for rectified stereo pairs by \
                  matching image patches coarse-to-fine and fusing them under a \
                  Bayesian confidence model. Also generates synthetic test pairs, \
                  evaluates results against ground truth, and benchmarks throughput."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a disparity map for a rectified stereo pair
    Match(MatchArgs),
    /// Compare a disparity map against ground truth
    Eval(EvalArgs),
    /// Generate a synthetic rectified pair with exact ground truth
    Synth(SynthArgs),
    /// Measure end-to-end throughput and the per-stage breakdown
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Inverse-residual baseline weighting
    Dis,
    /// Bayesian posterior weighting
    Bdis,
}

#[derive(Args)]
struct MatchArgs {
    /// Left image (.pfm float raster, or 8-bit grayscale .png/.pgm)
    #[arg(long)]
    left: PathBuf,
    /// Right image, same dimensions as the left
    #[arg(long)]
    right: PathBuf,
    /// Weighting mode; overrides the config file (default bdis)
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// `key = value` config file; keys mirror the solver's field names
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output disparity file (.pfm, or quantized 16-bit .png); a
    /// `<stem>_conf.pfm` confidence file is written alongside it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted disparity map (.pfm, or 16-bit .png)
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: a disparity map, or a depth map when --camera is given
    #[arg(long)]
    gt: PathBuf,
    /// Camera intrinsics file (`fx fy cx cy baseline`); treats --gt as depth
    #[arg(long)]
    camera: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Uniform disparity (pure horizontal translation)
    Shift,
    /// Disparity linear in x (slanted plane)
    Plane,
    /// Disparity sinusoidal in x (smooth ridges)
    Sinusoid,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene kind
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    /// Texture seed; identical seeds and parameters reproduce identical files
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Uniform disparity of `shift` scenes (px)
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    amount: f64,
    /// Left-edge disparity of `plane` scenes (px)
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    base: f64,
    /// Disparity slope of `plane` scenes (px per px)
    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    slope: f64,
    /// Mean disparity of `sinusoid` scenes (px)
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    mean: f64,
    /// Disparity amplitude of `sinusoid` scenes (px)
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    amplitude: f64,
    /// Horizontal period of `sinusoid` scenes (px)
    #[arg(long, default_value_t = 160.0, allow_negative_numbers = true)]
    period: f64,
    /// Multiply the right image by a radial specular gain field
    #[arg(long)]
    specular: bool,
    /// Radius of the specular disc (px; default min(width,height)/3)
    #[arg(long)]
    specular_radius: Option<f64>,
    /// Peak gain at the specular center
    #[arg(long, default_value_t = 1.6)]
    specular_peak: f64,
    /// Output directory for left.pfm, right.pfm, and gt.pfm
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Left image (.pfm float raster, or 8-bit grayscale .png/.pgm)
    #[arg(long)]
    left: PathBuf,
    /// Right image, same dimensions as the left
    #[arg(long)]
    right: PathBuf,
    /// Weighting mode; overrides the config file (default bdis)
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// `key = value` config file; keys mirror the solver's field names
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for the timed runs (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Timed repetitions after one untimed warm-up (minimum 3)
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

/// A failure carrying the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

/// Maps engine errors onto the documented exit codes.
fn engine_failure(err: Error) -> Failure {
    let code = match &err {
        Error::Io(_) | Error::Pfm(_) | Error::InvalidRaster(_) => EXIT_UNREADABLE,
        Error::DimensionMismatch { .. } => EXIT_DIMENSION,
        Error::Config(_) | Error::SynthParams(_) => EXIT_CONFIG,
        _ => 1,
    };
    Failure { code, message: err.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(args) => cmd_match(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_ascii_lowercase().to_string_lossy().into_owned())
}

/// Loads a grayscale brightness image. PFM rasters keep float precision;
/// PNG/PGM inputs are decoded to 8-bit grayscale.
fn load_image(path: &Path) -> CliResult<GrayImage> {
    let unreadable = |msg: String| fail(EXIT_UNREADABLE, format!("{}: {msg}", path.display()));
    match extension_of(path).as_deref() {
        Some("pfm") => pfm::read_image_pfm_file(path).map_err(|e| unreadable(e.to_string())),
        Some("png") | Some("pgm") => {
            let decoded = image::open(path).map_err(|e| unreadable(e.to_string()))?;
            let gray = decoded.to_luma8();
            from_gray8(gray.as_raw(), gray.width() as usize, gray.height() as usize)
                .map_err(|e| unreadable(e.to_string()))
        }
        _ => Err(unreadable("unsupported image format (expected .pfm, .png, or .pgm)".into())),
    }
}

/// Loads a disparity map: PFM with +inf marking invalid pixels, or 16-bit PNG
/// with code 0 marking them (values are code / 256).
fn load_disparity(path: &Path) -> CliResult<DisparityMap> {
    let unreadable = |msg: String| fail(EXIT_UNREADABLE, format!("{}: {msg}", path.display()));
    match extension_of(path).as_deref() {
        Some("pfm") => pfm::read_disparity_pfm_file(path).map_err(|e| unreadable(e.to_string())),
        Some("png") => {
            let decoded = image::open(path).map_err(|e| unreadable(e.to_string()))?;
            let gray = decoded.to_luma16();
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let mut disp = Vec::with_capacity(w * h);
            let mut conf = Vec::with_capacity(w * h);
            let mut valid = Vec::with_capacity(w * h);
            for code in gray.as_raw() {
                let ok = *code != 0;
                disp.push(if ok { f64::from(*code) as f32 / PNG_DISPARITY_SCALE as f32 } else { 0.0 });
                conf.push(if ok { 1.0 } else { 0.0 });
                valid.push(ok);
            }
            DisparityMap::from_parts(w, h, disp, conf, valid).map_err(|e| unreadable(e.to_string()))
        }
        _ => Err(unreadable("unsupported disparity format (expected .pfm or .png)".into())),
    }
}

/// Writes the disparity channel in the format chosen by the extension.
fn write_disparity_output(path: &Path, map: &DisparityMap) -> CliResult<()> {
    match extension_of(path).as_deref() {
        Some("pfm") => pfm::write_disparity_pfm_file(path, map).map_err(engine_failure),
        Some("png") => {
            let mut img =
                image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(map.width() as u32, map.height() as u32);
            for (x, y, p) in img.enumerate_pixels_mut() {
                let (x, y) = (x as usize, y as usize);
                let code = if map.is_valid(x, y) {
                    // Quantization is lossy by design; disparities at or below
                    // 1/512 px collapse into the invalid code.
                    (f64::from(map.disparity(x, y)) * PNG_DISPARITY_SCALE).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                };
                *p = image::Luma([code]);
            }
            img.save(path)
                .map_err(|e| fail(EXIT_UNREADABLE, format!("{}: {e}", path.display())))
        }
        _ => Err(fail(
            EXIT_CONFIG,
            format!("{}: output extension must be .pfm or .png", path.display()),
        )),
    }
}

/// `out.pfm` → `out_conf.pfm` next to it.
fn confidence_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}_conf.pfm"))
}

/// Resolution profile, then config-file overrides, then the --mode flag.
fn resolve_config(
    width: usize,
    height: usize,
    config: Option<&Path>,
    mode: Option<Mode>,
) -> CliResult<SolverConfig> {
    let mut cfg = SolverConfig::for_size(width, height);
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| fail(EXIT_CONFIG, format!("config file {}: {e}", path.display())))?;
        cfg.apply_file_overrides(&text).map_err(engine_failure)?;
    }
    if let Some(mode) = mode {
        cfg.fusion_mode = match mode {
            Mode::Dis => FusionMode::ResidualInverse,
            Mode::Bdis => FusionMode::Bayesian,
        };
    }
    cfg.validate().map_err(engine_failure)?;
    Ok(cfg)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the default pool
/// (all cores) when `threads` is 0.
fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| fail(EXIT_CONFIG, format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn require_same_dims(left: &GrayImage, right: &GrayImage) -> CliResult<()> {
    if (left.width(), left.height()) != (right.width(), right.height()) {
        return Err(fail(
            EXIT_DIMENSION,
            format!(
                "left is {}x{} but right is {}x{}",
                left.width(),
                left.height(),
                right.width(),
                right.height()
            ),
        ));
    }
    Ok(())
}

fn print_stage_table(stats: &PipelineStats) {
    println!("per-stage timings (ms)");
    println!("  {:<26} {:>10}", "stage", "ms");
    println!("  {:<26} {:>10.3}", "pyramid build", stats.pyramid_ms);
    for l in stats.levels.iter().rev() {
        let tag = format!("level {} ({}x{})", l.level, l.width, l.height);
        println!("  {:<26} {:>10.3}", format!("{tag} prep"), l.prep_ms);
        println!("  {:<26} {:>10.3}", format!("{tag} solve"), l.solve_ms);
        println!("  {:<26} {:>10.3}", format!("{tag} weight"), l.weight_ms);
        println!("  {:<26} {:>10.3}", format!("{tag} fuse"), l.fuse_ms);
    }
    println!("  {:<26} {:>10.3}", "total", stats.total_ms);
}

fn print_stage_machine_lines(stats: &PipelineStats) {
    println!("pyramid_ms={}", stats.pyramid_ms);
    for l in stats.levels.iter().rev() {
        println!("level{}_prep_ms={}", l.level, l.prep_ms);
        println!("level{}_solve_ms={}", l.level, l.solve_ms);
        println!("level{}_weight_ms={}", l.level, l.weight_ms);
        println!("level{}_fuse_ms={}", l.level, l.fuse_ms);
    }
}

fn cmd_match(args: MatchArgs) -> CliResult<()> {
    let left = load_image(&args.left)?;
    let right = load_image(&args.right)?;
    require_same_dims(&left, &right)?;
    let cfg = resolve_config(left.width(), left.height(), args.config.as_deref(), args.mode)?;

    let (map, stats) =
        run_in_pool(args.threads, || compute_disparity_with_stats(&left, &right, &cfg))?
            .map_err(engine_failure)?;

    write_disparity_output(&args.out, &map)?;
    let conf_path = confidence_sidecar(&args.out);
    pfm::write_confidence_pfm_file(&conf_path, &map).map_err(engine_failure)?;

    print_stage_table(&stats);
    let density = map.valid_count() as f64 / (map.width() * map.height()) as f64;
    println!(
        "wrote {} and {} ({} valid pixels, density {:.3})",
        args.out.display(),
        conf_path.display(),
        map.valid_count(),
        density
    );
    print_stage_machine_lines(&stats);
    println!("runtime_ms={}", stats.total_ms);
    println!("valid_pixels={}", map.valid_count());
    println!("density={density}");
    Ok(())
}

fn print_eval_report(r: &EvalReport) {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    println!("evaluation");
    println!("  {:<14} {:>14}", "metric", "value");
    println!("  {:<14} {:>14}", "median_error", opt(r.median_error));
    println!("  {:<14} {:>14}", "mean_error", opt(r.mean_error));
    println!("  {:<14} {:>14}", "valid_pixels", r.valid_pixels);
    println!("  {:<14} {:>14.6}", "density", r.density);
    println!("  {:<14} {:>14}", "runtime_ms", opt(r.runtime_ms));
    if let Some(v) = r.median_error {
        println!("median_error={v}");
    }
    if let Some(v) = r.mean_error {
        println!("mean_error={v}");
    }
    println!("valid_pixels={}", r.valid_pixels);
    println!("density={}", r.density);
    if let Some(v) = r.runtime_ms {
        println!("runtime_ms={v}");
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let pred = load_disparity(&args.pred)?;
    let gt = if let Some(cam_path) = &args.camera {
        let text = fs::read_to_string(cam_path)
            .map_err(|e| fail(EXIT_UNREADABLE, format!("{}: {e}", cam_path.display())))?;
        let cam = CameraIntrinsics::parse(&text).map_err(engine_failure)?;
        let depth = load_disparity(&args.gt)?;
        cam.depth_map_to_disparity(&depth)
    } else {
        load_disparity(&args.gt)?
    };
    let report = evaluate(&pred, &gt).map_err(engine_failure)?;
    print_eval_report(&report);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let model = match args.kind {
        Kind::Shift => DisparityModel::Shift { amount: args.amount },
        Kind::Plane => DisparityModel::Plane { base: args.base, slope: args.slope },
        Kind::Sinusoid => DisparityModel::Sinusoid {
            mean: args.mean,
            amplitude: args.amplitude,
            period: args.period,
        },
    };
    let spot = args.specular.then(|| SpecularSpot {
        center: (args.width as f64 / 2.0, args.height as f64 / 2.0),
        radius: args
            .specular_radius
            .unwrap_or(args.width.min(args.height) as f64 / 3.0),
        peak_gain: args.specular_peak,
    });
    let pair = render_pair(args.width, args.height, &model, args.seed, spot.as_ref())
        .map_err(engine_failure)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| fail(EXIT_UNREADABLE, format!("{}: {e}", args.out.display())))?;
    let left_path = args.out.join("left.pfm");
    let right_path = args.out.join("right.pfm");
    let gt_path = args.out.join("gt.pfm");
    pfm::write_image_pfm_file(&left_path, &pair.left).map_err(engine_failure)?;
    pfm::write_image_pfm_file(&right_path, &pair.right).map_err(engine_failure)?;
    pfm::write_disparity_pfm_file(&gt_path, &pair.ground_truth).map_err(engine_failure)?;
    println!(
        "wrote {} {} {}",
        left_path.display(),
        right_path.display(),
        gt_path.display()
    );
    println!("width={}", args.width);
    println!("height={}", args.height);
    println!("seed={}", args.seed);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let left = load_image(&args.left)?;
    let right = load_image(&args.right)?;
    require_same_dims(&left, &right)?;
    let cfg = resolve_config(left.width(), left.height(), args.config.as_deref(), args.mode)?;

    let report = run_in_pool(args.threads, || run_benchmark(&left, &right, &cfg, args.reps))?
        .map_err(engine_failure)?;

    println!("benchmark: {} timed runs after one warm-up", report.runs_ms.len());
    for (i, ms) in report.runs_ms.iter().enumerate() {
        println!("  run {:>2} {:>10.3} ms", i + 1, ms);
    }
    println!("  median {:>10.3} ms", report.median_ms);
    println!("single-thread run: {:.3} ms", report.single_thread_ms);
    print_stage_table(&report.single_thread_stats);
    let coverage =
        report.single_thread_stats.stage_sum_ms() / report.single_thread_stats.total_ms;
    println!("stage timings cover {:.1}% of the single-thread wall time", coverage * 100.0);
    print_stage_machine_lines(&report.single_thread_stats);
    println!("median_ms={}", report.median_ms);
    println!("single_thread_ms={}", report.single_thread_ms);
    println!("stage_coverage={coverage}");
    Ok(())
}
