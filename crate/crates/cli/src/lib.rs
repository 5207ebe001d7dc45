//! Command-line front end for the correlation toolkit.
//!
//! Four subcommands: `generate` (synthetic particle pairs), `correlate`
//! (vector field from an image pair), `benchmark` (Monte Carlo reports) and
//! `compare` (outlier detection against a reference field).

pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sbcc_core::bench::{emit_report, read_summary, run_robustness_trial, run_rmse_sweep, ExperimentSpec, MethodReport};
use sbcc_core::correlators::{MethodConfig, METHOD_NAMES};
use sbcc_core::pivgrid::{
    detect_outliers, median_reference, ContextPolicy, ContextSource, GridSpec, PipelineOptions, PreparedPair,
    Sampling, VectorFlag, DEFAULT_OUTLIER_THRESHOLD,
};
use sbcc_core::synth::{
    generate_pair, BackgroundPattern, BackgroundSpec, FlowSpec, NoiseSpec, ParticleSpec, RenderMode,
};

use crate::config::{parse_config, parse_displacements, parse_methods, BenchConfig, Mode};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sbcc", version, about = "Frequency-domain cross-correlation for particle image velocimetry")]
pub struct Cli {
    /// Worker threads for the parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "SBCC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic particle image pair with its truth field.
    ///
    /// Writes frame1.png and frame2.png (16-bit grayscale, intensity * 65535)
    /// and truth.csv (columns x,y,u,v) into the output directory.
    Generate(GenerateArgs),
    /// Estimate a vector field from two images.
    ///
    /// Writes a CSV with columns x,y,u,v,flag,peak,secondary_ratio,sigma_fit.
    Correlate(CorrelateArgs),
    /// Run a Monte Carlo experiment and write CSV and JSON reports.
    ///
    /// CSV columns: method,dx_true,dy_true,rmse,bias_x,bias_y,outliers,
    /// degenerate,sigma_fit,seconds_per_pair.
    Benchmark(BenchmarkArgs),
    /// Flag outliers in a field against another field or a median reference.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    None,
    Smooth,
    Particles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderArg {
    Integrated,
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    Uniform,
    Rotation,
    Shear,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Particle image diameter in pixels.
    #[arg(long, default_value_t = 2.2)]
    pub dp: f64,
    /// Seeding density in particles per pixel.
    #[arg(long, default_value_t = 0.02)]
    pub cp: f64,
    #[arg(long, default_value_t = sbcc_core::synth::DEFAULT_INTENSITY_PEAK)]
    pub intensity: f64,
    #[arg(long, value_enum, default_value_t = FlowArg::Uniform)]
    pub flow: FlowArg,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub u: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub v: f64,
    /// Rotation angle in radians about the image center (rotation flow).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub omega: f64,
    /// Velocity gradient du/dy about the image center (shear flow).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub dudy: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of independent per-frame Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of particles replaced in frame 2.
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    #[arg(long, value_enum, default_value_t = BackgroundArg::None)]
    pub background: BackgroundArg,
    /// Particle-to-background standard deviation ratio.
    #[arg(long, default_value_t = 2.0)]
    pub background_snr: f64,
    /// Correlation length of the smooth background, pixels.
    #[arg(long, default_value_t = 4.0)]
    pub background_scale: f64,
    #[arg(long)]
    pub background_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = RenderArg::Integrated)]
    pub render: RenderArg,
    /// Interrogation window used to sample the truth field.
    #[arg(long, default_value_t = sbcc_core::pivgrid::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = sbcc_core::pivgrid::DEFAULT_STEP)]
    pub step: usize,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Both,
    Frame1,
    Frame2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Global,
    Random,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    pub frame1: PathBuf,
    pub frame2: PathBuf,
    /// One of scc, pc, spof, rpc, cspc, cfcc, sbcc, sbcc-b1, sbcc-b2, sbcc-b3.
    #[arg(long, short, default_value = "sbcc")]
    pub method: String,
    #[arg(long, short, default_value = "field.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = sbcc_core::pivgrid::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = sbcc_core::pivgrid::DEFAULT_STEP)]
    pub step: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Spatial sigma of the desired Gaussian response, pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_d: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = sbcc_core::pivgrid::DEFAULT_CONTEXT_M)]
    pub context_m: usize,
    #[arg(long, value_enum, default_value_t = SourceArg::Both)]
    pub context_source: SourceArg,
    #[arg(long, value_enum, default_value_t = SamplingArg::Global)]
    pub context_sampling: SamplingArg,
    #[arg(long, default_value_t = 0)]
    pub context_seed: u64,
    /// Skip mean subtraction of each window.
    #[arg(long)]
    pub raw: bool,
    /// Also write the correlation plane of grid cell IX,IY.
    #[arg(long, value_name = "IX,IY")]
    pub dump_plane: Option<String>,
    #[arg(long, default_value = "plane.csv")]
    pub plane_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Key-value experiment file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Rerun the experiment embedded in a JSON summary.
    #[arg(long, conflicts_with = "config")]
    pub from_json: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    pub methods: Option<String>,
    /// `dx,dy` pairs separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    pub displacements: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value = "report.csv")]
    pub out_csv: PathBuf,
    #[arg(long, default_value = "summary.json")]
    pub out_json: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Median,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub field: PathBuf,
    /// Reference field (a field or truth CSV on the same grid).
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    pub against: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    /// Squared-deviation threshold in px^2.
    #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD)]
    pub threshold: f64,
    /// Where to write the annotated field.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.report());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Correlate(a) => cmd_correlate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let particle = ParticleSpec {
        d_p: a.dp,
        c_p: a.cp,
        intensity_peak: a.intensity,
        rng_seed: a.seed,
        render: match a.render {
            RenderArg::Integrated => RenderMode::PixelIntegrated,
            RenderArg::Point => RenderMode::PointSampled,
        },
    };
    particle.validate().map_err(CliError::from_flags)?;
    let center = a.size as f64 / 2.0;
    let flow = match a.flow {
        FlowArg::Uniform => FlowSpec::uniform(a.u, a.v),
        FlowArg::Rotation => FlowSpec::Rotation {
            cx: center,
            cy: center,
            omega: a.omega,
        },
        FlowArg::Shear => FlowSpec::Shear { dudy: a.dudy, y0: center },
    };
    let pattern = match a.background {
        BackgroundArg::None => None,
        BackgroundArg::Smooth => Some(BackgroundPattern::Smooth {
            length_scale: a.background_scale,
        }),
        BackgroundArg::Particles => Some(BackgroundPattern::StaticParticles { d_p: a.dp, c_p: a.cp }),
    };
    let background = pattern
        .map(|p| {
            let seed = a.background_seed.unwrap_or(a.seed.wrapping_add(1 << 32));
            BackgroundSpec::for_snr(a.background_snr, &particle, p, seed)
        })
        .transpose()
        .map_err(CliError::from_flags)?;
    let noise = NoiseSpec {
        gaussian_sigma: a.noise,
        background,
        out_of_plane_loss: a.loss,
    };
    let grid = GridSpec::new(a.window, a.step).map_err(CliError::from_flags)?;
    let pair = generate_pair(a.size, &particle, &flow, &noise, &grid).map_err(CliError::from_flags)?;
    ensure_dir(&a.out)?;
    io::write_png16(&a.out.join("frame1.png"), &pair.image1)?;
    io::write_png16(&a.out.join("frame2.png"), &pair.image2)?;
    io::save_truth(&a.out.join("truth.csv"), &pair.truth)?;
    println!(
        "wrote {} ({} particles, {} truth vectors)",
        a.out.display(),
        pair.particles1.len(),
        pair.truth.len()
    );
    Ok(())
}

/// Method preset named by `name` with any explicit parameter overrides.
pub fn method_from_args(a: &CorrelateArgs) -> CliResult<MethodConfig> {
    let mut cfg = MethodConfig::from_name(&a.method).map_err(|_| {
        CliError::Usage(format!(
            "unknown method '{}'; valid names: {}",
            a.method,
            METHOD_NAMES.join(",")
        ))
    })?;
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.mu {
        cfg.mu = v;
    }
    if let Some(v) = a.nu {
        cfg.nu = v;
        cfg.use_context = v > 0.0;
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = a.sigma_d {
        cfg.sigma_d = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    cfg.validate().map_err(CliError::from_flags)?;
    Ok(cfg)
}

fn parse_cell(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--dump-plane expects IX,IY, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn cmd_correlate(a: &CorrelateArgs) -> CliResult<()> {
    let cfg = method_from_args(a)?;
    let grid = GridSpec::new(a.window, a.step).map_err(CliError::from_flags)?;
    let policy = ContextPolicy {
        m: a.context_m,
        source: match a.context_source {
            SourceArg::Both => ContextSource::BothFrames,
            SourceArg::Frame1 => ContextSource::Frame1,
            SourceArg::Frame2 => ContextSource::Frame2,
        },
        sampling: match a.context_sampling {
            SamplingArg::Global => Sampling::GlobalAverage,
            SamplingArg::Random => Sampling::RandomExcludingSelf,
        },
        rng_seed: a.context_seed,
    };
    policy.validate().map_err(CliError::from_flags)?;
    let cell = a.dump_plane.as_deref().map(parse_cell).transpose()?;
    let img1 = io::read_image(&a.frame1)?;
    let img2 = io::read_image(&a.frame2)?;
    if img1.dim() != img2.dim() {
        return Err(CliError::Input(format!(
            "image sizes differ: {}x{} vs {}x{}",
            img1.ncols(),
            img1.nrows(),
            img2.ncols(),
            img2.nrows()
        )));
    }
    let options = PipelineOptions {
        subtract_mean: !a.raw,
        fit_width: true,
    };
    let prep = PreparedPair::new(&img1, &img2, &grid, options)?;
    let field = prep.correlate(&cfg, &policy)?;
    io::save_field(&a.out, &field)?;
    if let Some((ix, iy)) = cell {
        if ix >= prep.nx || iy >= prep.ny {
            return Err(CliError::Usage(format!(
                "--dump-plane {ix},{iy} is outside the {}x{} grid",
                prep.nx, prep.ny
            )));
        }
        let plane = prep.correlation_plane(&cfg, &policy, iy * prep.nx + ix)?;
        io::save_plane(&a.plane_out, &plane)?;
    }
    println!(
        "{}: {} vectors ({} degenerate) -> {}",
        cfg.name(),
        field.len(),
        field.count(VectorFlag::Degenerate),
        a.out.display()
    );
    Ok(())
}

fn bench_config(a: &BenchmarkArgs) -> CliResult<BenchConfig> {
    let mut cfg = if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        parse_config(&text)?
    } else if let Some(path) = &a.from_json {
        let summary = read_summary(path)?;
        let mode = if summary.spec.noise.background.is_some() {
            Mode::Robustness
        } else {
            Mode::Sweep
        };
        BenchConfig {
            mode,
            spec: summary.spec,
        }
    } else {
        BenchConfig {
            mode: Mode::Sweep,
            spec: ExperimentSpec::default(),
        }
    };
    if let Some(m) = &a.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(m) = &a.methods {
        cfg.spec.methods = parse_methods(m)?;
    }
    if let Some(d) = &a.displacements {
        cfg.spec.displacements = parse_displacements(d)?;
    }
    if let Some(r) = a.runs {
        cfg.spec.runs = r;
    }
    if let Some(s) = a.seed {
        cfg.spec.seed = s;
    }
    if let Some(s) = a.size {
        cfg.spec.image_size = s;
    }
    cfg.spec.validate().map_err(CliError::from_flags)?;
    Ok(cfg)
}

fn print_reports(reports: &[MethodReport]) {
    for r in reports {
        for s in &r.rows {
            println!(
                "{:<10} d=({}, {}) rmse={:.5} bias=({:.5}, {:.5}) outliers={} degenerate={}",
                r.method, s.dx_true, s.dy_true, s.rmse, s.bias_x, s.bias_y, s.outliers, s.degenerate
            );
        }
    }
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    let cfg = bench_config(a)?;
    let reports = match cfg.mode {
        Mode::Sweep => run_rmse_sweep(&cfg.spec)?,
        Mode::Robustness => {
            let (table, reports) = run_robustness_trial(&cfg.spec)?;
            for row in &table {
                println!("{:<10} outliers={} of {}", row.method, row.outliers, row.vectors);
            }
            reports
        }
    };
    if cfg.mode == Mode::Sweep {
        print_reports(&reports);
    }
    emit_report(&cfg.spec, &reports, &a.out_csv, &a.out_json)?;
    println!("wrote {} and {}", a.out_csv.display(), a.out_json.display());
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    let field = io::load_field(&a.field)?;
    let reference = match (&a.against, a.reference) {
        (Some(path), _) => io::load_field(path)?,
        (None, Some(ReferenceArg::Median)) => median_reference(&field),
        (None, None) => return Err(CliError::Usage("need --against FILE or --reference median".into())),
    };
    if !(a.threshold >= 0.0) {
        return Err(CliError::Usage(format!("--threshold must be >= 0, got {}", a.threshold)));
    }
    let (flagged, count) = detect_outliers(&field, &reference, a.threshold)?;
    if let Some(out) = &a.out {
        io::save_field(out, &flagged)?;
    }
    println!("outliers: {count}");
    Ok(())
}
