mod config;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinpol_core::extraction::{find_extrema, full_pipeline, ExtremaOptions, MatchOptions, PipelineOptions};
use spinpol_core::paper_example::{self, NoiseSpec};
use spinpol_core::polarimetry::{scan, simulate_counts, GuideField, IntensityProfile};
use spinpol_core::profile_io::{self, ProfileFormat};
use spinpol_core::verify::{self, VerifyConfig};
use spinpol_core::{Error, HalfInt, PipelineError, Stage};

use config::{ChannelSpec, ConfigError, OutputSpec, RunConfig};

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_EXTREMA: u8 = 3;
const EXIT_NO_SOLUTION: u8 = 4;
const EXIT_INCONSISTENT: u8 = 5;
const EXIT_AMBIGUOUS: u8 = 6;
const EXIT_CHECK_FAILED: u8 = 7;

#[derive(Parser)]
#[command(
    name = "spinpol",
    version,
    about = "Spin-j polarimetry: simulate phase scans and recover the relative phase and visibility"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an intensity profile over the guide phase.
    Scan(ScanArgs),
    /// Recover cos^2 delta, |cos xi|, cos^2 Phi and the visibility from a profile.
    Extract(ExtractArgs),
    /// Run the randomized property suites.
    Verify(VerifyArgs),
    /// Reproduce the worked example and compare with the published values.
    PaperExample(PaperArgs),
}

#[derive(Args)]
struct ScanArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spin as a doubled integer (3 means 3/2).
    #[arg(long)]
    j: Option<i32>,
    /// Input projection as a doubled integer.
    #[arg(long, allow_hyphen_values = true)]
    m: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    zeta: Option<f64>,
    /// Angles are given in degrees.
    #[arg(long)]
    degrees: bool,
    /// Doubled projections separated by commas, or "all".
    #[arg(long, allow_hyphen_values = true)]
    channels: Option<ChannelSpec>,
    #[arg(long)]
    phi_points: Option<usize>,
    /// Particles per grid point; enables multinomial shot noise.
    #[arg(long)]
    counts: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Guide field in tesla; requires the other guide options.
    #[arg(long, allow_hyphen_values = true, requires_all = ["guide_moment", "guide_speed"])]
    guide_field: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    guide_moment: Option<f64>,
    #[arg(long)]
    guide_speed: Option<f64>,
    #[arg(long, default_value_t = 1)]
    guide_order: u32,
    /// Profile destination; written to standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Profile file (.csv or .json).
    profile: PathBuf,
    #[arg(long)]
    j: i32,
    #[arg(long, allow_hyphen_values = true)]
    m: i32,
    /// Channels used first; default is every channel in the file.
    #[arg(long, allow_hyphen_values = true)]
    channels: Option<ChannelSpec>,
    /// Cross-channel matching tolerance on spin-1/2 intensities.
    #[arg(long)]
    match_tol: Option<f64>,
    /// Do not bring in extra channels when the match is ambiguous.
    #[arg(long)]
    no_retry: bool,
    /// Report destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long = "max-2j", default_value_t = 12)]
    max_two_j: i32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Perturb the channel polynomials (negative control).
    #[arg(long, hide = true)]
    corrupt: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Args)]
struct PaperArgs {
    /// Add multinomial shot noise.
    #[arg(long)]
    noisy: bool,
    #[arg(long, default_value_t = 1_000_000)]
    counts: u64,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ProfileFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ProfileFormat::Csv,
            FormatArg::Json => ProfileFormat::Json,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: ConfigError) -> Self {
        Self { code: EXIT_CONFIG, message: format!("invalid configuration: {e}") }
    }

    fn io(what: &str, e: io::Error) -> Self {
        Self { code: EXIT_CONFIG, message: format!("{what}: {e}") }
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::NoExtrema(_) => EXIT_NO_EXTREMA,
        Error::NoSolution { .. } => EXIT_NO_SOLUTION,
        Error::Inconsistent { .. } => EXIT_INCONSISTENT,
        Error::Ambiguous { .. } => EXIT_AMBIGUOUS,
        Error::Profile(_) | Error::Io(_) | Error::InvalidSpin(_) | Error::InvalidProjection { .. } => EXIT_CONFIG,
        Error::EmptyChannels | Error::SpinTooLarge(_) | Error::InvalidGuideField(_) => EXIT_CONFIG,
        _ => EXIT_ERROR,
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match (e.stage, error_code(&e.source)) {
            (Stage::Setup, EXIT_ERROR) => EXIT_CONFIG,
            (_, code) => code,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: error_code(&e), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Scan(args) => cmd_scan(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Verify(args) => cmd_verify(args),
        Command::PaperExample(args) => cmd_paper_example(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Writes to standard output; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = io::stdout().lock().write_all(text.as_bytes());
}

fn build_config(args: &ScanArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(&format!("reading {}", path.display()), e))?;
            RunConfig::parse_json(&text).map_err(Failure::config)?
        }
        None => {
            let need = |v: Option<f64>, name: &str| {
                v.ok_or_else(|| Failure::config(ConfigError::new(name, "required (flag or config file)")))
            };
            RunConfig {
                j: args.j.ok_or_else(|| Failure::config(ConfigError::new("j", "required (flag or config file)")))?,
                m: args.m.ok_or_else(|| Failure::config(ConfigError::new("m", "required (flag or config file)")))?,
                delta: need(args.delta, "delta")?,
                xi: need(args.xi, "xi")?,
                zeta: need(args.zeta, "zeta")?,
                degrees: false,
                channels: ChannelSpec::All,
                phi_points: 360,
                counts_per_point: None,
                seed: None,
                guide: None,
                output: None,
            }
        }
    };
    if let Some(v) = args.j {
        cfg.j = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(v) = args.xi {
        cfg.xi = v;
    }
    if let Some(v) = args.zeta {
        cfg.zeta = v;
    }
    if args.degrees {
        cfg.degrees = true;
    }
    if let Some(v) = &args.channels {
        cfg.channels = v.clone();
    }
    if let Some(v) = args.phi_points {
        cfg.phi_points = v;
    }
    if args.counts.is_some() {
        cfg.counts_per_point = args.counts;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let (Some(b_field), Some(moment), Some(speed)) = (args.guide_field, args.guide_moment, args.guide_speed) {
        cfg.guide = Some(GuideField { b_field, moment, speed, order: args.guide_order });
    }
    if let Some(path) = &args.output {
        cfg.output = Some(OutputSpec { path: path.clone(), format: args.format.map(Into::into) });
    } else if let (Some(out), Some(f)) = (cfg.output.as_mut(), args.format) {
        out.format = Some(f.into());
    }
    Ok(cfg)
}

fn summarize(profile: &IntensityProfile, j: HalfInt) -> String {
    let mut out = String::new();
    let opts = ExtremaOptions { harmonics: Some(j.twice().max(1) as usize), ..Default::default() };
    match find_extrema(profile, &opts) {
        Ok(pair) if pair.flat => out.push_str("extrema: profile is flat (cyclic evolution)\n"),
        Ok(pair) => out.push_str(&format!("extrema: phi = {:.6}, {:.6}\n", pair.phi_a, pair.phi_b)),
        Err(e) => out.push_str(&format!("extrema: {e}\n")),
    }
    for (k, v) in &profile.channels {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!("channel m' = {k}: min {lo:.6}, max {hi:.6}\n"));
    }
    out
}

fn cmd_scan(args: ScanArgs) -> Result<u8, Failure> {
    let cfg = build_config(&args)?;
    let run = cfg.validate().map_err(Failure::config)?;
    let mut profile = scan(run.j, run.m, &run.params, run.guide.as_ref(), &run.grid, &run.channels)?;
    if let Some((counts, seed)) = run.counts {
        let translations = profile.translations.take();
        profile = simulate_counts(&profile, counts, seed)?;
        profile.translations = translations;
    }
    let summary = summarize(&profile, run.j);
    match &cfg.output {
        Some(out) => {
            let format = out.format.unwrap_or_else(|| ProfileFormat::from_path(&out.path));
            profile_io::save(&profile, &out.path, format)?;
            emit(&format!("{summary}wrote {}\n", out.path.display()));
        }
        None => {
            let mut buf = Vec::new();
            match args.format.map(ProfileFormat::from).unwrap_or(ProfileFormat::Csv) {
                ProfileFormat::Csv => profile_io::write_csv(&profile, &mut buf)?,
                ProfileFormat::Json => {
                    profile_io::write_json(&profile, &mut buf)?;
                    buf.push(b'\n');
                }
            }
            emit(&String::from_utf8_lossy(&buf));
            eprint!("{summary}");
        }
    }
    Ok(0)
}

fn cmd_extract(args: ExtractArgs) -> Result<u8, Failure> {
    let profile = profile_io::load(&args.profile)
        .map_err(|e| Failure { code: EXIT_CONFIG, message: format!("reading {}: {e}", args.profile.display()) })?;
    let j = HalfInt::spin(args.j).map_err(|e| Failure::config(ConfigError::new("j", e.to_string())))?;
    let m = HalfInt::from_twice(args.m);
    let channels = match &args.channels {
        Some(spec) => spec.resolve(j).map_err(Failure::config)?,
        None => profile.channel_keys(),
    };
    let mut opts = PipelineOptions { retry_with_extra_channels: !args.no_retry, ..Default::default() };
    if let Some(tol) = args.match_tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Failure::config(ConfigError::new("match-tol", "must be positive")));
        }
        opts.matching = MatchOptions { tolerance: tol, ..opts.matching };
    }
    let result = full_pipeline(&profile, j, m, &channels, &opts)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    match &args.output {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| Failure::io(&format!("writing {}", path.display()), e))?
        }
        None => emit(&format!("{json}\n")),
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Failure> {
    if args.trials < 1 {
        return Err(Failure::config(ConfigError::new("trials", "must be at least 1")));
    }
    if !(0..=24).contains(&args.max_two_j) {
        return Err(Failure::config(ConfigError::new("max-2j", "must be between 0 and 24")));
    }
    let cfg = VerifyConfig { trials: args.trials, max_two_j: args.max_two_j, seed: args.seed, corrupt: args.corrupt };
    let reports = verify::run_all(&cfg);
    let passed = reports.iter().all(|r| r.passed);
    match args.format {
        ReportFormat::Json => {
            emit(&format!("{}\n", serde_json::to_string_pretty(&reports).expect("reports serialize")))
        }
        ReportFormat::Text => {
            for r in &reports {
                emit(&format!(
                    "{} {:<22} cases {:>5}  max error {:.3e}  tolerance {:.0e}  {:.1} ms\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.max_error,
                    r.tolerance,
                    r.elapsed_ms
                ));
                if let Some(d) = &r.detail {
                    emit(&format!("     {d}\n"));
                }
                if let Some(f) = &r.failure {
                    emit(&format!("     failing property {}: {f}\n", r.name));
                }
            }
        }
    }
    Ok(if passed { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_paper_example(args: PaperArgs) -> Result<u8, Failure> {
    let noise = args.noisy.then_some(NoiseSpec { counts: args.counts, seed: args.seed });
    if args.noisy && args.counts == 0 {
        return Err(Failure::config(ConfigError::new("counts", "must be at least 1")));
    }
    let report = paper_example::run(noise)?;
    match args.format {
        ReportFormat::Json => emit(&format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes"))),
        ReportFormat::Text => emit(&paper_example::render_table(&report)),
    }
    Ok(if report.passed { 0 } else { EXIT_CHECK_FAILED })
}
