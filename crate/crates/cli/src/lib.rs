//! Command-line driver for `tracemix` experiments.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad parameters or input,
//! 3 recovery or check failed, 4 I/O failure.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use tracemix::channel::{
    read_trace_file, sample_histogram, sample_traces, write_trace_file, ChannelConfig, Trace, TraceFileError,
    TraceFileHeader, TraceHistogram,
};
use tracemix::estimator::{accumulate_histogram, DroppedPoint, MomentEstimates, MomentRecord};
use tracemix::oracle::exact_g_expectation;
use tracemix::recovery::{exhaustive_distinguisher, needs_reduction, recover, TraceSource};
use tracemix::zgrid::{build_arc_grid, build_grid, default_l, ArcWidth, GridDump, GridSpec};
use tracemix::{eval_poly, tv_distance, BitString, ProblemParams, SparseDistribution};

use config::{ExperimentConfig, InputHints, Mode, Settings};
use report::{emit_report, write_json, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_PARAM: i32 = 2;
pub const EXIT_FAILED: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Largest deviation `oracle-check` accepts.
pub const ORACLE_TOLERANCE: f64 = 1e-8;
const ORACLE_RATES: [f64; 3] = [0.3, 0.5, 0.9];
const ORACLE_POINTS: usize = 5;
const ORACLE_MAX_N: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Param(String),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] tracemix::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use tracemix::Error as E;
        match self {
            CliError::Param(_) => EXIT_PARAM,
            CliError::Failed(_) => EXIT_FAILED,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Parameter(_) | E::SingularPoint { .. } | E::Threshold(_) | E::CorruptInput(_) => EXIT_PARAM,
                E::NoSolution { .. } | E::Ambiguous { .. } | E::Margin | E::RecoveryFailed(_) => EXIT_FAILED,
                E::Internal(_) => EXIT_INTERNAL,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tracemix", version, about = "Recover sparse mixtures of bit strings from deletion-channel traces")]
struct Cli {
    #[command(subcommand)]
    mode: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw traces from a distribution file.
    Simulate,
    /// Write moment estimates on the evaluation grid.
    Estimate,
    /// Recover the distribution from traces.
    Recover,
    /// Brute-force search over all small mixtures (n <= 8, ell <= 2).
    Distinguish,
    /// Compare the estimator's exact expectation with its target.
    OracleCheck,
}

#[derive(Debug, Args)]
struct Flags {
    /// Settings file of `key = value` lines, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    ell: Option<usize>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Distribution JSON file.
    #[arg(long, global = true)]
    dist: Option<PathBuf>,
    /// Trace file.
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
    /// Largest power checked by oracle-check.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Any other setting, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

impl Flags {
    fn merge_into(&self, s: &mut Settings) -> Result<(), CliError> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Param(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
            ("p", self.p.map(|v| v.to_string())),
            ("n", self.n.map(|v| v.to_string())),
            ("ell", self.ell.map(|v| v.to_string())),
            ("eps", self.eps.map(|v| v.to_string())),
            ("grid_points", self.grid_points.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("out", path(&self.out)),
            ("dist", path(&self.dist)),
            ("traces", path(&self.traces)),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        Ok(())
    }
}

/// Parses `args` (program name first), runs the selected mode and returns
/// the exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARAM } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tracemix: error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut settings = match &cli.flags.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    cli.flags.merge_into(&mut settings)?;
    let mode = match cli.mode {
        Command::Simulate => Mode::Simulate,
        Command::Estimate => Mode::Estimate,
        Command::Recover => Mode::Recover,
        Command::Distinguish => Mode::Distinguish,
        Command::OracleCheck => Mode::OracleCheck,
    };
    let workers = settings.get::<usize>("workers")?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Param("workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| tracemix::Error::Internal(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match mode {
        Mode::Simulate => simulate(settings),
        Mode::Estimate => estimate(settings),
        Mode::Recover => recover_mode(settings),
        Mode::Distinguish => distinguish(settings),
        Mode::OracleCheck => oracle_check(settings),
    })
}

fn read_distribution(path: &Path) -> Result<SparseDistribution, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        if e.is_io() {
            CliError::io(path, e.into())
        } else {
            tracemix::Error::CorruptInput(format!("{}: {e}", path.display())).into()
        }
    })
}

fn read_traces(path: &Path) -> Result<(TraceFileHeader, Vec<Trace>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_trace_file(BufReader::new(file)).map_err(|e| match e {
        TraceFileError::Io(e) => CliError::io(path, e),
        TraceFileError::Format(e) => e.into(),
    })
}

/// Inputs named in the settings, loaded once.
struct Inputs {
    truth: Option<SparseDistribution>,
    traces: Option<(TraceFileHeader, Vec<Trace>)>,
}

impl Inputs {
    fn load(settings: &Settings) -> Result<Self, CliError> {
        let truth = settings.path("dist").map(|p| read_distribution(&p)).transpose()?;
        let traces = settings.path("traces").map(|p| read_traces(&p)).transpose()?;
        Ok(Self { truth, traces })
    }

    fn hints(&self) -> InputHints {
        let mut h = InputHints::default();
        if let Some(d) = &self.truth {
            h.n = Some(d.n());
            h.ell = Some(d.len());
        }
        if let Some((header, traces)) = &self.traces {
            h.n = Some(header.n);
            h.p = Some(header.p);
            h.trace_count = Some(traces.len() as u64);
        }
        h
    }

    fn check_lengths(&self) -> Result<(), CliError> {
        if let (Some(d), Some((h, _))) = (&self.truth, &self.traces) {
            if d.n() != h.n {
                return Err(CliError::Param(format!(
                    "distribution has length {} but traces have length {}",
                    d.n(),
                    h.n
                )));
            }
        }
        Ok(())
    }
}

/// Pins the values a replay needs into the settings echoed by the manifest.
fn pin(settings: &mut Settings, cfg: &ExperimentConfig) -> Result<(), CliError> {
    settings.set("n", &cfg.params.n().to_string())?;
    settings.set("p", &cfg.params.p().to_string())?;
    settings.set("ell", &cfg.params.ell().to_string())?;
    settings.set("eps", &cfg.params.eps().to_string())?;
    settings.set("seed", &cfg.seed.to_string())?;
    settings.set("samples", &cfg.sample_count.to_string())
}

fn resolve(mode: Mode, settings: &mut Settings, inputs: &Inputs) -> Result<ExperimentConfig, CliError> {
    inputs.check_lengths()?;
    let cfg = ExperimentConfig::resolve(mode, settings, inputs.hints())?;
    pin(settings, &cfg)?;
    Ok(cfg)
}

fn simulate(mut settings: Settings) -> Result<(), CliError> {
    let inputs = Inputs::load(&settings)?;
    let cfg = resolve(Mode::Simulate, &mut settings, &inputs)?;
    let truth = inputs
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Param("simulate needs --dist".into()))?;
    let out = cfg.require_out()?;
    let channel = ChannelConfig::new(cfg.params.p(), cfg.seed)?;
    let traces = sample_traces(truth, &channel, cfg.sample_count);
    let header = TraceFileHeader { n: cfg.params.n(), p: cfg.params.p(), seed: cfg.seed };
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(file);
    write_trace_file(&mut w, &header, &traces)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out, e))?;
    Manifest::new(Mode::Simulate, cfg.seed, &settings, &cfg).write_beside(vec![out.to_path_buf()])?;
    println!("wrote {} traces to {}", traces.len(), out.display());
    Ok(())
}

/// Histogram of the configured traces, simulated or read from file.
fn histogram(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<TraceHistogram, CliError> {
    match (&inputs.traces, &inputs.truth) {
        (Some((_, traces)), _) => {
            if (traces.len() as u64) < cfg.sample_count {
                return Err(CliError::Param(format!(
                    "{} traces available, {} requested",
                    traces.len(),
                    cfg.sample_count
                )));
            }
            Ok(TraceHistogram::from_traces(cfg.params.n(), &traces[..cfg.sample_count as usize])?)
        }
        (None, Some(d)) => {
            cfg.params.check_distribution(d)?;
            let channel = ChannelConfig::new(cfg.params.p(), cfg.seed)?;
            Ok(sample_histogram(d, &channel, cfg.sample_count))
        }
        (None, None) => Err(CliError::Param(format!("{} needs --traces or --dist", cfg.mode.name()))),
    }
}

fn moment_estimates(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<MomentEstimates, CliError> {
    let hist = histogram(cfg, inputs)?;
    let grid = build_grid(&cfg.grid, cfg.params.p())?;
    Ok(accumulate_histogram(&hist, &grid, 2 * cfg.params.ell() - 1, &cfg.params)?)
}

#[derive(Serialize)]
struct MomentFile<'a> {
    params: ProblemParams,
    sample_count: u64,
    grid: GridDump,
    dropped: &'a [DroppedPoint],
    records: Vec<MomentRecord>,
}

fn estimate(mut settings: Settings) -> Result<(), CliError> {
    let inputs = Inputs::load(&settings)?;
    let cfg = resolve(Mode::Estimate, &mut settings, &inputs)?;
    let out = cfg.require_out()?;
    let est = moment_estimates(&cfg, &inputs)?;
    let file = MomentFile {
        params: cfg.params,
        sample_count: est.sample_count(),
        grid: GridDump::new(&cfg.grid, est.points()),
        dropped: est.dropped(),
        records: est.to_records(),
    };
    write_json(out, &file)?;
    Manifest::new(Mode::Estimate, cfg.seed, &settings, &cfg).write_beside(vec![out.to_path_buf()])?;
    println!(
        "wrote {} moments at {} points ({} dropped) to {}",
        file.records.len(),
        est.len(),
        est.dropped().len(),
        out.display()
    );
    Ok(())
}

fn print_distribution(d: &SparseDistribution) {
    for (x, w) in d.iter() {
        println!("support {x} weight {w:.6}");
    }
}

fn report_truth(found: &SparseDistribution, truth: Option<&SparseDistribution>) -> Result<Option<f64>, CliError> {
    let tv = truth.map(|t| tv_distance(found, t)).transpose()?;
    if let Some(tv) = tv {
        println!("tv_to_truth {tv:.6e}");
    }
    Ok(tv)
}

fn recover_mode(mut settings: Settings) -> Result<(), CliError> {
    let inputs = Inputs::load(&settings)?;
    let cfg = resolve(Mode::Recover, &mut settings, &inputs)?;
    let out = cfg.require_out()?;
    let source = match (&inputs.traces, &inputs.truth) {
        (Some((_, traces)), _) => {
            if needs_reduction(&cfg.params) {
                return Err(CliError::Param(
                    "small retention rates need retained counts, which trace files do not record; use --dist".into(),
                ));
            }
            TraceSource::Traces(traces)
        }
        (None, Some(d)) => TraceSource::Simulate(d),
        (None, None) => return Err(CliError::Param("recover needs --traces or --dist".into())),
    };
    let result = recover(source, &cfg.params, &cfg.recovery())?;
    emit_report(&result, out)?;
    let csv = report::csv_path(out);
    Manifest::new(Mode::Recover, cfg.seed, &settings, &cfg).write_beside(vec![out.to_path_buf(), csv])?;
    print_distribution(&result.distribution);
    println!("validation_ratio {:.4}", result.diagnostics.selected_ratio);
    report_truth(&result.distribution, inputs.truth.as_ref())?;
    Ok(())
}

#[derive(Serialize)]
struct DistinguishFile<'a> {
    distribution: &'a SparseDistribution,
    weight_grid: f64,
    tv_to_truth: Option<f64>,
}

fn distinguish(mut settings: Settings) -> Result<(), CliError> {
    let inputs = Inputs::load(&settings)?;
    let cfg = resolve(Mode::Distinguish, &mut settings, &inputs)?;
    if needs_reduction(&cfg.params) {
        return Err(CliError::Param("distinguish does not support small retention rates".into()));
    }
    let est = moment_estimates(&cfg, &inputs)?;
    let found = exhaustive_distinguisher(&est, &cfg.params, cfg.weight_grid, &cfg.margin)?;
    print_distribution(&found);
    let tv_to_truth = report_truth(&found, inputs.truth.as_ref())?;
    if let Some(out) = &cfg.out {
        let file = DistinguishFile { distribution: &found, weight_grid: cfg.weight_grid, tv_to_truth };
        write_json(out, &file)?;
        Manifest::new(Mode::Distinguish, cfg.seed, &settings, &cfg).write_beside(vec![out.clone()])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct OracleCheckConfig {
    n: usize,
    m: usize,
    rates: Vec<f64>,
    points_per_rate: usize,
    tolerance: f64,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct WorstCase {
    string: BitString,
    m: usize,
    p: f64,
    #[serde(rename = "z")]
    z: [f64; 2],
    deviation: f64,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    n: usize,
    m: usize,
    cases: usize,
    max_deviation: f64,
    tolerance: f64,
    passed: bool,
    worst: Option<WorstCase>,
}

fn oracle_check(settings: Settings) -> Result<(), CliError> {
    let cfg = OracleCheckConfig {
        n: settings.get_or("n", 8usize)?,
        m: settings.get_or("m", 3usize)?,
        rates: ORACLE_RATES.to_vec(),
        points_per_rate: ORACLE_POINTS,
        tolerance: ORACLE_TOLERANCE,
        out: settings.path("out"),
    };
    if cfg.n == 0 || cfg.n > ORACLE_MAX_N {
        return Err(CliError::Param(format!("oracle-check needs 1 <= n <= {ORACLE_MAX_N}")));
    }
    if cfg.m == 0 {
        return Err(CliError::Param("oracle-check needs m >= 1".into()));
    }
    let mut cases = Vec::new();
    for &p in &cfg.rates {
        let spec = GridSpec::arc_with_points(default_l(cfg.n, p), ArcWidth::OneOverL, cfg.points_per_rate)?;
        for g in build_arc_grid(&spec)? {
            for m in 1..=cfg.m {
                cases.push((p, g.z, m));
            }
        }
    }
    let strings: Vec<BitString> = BitString::all(cfg.n).collect();
    let worst = strings
        .par_iter()
        .map(|x| -> tracemix::Result<Option<WorstCase>> {
            let mut worst: Option<WorstCase> = None;
            for &(p, z, m) in &cases {
                let exact = exact_g_expectation(x, z, m, p)?;
                let deviation = (exact - eval_poly(x, z).powu(m as u32)).norm();
                if worst.as_ref().is_none_or(|w| deviation > w.deviation) {
                    worst = Some(WorstCase { string: x.clone(), m, p, z: [z.re, z.im], deviation });
                }
            }
            Ok(worst)
        })
        .collect::<tracemix::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .max_by(|a, b| a.deviation.total_cmp(&b.deviation));
    let max_deviation = worst.as_ref().map_or(0.0, |w| w.deviation);
    let report = OracleReport {
        n: cfg.n,
        m: cfg.m,
        cases: cases.len() * strings.len(),
        max_deviation,
        tolerance: cfg.tolerance,
        passed: max_deviation <= cfg.tolerance,
        worst,
    };
    println!(
        "oracle-check n={} m={} cases={} max_deviation={:.3e} tolerance={:.0e}",
        report.n, report.m, report.cases, report.max_deviation, report.tolerance
    );
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
        Manifest::new(Mode::OracleCheck, 0, &settings, &cfg).write_beside(vec![out.clone()])?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "max deviation {:.3e} exceeds {:.0e}",
            report.max_deviation, report.tolerance
        )))
    }
}
