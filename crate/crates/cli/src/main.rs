use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use multifit::engine::{ConfigOverrides, Mode};
use multifit::harness::{fwer_study, power_study, scaling_study, StudyResult, StudySpec, Variant};
use multifit::lattice::{locate, CuboidKey};
use multifit::scenarios::{generate, ScenarioName, ScenarioSpec, RNG_NAME};
use multifit::{ingest_csv, rank_transform, run_multifit, Correction, TestMethod, TiePolicy};

#[derive(Parser)]
#[command(
    name = "multifit",
    version,
    about = "Multi-resolution independence testing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test independence of two column blocks of a CSV file.
    Test(TestArgs),
    /// Test every face of every cuboid up to the maximal resolution.
    Exhaustive(TestArgs),
    /// Draw a synthetic sample.
    Simulate(SimulateArgs),
    /// Estimate power over a grid of scenarios.
    Power(PowerArgs),
    /// Estimate the family-wise error rate on independent data.
    Fwer(FwerArgs),
    /// Time the procedure over a grid of sample sizes.
    Scale(ScaleArgs),
    /// Print the observations count of one cuboid.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fisher,
    Midp,
    Normal,
}

impl From<MethodArg> for TestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fisher => TestMethod::FisherExact,
            MethodArg::Midp => TestMethod::FisherMidP,
            MethodArg::Normal => TestMethod::NormalApprox,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    Holm,
    ModifiedHolm,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::Holm => Correction::Holm,
            CorrectionArg::ModifiedHolm => Correction::ModifiedHolm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Exhaustive,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ties {
    Stable,
    Random,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p_star: Option<f64>,
    #[arg(long)]
    r_star: Option<u32>,
    #[arg(long)]
    r_max: Option<u32>,
    #[arg(long)]
    screen_total: Option<u64>,
    #[arg(long)]
    screen_margin: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    correction: Option<CorrectionArg>,
    /// Continuity correction for the normal approximation.
    #[arg(long)]
    continuity: bool,
    /// Largest number of tests an exhaustive run may plan.
    #[arg(long)]
    budget: Option<u64>,
}

impl EngineArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            r_star: self.r_star,
            r_max: self.r_max,
            p_star: self.p_star,
            alpha: self.alpha,
            test_method: self.method.map(Into::into),
            continuity_correction: self.continuity.then_some(true),
            correction: self.correction.map(Into::into),
            screen_total_min: self.screen_total,
            screen_margin_min: self.screen_margin,
            mode: None,
            budget: self.budget,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    data: PathBuf,
    /// X columns: names, indices or ranges such as `0-1`.
    #[arg(long)]
    x: String,
    /// Y columns.
    #[arg(long)]
    y: String,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    drop_na: bool,
    #[arg(long, value_enum, default_value = "stable")]
    ties: Ties,
    /// Seed for random tie breaking.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: ScenarioName,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    noise: u32,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    dy: Option<usize>,
    /// Noise standard deviation of the superimposed sines.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all available.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    /// Comma-separated scenario names.
    #[arg(long)]
    scenario: String,
    /// Noise levels, as a list or `start:stop:step`.
    #[arg(long, default_value = "1")]
    noise: String,
    /// Sample sizes; defaults to each scenario's own.
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    dy: Option<usize>,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct FwerArgs {
    #[arg(long, default_value = "100,500,1000,2000")]
    n_grid: String,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    dy: Option<usize>,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, default_value = "100000,200000,400000")]
    n_grid: String,
    #[arg(long, default_value = "null_gaussian,linear")]
    scenario: String,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct InspectArgs {
    data: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Levels, comma separated, one per column.
    #[arg(long)]
    k: String,
    /// One-based locations, comma separated.
    #[arg(long)]
    l: String,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("bad value `{t}`: {e}"))
        })
        .collect()
}

/// `a,b,c` or `start:stop:step` (inclusive).
fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [_] => parse_list(s),
        [a, b, step] => {
            let (a, b, step): (usize, usize, usize) = (a.parse()?, b.parse()?, step.parse()?);
            if step == 0 || a > b {
                bail!("empty grid `{s}`");
            }
            Ok((a..=b).step_by(step).collect())
        }
        _ => bail!("bad grid `{s}`"),
    }
}

fn run_test(args: &TestArgs, exhaustive: bool) -> Result<()> {
    let data = ingest_csv(&args.data, &args.x, &args.y, args.drop_na)?;
    let ties = match args.ties {
        Ties::Stable => TiePolicy::StableIndex,
        Ties::Random => TiePolicy::Random { seed: args.seed },
    };
    let sample = rank_transform(&data, ties);
    let mut overrides = args.engine.overrides();
    overrides.mode = match (exhaustive, args.mode) {
        (true, _) | (_, Some(ModeArg::Exhaustive)) => Some(Mode::Exhaustive),
        _ => Some(Mode::Adaptive),
    };
    let config = overrides.resolve(sample.n(), sample.x_dims().len(), sample.y_dims().len());
    let report = run_multifit(&sample, &config)?;
    let mut out = output(args.out.as_deref())?;
    match args.format {
        Format::Json => writeln!(out, "{}", report.to_json()?)?,
        Format::Csv => report.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = ScenarioSpec::new(args.scenario, args.noise, args.seed);
    if let Some(n) = args.n {
        spec = spec.with_n(n);
    }
    let (dx, dy) = args.scenario.default_dims();
    spec = spec.with_dims(args.dx.unwrap_or(dx), args.dy.unwrap_or(dy));
    if let Some(s) = args.sigma {
        spec.sigma = s;
    }
    let data = generate(&spec)?;

    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(data.names())?;
    for r in 0..data.n() {
        w.write_record(data.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;

    if let Some(path) = &args.out {
        let sidecar = path.with_extension("json");
        let meta = serde_json::json!({ "spec": spec, "rng": RNG_NAME });
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)
            .with_context(|| format!("cannot write {}", sidecar.display()))?;
    }
    Ok(())
}

fn base_spec(study: &StudyArgs, mut spec: StudySpec) -> StudySpec {
    let mut overrides = study.engine.overrides();
    if let Some(a) = overrides.alpha.take() {
        spec.alpha = a;
    }
    if let (Some(m), Some(c)) = (overrides.test_method.take(), overrides.correction.take()) {
        spec.variants = vec![Variant::new(m, c)];
    } else if let Some(m) = overrides.test_method.take() {
        spec.variants = vec![Variant::new(m, Correction::Holm)];
    } else if let Some(c) = overrides.correction.take() {
        spec.variants = vec![Variant::new(TestMethod::FisherExact, c)];
    }
    spec.overrides = overrides;
    spec.seed_base = study.seed;
    spec.workers = study.workers;
    spec
}

fn write_study(result: &StudyResult, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn dims(dx: Option<usize>, dy: Option<usize>) -> Option<(usize, usize)> {
    match (dx, dy) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(2), b.unwrap_or(2))),
    }
}

fn run_power(args: &PowerArgs) -> Result<()> {
    let scenarios: Vec<ScenarioName> = parse_list(&args.scenario)?;
    let noise: Vec<u32> = parse_grid(&args.noise)?
        .into_iter()
        .map(|v| v as u32)
        .collect();
    let mut cells = Vec::new();
    let mut meta = None;
    for name in scenarios {
        let n_values = match &args.n_grid {
            Some(g) => parse_grid(g)?,
            None => vec![name.default_n()],
        };
        let mut spec = base_spec(&args.study, StudySpec::power(name, 1, 0, args.study.reps));
        spec.noise_levels = noise.clone();
        spec.n_values = n_values;
        spec.dims = dims(args.dx, args.dy);
        let r = power_study(&spec)?;
        cells.extend(r.cells);
        meta.get_or_insert(r.metadata);
    }
    let result = StudyResult {
        kind: multifit::harness::StudyKind::Power,
        metadata: meta.unwrap_or_default(),
        cells,
    };
    write_study(&result, args.study.out.as_deref())
}

fn run_fwer(args: &FwerArgs) -> Result<()> {
    let mut spec = base_spec(
        &args.study,
        StudySpec::fwer(parse_grid(&args.n_grid)?, args.study.reps),
    );
    spec.dims = dims(args.dx, args.dy);
    write_study(&fwer_study(&spec)?, args.study.out.as_deref())
}

fn run_scale(args: &ScaleArgs) -> Result<()> {
    let mut spec = base_spec(
        &args.study,
        StudySpec::scaling(parse_grid(&args.n_grid)?, args.study.reps),
    );
    spec.scenarios = parse_list(&args.scenario)?;
    write_study(&scaling_study(&spec)?, args.study.out.as_deref())
}

fn run_inspect(args: &InspectArgs) -> Result<()> {
    let data = ingest_csv(&args.data, &args.x, &args.y, false)?;
    let sample = rank_transform(&data, TiePolicy::StableIndex);
    let key = CuboidKey::new(parse_list(&args.k)?, parse_list(&args.l)?)?;
    let node = locate(&key, &sample)?;
    println!("{}", serde_json::to_string(&node.dump())?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MULTIFIT_THREADS") {
        let threads: usize = v
            .parse()
            .with_context(|| format!("MULTIFIT_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Test(a) => run_test(a, false),
        Command::Exhaustive(a) => run_test(a, true),
        Command::Simulate(a) => run_simulate(a),
        Command::Power(a) => run_power(a),
        Command::Fwer(a) => run_fwer(a),
        Command::Scale(a) => run_scale(a),
        Command::Inspect(a) => run_inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
