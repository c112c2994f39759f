//! Monte Carlo study runners: power, FWER and runtime scaling.
//!
//! Replication `r` of every cell uses the seed `seed_base ^ r`, so all
//! variants and noise levels of a study see common random numbers and a
//! study's estimates do not depend on how replications are scheduled.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_multifit, ConfigOverrides};
use crate::error::{Error, Result};
use crate::exact_tests::TestMethod;
use crate::mtp::Correction;
use crate::preprocess::{rank_transform, RankedSample, TiePolicy};
use crate::scenarios::{generate, ScenarioName, ScenarioSpec, RNG_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Power,
    Fwer,
    Scaling,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Power => "power",
            StudyKind::Fwer => "fwer",
            StudyKind::Scaling => "scaling",
        }
    }
}

/// A test method paired with a multiplicity correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub method: TestMethod,
    pub correction: Correction,
}

impl Variant {
    pub const fn new(method: TestMethod, correction: Correction) -> Self {
        Self { method, correction }
    }

    /// The four combinations compared in the error-rate study.
    pub const FWER_SET: [Variant; 4] = [
        Variant::new(TestMethod::FisherExact, Correction::Holm),
        Variant::new(TestMethod::FisherMidP, Correction::Holm),
        Variant::new(TestMethod::FisherExact, Correction::ModifiedHolm),
        Variant::new(TestMethod::NormalApprox, Correction::Holm),
    ];
}

impl Default for Variant {
    fn default() -> Self {
        Variant::new(TestMethod::FisherExact, Correction::Holm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub scenarios: Vec<ScenarioName>,
    pub noise_levels: Vec<u32>,
    pub n_values: Vec<usize>,
    /// Overrides each scenario's default `(d_x, d_y)` where it allows.
    pub dims: Option<(usize, usize)>,
    pub replications: usize,
    pub alpha: f64,
    pub variants: Vec<Variant>,
    pub overrides: ConfigOverrides,
    pub seed_base: u64,
    /// Worker threads; 0 uses the ambient pool.
    pub workers: usize,
}

impl StudySpec {
    pub fn power(scenario: ScenarioName, noise_level: u32, n: usize, replications: usize) -> Self {
        Self {
            kind: StudyKind::Power,
            scenarios: vec![scenario],
            noise_levels: vec![noise_level],
            n_values: vec![n],
            dims: None,
            replications,
            alpha: 0.05,
            variants: vec![Variant::default()],
            overrides: ConfigOverrides::default(),
            seed_base: 0,
            workers: 0,
        }
    }

    /// Null data across `n_values` for the four standard variants.
    pub fn fwer(n_values: Vec<usize>, replications: usize) -> Self {
        Self {
            kind: StudyKind::Fwer,
            scenarios: vec![ScenarioName::NullGaussian],
            noise_levels: vec![1],
            variants: Variant::FWER_SET.to_vec(),
            ..Self::power(ScenarioName::NullGaussian, 1, 0, replications)
        }
        .with_n_values(n_values)
    }

    /// Null and strong linear signal data across `n_values`.
    pub fn scaling(n_values: Vec<usize>, replications: usize) -> Self {
        Self {
            kind: StudyKind::Scaling,
            scenarios: vec![ScenarioName::NullGaussian, ScenarioName::Linear],
            noise_levels: vec![3],
            ..Self::power(ScenarioName::NullGaussian, 3, 0, replications)
        }
        .with_n_values(n_values)
    }

    pub fn with_n_values(mut self, n_values: Vec<usize>) -> Self {
        self.n_values = n_values;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidStudy(
                "replications must be at least 1".into(),
            ));
        }
        if self.scenarios.is_empty()
            || self.noise_levels.is_empty()
            || self.n_values.is_empty()
            || self.variants.is_empty()
        {
            return Err(Error::InvalidStudy("empty grid".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.kind == StudyKind::Scaling && self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStudy("n grid must be ascending".into()));
        }
        for &name in &self.scenarios {
            for &l in &self.noise_levels {
                for &n in &self.n_values {
                    self.scenario(name, l, n, 0).validate()?;
                }
            }
        }
        Ok(())
    }

    fn scenario(&self, name: ScenarioName, noise_level: u32, n: usize, rep: usize) -> ScenarioSpec {
        let mut s = ScenarioSpec::new(name, noise_level, self.seed_base ^ rep as u64).with_n(n);
        if let Some((dx, dy)) = self.dims {
            if matches!(
                name,
                ScenarioName::HighdimLinear | ScenarioName::NullGaussian
            ) {
                s = s.with_dims(dx, dy);
            }
        }
        s
    }
}

/// One grid cell of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: ScenarioName,
    pub noise_level: u32,
    pub n: usize,
    pub method: TestMethod,
    pub correction: Correction,
    pub replications: usize,
    pub rejections: usize,
    pub failures: usize,
    /// Rejection rate over completed replications.
    pub estimate: f64,
    /// Binomial standard error of `estimate`.
    pub se: f64,
    pub median_seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub metadata: BTreeMap<String, String>,
    pub cells: Vec<CellResult>,
}

impl StudyResult {
    pub fn cell(&self, scenario: ScenarioName, n: usize, variant: Variant) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.scenario == scenario
                && c.n == n
                && c.method == variant.method
                && c.correction == variant.correction
        })
    }

    /// Writes a `#` metadata block followed by one row per cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# kind={}", self.kind.as_str())?;
        for (k, v) in &self.metadata {
            if k != "kind" {
                writeln!(out, "# {k}={v}")?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(input).read_to_string(&mut text)?;
        let mut metadata = BTreeMap::new();
        for line in text.as_bytes().lines() {
            let line = line?;
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            if let Some((k, v)) = rest.trim_start().split_once('=') {
                metadata.insert(k.to_string(), v.to_string());
            }
        }
        let kind = match metadata.remove("kind").as_deref() {
            Some("power") => StudyKind::Power,
            Some("fwer") => StudyKind::Fwer,
            Some("scaling") => StudyKind::Scaling,
            other => {
                return Err(Error::InvalidStudy(format!("unknown study kind {other:?}")));
            }
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let cells = reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            kind,
            metadata,
            cells,
        })
    }
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Outcome of one variant on one replication: `Some((reject, seconds))`,
/// or `None` if the engine failed.
type Outcome = Option<(bool, f64)>;

fn run_variants(spec: &StudySpec, sample: &RankedSample) -> Vec<Outcome> {
    let (n, dx, dy) = (sample.n(), sample.x_dims().len(), sample.y_dims().len());
    spec.variants
        .iter()
        .map(|v| {
            let mut overrides = spec.overrides.clone();
            overrides.test_method = Some(v.method);
            overrides.correction = Some(v.correction);
            overrides.alpha = Some(spec.alpha);
            let config = overrides.resolve(n, dx, dy);
            let start = Instant::now();
            let report = run_multifit(sample, &config).ok()?;
            Some((report.global_reject, start.elapsed().as_secs_f64()))
        })
        .collect()
}

fn run_cell_grid(spec: &StudySpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &name in &spec.scenarios {
        let levels: &[u32] = if name.uses_noise_level() {
            &spec.noise_levels
        } else {
            &spec.noise_levels[..1]
        };
        for &l in levels {
            for &n in &spec.n_values {
                let outcomes: Vec<Result<Vec<Outcome>>> = (0..spec.replications)
                    .into_par_iter()
                    .map(|rep| {
                        let data = generate(&spec.scenario(name, l, n, rep))?;
                        let sample = rank_transform(&data, TiePolicy::StableIndex);
                        Ok(run_variants(spec, &sample))
                    })
                    .collect();
                let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
                for (vi, v) in spec.variants.iter().enumerate() {
                    cells.push(summarize(name, l, n, *v, outcomes.iter().map(|o| o[vi])));
                }
            }
        }
    }
    Ok(cells)
}

fn summarize(
    scenario: ScenarioName,
    noise_level: u32,
    n: usize,
    variant: Variant,
    outcomes: impl Iterator<Item = Outcome>,
) -> CellResult {
    let (mut replications, mut rejections, mut failures) = (0, 0, 0);
    let mut times = Vec::new();
    for o in outcomes {
        replications += 1;
        match o {
            Some((reject, secs)) => {
                rejections += reject as usize;
                times.push(secs);
            }
            None => failures += 1,
        }
    }
    let done = replications - failures;
    let estimate = if done == 0 {
        f64::NAN
    } else {
        rejections as f64 / done as f64
    };
    let se = (estimate * (1.0 - estimate) / done as f64).sqrt();
    let mean_seconds = times.iter().sum::<f64>() / times.len().max(1) as f64;
    CellResult {
        scenario,
        noise_level,
        n,
        method: variant.method,
        correction: variant.correction,
        replications,
        rejections,
        failures,
        estimate,
        se,
        median_seconds: median(&mut times),
        mean_seconds,
    }
}

fn metadata(spec: &StudySpec) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("rng".into(), RNG_NAME.into());
    m.insert("seed_base".into(), spec.seed_base.to_string());
    m.insert("alpha".into(), spec.alpha.to_string());
    m.insert("replications".into(), spec.replications.to_string());
    m.insert("overrides".into(), serde_json::to_string(&spec.overrides)?);
    if let Some((dx, dy)) = spec.dims {
        m.insert("dims".into(), format!("{dx}x{dy}"));
    }
    Ok(m)
}

fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    let cells = if spec.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| Error::InvalidStudy(e.to_string()))?
            .install(|| run_cell_grid(spec))?
    } else {
        run_cell_grid(spec)?
    };
    Ok(StudyResult {
        kind: spec.kind,
        metadata: metadata(spec)?,
        cells,
    })
}

/// Fraction of replications with a global rejection, per cell.
pub fn power_study(spec: &StudySpec) -> Result<StudyResult> {
    run_study(spec)
}

/// Rejection rate on independent data, per cell.
pub fn fwer_study(spec: &StudySpec) -> Result<StudyResult> {
    if spec
        .scenarios
        .iter()
        .any(|&s| s != ScenarioName::NullGaussian)
    {
        return Err(Error::InvalidStudy(
            "error-rate studies use null data".into(),
        ));
    }
    run_study(spec)
}

/// Wall time of the full procedure, per cell.
pub fn scaling_study(spec: &StudySpec) -> Result<StudyResult> {
    run_study(spec)
}
