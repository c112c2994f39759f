//! The coarse-to-fine testing procedure.
//!
//! Resolutions are processed one at a time. Every cuboid of resolution up
//! to `r_star` is tested; beyond that, a cuboid is tested only if one of its
//! faces at the previous resolution produced a raw p-value below `p_star`,
//! in which case the four halves along that face's two margins are queued.
//! All executed tests are then adjusted together.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_tests::{null_support, p_value, LogFactorial, NullSupport, PValue, TestMethod};
use crate::lattice::{
    exhaustive_cuboid_count, exhaustive_test_count, face_tables, next_full_level, root_cuboid,
    CuboidKey, CuboidNode, FaceTable, Margins, MAX_LEVEL,
};
use crate::mtp::{adjust, AdjustedResults, Correction};
use crate::preprocess::{RankedSample, TiePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    Exhaustive,
}

pub const DEFAULT_SCREEN_TOTAL: u64 = 25;
pub const DEFAULT_SCREEN_MARGIN: u64 = 10;
pub const DEFAULT_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Resolution up to which every cuboid is tested.
    pub r_star: u32,
    /// Last resolution tested.
    pub r_max: u32,
    /// Raw p-value below which a face's children are queued.
    pub p_star: f64,
    pub alpha: f64,
    pub test_method: TestMethod,
    pub continuity_correction: bool,
    pub correction: Correction,
    pub screen_total_min: u64,
    pub screen_margin_min: u64,
    pub mode: Mode,
    /// Largest number of face tests an exhaustive run may plan.
    pub budget: u64,
}

/// Default `r_max = floor(log2(n / 10))`, floored at zero.
pub fn default_r_max(n: usize) -> u32 {
    let v = (n as f64 / 10.0).log2().floor();
    if v.is_finite() && v > 0.0 {
        v as u32
    } else {
        0
    }
}

/// Default `p_star = 1 / (d_x d_y log2 n)`.
pub fn default_p_star(n: usize, d_x: usize, d_y: usize) -> f64 {
    1.0 / ((d_x * d_y) as f64 * (n as f64).log2())
}

impl EngineConfig {
    pub fn defaults(n: usize, d_x: usize, d_y: usize) -> Self {
        let r_max = default_r_max(n);
        Self {
            r_star: r_max.min(1),
            r_max,
            p_star: default_p_star(n, d_x, d_y).min(1.0),
            alpha: 0.05,
            test_method: TestMethod::FisherExact,
            continuity_correction: false,
            correction: Correction::Holm,
            screen_total_min: DEFAULT_SCREEN_TOTAL,
            screen_margin_min: DEFAULT_SCREEN_MARGIN,
            mode: Mode::Adaptive,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn for_sample(sample: &RankedSample) -> Self {
        Self::defaults(sample.n(), sample.x_dims().len(), sample.y_dims().len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max < self.r_star {
            return Err(Error::DegenerateConfig(format!(
                "r_max {} below r_star {}",
                self.r_max, self.r_star
            )));
        }
        if self.r_max > MAX_LEVEL {
            return Err(Error::DegenerateConfig(format!(
                "r_max {} too large",
                self.r_max
            )));
        }
        if !(self.p_star > 0.0 && self.p_star <= 1.0) {
            return Err(Error::DegenerateConfig(format!(
                "p_star {} outside (0, 1]",
                self.p_star
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        Ok(())
    }
}

/// Optional settings layered over [`EngineConfig::defaults`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigOverrides {
    pub r_star: Option<u32>,
    pub r_max: Option<u32>,
    pub p_star: Option<f64>,
    pub alpha: Option<f64>,
    pub test_method: Option<TestMethod>,
    pub continuity_correction: Option<bool>,
    pub correction: Option<Correction>,
    pub screen_total_min: Option<u64>,
    pub screen_margin_min: Option<u64>,
    pub mode: Option<Mode>,
    pub budget: Option<u64>,
}

impl ConfigOverrides {
    pub fn resolve(&self, n: usize, d_x: usize, d_y: usize) -> EngineConfig {
        let mut c = EngineConfig::defaults(n, d_x, d_y);
        if let Some(v) = self.r_max {
            c.r_max = v;
            c.r_star = c.r_star.min(v);
        }
        if let Some(v) = self.r_star {
            c.r_star = v;
        }
        if let Some(v) = self.p_star {
            c.p_star = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.test_method {
            c.test_method = v;
        }
        if let Some(v) = self.continuity_correction {
            c.continuity_correction = v;
        }
        if let Some(v) = self.correction {
            c.correction = v;
        }
        if let Some(v) = self.screen_total_min {
            c.screen_total_min = v;
        }
        if let Some(v) = self.screen_margin_min {
            c.screen_margin_min = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        c
    }
}

/// The face whose significant p-value queued a cuboid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: Arc<CuboidKey>,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub table: FaceTable,
    /// `None` for screened tables.
    pub raw_p: Option<PValue>,
    pub adjusted_p: Option<f64>,
    pub resolution: u32,
    pub lineage: Option<Lineage>,
    pub screened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub n: usize,
    pub x_dims: Vec<usize>,
    pub y_dims: Vec<usize>,
    pub tie_policy: TiePolicy,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub testing: Duration,
    pub correction: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sample: SampleInfo,
    pub config: EngineConfig,
    pub records: Vec<TestRecord>,
    /// `None` when every table was screened out.
    pub adjusted: Option<AdjustedResults>,
    pub global_reject: bool,
    /// Indices into `records` of executed tests, most significant first.
    pub ranked_findings: Vec<usize>,
    /// Wall-clock timings; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub timings: Timings,
}

impl Report {
    pub fn tested(&self) -> impl Iterator<Item = &TestRecord> {
        self.records.iter().filter(|r| !r.screened)
    }

    pub fn tested_count(&self) -> usize {
        self.tested().count()
    }

    /// Ranked records whose adjusted p-value is at most `alpha`.
    pub fn significant(&self) -> impl Iterator<Item = &TestRecord> {
        let alpha = self.config.alpha;
        self.ranked_findings
            .iter()
            .map(|&i| &self.records[i])
            .take_while(move |r| r.adjusted_p.is_some_and(|p| p <= alpha))
    }

    pub fn top(&self, count: usize) -> Vec<&TestRecord> {
        self.ranked_findings
            .iter()
            .take(count)
            .map(|&i| &self.records[i])
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "resolution",
            "k",
            "l",
            "i",
            "j",
            "n00",
            "n01",
            "n10",
            "n11",
            "raw_p",
            "ln_raw_p",
            "adjusted_p",
            "screened",
        ])?;
        let join = |v: Vec<String>| v.join(";");
        for r in &self.records {
            let t = &r.table;
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            w.write_record([
                r.resolution.to_string(),
                join(t.cuboid.k().iter().map(u32::to_string).collect()),
                join(t.cuboid.l().iter().map(u64::to_string).collect()),
                t.i.to_string(),
                t.j.to_string(),
                t.counts[0].to_string(),
                t.counts[1].to_string(),
                t.counts[2].to_string(),
                t.counts[3].to_string(),
                opt(r.raw_p.as_ref().map(|p| p.value)),
                opt(r.raw_p.as_ref().map(|p| p.ln_value)),
                opt(r.adjusted_p),
                r.screened.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// True iff some adjusted p-value is at most `alpha`.
pub fn decide(report: &Report, alpha: f64) -> bool {
    report
        .adjusted
        .as_ref()
        .is_some_and(|a| a.adjusted.iter().any(|&p| p <= alpha))
}

fn screened_out(table: &FaceTable, config: &EngineConfig) -> bool {
    table.total() < config.screen_total_min || table.margins().smallest() < config.screen_margin_min
}

/// A child queued for the next resolution.
struct Pending {
    parent: usize,
    dim: usize,
    upper: bool,
    lineage: Lineage,
}

/// Keeps only one half of `node` along `dim`.
fn half(node: &CuboidNode, dim: usize, upper: bool, sample: &RankedSample) -> CuboidNode {
    let t = node.key().upper_half_rank(dim, sample.n());
    let ranks = sample.rank_column(dim);
    let members = node
        .members()
        .iter()
        .copied()
        .filter(|&m| (ranks[m as usize] as u64 >= t) == upper)
        .collect();
    CuboidNode::new(node.key().child(dim, upper), members)
}

/// Runs the procedure, dispatching on `config.mode`.
pub fn run_multifit(sample: &RankedSample, config: &EngineConfig) -> Result<Report> {
    match config.mode {
        Mode::Adaptive => run_levels(sample, config),
        Mode::Exhaustive => run_exhaustive(sample, config),
    }
}

/// Tests every face of every cuboid up to `r_max`.
pub fn run_exhaustive(sample: &RankedSample, config: &EngineConfig) -> Result<Report> {
    let planned = exhaustive_test_count(sample.x_dims().len(), sample.y_dims().len(), config.r_max);
    if planned > BigUint::from(config.budget) {
        return Err(Error::BudgetExceeded {
            count: planned.to_string(),
            budget: config.budget,
        });
    }
    let mut c = config.clone();
    c.mode = Mode::Exhaustive;
    c.p_star = 1.0;
    c.r_star = c.r_max;
    run_levels(sample, &c)
}

fn run_levels(sample: &RankedSample, config: &EngineConfig) -> Result<Report> {
    config.validate()?;
    if sample.n() < 2 {
        return Err(Error::EmptySample);
    }
    let full_levels = exhaustive_cuboid_count(sample.dims(), config.r_star)
        * BigUint::from((sample.x_dims().len() * sample.y_dims().len()) as u64);
    if full_levels > BigUint::from(config.budget) {
        return Err(Error::BudgetExceeded {
            count: full_levels.to_string(),
            budget: config.budget,
        });
    }
    let start = Instant::now();
    let lf = LogFactorial::new(sample.n());

    let mut records: Vec<TestRecord> = Vec::new();
    let mut level: Vec<(CuboidNode, Option<Lineage>)> = vec![(root_cuboid(sample), None)];
    let mut cache: HashMap<[u32; 4], Option<PValue>> = HashMap::new();

    for r in 0..=config.r_max {
        if level.is_empty() {
            break;
        }
        let faces: Vec<Vec<FaceTable>> = level
            .par_iter()
            .map(|(node, _)| face_tables(node, sample))
            .collect();

        // Many faces share the same counts; each distinct table is tested once.
        let mut todo: Vec<[u32; 4]> = Vec::new();
        for t in faces.iter().flatten() {
            if !screened_out(t, config) && !cache.contains_key(&t.counts) {
                cache.insert(t.counts, None);
                todo.push(t.counts);
            }
        }
        let fresh: Vec<PValue> = todo
            .par_iter()
            .map(|&c| {
                let t = FaceTable::from_counts(c);
                p_value(&t, config.test_method, config.continuity_correction, &lf)
            })
            .collect();
        for (c, p) in todo.into_iter().zip(fresh) {
            cache.insert(c, Some(p));
        }

        let selecting = r >= config.r_star && r < config.r_max;
        let mut queued: BTreeMap<CuboidKey, Pending> = BTreeMap::new();
        for (idx, ((node, lineage), faces)) in level.iter().zip(faces).enumerate() {
            for table in faces {
                let p = if screened_out(&table, config) {
                    None
                } else {
                    cache[&table.counts].clone()
                };
                if selecting && p.as_ref().is_some_and(|p| p.value < config.p_star) {
                    for (dim, upper) in [
                        (table.i, false),
                        (table.i, true),
                        (table.j, false),
                        (table.j, true),
                    ] {
                        queued
                            .entry(node.key().child(dim, upper))
                            .or_insert_with(|| Pending {
                                parent: idx,
                                dim,
                                upper,
                                lineage: Lineage {
                                    parent: node.shared_key(),
                                    i: table.i,
                                    j: table.j,
                                },
                            });
                    }
                }
                records.push(TestRecord {
                    screened: p.is_none(),
                    table,
                    raw_p: p,
                    adjusted_p: None,
                    resolution: r,
                    lineage: lineage.clone(),
                });
            }
        }
        if r == config.r_max {
            break;
        }

        level = if r < config.r_star {
            let nodes: Vec<CuboidNode> = level.into_iter().map(|(n, _)| n).collect();
            next_full_level(&nodes, sample)
                .into_iter()
                .map(|n| (n, None))
                .collect()
        } else {
            let pending: Vec<Pending> = queued.into_values().collect();
            pending
                .into_par_iter()
                .map(|p| {
                    let node = half(&level[p.parent].0, p.dim, p.upper, sample);
                    (node, Some(p.lineage))
                })
                .collect()
        };
    }
    let testing = start.elapsed();

    let corr_start = Instant::now();
    let adjusted = correct(&mut records, config, &lf)?;
    let global_reject = adjusted.as_ref().is_some_and(|a| a.any_rejected());

    let mut keys: Vec<(f64, f64, usize)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| Some((r.adjusted_p?, r.raw_p.as_ref()?.ln_value, i)))
        .collect();
    keys.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let ranked_findings: Vec<usize> = keys.into_iter().map(|k| k.2).collect();
    let correction = corr_start.elapsed();

    Ok(Report {
        sample: SampleInfo {
            n: sample.n(),
            x_dims: sample.x_dims().to_vec(),
            y_dims: sample.y_dims().to_vec(),
            tie_policy: sample.tie_policy(),
        },
        config: config.clone(),
        records,
        adjusted,
        global_reject,
        ranked_findings,
        timings: Timings {
            testing,
            correction,
            total: start.elapsed(),
        },
    })
}

/// Adjusts every executed test and writes the adjusted values back.
fn correct(
    records: &mut [TestRecord],
    config: &EngineConfig,
    lf: &LogFactorial,
) -> Result<Option<AdjustedResults>> {
    let tested: Vec<usize> = (0..records.len())
        .filter(|&i| !records[i].screened)
        .collect();
    if tested.is_empty() {
        return Ok(None);
    }
    let mut raw: Vec<PValue> = tested
        .iter()
        .map(|&i| {
            records[i]
                .raw_p
                .clone()
                .expect("tested record has a p-value")
        })
        .collect();

    if config.correction == Correction::ModifiedHolm {
        let mut slot: HashMap<Margins, usize> = HashMap::new();
        let mut distinct: Vec<Margins> = Vec::new();
        let group: Vec<usize> = tested
            .iter()
            .map(|&i| {
                let m = records[i].table.margins();
                *slot.entry(m).or_insert_with(|| {
                    distinct.push(m);
                    distinct.len() - 1
                })
            })
            .collect();
        let supports: Vec<Arc<NullSupport>> = distinct
            .par_iter()
            .map(|&m| {
                null_support(m, config.test_method, config.continuity_correction, lf).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        for (p, &g) in raw.iter_mut().zip(&group) {
            p.support = Some(Arc::clone(&supports[g]));
        }
    }

    let adjusted = adjust(&raw, config.alpha, config.correction)?;
    for (&i, &a) in tested.iter().zip(&adjusted.adjusted) {
        records[i].adjusted_p = Some(a);
    }
    Ok(Some(adjusted))
}
