//! Dyadic cuboids, their `(i, j)` face tables, and exhaustive enumeration.
//!
//! A cuboid is identified by a level vector `k` and a location vector `l`
//! (1-based, `1 <= l_d <= 2^k_d`); along dimension `d` it covers the
//! half-open interval `[(l_d - 1)/2^k_d, l_d/2^k_d)`. Member lists are only
//! ever produced by refining a parent's list, so a whole stratum costs
//! `O(n)` regardless of how many cuboids it holds.

use std::sync::Arc;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::RankedSample;

/// Largest per-dimension level a key may carry.
pub const MAX_LEVEL: u32 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CuboidKey {
    k: Vec<u32>,
    l: Vec<u64>,
}

impl CuboidKey {
    pub fn new(k: Vec<u32>, l: Vec<u64>) -> Result<Self> {
        if k.len() != l.len() || k.is_empty() {
            return Err(Error::InvalidData(
                "k and l must have equal, non-zero length".into(),
            ));
        }
        for (&kd, &ld) in k.iter().zip(&l) {
            if kd > MAX_LEVEL || ld < 1 || ld > 1u64 << kd {
                return Err(Error::InvalidData(format!(
                    "location {ld} invalid at level {kd}"
                )));
            }
        }
        Ok(Self { k, l })
    }

    /// The whole sample space in `d` dimensions.
    pub fn root(d: usize) -> Self {
        Self {
            k: vec![0; d],
            l: vec![1; d],
        }
    }

    pub fn k(&self) -> &[u32] {
        &self.k
    }

    pub fn l(&self) -> &[u64] {
        &self.l
    }

    pub fn dims(&self) -> usize {
        self.k.len()
    }

    /// `|k|`, the number of halvings that define the stratum.
    pub fn resolution(&self) -> u32 {
        self.k.iter().sum()
    }

    /// Key of the lower (`upper = false`) or upper half along `dim`.
    pub fn child(&self, dim: usize, upper: bool) -> Self {
        let mut k = self.k.clone();
        let mut l = self.l.clone();
        k[dim] += 1;
        l[dim] = 2 * l[dim] - if upper { 0 } else { 1 };
        Self { k, l }
    }

    /// Interval `[lo, hi)` covered along `dim`.
    pub fn interval(&self, dim: usize) -> (f64, f64) {
        let w = (self.k[dim] as f64).exp2();
        ((self.l[dim] - 1) as f64 / w, self.l[dim] as f64 / w)
    }

    /// Exact membership test for an observation with zero-based rank `q`
    /// (value `(q + 0.5)/n`) along `dim`.
    pub fn contains_rank(&self, dim: usize, q: u32, n: usize) -> bool {
        // lo <= (2q+1)/(2n) < hi  <=>  2(l-1) n <= (2q+1) 2^k < 2 l n
        let lhs = (2 * q as u128 + 1) << self.k[dim];
        let l = self.l[dim] as u128;
        let n = n as u128;
        2 * (l - 1) * n <= lhs && lhs < 2 * l * n
    }

    /// Smallest rank that falls in the upper half of this cuboid along `dim`.
    pub fn upper_half_rank(&self, dim: usize, n: usize) -> u64 {
        // upper  <=>  (2q+1) 2^k >= (2l-1) n
        let scale = 1u128 << self.k[dim];
        let target = (2 * self.l[dim] as u128 - 1) * n as u128;
        if target <= scale {
            0
        } else {
            (target - scale).div_ceil(2 * scale) as u64
        }
    }
}

/// JSON view used by debug dumps: `{"k": [...], "l": [...], "n": count}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuboidDump {
    pub k: Vec<u32>,
    pub l: Vec<u64>,
    pub n: usize,
}

/// A cuboid together with the rows that fall inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuboidNode {
    key: Arc<CuboidKey>,
    members: Arc<[u32]>,
}

impl CuboidNode {
    pub fn new(key: CuboidKey, members: Vec<u32>) -> Self {
        Self {
            key: Arc::new(key),
            members: members.into(),
        }
    }

    pub fn key(&self) -> &CuboidKey {
        &self.key
    }

    pub fn shared_key(&self) -> Arc<CuboidKey> {
        Arc::clone(&self.key)
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    /// `n(A)`.
    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn dump(&self) -> CuboidDump {
        CuboidDump {
            k: self.key.k.clone(),
            l: self.key.l.clone(),
            n: self.count(),
        }
    }
}

/// The `(i, j)` table of a cuboid: counts of the four quadrants obtained by
/// halving dimension `i` (rows) and dimension `j` (columns).
///
/// `i` and `j` are global column indices; `i` belongs to the X block and `j`
/// to the Y block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceTable {
    pub cuboid: Arc<CuboidKey>,
    pub i: usize,
    pub j: usize,
    /// `(n00, n01, n10, n11)`; the first digit is the half along `i`.
    pub counts: [u32; 4],
}

impl FaceTable {
    /// A table detached from any cuboid, keyed to the root of a 2-d space.
    pub fn from_counts(counts: [u32; 4]) -> Self {
        Self {
            cuboid: Arc::new(CuboidKey::root(2)),
            i: 0,
            j: 1,
            counts,
        }
    }

    pub fn n00(&self) -> u64 {
        self.counts[0] as u64
    }
    pub fn n01(&self) -> u64 {
        self.counts[1] as u64
    }
    pub fn n10(&self) -> u64 {
        self.counts[2] as u64
    }
    pub fn n11(&self) -> u64 {
        self.counts[3] as u64
    }
    pub fn row0(&self) -> u64 {
        self.n00() + self.n01()
    }
    pub fn row1(&self) -> u64 {
        self.n10() + self.n11()
    }
    pub fn col0(&self) -> u64 {
        self.n00() + self.n10()
    }
    pub fn col1(&self) -> u64 {
        self.n01() + self.n11()
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// `(row0, row1, col0, col1)`.
    pub fn margins(&self) -> Margins {
        Margins {
            row0: self.row0(),
            row1: self.row1(),
            col0: self.col0(),
            col1: self.col1(),
        }
    }

    /// Same counts with rows and columns exchanged.
    pub fn transposed(&self) -> Self {
        let [a, b, c, d] = self.counts;
        Self {
            counts: [a, c, b, d],
            ..self.clone()
        }
    }
}

/// Row and column totals of a 2x2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Margins {
    pub row0: u64,
    pub row1: u64,
    pub col0: u64,
    pub col1: u64,
}

impl Margins {
    pub fn total(&self) -> u64 {
        self.row0 + self.row1
    }

    pub fn is_consistent(&self) -> bool {
        self.row0 + self.row1 == self.col0 + self.col1
    }

    pub fn smallest(&self) -> u64 {
        self.row0.min(self.row1).min(self.col0).min(self.col1)
    }
}

pub fn root_cuboid(sample: &RankedSample) -> CuboidNode {
    CuboidNode::new(
        CuboidKey::root(sample.dims()),
        (0..sample.n() as u32).collect(),
    )
}

/// Collects the observations of `sample` that fall in `key`.
pub fn locate(key: &CuboidKey, sample: &RankedSample) -> Result<CuboidNode> {
    if key.dims() != sample.dims() {
        return Err(Error::InvalidData(format!(
            "cuboid has {} dimensions, sample has {}",
            key.dims(),
            sample.dims()
        )));
    }
    let n = sample.n();
    let members = (0..n as u32)
        .filter(|&m| (0..key.dims()).all(|d| key.contains_rank(d, sample.rank(m as usize, d), n)))
        .collect();
    Ok(CuboidNode::new(key.clone(), members))
}

fn check_face(sample: &RankedSample, i: usize, j: usize) -> Result<()> {
    if !sample.x_dims().contains(&i) {
        return Err(Error::DimensionNotInBlock { dim: i, block: "x" });
    }
    if !sample.y_dims().contains(&j) {
        return Err(Error::DimensionNotInBlock { dim: j, block: "y" });
    }
    Ok(())
}

/// Tallies the `(i, j)` table of `node` in a single pass over its members.
pub fn face_table(
    node: &CuboidNode,
    i: usize,
    j: usize,
    sample: &RankedSample,
) -> Result<FaceTable> {
    check_face(sample, i, j)?;
    let n = sample.n();
    let ti = node.key.upper_half_rank(i, n);
    let tj = node.key.upper_half_rank(j, n);
    let (ri, rj) = (sample.rank_column(i), sample.rank_column(j));
    let mut counts = [0u32; 4];
    for &m in node.members.iter() {
        let a = (ri[m as usize] as u64 >= ti) as usize;
        let b = (rj[m as usize] as u64 >= tj) as usize;
        counts[2 * a + b] += 1;
    }
    Ok(FaceTable {
        cuboid: node.shared_key(),
        i,
        j,
        counts,
    })
}

/// Upper-half indicator bitsets of one cuboid, one per dimension.
struct HalfMasks {
    words: usize,
    masks: Vec<Vec<u64>>,
    ones: Vec<u32>,
}

impl HalfMasks {
    fn build(node: &CuboidNode, sample: &RankedSample) -> Self {
        let n = sample.n();
        let size = node.count();
        let words = size.div_ceil(64);
        let d = sample.dims();
        let mut masks = Vec::with_capacity(d);
        let mut ones = Vec::with_capacity(d);
        for dim in 0..d {
            let t = node.key.upper_half_rank(dim, n);
            let ranks = sample.rank_column(dim);
            let mut mask = vec![0u64; words];
            let mut count = 0u32;
            for (pos, &m) in node.members.iter().enumerate() {
                if ranks[m as usize] as u64 >= t {
                    mask[pos / 64] |= 1 << (pos % 64);
                    count += 1;
                }
            }
            masks.push(mask);
            ones.push(count);
        }
        Self { words, masks, ones }
    }

    fn table(&self, i: usize, j: usize, total: u32) -> [u32; 4] {
        let (mi, mj) = (&self.masks[i], &self.masks[j]);
        let n11: u32 = (0..self.words).map(|w| (mi[w] & mj[w]).count_ones()).sum();
        let n10 = self.ones[i] - n11;
        let n01 = self.ones[j] - n11;
        let n00 = total - n11 - n10 - n01;
        [n00, n01, n10, n11]
    }
}

/// All `D_x * D_y` face tables of `node`, ordered by `(i, j)` over the
/// sample's X and Y blocks.
pub fn face_tables(node: &CuboidNode, sample: &RankedSample) -> Vec<FaceTable> {
    let masks = HalfMasks::build(node, sample);
    let total = node.count() as u32;
    let mut out = Vec::with_capacity(sample.x_dims().len() * sample.y_dims().len());
    for &i in sample.x_dims() {
        for &j in sample.y_dims() {
            out.push(FaceTable {
                cuboid: node.shared_key(),
                i,
                j,
                counts: masks.table(i, j, total),
            });
        }
    }
    out
}

/// Halves `node` along `dim`, returning `(lower, upper)`. Member order is
/// preserved in both halves.
pub fn split(node: &CuboidNode, dim: usize, sample: &RankedSample) -> (CuboidNode, CuboidNode) {
    let t = node.key.upper_half_rank(dim, sample.n());
    let ranks = sample.rank_column(dim);
    let (upper, lower): (Vec<u32>, Vec<u32>) = node
        .members
        .iter()
        .partition(|&&m| ranks[m as usize] as u64 >= t);
    (
        CuboidNode::new(node.key.child(dim, false), lower),
        CuboidNode::new(node.key.child(dim, true), upper),
    )
}

/// The four `(i, j)` children: lower and upper halves along `i`, then along `j`.
pub fn children(
    node: &CuboidNode,
    i: usize,
    j: usize,
    sample: &RankedSample,
) -> Result<[CuboidNode; 4]> {
    check_face(sample, i, j)?;
    let (i0, i1) = split(node, i, sample);
    let (j0, j1) = split(node, j, sample);
    Ok([i0, i1, j0, j1])
}

/// Every cuboid of resolution `r + 1` given every cuboid of resolution `r`,
/// sorted by key.
///
/// Each child is derived from its canonical parent only: the parent obtained
/// by undoing the last split along the highest-index refined dimension.
pub fn next_full_level(level: &[CuboidNode], sample: &RankedSample) -> Vec<CuboidNode> {
    let d = sample.dims();
    let mut out = Vec::new();
    for node in level {
        let first = node.key.k.iter().rposition(|&k| k > 0).unwrap_or(0);
        for dim in first..d {
            let (lo, hi) = split(node, dim, sample);
            out.push(lo);
            out.push(hi);
        }
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

/// Number of cuboids of exactly resolution `r` in `d` dimensions:
/// `2^r * C(r + d - 1, d - 1)`.
pub fn cuboid_count_at(d: usize, r: u32) -> BigUint {
    (BigUint::from(1u32) << r as usize) * binomial(r as u64 + d as u64 - 1, d as u64 - 1)
}

/// Number of cuboids of resolution at most `r_max`.
pub fn exhaustive_cuboid_count(d: usize, r_max: u32) -> BigUint {
    (0..=r_max).map(|r| cuboid_count_at(d, r)).sum()
}

/// Tests performed by testing every face of every cuboid up to `r_max`:
/// `sum_{rho <= r_max} d_x d_y 2^rho C(rho + D - 1, D - 1)`.
pub fn exhaustive_test_count(d_x: usize, d_y: usize, r_max: u32) -> BigUint {
    BigUint::from(d_x as u64 * d_y as u64) * exhaustive_cuboid_count(d_x + d_y, r_max)
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for t in 0..k {
        acc = acc * BigUint::from(n - t) / BigUint::from(t + 1);
    }
    acc
}

/// Iterator over every cuboid of resolution `<= r_max`, level by level.
pub struct ExhaustiveCuboids<'a> {
    sample: &'a RankedSample,
    level: Vec<CuboidNode>,
    pos: usize,
    resolution: u32,
    r_max: u32,
}

impl Iterator for ExhaustiveCuboids<'_> {
    type Item = CuboidNode;

    fn next(&mut self) -> Option<CuboidNode> {
        if self.pos == self.level.len() {
            if self.resolution >= self.r_max || self.level.is_empty() {
                return None;
            }
            self.level = next_full_level(&self.level, self.sample);
            self.resolution += 1;
            self.pos = 0;
        }
        let node = self.level.get(self.pos).cloned();
        self.pos += 1;
        node
    }
}

/// Enumerates all cuboids up to `r_max` in nondecreasing resolution order,
/// refusing when their closed-form count exceeds `budget`.
pub fn enumerate_exhaustive(
    sample: &RankedSample,
    r_max: u32,
    budget: u64,
) -> Result<ExhaustiveCuboids<'_>> {
    if r_max > MAX_LEVEL {
        return Err(Error::DegenerateConfig(format!(
            "r_max {r_max} above {MAX_LEVEL}"
        )));
    }
    let count = exhaustive_cuboid_count(sample.dims(), r_max);
    if count > BigUint::from(budget) {
        return Err(Error::BudgetExceeded {
            count: count.to_string(),
            budget,
        });
    }
    Ok(ExhaustiveCuboids {
        sample,
        level: vec![root_cuboid(sample)],
        pos: 0,
        resolution: 0,
        r_max,
    })
}

/// Half-smoothed plug-in log odds ratio of a face table. Diagnostic only.
pub fn empirical_lor(table: &FaceTable) -> f64 {
    let h = |c: u64| c as f64 + 0.5;
    ((h(table.n00()) * h(table.n11())) / (h(table.n01()) * h(table.n10()))).ln()
}
