//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use multifit::exact_tests::{fisher_two_sided, LogFactorial};
use multifit::lattice::FaceTable;
use multifit::scenarios::{generate, ScenarioName, ScenarioSpec};
use multifit::{rank_transform, RankedSample, TiePolicy};
use num_bigint::{BigInt, BigUint};
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};

/// Tie tolerance of the library, as the exact fraction `(10^7 + 1) / 10^7`.
const TIE_NUM: u64 = 10_000_001;
const TIE_DEN: u64 = 10_000_000;

fn choose(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for t in 0..k {
        acc = acc * (n - t) / (t + 1);
    }
    acc
}

/// Exact hypergeometric weights `C(r0, a) C(r1, c0 - a)` for every feasible
/// `a`, in increasing `a`.
pub struct ExactLaw {
    pub lo: u64,
    pub weights: Vec<BigUint>,
    pub total: BigUint,
}

impl ExactLaw {
    pub fn new(r0: u64, r1: u64, c0: u64) -> Self {
        let lo = c0.saturating_sub(r1);
        let hi = r0.min(c0);
        let weights: Vec<BigUint> = (lo..=hi)
            .map(|a| choose(r0, a) * choose(r1, c0 - a))
            .collect();
        let total = weights.iter().sum();
        Self { lo, weights, total }
    }

    /// Exact two-sided and mid-p values for the outcome `a`.
    pub fn p_values(&self, a: u64) -> (Ratio<BigInt>, Ratio<BigInt>) {
        let w_obs = &self.weights[(a - self.lo) as usize];
        let mut included = BigUint::zero();
        let mut tied = BigUint::zero();
        for w in &self.weights {
            if w * TIE_DEN <= w_obs * TIE_NUM {
                included += w;
                if w * TIE_NUM >= w_obs * TIE_DEN {
                    tied += w;
                }
            }
        }
        let den = BigInt::from(self.total.clone());
        let p = Ratio::new(BigInt::from(included.clone()), den.clone());
        let mid = Ratio::new(BigInt::from(included) * 2 - BigInt::from(tied), den * 2);
        (p, mid)
    }

    pub fn prob(&self, a: u64) -> Ratio<BigInt> {
        Ratio::new(
            BigInt::from(self.weights[(a - self.lo) as usize].clone()),
            BigInt::from(self.total.clone()),
        )
    }

    pub fn outcomes(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.weights.len() as u64).map(move |i| self.lo + i)
    }
}

pub fn to_f64(r: &Ratio<BigInt>) -> f64 {
    r.to_f64().expect("finite ratio")
}

/// Table with `a` in the first cell and the given margins.
pub fn table(r0: u64, r1: u64, c0: u64, a: u64) -> FaceTable {
    let b = r0 - a;
    let c = c0 - a;
    let d = r1 - c;
    FaceTable::from_counts([a as u32, b as u32, c as u32, d as u32])
}

pub fn rel_err(x: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        x.abs()
    } else {
        ((x - reference) / reference).abs()
    }
}

pub fn scenario_sample(name: ScenarioName, noise: u32, n: usize, seed: u64) -> RankedSample {
    let data = generate(&ScenarioSpec::new(name, noise, seed).with_n(n)).unwrap();
    rank_transform(&data, TiePolicy::StableIndex)
}

/// One face test found by [`naive_multifit`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRecord {
    pub k: Vec<u32>,
    pub l: Vec<u64>,
    pub i: usize,
    pub j: usize,
    pub counts: [u32; 4],
    pub p: Option<f64>,
}

/// Zero-based dyadic cell of rank `q` at level `k`: `floor((2q+1) 2^k / 2n)`.
fn cell(q: u32, k: u32, n: usize) -> u64 {
    (((2 * q as u128 + 1) << k) / (2 * n as u128)) as u64
}

fn inside(sample: &RankedSample, row: usize, k: &[u32], l: &[u64]) -> bool {
    (0..k.len()).all(|d| cell(sample.rank(row, d), k[d], sample.n()) + 1 == l[d])
}

fn all_cuboids(d: usize, r: u32) -> Vec<(Vec<u32>, Vec<u64>)> {
    fn levels(d: usize, r: u32) -> Vec<Vec<u32>> {
        if d == 1 {
            return vec![vec![r]];
        }
        (0..=r)
            .flat_map(|first| {
                levels(d - 1, r - first).into_iter().map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
            })
            .collect()
    }
    let mut out = Vec::new();
    for k in levels(d, r) {
        let mut l = vec![1u64; d];
        loop {
            out.push((k.clone(), l.clone()));
            let mut pos = 0;
            while pos < d {
                if l[pos] < 1 << k[pos] {
                    l[pos] += 1;
                    break;
                }
                l[pos] = 1;
                pos += 1;
            }
            if pos == d {
                break;
            }
        }
    }
    out
}

/// Straightforward version of the procedure: every cuboid's tables are
/// tallied by rescanning the whole sample.
pub fn naive_multifit(
    sample: &RankedSample,
    r_star: u32,
    r_max: u32,
    p_star: f64,
    screen_total: u64,
    screen_margin: u64,
) -> Vec<NaiveRecord> {
    let d = sample.dims();
    let n = sample.n();
    let lf = LogFactorial::new(n);
    let mut out = Vec::new();
    let mut level: BTreeSet<(Vec<u32>, Vec<u64>)> = all_cuboids(d, 0).into_iter().collect();
    for r in 0..=r_max {
        let mut next = BTreeSet::new();
        for (k, l) in &level {
            let rows: Vec<usize> = (0..n).filter(|&row| inside(sample, row, k, l)).collect();
            for &i in sample.x_dims() {
                for &j in sample.y_dims() {
                    let mut counts = [0u32; 4];
                    for &row in &rows {
                        let ui = cell(sample.rank(row, i), k[i] + 1, n) % 2;
                        let uj = cell(sample.rank(row, j), k[j] + 1, n) % 2;
                        counts[(2 * ui + uj) as usize] += 1;
                    }
                    let t = FaceTable::from_counts(counts);
                    let m = t.margins();
                    let screened = m.total() < screen_total
                        || m.row0.min(m.row1).min(m.col0).min(m.col1) < screen_margin;
                    let p = (!screened).then(|| fisher_two_sided(&t, &lf).value);
                    if r >= r_star && r < r_max && p.is_some_and(|p| p < p_star) {
                        for dim in [i, j] {
                            for upper in [0, 1] {
                                let (mut k2, mut l2) = (k.clone(), l.clone());
                                k2[dim] += 1;
                                l2[dim] = 2 * l[dim] - 1 + upper;
                                next.insert((k2, l2));
                            }
                        }
                    }
                    out.push(NaiveRecord {
                        k: k.clone(),
                        l: l.clone(),
                        i,
                        j,
                        counts,
                        p,
                    });
                }
            }
        }
        if r < r_star {
            next = all_cuboids(d, r + 1).into_iter().collect();
        }
        level = next;
    }
    out
}

/// Face `(k, l, i, j)` mapped to its counts and raw p-value.
pub type Faces = BTreeMap<(Vec<u32>, Vec<u64>, usize, usize), ([u32; 4], Option<f64>)>;

/// Groups naive records by face for set comparisons.
pub fn by_face(records: &[NaiveRecord]) -> Faces {
    records
        .iter()
        .map(|r| ((r.k.clone(), r.l.clone(), r.i, r.j), (r.counts, r.p)))
        .collect()
}
