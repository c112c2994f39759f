//! Step-down multiple-testing corrections with strong FWER control.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_tests::{NullSupport, PValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Holm,
    ModifiedHolm,
}

impl Correction {
    pub fn name(self) -> &'static str {
        match self {
            Correction::Holm => "holm",
            Correction::ModifiedHolm => "modified_holm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedResults {
    /// Adjusted p-values in input order.
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
    pub m: usize,
    pub alpha: f64,
    pub method: Correction,
}

impl AdjustedResults {
    pub fn any_rejected(&self) -> bool {
        self.rejected.iter().any(|&r| r)
    }

    pub fn min_adjusted(&self) -> Option<f64> {
        self.adjusted.iter().copied().reduce(f64::min)
    }
}

fn check(raw: &[PValue], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Ascending order of p-values; ties keep input order.
fn ascending(raw: &[PValue]) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = raw.iter().map(|p| p.ln_value).zip(0..).collect();
    keys.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, i)| i).collect()
}

fn finish(adjusted: Vec<f64>, alpha: f64, method: Correction) -> AdjustedResults {
    let rejected = adjusted.iter().map(|&p| p <= alpha).collect();
    AdjustedResults {
        m: adjusted.len(),
        adjusted,
        rejected,
        alpha,
        method,
    }
}

/// Holm's step-down procedure.
pub fn holm(raw: &[PValue], alpha: f64) -> Result<AdjustedResults> {
    check(raw, alpha)?;
    let m = raw.len();
    let mut adjusted = vec![1.0; m];
    let mut running: f64 = 0.0;
    for (step, &idx) in ascending(raw).iter().enumerate() {
        let scaled = ((m - step) as f64 * raw[idx].value).min(1.0);
        running = running.max(scaled);
        adjusted[idx] = running;
    }
    Ok(finish(adjusted, alpha, Correction::Holm))
}

/// Holm-type step-down procedure for discrete p-values.
///
/// At step `s` (p-values sorted ascending) the Bonferroni factor
/// `(m - s) p_(s)` is replaced by `sum_{t >= s} F_t(p_(s))`, where `F_t(c)`
/// is the null probability that test `t` yields a p-value at most `c`. For
/// Fisher's exact test `F_t(c)` is the largest attainable p-value not above
/// `c`, so each term is bounded by `c` and every Holm rejection is kept.
///
/// Tests sharing the same support allocation are grouped, so the cost per
/// step is proportional to the number of distinct supports.
pub fn modified_holm(raw: &[PValue], alpha: f64) -> Result<AdjustedResults> {
    check(raw, alpha)?;
    let m = raw.len();

    let mut group_of = Vec::with_capacity(m);
    let mut supports: Vec<Arc<NullSupport>> = Vec::new();
    let mut index: HashMap<*const NullSupport, usize> = HashMap::new();
    for (k, p) in raw.iter().enumerate() {
        let support = p.support.as_ref().ok_or(Error::MissingSupport(k))?;
        let g = *index.entry(Arc::as_ptr(support)).or_insert_with(|| {
            supports.push(Arc::clone(support));
            supports.len() - 1
        });
        group_of.push(g);
    }
    let mut remaining = vec![0u64; supports.len()];
    for &g in &group_of {
        remaining[g] += 1;
    }

    let mut adjusted = vec![1.0; m];
    let mut running: f64 = 0.0;
    for &idx in &ascending(raw) {
        if running >= 1.0 {
            break;
        }
        let c = raw[idx].value;
        let critical: f64 = supports
            .iter()
            .zip(&remaining)
            .filter(|(_, &count)| count > 0)
            .map(|(s, &count)| count as f64 * s.null_cdf_at(c))
            .sum();
        running = running.max(critical.min(1.0));
        adjusted[idx] = running;
        remaining[group_of[idx]] -= 1;
    }
    Ok(finish(adjusted, alpha, Correction::ModifiedHolm))
}

pub fn adjust(raw: &[PValue], alpha: f64, method: Correction) -> Result<AdjustedResults> {
    match method {
        Correction::Holm => holm(raw, alpha),
        Correction::ModifiedHolm => modified_holm(raw, alpha),
    }
}
