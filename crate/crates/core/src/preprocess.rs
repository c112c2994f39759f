//! Data ingestion and the marginal rank transform.
//!
//! Every margin is mapped onto the grid `{(r - 0.5)/n : r = 1..n}` so that the
//! resolution-0 split of each margin falls on its median. The transformed
//! sample keeps integer ranks internally; dyadic membership tests are done in
//! exact integer arithmetic on those ranks.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw `n x D` data with the column split into an X block and a Y block.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    /// Row-major values.
    values: Vec<f64>,
    x_dims: Vec<usize>,
    y_dims: Vec<usize>,
    names: Vec<String>,
}

impl DataMatrix {
    /// Builds a matrix from row-major values. Columns `0..d_x` form the X
    /// block and `d_x..d_x + d_y` the Y block.
    pub fn from_rows(values: Vec<f64>, d_x: usize, d_y: usize) -> Result<Self> {
        let d = d_x + d_y;
        let names = (0..d_x)
            .map(|i| format!("x{}", i + 1))
            .chain((0..d_y).map(|j| format!("y{}", j + 1)))
            .collect();
        Self::with_blocks(values, d, (0..d_x).collect(), (d_x..d).collect(), names)
    }

    /// General constructor with explicit block membership.
    pub fn with_blocks(
        values: Vec<f64>,
        d: usize,
        x_dims: Vec<usize>,
        y_dims: Vec<usize>,
        names: Vec<String>,
    ) -> Result<Self> {
        if x_dims.is_empty() || y_dims.is_empty() {
            return Err(Error::InvalidData(
                "both blocks need at least one column".into(),
            ));
        }
        if d == 0 || values.is_empty() || !values.len().is_multiple_of(d) {
            return Err(Error::InvalidData(format!(
                "{} values cannot form rows of width {d}",
                values.len()
            )));
        }
        let mut seen = vec![false; d];
        for &c in x_dims.iter().chain(&y_dims) {
            if c >= d || seen[c] {
                return Err(Error::InvalidData(format!("bad block column index {c}")));
            }
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidData(
                "blocks do not cover every column".into(),
            ));
        }
        if names.len() != d {
            return Err(Error::InvalidData("one name per column required".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: pos / d,
                col: names[pos % d].clone(),
            });
        }
        Ok(Self {
            n: values.len() / d,
            d,
            values,
            x_dims,
            y_dims,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn x_dims(&self) -> &[usize] {
        &self.x_dims
    }

    pub fn y_dims(&self) -> &[usize] {
        &self.y_dims
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.d + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.d..(row + 1) * self.d]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, col)).collect()
    }
}

/// How equal values within a column are ordered before ranks are assigned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties keep their row order.
    #[default]
    StableIndex,
    /// Ties are shuffled with a seeded ChaCha8 stream, one stream per column.
    Random { seed: u64 },
}

/// Marginal-rank-transformed sample. Column `c`, row `i` holds
/// `(rank - 0.5) / n` with all ranks in a column distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    n: usize,
    /// Column-major zero-based ranks: `ranks[c][i]` is in `0..n`.
    ranks: Vec<Vec<u32>>,
    x_dims: Vec<usize>,
    y_dims: Vec<usize>,
    tie_policy: TiePolicy,
}

impl RankedSample {
    /// Wraps precomputed zero-based ranks. Each column must be a permutation
    /// of `0..n`.
    pub fn from_ranks(
        ranks: Vec<Vec<u32>>,
        x_dims: Vec<usize>,
        y_dims: Vec<usize>,
    ) -> Result<Self> {
        let n = ranks.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidData("sample too large".into()));
        }
        for col in &ranks {
            if col.len() != n {
                return Err(Error::InvalidData("ragged rank columns".into()));
            }
            let mut seen = vec![false; n];
            for &q in col {
                let q = q as usize;
                if q >= n || seen[q] {
                    return Err(Error::InvalidData(
                        "rank column is not a permutation".into(),
                    ));
                }
                seen[q] = true;
            }
        }
        let d = ranks.len();
        let mut cover = vec![false; d];
        for &c in x_dims.iter().chain(&y_dims) {
            if c >= d || cover[c] {
                return Err(Error::InvalidData(format!("bad block column index {c}")));
            }
            cover[c] = true;
        }
        if x_dims.is_empty() || y_dims.is_empty() || cover.iter().any(|c| !c) {
            return Err(Error::InvalidData(
                "blocks must be non-empty and cover all columns".into(),
            ));
        }
        Ok(Self {
            n,
            ranks,
            x_dims,
            y_dims,
            tie_policy: TiePolicy::StableIndex,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.ranks.len()
    }

    pub fn x_dims(&self) -> &[usize] {
        &self.x_dims
    }

    pub fn y_dims(&self) -> &[usize] {
        &self.y_dims
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    /// Zero-based rank of `row` within column `col`.
    #[inline]
    pub fn rank(&self, row: usize, col: usize) -> u32 {
        self.ranks[col][row]
    }

    pub fn rank_column(&self, col: usize) -> &[u32] {
        &self.ranks[col]
    }

    /// Transformed value in `(0, 1)`.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        (self.ranks[col][row] as f64 + 0.5) / self.n as f64
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.value(r, col)).collect()
    }

    /// Transformed values as a `DataMatrix` with the same blocks.
    pub fn to_data_matrix(&self) -> DataMatrix {
        let d = self.dims();
        let mut values = Vec::with_capacity(self.n * d);
        for r in 0..self.n {
            for c in 0..d {
                values.push(self.value(r, c));
            }
        }
        let names = (0..d).map(|c| format!("z{}", c + 1)).collect();
        DataMatrix::with_blocks(values, d, self.x_dims.clone(), self.y_dims.clone(), names)
            .expect("ranked sample is a valid matrix")
    }
}

/// Applies the marginal rank transform column by column.
pub fn rank_transform(data: &DataMatrix, tie_policy: TiePolicy) -> RankedSample {
    let n = data.n();
    let ranks = (0..data.dims())
        .map(|c| rank_column(&data.column(c), tie_policy, c))
        .collect();
    RankedSample {
        n,
        ranks,
        x_dims: data.x_dims().to_vec(),
        y_dims: data.y_dims().to_vec(),
        tie_policy,
    }
}

fn rank_column(col: &[f64], tie_policy: TiePolicy, col_index: usize) -> Vec<u32> {
    let n = col.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    match tie_policy {
        TiePolicy::StableIndex => {
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
        }
        TiePolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(col_index as u64);
            let keys: Vec<u64> = (0..n).map(|_| rng.random()).collect();
            order.sort_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(keys[a as usize].cmp(&keys[b as usize]))
                    .then(a.cmp(&b))
            });
        }
    }
    let mut ranks = vec![0u32; n];
    for (r, &row) in order.iter().enumerate() {
        ranks[row as usize] = r as u32;
    }
    ranks
}

/// Resolves a column selector such as `a,b`, `0-3` or `x1,4` against a header.
pub fn resolve_selector(selector: &str, header: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in selector.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some(pos) = header.iter().position(|h| h == token) {
            out.push(pos);
            continue;
        }
        let parsed = match token.split_once('-') {
            Some((lo, hi)) => lo
                .trim()
                .parse::<usize>()
                .ok()
                .zip(hi.trim().parse::<usize>().ok())
                .filter(|(lo, hi)| lo <= hi)
                .map(|(lo, hi)| (lo..=hi).collect::<Vec<_>>()),
            None => token.parse::<usize>().ok().map(|i| vec![i]),
        };
        match parsed {
            Some(idx) if idx.iter().all(|&i| i < header.len()) => out.extend(idx),
            _ => return Err(Error::BadSelector(token.to_string())),
        }
    }
    if out.is_empty() {
        return Err(Error::BadSelector(selector.to_string()));
    }
    let mut seen = BTreeSet::new();
    out.retain(|c| seen.insert(*c));
    Ok(out)
}

fn is_missing(field: &str) -> bool {
    matches!(
        field,
        "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "NAN" | "null" | "NULL"
    )
}

/// Reads a headered CSV file and keeps the selected columns, X block first.
pub fn ingest_csv(path: &Path, x_cols: &str, y_cols: &str, drop_na: bool) -> Result<DataMatrix> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let xs = resolve_selector(x_cols, &header)?;
    let ys = resolve_selector(y_cols, &header)?;
    if xs.iter().any(|x| ys.contains(x)) {
        return Err(Error::OverlappingSelectors);
    }
    let selected: Vec<usize> = xs.iter().chain(&ys).copied().collect();
    let d = selected.len();

    let mut values = Vec::new();
    let mut row_buf = Vec::with_capacity(d);
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        row_buf.clear();
        let mut missing = None;
        for &c in &selected {
            let field = record.get(c).unwrap_or("").trim();
            if is_missing(field) {
                missing.get_or_insert(c);
                row_buf.push(f64::NAN);
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::NonNumericColumn(header[c].clone()))?;
            if !v.is_finite() {
                missing.get_or_insert(c);
            }
            row_buf.push(v);
        }
        match missing {
            Some(_) if drop_na => continue,
            Some(c) => {
                return Err(Error::MissingValue {
                    row,
                    col: header[c].clone(),
                })
            }
            None => values.extend_from_slice(&row_buf),
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyAfterDrop);
    }
    let names = selected.iter().map(|&c| header[c].clone()).collect();
    DataMatrix::with_blocks(
        values,
        d,
        (0..xs.len()).collect(),
        (xs.len()..d).collect(),
        names,
    )
}
