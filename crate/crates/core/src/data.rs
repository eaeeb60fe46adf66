//! Item pools, comparison records and dataset I/O.
//!
//! Items file (UTF-8 CSV, header required):
//!
//! ```text
//! id,f0,f1,...,f{d-1}[,score]
//! ```
//!
//! Comparisons file (UTF-8 CSV, header required): `i,j,c` where `c = 1` means
//! item `i` was preferred over item `j`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Dense 0-based item index.
pub type ItemId = usize;

/// Items with precomputed feature vectors and optional hidden scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolRepr", into = "PoolRepr")]
pub struct ItemPool {
    features: DMatrix<f64>,
    true_scores: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PoolRepr {
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_scores: Option<Vec<f64>>,
}

impl TryFrom<PoolRepr> for ItemPool {
    type Error = Error;

    fn try_from(repr: PoolRepr) -> Result<Self> {
        ItemPool::from_rows(&repr.features, repr.true_scores)
    }
}

impl From<ItemPool> for PoolRepr {
    fn from(pool: ItemPool) -> Self {
        PoolRepr {
            features: pool.rows(),
            true_scores: pool.true_scores,
        }
    }
}

impl ItemPool {
    pub fn new(features: DMatrix<f64>, true_scores: Option<Vec<f64>>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature values must be finite".into()));
        }
        if let Some(scores) = &true_scores {
            if scores.len() != features.nrows() {
                return Err(Error::Validation(format!(
                    "{} scores for {} items",
                    scores.len(),
                    features.nrows()
                )));
            }
        }
        Ok(ItemPool {
            features,
            true_scores,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], true_scores: Option<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Validation(format!(
                "item {i} has {} features, expected {d}",
                row.len()
            )));
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
        ItemPool::new(features, true_scores)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature(&self, i: ItemId) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn true_scores(&self) -> Option<&[f64]> {
        self.true_scores.as_deref()
    }

    pub fn set_true_scores(&mut self, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::Validation(format!(
                "{} scores for {} items",
                scores.len(),
                self.len()
            )));
        }
        self.true_scores = Some(scores);
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.features
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Attribute difference vector `x_i - x_j`.
    pub fn diff_vector(&self, i: ItemId, j: ItemId) -> Result<DVector<f64>> {
        self.check_pair(i, j)?;
        Ok((self.features.row(i) - self.features.row(j)).transpose())
    }

    pub fn check_pair(&self, i: ItemId, j: ItemId) -> Result<()> {
        if i == j || i >= self.len() || j >= self.len() {
            return Err(Error::InvalidPair(i, j));
        }
        Ok(())
    }

    /// Returns the sub-pool made of `ids`, in that order.
    pub fn subset(&self, ids: &[ItemId]) -> ItemPool {
        let features = self.features.select_rows(ids);
        let true_scores = self
            .true_scores
            .as_ref()
            .map(|s| ids.iter().map(|&i| s[i]).collect());
        ItemPool {
            features,
            true_scores,
        }
    }

    /// Appends items to the end of the pool; new items get the next ids.
    pub fn append(&mut self, other: &ItemPool) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Validation(format!(
                "appended items have dimension {}, pool has {}",
                other.dim(),
                self.dim()
            )));
        }
        let scores = match (&self.true_scores, &other.true_scores) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => {
                return Err(Error::Validation(
                    "cannot mix pools with and without scores".into(),
                ))
            }
        };
        let n = self.len();
        let mut features = DMatrix::zeros(n + other.len(), self.dim());
        features.rows_mut(0, n).copy_from(&self.features);
        features.rows_mut(n, other.len()).copy_from(&other.features);
        self.features = features;
        self.true_scores = scores;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_csv_from(file, &path.display().to_string())
    }

    pub fn read_csv_from<R: Read>(reader: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let parse_err = |line: u64, message: String| Error::Parse {
            path: name.to_string(),
            line,
            message,
        };
        if headers.get(0) != Some("id") {
            return Err(parse_err(1, "header must start with `id`".into()));
        }
        let has_score = headers.iter().last() == Some("score");
        let d = headers.len() - 1 - usize::from(has_score);
        if d == 0 {
            return Err(parse_err(1, "no feature columns".into()));
        }

        let mut rows: Vec<(usize, Vec<f64>, Option<f64>)> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != headers.len() {
                return Err(Error::Validation(format!(
                    "{name}: line {line}: expected {} fields, found {}",
                    headers.len(),
                    record.len()
                )));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad item id `{}`", &record[0])))?;
            let mut values = Vec::with_capacity(d);
            for field in record.iter().skip(1).take(d) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number `{field}`")))?;
                values.push(v);
            }
            let score = if has_score {
                let field = &record[headers.len() - 1];
                Some(
                    field
                        .parse::<f64>()
                        .map_err(|_| parse_err(line, format!("bad score `{field}`")))?,
                )
            } else {
                None
            };
            rows.push((id, values, score));
        }

        let n = rows.len();
        let mut seen = vec![false; n];
        for (id, _, _) in &rows {
            if *id >= n || seen[*id] {
                return Err(Error::Validation(format!(
                    "{name}: item ids must be exactly 0..{n}, found {id}"
                )));
            }
            seen[*id] = true;
        }
        rows.sort_by_key(|r| r.0);
        let scores = has_score.then(|| rows.iter().map(|r| r.2.unwrap_or(f64::NAN)).collect());
        let features: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
        ItemPool::from_rows(&features, scores)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|k| format!("f{k}")));
        if self.true_scores.is_some() {
            header.push("score".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            if let Some(s) = &self.true_scores {
                rec.push(s[i].to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One answered query `(i_t, j_t, c_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub i: ItemId,
    pub j: ItemId,
    /// `true` when `i` was preferred.
    pub c: bool,
    pub t: usize,
}

impl ComparisonRecord {
    pub fn label(&self) -> f64 {
        if self.c {
            1.0
        } else {
            0.0
        }
    }
}

/// Append-only record of answered queries, steps numbered from 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonHistory {
    records: Vec<ComparisonRecord>,
}

impl ComparisonHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, i: ItemId, j: ItemId, c: bool) -> Result<&ComparisonRecord> {
        if i == j {
            return Err(Error::InvalidPair(i, j));
        }
        let t = self.records.len() + 1;
        self.records.push(ComparisonRecord { i, j, c, t });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds a history from `(i, j, c)` triples, renumbering steps.
    pub fn from_triples<I: IntoIterator<Item = (ItemId, ItemId, bool)>>(triples: I) -> Result<Self> {
        let mut h = Self::new();
        for (i, j, c) in triples {
            h.push(i, j, c)?;
        }
        Ok(h)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let annotations: Vec<Annotation> = self
            .records
            .iter()
            .map(|r| Annotation {
                i: r.i,
                j: r.j,
                c: r.c,
            })
            .collect();
        write_comparisons_csv(&annotations, writer)
    }
}

/// A stored `(i, j, c)` annotation without a step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub i: ItemId,
    pub j: ItemId,
    pub c: bool,
}

impl Annotation {
    /// Same annotation viewed as a query on `(j, i)`.
    pub fn flipped(self) -> Self {
        Annotation {
            i: self.j,
            j: self.i,
            c: !self.c,
        }
    }
}

pub fn read_comparisons_csv<R: Read>(reader: R, name: &str, n_items: usize) -> Result<Vec<Annotation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", "c"] {
        return Err(Error::Parse {
            path: name.into(),
            line: 1,
            message: "header must be `i,j,c`".into(),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: name.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str, v: &str| Error::Parse {
            path: name.into(),
            line,
            message: format!("bad {what} `{v}`"),
        };
        let i: usize = record[0].parse().map_err(|_| bad("item", &record[0]))?;
        let j: usize = record[1].parse().map_err(|_| bad("item", &record[1]))?;
        let c = match &record[2] {
            "1" => true,
            "0" => false,
            other => return Err(bad("label", other)),
        };
        if i >= n_items || j >= n_items {
            return Err(Error::Validation(format!(
                "{name}: line {line}: comparison ({i}, {j}) references an item outside 0..{n_items}"
            )));
        }
        if i == j {
            return Err(Error::Validation(format!(
                "{name}: line {line}: item {i} compared with itself"
            )));
        }
        out.push(Annotation { i, j, c });
    }
    Ok(out)
}

pub fn write_comparisons_csv<W: Write>(annotations: &[Annotation], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["i", "j", "c"])?;
    for a in annotations {
        wtr.write_record([a.i.to_string(), a.j.to_string(), u8::from(a.c).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pre-collected annotations split into a replay side and a reserved holdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPool {
    pub replay: Vec<Annotation>,
    pub holdout: Vec<Annotation>,
    pub holdout_fraction: f64,
}

impl ComparisonPool {
    /// Seeded per-annotation split. The holdout gets `round(fraction * len)`
    /// annotations; both sides keep the input order.
    pub fn split<R: Rng + ?Sized>(annotations: Vec<Annotation>, holdout_fraction: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&holdout_fraction) {
            return Err(Error::Validation(format!(
                "holdout fraction must be in [0, 1), got {holdout_fraction}"
            )));
        }
        let total = annotations.len();
        let n_holdout = (holdout_fraction * total as f64).round() as usize;
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(rng);
        let mut in_holdout = vec![false; total];
        for &k in &order[..n_holdout] {
            in_holdout[k] = true;
        }
        let (mut replay, mut holdout) = (Vec::new(), Vec::new());
        for (k, a) in annotations.into_iter().enumerate() {
            if in_holdout[k] {
                holdout.push(a);
            } else {
                replay.push(a);
            }
        }
        Ok(ComparisonPool {
            replay,
            holdout,
            holdout_fraction,
        })
    }
}

/// Loads an item pool and, optionally, a comparison pool split into replay
/// and holdout sides using the holdout substream of `seed`.
pub fn load_dataset(
    items_path: &Path,
    comparisons_path: Option<&Path>,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(ItemPool, Option<ComparisonPool>)> {
    let pool = ItemPool::read_csv(items_path)?;
    let comparisons = match comparisons_path {
        None => None,
        Some(path) => {
            let file = File::open(path)?;
            let annotations = read_comparisons_csv(file, &path.display().to_string(), pool.len())?;
            let mut rng = substream(seed, Stream::Holdout);
            Some(ComparisonPool::split(annotations, holdout_fraction, &mut rng)?)
        }
    };
    Ok((pool, comparisons))
}

/// Result of a median split: the lower-scored half trains, the upper half evaluates.
#[derive(Debug, Clone)]
pub struct GeneralizationSplit {
    pub train: ItemPool,
    pub eval: ItemPool,
    /// Original ids of the training items, in sub-pool order.
    pub train_ids: Vec<ItemId>,
    pub eval_ids: Vec<ItemId>,
}

/// Splits at the score median, ties broken by item id.
pub fn split_generalization(pool: &ItemPool, scores: &[f64]) -> Result<GeneralizationSplit> {
    let n = pool.len();
    if n < 4 {
        return Err(Error::Split(n));
    }
    if scores.len() != n {
        return Err(Error::Validation(format!("{} scores for {n} items", scores.len())));
    }
    let mut order: Vec<ItemId> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let half = n / 2;
    let mut train_ids = order[..half].to_vec();
    let mut eval_ids = order[half..].to_vec();
    train_ids.sort_unstable();
    eval_ids.sort_unstable();
    let mut train = pool.subset(&train_ids);
    let mut eval = pool.subset(&eval_ids);
    train.set_true_scores(train_ids.iter().map(|&i| scores[i]).collect())?;
    eval.set_true_scores(eval_ids.iter().map(|&i| scores[i]).collect())?;
    Ok(GeneralizationSplit {
        train,
        eval,
        train_ids,
        eval_ids,
    })
}
