//! RD data: aligned score/outcome vectors with optional covariates and
//! cluster labels, plus the cutoff.
//!
//! Treatment is never stored. A unit is treated iff its score is `>= cutoff`,
//! so a score exactly at the cutoff lands on the right (treated) side.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Named covariate columns, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdData {
    scores: Vec<f64>,
    outcomes: Vec<f64>,
    covariates: Option<Covariates>,
    clusters: Option<Vec<usize>>,
    cluster_names: Option<Vec<String>>,
    cutoff: f64,
}

impl RdData {
    pub fn new(scores: Vec<f64>, outcomes: Vec<f64>, cutoff: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(RdError::NoUsableRows);
        }
        if scores.len() != outcomes.len() {
            return Err(RdError::InvalidInput(format!(
                "{} scores but {} outcomes",
                scores.len(),
                outcomes.len()
            )));
        }
        if !cutoff.is_finite() {
            return Err(RdError::InvalidInput("cutoff must be finite".into()));
        }
        if let Some(i) = scores.iter().chain(&outcomes).position(|v| !v.is_finite()) {
            return Err(RdError::InvalidInput(format!(
                "non-finite value at position {}",
                i % scores.len()
            )));
        }
        Ok(RdData {
            scores,
            outcomes,
            covariates: None,
            clusters: None,
            cluster_names: None,
            cutoff,
        })
    }

    pub fn with_covariates(mut self, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(RdError::InvalidInput("covariate names and columns differ in count".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != self.n() {
                return Err(RdError::InvalidInput(format!(
                    "covariate `{name}` has {} rows, expected {}",
                    col.len(),
                    self.n()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(RdError::InvalidInput(format!("covariate `{name}` has non-finite values")));
            }
        }
        self.covariates = if columns.is_empty() { None } else { Some(Covariates { names, columns }) };
        Ok(self)
    }

    /// Attach cluster labels; labels are interned in order of first appearance.
    pub fn with_cluster_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(RdError::InvalidInput(format!(
                "{} cluster labels for {} rows",
                labels.len(),
                self.n()
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let ids = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l).or_insert_with(|| {
                    names.push(l.to_string());
                    names.len() - 1
                })
            })
            .collect();
        self.clusters = Some(ids);
        self.cluster_names = Some(names);
        Ok(self)
    }

    pub fn with_cluster_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(RdError::InvalidInput(format!("{} cluster ids for {} rows", ids.len(), self.n())));
        }
        self.clusters = Some(ids);
        self.cluster_names = None;
        Ok(self)
    }

    pub fn without_covariates(mut self) -> Self {
        self.covariates = None;
        self
    }

    pub fn without_clusters(mut self) -> Self {
        self.clusters = None;
        self.cluster_names = None;
        self
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn clusters(&self) -> Option<&[usize]> {
        self.clusters.as_deref()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.as_ref().map_or(0, |c| {
            let mut ids = c.clone();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
    }

    #[inline]
    pub fn is_treated(&self, i: usize) -> bool {
        self.scores[i] >= self.cutoff
    }

    /// Same rows with a new outcome vector (used for covariate balance and
    /// adjusted outcomes).
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        let mut d = RdData::new(self.scores.clone(), outcomes, self.cutoff)?;
        d.covariates = self.covariates.clone();
        d.clusters = self.clusters.clone();
        d.cluster_names = self.cluster_names.clone();
        Ok(d)
    }

    /// Same rows evaluated against a different cutoff.
    pub fn with_cutoff(&self, cutoff: f64) -> Result<Self> {
        if !cutoff.is_finite() {
            return Err(RdError::InvalidInput("cutoff must be finite".into()));
        }
        let mut d = self.clone();
        d.cutoff = cutoff;
        Ok(d)
    }

    /// Row subset in the given order; covariates and clusters stay aligned.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(RdError::EmptyWindow);
        }
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut d = RdData::new(pick(&self.scores), pick(&self.outcomes), self.cutoff)?;
        d.covariates = self.covariates.as_ref().map(|c| Covariates {
            names: c.names.clone(),
            columns: c.columns.iter().map(|col| pick(col)).collect(),
        });
        d.clusters = self.clusters.as_ref().map(|c| rows.iter().map(|&i| c[i]).collect());
        d.cluster_names = self.cluster_names.clone();
        Ok(d)
    }

    pub(crate) fn side_sample(&self, side: Side) -> SideSample {
        let mut idx: Vec<usize> = (0..self.n())
            .filter(|&i| match side {
                Side::Left => self.scores[i] < self.cutoff,
                Side::Right => self.scores[i] >= self.cutoff,
            })
            .collect();
        // stable: ties keep input order
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        SideSample {
            side,
            cutoff: self.cutoff,
            x: idx.iter().map(|&i| self.scores[i]).collect(),
            y: idx.iter().map(|&i| self.outcomes[i]).collect(),
            z: self
                .covariates
                .as_ref()
                .map(|c| c.columns.iter().map(|col| idx.iter().map(|&i| col[i]).collect()).collect())
                .unwrap_or_default(),
            clusters: self.clusters.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// One side of the cutoff, sorted by score.
#[derive(Debug, Clone)]
pub(crate) struct SideSample {
    pub side: Side,
    pub cutoff: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub clusters: Option<Vec<usize>>,
}

impl SideSample {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// Distance from the cutoff to the farthest score on this side.
    pub fn range(&self) -> f64 {
        match self.side {
            Side::Left => self.x.first().map_or(0.0, |&x| self.cutoff - x),
            Side::Right => self.x.last().map_or(0.0, |&x| x - self.cutoff),
        }
    }

    pub fn without_covariates(&self) -> SideSample {
        SideSample { z: Vec::new(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub n_left: usize,
    pub n_right: usize,
    pub support_min: f64,
    pub support_max: f64,
}

pub fn split(data: &RdData) -> SampleSplit {
    let n_right = (0..data.n()).filter(|&i| data.is_treated(i)).count();
    let (lo, hi) = data
        .scores()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    SampleSplit {
        n_left: data.n() - n_right,
        n_right,
        support_min: lo,
        support_max: hi,
    }
}

/// Rows with `lo <= X <= hi`, minus those with `|X - c| < exclude_radius`.
pub fn window(data: &RdData, lo: f64, hi: f64, exclude_radius: Option<f64>) -> Result<RdData> {
    if !(lo <= hi) {
        return Err(RdError::InvalidInput(format!("window bounds [{lo}, {hi}] are reversed")));
    }
    let radius = exclude_radius.unwrap_or(0.0);
    if !(radius >= 0.0) {
        return Err(RdError::InvalidInput("exclusion radius must be >= 0".into()));
    }
    let c = data.cutoff();
    let rows: Vec<usize> = data
        .scores()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= lo && x <= hi && (x - c).abs() >= radius)
        .map(|(i, _)| i)
        .collect();
    data.select_rows(&rows)
}

/// Mapping from CSV header names to roles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub score: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

impl ColumnMap {
    pub fn new(score: impl Into<String>, outcome: impl Into<String>) -> Self {
        ColumnMap {
            score: score.into(),
            outcome: outcome.into(),
            ..Default::default()
        }
    }

    pub fn covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn cluster(mut self, name: impl Into<String>) -> Self {
        self.cluster = Some(name.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub data: RdData,
    /// Rows dropped because a mapped field was missing.
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "null" | "NULL")
}

/// Read a comma-separated file with a header row. Rows with a missing value
/// in any mapped column are dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap, cutoff: f64) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| RdError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, columns, cutoff)
}

pub fn read_csv<R: std::io::Read>(reader: R, columns: &ColumnMap, cutoff: f64) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(RdError::Csv(e.to_string())),
        Err(_) => return Err(RdError::NoUsableRows),
    };
    if headers.is_empty() {
        return Err(RdError::NoUsableRows);
    }
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RdError::MissingColumn(name.to_string()))
    };
    let score_col = locate(&columns.score)?;
    let outcome_col = locate(&columns.outcome)?;
    let cov_cols = columns.covariates.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let cluster_col = columns.cluster.as_deref().map(locate).transpose()?;

    let mut scores = Vec::new();
    let mut outcomes = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    let mut clusters = Vec::new();
    let mut dropped = 0usize;

    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| RdError::Csv(e.to_string()))?;
        let row = row_no + 1;
        let parse = |col: usize, name: &str| -> Result<Option<f64>> {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                return Ok(None);
            }
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| RdError::NonNumeric {
                    column: name.to_string(),
                    row,
                    value: cell.to_string(),
                })
        };
        let x = parse(score_col, &columns.score)?;
        let y = parse(outcome_col, &columns.outcome)?;
        let zs = cov_cols
            .iter()
            .zip(&columns.covariates)
            .map(|(&c, name)| parse(c, name))
            .collect::<Result<Vec<_>>>()?;
        let cl = cluster_col.map(|c| record.get(c).unwrap_or("").to_string());

        let cluster_missing = cl.as_deref().is_some_and(is_missing);
        match (x, y) {
            (Some(x), Some(y)) if zs.iter().all(Option::is_some) && !cluster_missing => {
                scores.push(x);
                outcomes.push(y);
                for (dst, z) in covs.iter_mut().zip(zs) {
                    dst.push(z.unwrap_or_default());
                }
                if let Some(cl) = cl {
                    clusters.push(cl);
                }
            }
            _ => dropped += 1,
        }
    }

    if scores.is_empty() {
        return Err(RdError::NoUsableRows);
    }
    let mut data = RdData::new(scores, outcomes, cutoff)?;
    if !cov_cols.is_empty() {
        data = data.with_covariates(columns.covariates.clone(), covs)?;
    }
    if cluster_col.is_some() {
        data = data.with_cluster_labels(&clusters)?;
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing mapped fields");
    }
    Ok(CsvLoad { data, dropped_rows: dropped })
}
