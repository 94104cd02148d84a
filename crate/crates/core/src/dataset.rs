//! Schema-bound survival tables: CSV ingestion and emission, cohort
//! filtering, 5x2 cross-validation plans and per-feature summaries.
//!
//! Columns are always stored in schema order, whatever order the source
//! file used.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRole {
    Covariate,
    Duration,
    Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub role: FeatureRole,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind, role: FeatureRole) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind,
            role,
        }
    }

    /// Checks a single raw value against the feature's domain.
    pub fn check_value(&self, value: f64) -> std::result::Result<(), String> {
        if !value.is_finite() {
            return Err(format!("value {value} is not finite"));
        }
        if (self.kind == FeatureKind::Binary || self.role == FeatureRole::Event)
            && value != 0.0
            && value != 1.0
        {
            return Err(format!("binary value must be 0 or 1, found {value}"));
        }
        if self.role == FeatureRole::Duration && value < 0.0 {
            return Err(format!("duration must be non-negative, found {value}"));
        }
        Ok(())
    }
}

/// Ordered feature list with exactly one duration and one event column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureSpec>", into = "Vec<FeatureSpec>")]
pub struct DatasetSchema {
    features: Vec<FeatureSpec>,
    duration: usize,
    event: usize,
}

impl TryFrom<Vec<FeatureSpec>> for DatasetSchema {
    type Error = Error;

    fn try_from(features: Vec<FeatureSpec>) -> Result<Self> {
        DatasetSchema::new(features)
    }
}

impl From<DatasetSchema> for Vec<FeatureSpec> {
    fn from(schema: DatasetSchema) -> Self {
        schema.features
    }
}

impl DatasetSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(Error::Schema("feature with empty name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        let find_role = |role: FeatureRole| -> Result<usize> {
            let hits: Vec<usize> = features
                .iter()
                .enumerate()
                .filter(|(_, f)| f.role == role)
                .map(|(i, _)| i)
                .collect();
            match hits.as_slice() {
                [i] => Ok(*i),
                _ => Err(Error::Schema(format!(
                    "expected exactly one {role:?} feature, found {}",
                    hits.len()
                ))),
            }
        };
        let duration = find_role(FeatureRole::Duration)?;
        let event = find_role(FeatureRole::Event)?;
        if features[duration].kind != FeatureKind::Continuous {
            return Err(Error::Schema("duration feature must be continuous".into()));
        }
        if features[event].kind != FeatureKind::Binary {
            return Err(Error::Schema("event feature must be binary".into()));
        }
        Ok(DatasetSchema {
            features,
            duration,
            event,
        })
    }

    /// The eight WHAS500 variables used throughout: demographics, measurements,
    /// chronic conditions, follow-up time and vital status.
    pub fn whas500() -> Self {
        use FeatureKind::*;
        use FeatureRole::*;
        DatasetSchema::new(vec![
            FeatureSpec::new("age", Continuous, Covariate),
            FeatureSpec::new("sex", Binary, Covariate),
            FeatureSpec::new("bmi", Continuous, Covariate),
            FeatureSpec::new("sysbp", Continuous, Covariate),
            FeatureSpec::new("afb", Binary, Covariate),
            FeatureSpec::new("chf", Binary, Covariate),
            FeatureSpec::new("lenfol", Continuous, Duration),
            FeatureSpec::new("fstat", Binary, Event),
        ])
        .expect("built-in schema is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, index: usize) -> &FeatureSpec {
        &self.features[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn duration_index(&self) -> usize {
        self.duration
    }

    pub fn event_index(&self) -> usize {
        self.event
    }

    pub fn covariate_indices(&self) -> Vec<usize> {
        (0..self.features.len())
            .filter(|&i| self.features[i].role == FeatureRole::Covariate)
            .collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariate_indices()
            .into_iter()
            .map(|i| self.features[i].name.clone())
            .collect()
    }
}

/// A validated, complete survival table stored row-major in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    values: Vec<f64>,
    n_rows: usize,
}

impl Dataset {
    pub fn from_rows(schema: DatasetSchema, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = schema.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "row {} has {} values, schema has {}",
                    i + 1,
                    row.len(),
                    width
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(schema, values)
    }

    pub fn from_flat(schema: DatasetSchema, values: Vec<f64>) -> Result<Self> {
        let width = schema.len();
        if !values.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "{} values do not fill rows of width {width}",
                values.len()
            )));
        }
        let n_rows = values.len() / width;
        for (i, row) in values.chunks(width).enumerate() {
            for (spec, &v) in schema.features().iter().zip(row) {
                spec.check_value(v).map_err(|reason| Error::InvalidCell {
                    row: i + 1,
                    column: spec.name.clone(),
                    reason,
                })?;
            }
        }
        Ok(Dataset {
            schema,
            values,
            n_rows,
        })
    }

    pub fn empty(schema: DatasetSchema) -> Self {
        Dataset {
            schema,
            values: Vec::new(),
            n_rows: 0,
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_features().max(1)).take(self.n_rows)
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_features() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.rows().map(|r| r[col]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(self.schema.index_of(name)?))
    }

    pub fn durations(&self) -> Vec<f64> {
        self.column(self.schema.duration_index())
    }

    pub fn events(&self) -> Vec<bool> {
        let e = self.schema.event_index();
        self.rows().map(|r| r[e] == 1.0).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            values,
            n_rows: indices.len(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Shape("cannot concatenate datasets with different schemas".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Dataset {
            schema: self.schema.clone(),
            values,
            n_rows: self.n_rows + other.n_rows,
        })
    }

    /// Row-major covariate matrix for the named columns.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let idx = names
            .iter()
            .map(|n| self.schema.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .rows()
            .map(|r| idx.iter().map(|&j| r[j]).collect())
            .collect())
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = schema
        .features()
        .iter()
        .map(|f| {
            header
                .iter()
                .position(|h| h == f.name)
                .ok_or_else(|| Error::MissingColumn(f.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for (spec, &pos) in schema.features().iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::InvalidCell {
                row: i + 1,
                column: spec.name.clone(),
                reason: format!("`{cell}` is not a number"),
            })?;
            spec.check_value(v).map_err(|reason| Error::InvalidCell {
                row: i + 1,
                column: spec.name.clone(),
                reason,
            })?;
            values.push(v);
        }
    }
    Dataset::from_flat(schema.clone(), values)
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, file)
}

/// Values are written with the shortest decimal form that parses back to the
/// same `f64`, so a write/read cycle is lossless.
pub fn write_csv_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(dataset.schema().names())?;
    for row in dataset.rows() {
        wtr.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPair {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// One train/test evaluation drawn from a [`FoldPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSplit<'a> {
    pub repetition: usize,
    pub fold: usize,
    pub train: &'a [usize],
    pub test: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub pairs: Vec<FoldPair>,
    pub seed: u64,
}

pub const CV_REPETITIONS: usize = 5;

impl FoldPlan {
    /// Ten evaluations: each repetition's halves serve once as training set
    /// and once as test set.
    pub fn splits(&self) -> Vec<FoldSplit<'_>> {
        self.pairs
            .iter()
            .enumerate()
            .flat_map(|(rep, p)| {
                [
                    FoldSplit {
                        repetition: rep,
                        fold: 0,
                        train: &p.first,
                        test: &p.second,
                    },
                    FoldSplit {
                        repetition: rep,
                        fold: 1,
                        train: &p.second,
                        test: &p.first,
                    },
                ]
            })
            .collect()
    }
}

pub fn make_5x2_folds(dataset: &Dataset, seed: u64) -> Result<FoldPlan> {
    make_5x2_folds_n(dataset.n_rows(), seed)
}

pub fn make_5x2_folds_n(n: usize, seed: u64) -> Result<FoldPlan> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "5x2 cross-validation needs at least 4 rows, got {n}"
        )));
    }
    let pairs = (0..CV_REPETITIONS)
        .map(|rep| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::stream(seed, &[0xF01D, rep as u64]));
            let half = n.div_ceil(2);
            let mut first = idx[..half].to_vec();
            let mut second = idx[half..].to_vec();
            first.sort_unstable();
            second.sort_unstable();
            FoldPair { first, second }
        })
        .collect();
    Ok(FoldPlan { pairs, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub feature: String,
    pub op: Comparator,
    pub value: f64,
}

/// Conjunction of feature comparisons, written `age>=75` or `age>=75,sex=1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CohortPredicate(pub Vec<Comparison>);

impl CohortPredicate {
    pub fn features(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.0 {
            if !out.contains(&c.feature.as_str()) {
                out.push(&c.feature);
            }
        }
        out
    }
}

impl FromStr for CohortPredicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Longer operators first so `>=` is not read as `>`.
        const OPS: [(&str, Comparator); 7] = [
            (">=", Comparator::Ge),
            ("<=", Comparator::Le),
            ("≥", Comparator::Ge),
            ("≤", Comparator::Le),
            (">", Comparator::Gt),
            ("<", Comparator::Lt),
            ("=", Comparator::Eq),
        ];
        let mut comps = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (pos, sym, op) = OPS
                .iter()
                .filter_map(|&(sym, op)| part.find(sym).map(|p| (p, sym, op)))
                .min_by_key(|&(p, sym, _)| (p, std::cmp::Reverse(sym.len())))
                .ok_or_else(|| Error::InvalidArgument(format!("no comparator in `{part}`")))?;
            let feature = part[..pos].trim();
            let rhs = part[pos + sym.len()..].trim();
            if feature.is_empty() {
                return Err(Error::InvalidArgument(format!("missing feature in `{part}`")));
            }
            let value = rhs
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad value `{rhs}` in `{part}`")))?;
            comps.push(Comparison {
                feature: feature.to_string(),
                op,
                value,
            });
        }
        if comps.is_empty() {
            return Err(Error::InvalidArgument("empty cohort predicate".into()));
        }
        Ok(CohortPredicate(comps))
    }
}

impl TryFrom<String> for CohortPredicate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CohortPredicate> for String {
    fn from(p: CohortPredicate) -> String {
        p.to_string()
    }
}

impl fmt::Display for CohortPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}{}{}", c.feature, c.op.symbol(), c.value)?;
        }
        Ok(())
    }
}

/// Indices of the rows satisfying every comparison.
pub fn cohort_indices(dataset: &Dataset, predicate: &CohortPredicate) -> Result<Vec<usize>> {
    let resolved = predicate
        .0
        .iter()
        .map(|c| Ok((dataset.schema().index_of(&c.feature)?, c.op, c.value)))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..dataset.n_rows())
        .filter(|&i| {
            let row = dataset.row(i);
            resolved.iter().all(|&(j, op, v)| op.holds(row[j], v))
        })
        .collect())
}

pub fn filter_cohort(dataset: &Dataset, predicate: &CohortPredicate) -> Result<Dataset> {
    Ok(dataset.select(&cohort_indices(dataset, predicate)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSummary {
    Continuous { name: String, mean: f64, sd: f64 },
    Binary { name: String, proportion: f64 },
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn summarize(dataset: &Dataset) -> Result<Vec<FeatureSummary>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty dataset".into()));
    }
    Ok(dataset
        .schema()
        .features()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let col = dataset.column(j);
            match f.kind {
                FeatureKind::Continuous => FeatureSummary::Continuous {
                    name: f.name.clone(),
                    mean: mean(&col),
                    sd: sample_sd(&col),
                },
                FeatureKind::Binary => FeatureSummary::Binary {
                    name: f.name.clone(),
                    proportion: mean(&col),
                },
            }
        })
        .collect())
}
