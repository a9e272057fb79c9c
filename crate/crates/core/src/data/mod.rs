//! Tabular datasets: schema, CSV ingestion, standardization, balancing and
//! stratified cross-validation splits.
//!
//! Standardization uses the *population* standard deviation (divide by `n`,
//! not `n - 1`), the same convention as scikit-learn's `StandardScaler`.

mod load;
mod split;
pub mod synth;

pub use load::{load_csv, read_csv, LoadReport};
pub use split::{stratified_folds, FoldSplit, SplitPlan};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_version() -> u32 {
    SCHEMA_VERSION
}

/// Raw CSV layout: one entry per input column, before one-hot expansion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Schema {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Name of the label column.
    pub label: String,
    /// Label value treated as class 1. When absent the label must be numeric 0/1.
    #[serde(default)]
    pub positive_label: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub immutable: bool,
    #[serde(default)]
    pub lower_bound: Option<f64>,
    #[serde(default)]
    pub upper_bound: Option<f64>,
    #[serde(default)]
    pub change_cost: Option<f64>,
    /// Replacement for missing cells. Rows with missing cells are dropped otherwise.
    #[serde(default)]
    pub fill: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical {
        /// Category order for the one-hot columns; sorted observed values if absent.
        #[serde(default)]
        categories: Option<Vec<String>>,
    },
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported schema version {}", self.version)));
        }
        for c in &self.columns {
            if let (Some(lo), Some(hi)) = (c.lower_bound, c.upper_bound) {
                if lo > hi {
                    return Err(Error::Schema(format!(
                        "column `{}`: lower bound {lo} exceeds upper bound {hi}",
                        c.name
                    )));
                }
            }
            if let ColumnKind::Categorical { categories: Some(cats) } = &c.kind {
                if cats.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` needs at least two categories",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One model-facing column after expansion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub immutable: bool,
    #[serde(default)]
    pub lower_bound: Option<f64>,
    #[serde(default)]
    pub upper_bound: Option<f64>,
    /// Weight of this feature's change indicator in the mixed distance.
    #[serde(default)]
    pub change_cost: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Categorical { group: usize, member: usize },
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            immutable: false,
            lower_bound: None,
            upper_bound: None,
            change_cost: None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous)
    }

    pub fn cost(&self) -> f64 {
        self.change_cost.unwrap_or(1.0)
    }
}

/// Column indices of each categorical group, in member order.
pub fn categorical_groups(specs: &[FeatureSpec]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for (j, s) in specs.iter().enumerate() {
        if let FeatureKind::Categorical { group, member } = s.kind {
            if groups.len() <= group {
                groups.resize(group + 1, Vec::new());
            }
            groups[group].push((member, j));
        }
    }
    groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|mut g| {
            g.sort_unstable();
            g.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn validate_specs(specs: &[FeatureSpec]) -> Result<()> {
    for s in specs {
        if let (Some(lo), Some(hi)) = (s.lower_bound, s.upper_bound) {
            if lo > hi {
                return Err(Error::Schema(format!(
                    "feature `{}`: lower bound exceeds upper bound",
                    s.name
                )));
            }
        }
    }
    for g in categorical_groups(specs) {
        if g.len() < 2 {
            return Err(Error::Schema(format!(
                "categorical group containing `{}` has a single member column",
                specs[g[0]].name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ScalerEntry {
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-continuous-column standardization parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Scaler {
    pub entries: Vec<ScalerEntry>,
}

impl Scaler {
    pub fn transform_row(&self, row: &mut DVector<f64>) {
        for e in &self.entries {
            row[e.column] = (row[e.column] - e.mean) / e.std;
        }
    }

    pub fn inverse_row(&self, row: &mut DVector<f64>) {
        for e in &self.entries {
            row[e.column] = row[e.column] * e.std + e.mean;
        }
    }

    pub fn transform(&self, x: &mut DMatrix<f64>) {
        for e in &self.entries {
            for v in x.column_mut(e.column).iter_mut() {
                *v = (*v - e.mean) / e.std;
            }
        }
    }

    pub fn inverse(&self, x: &mut DMatrix<f64>) {
        for e in &self.entries {
            for v in x.column_mut(e.column).iter_mut() {
                *v = *v * e.std + e.mean;
            }
        }
    }

    /// Map a raw-unit value of `column` into standardized units.
    pub fn to_standard(&self, column: usize, raw: f64) -> f64 {
        match self.entries.iter().find(|e| e.column == column) {
            Some(e) => (raw - e.mean) / e.std,
            None => raw,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    #[serde(with = "crate::numeric::serde_dmatrix")]
    pub x: DMatrix<f64>,
    pub y: Vec<u8>,
    pub specs: Vec<FeatureSpec>,
    #[serde(default)]
    pub scaler: Option<Scaler>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<u8>, specs: Vec<FeatureSpec>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim(x.nrows(), y.len()));
        }
        if x.ncols() != specs.len() {
            return Err(Error::dim(x.ncols(), specs.len()));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not binary")));
        }
        validate_specs(&specs)?;
        Ok(Dataset {
            x,
            y,
            specs,
            scaler: None,
        })
    }

    /// Dataset of continuous features only; handy for synthetic experiments.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let x = crate::numeric::matrix_from_rows(rows).map_err(Error::InvalidInput)?;
        let specs = (0..d).map(|j| FeatureSpec::continuous(format!("x{j}"))).collect();
        Dataset::new(x, y, specs)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn label(&self, i: usize) -> f64 {
        f64::from(self.y[i])
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - ones, ones]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.d(), |i, j| self.x[(rows[i], j)]);
        Dataset {
            x,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            specs: self.specs.clone(),
            scaler: self.scaler.clone(),
        }
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        categorical_groups(&self.specs)
    }

    /// SHA-256 over shape, values and labels; used to tie artifacts to their data.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for i in 0..self.n() {
            for j in 0..self.d() {
                h.update(self.x[(i, j)].to_le_bytes());
            }
        }
        h.update(&self.y);
        hex::encode(h.finalize())
    }

    /// Standardize continuous columns with parameters fit on `fit_rows` only.
    /// Binary and one-hot columns are left untouched.
    pub fn preprocess(&self, fit_rows: &[usize]) -> Result<Dataset> {
        if fit_rows.is_empty() {
            return Err(Error::Empty("preprocessing needs at least one fit row".into()));
        }
        let m = fit_rows.len() as f64;
        let mut entries = Vec::new();
        for (j, spec) in self.specs.iter().enumerate() {
            if !spec.is_continuous() {
                continue;
            }
            let mean = fit_rows.iter().map(|&i| self.x[(i, j)]).sum::<f64>() / m;
            let var = fit_rows.iter().map(|&i| (self.x[(i, j)] - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            if !(std > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::DegenerateFeature(spec.name.clone()));
            }
            entries.push(ScalerEntry { column: j, mean, std });
        }
        // Bounds move with their columns so constraints stay in model units.
        let mut specs = self.specs.clone();
        for e in &entries {
            let s = &mut specs[e.column];
            s.lower_bound = s.lower_bound.map(|b| (b - e.mean) / e.std);
            s.upper_bound = s.upper_bound.map(|b| (b - e.mean) / e.std);
        }
        let scaler = Scaler { entries };
        let mut x = self.x.clone();
        scaler.transform(&mut x);
        Ok(Dataset {
            x,
            y: self.y.clone(),
            specs,
            scaler: Some(scaler),
        })
    }

    /// Under-sample the majority class uniformly at random. Retained rows keep
    /// their original relative order.
    pub fn balance(&self, seed: u64) -> Dataset {
        let [zeros, ones] = self.class_counts();
        if zeros == ones {
            return self.clone();
        }
        let majority = u8::from(ones > zeros);
        let keep = zeros.min(ones);
        let mut major: Vec<usize> = (0..self.n()).filter(|&i| self.y[i] == majority).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        major.shuffle(&mut rng);
        major.truncate(keep);
        let mut rows: Vec<usize> = (0..self.n()).filter(|&i| self.y[i] != majority).chain(major).collect();
        rows.sort_unstable();
        self.subset(&rows)
    }
}
