use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, Dataset, FeatureKind, FeatureSpec, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

const MISSING: [&str; 5] = ["", "NA", "N/A", "?", "null"];

fn is_missing(v: &str) -> bool {
    MISSING.contains(&v.trim())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parse a headered, comma-separated table according to `schema`, one-hot
/// expanding categorical columns.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let label_idx = find(&schema.label)?;
    let col_idx = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let mut kept: Vec<Vec<String>> = Vec::new();
    let mut source_rows = Vec::new();
    let mut labels = Vec::new();
    // Category levels are collected over every row, including dropped ones,
    // so the one-hot layout does not depend on the missing-value policy.
    let mut observed: Vec<BTreeSet<String>> = vec![BTreeSet::new(); col_idx.len()];
    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let row_no = report.rows_read;
        let label_raw = record.get(label_idx).unwrap_or("");
        let mut cells = Vec::with_capacity(col_idx.len());
        let mut missing = is_missing(label_raw);
        for (c, (spec, &ci)) in schema.columns.iter().zip(&col_idx).enumerate() {
            let raw = record.get(ci).unwrap_or("").trim();
            if !is_missing(raw) {
                observed[c].insert(raw.to_string());
            }
            if is_missing(raw) {
                match &spec.fill {
                    Some(fill) => cells.push(fill.clone()),
                    None => missing = true,
                }
            } else {
                cells.push(raw.to_string());
            }
        }
        if missing {
            report.rows_dropped += 1;
            continue;
        }
        labels.push(parse_label(label_raw.trim(), schema, row_no)?);
        kept.push(cells);
        source_rows.push(row_no);
    }

    // Column layout after expansion.
    let mut specs = Vec::new();
    let mut layouts = Vec::new();
    let mut group = 0;
    for (c, spec) in schema.columns.iter().enumerate() {
        let base = FeatureSpec {
            name: spec.name.clone(),
            kind: FeatureKind::Continuous,
            immutable: spec.immutable,
            lower_bound: spec.lower_bound,
            upper_bound: spec.upper_bound,
            change_cost: spec.change_cost,
        };
        match &spec.kind {
            ColumnKind::Continuous => {
                specs.push(base);
                layouts.push(Layout::Numeric);
            }
            ColumnKind::Binary => {
                specs.push(FeatureSpec {
                    kind: FeatureKind::Binary,
                    ..base
                });
                layouts.push(Layout::Binary);
            }
            ColumnKind::Categorical { categories } => {
                let cats: Vec<String> = match categories {
                    Some(c) => c.clone(),
                    None => observed[c].iter().cloned().collect(),
                };
                if cats.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` has fewer than two categories",
                        spec.name
                    )));
                }
                for (member, cat) in cats.iter().enumerate() {
                    specs.push(FeatureSpec {
                        name: format!("{}={}", spec.name, cat),
                        kind: FeatureKind::Categorical { group, member },
                        lower_bound: None,
                        upper_bound: None,
                        ..base.clone()
                    });
                }
                group += 1;
                layouts.push(Layout::OneHot(cats));
            }
        }
    }

    let d = specs.len();
    let mut x = DMatrix::zeros(kept.len(), d);
    for (i, cells) in kept.iter().enumerate() {
        let mut j = 0;
        for ((cell, layout), spec) in cells.iter().zip(&layouts).zip(&schema.columns) {
            let bad = || Error::Parse {
                row: source_rows[i],
                column: spec.name.clone(),
                value: cell.clone(),
            };
            match layout {
                Layout::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| bad())?;
                    if !v.is_finite() {
                        return Err(bad());
                    }
                    x[(i, j)] = v;
                    j += 1;
                }
                Layout::Binary => {
                    let v: f64 = cell.parse().map_err(|_| bad())?;
                    if v != 0.0 && v != 1.0 {
                        return Err(bad());
                    }
                    x[(i, j)] = v;
                    j += 1;
                }
                Layout::OneHot(cats) => {
                    let k = cats.iter().position(|c| c == cell).ok_or_else(|| {
                        Error::Schema(format!(
                            "row {}: unknown category `{cell}` in column `{}`",
                            source_rows[i], spec.name
                        ))
                    })?;
                    x[(i, j + k)] = 1.0;
                    j += cats.len();
                }
            }
        }
    }
    Ok((Dataset::new(x, labels, specs)?, report))
}

enum Layout {
    Numeric,
    Binary,
    OneHot(Vec<String>),
}

fn parse_label(raw: &str, schema: &Schema, row: usize) -> Result<u8> {
    if let Some(pos) = &schema.positive_label {
        return Ok(u8::from(raw == pos));
    }
    match raw.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(Error::Parse {
            row,
            column: schema.label.clone(),
            value: raw.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;

    fn col(name: &str, kind: ColumnKind) -> ColumnSpec {
        ColumnSpec {
            name: name.into(),
            kind,
            immutable: false,
            lower_bound: None,
            upper_bound: None,
            change_cost: None,
            fill: None,
        }
    }

    fn schema() -> Schema {
        Schema {
            version: 1,
            label: "y".into(),
            positive_label: None,
            columns: vec![
                col("num", ColumnKind::Continuous),
                col("cat", ColumnKind::Categorical { categories: None }),
            ],
        }
    }

    #[test]
    fn complete_file_keeps_every_row() {
        let text = "num,cat,y\n1.0,a,0\n2.0,b,1\n3.0,a,1\n";
        let (ds, report) = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(report.rows_dropped, 0);
    }

    #[test]
    fn one_hot_column_sums() {
        let text = "num,cat,y\n1.0,a,0\n2.0,b,1\n3.0,a,1\n";
        let (ds, _) = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.d(), 3);
        assert_eq!(ds.x.column(1).sum(), 2.0);
        assert_eq!(ds.x.column(2).sum(), 1.0);
        assert_eq!(ds.specs[1].name, "cat=a");
    }

    #[test]
    fn missing_value_drops_exactly_one_row() {
        let text = "num,cat,y\n1.0,a,0\n,b,1\n3.0,a,1\n";
        let (ds, report) = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(report.rows_dropped, 1);
    }

    #[test]
    fn fill_value_replaces_missing() {
        let mut s = schema();
        s.columns[0].fill = Some("0".into());
        let text = "num,cat,y\n1.0,a,0\n,b,1\n";
        let (ds, report) = read_csv(text.as_bytes(), &s).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(report.rows_dropped, 0);
        assert_eq!(ds.x[(1, 0)], 0.0);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "num,y\n1.0,0\n";
        assert!(matches!(read_csv(text.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn non_numeric_continuous_cell_reports_row() {
        let text = "num,cat,y\n1.0,a,0\nabc,b,1\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "num");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
