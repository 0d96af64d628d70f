use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, ResponseMode};

/// Identifier column name shared by case files and forecast output.
pub const CASE_ID: &str = "case_id";

const MISSING_TOKENS: [&str; 5] = ["", "NA", "N/A", "NaN", "nan"];

fn is_missing(raw: &str) -> bool {
    MISSING_TOKENS.contains(&raw.trim())
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Which columns are categorical, as declared by a schema file.
///
/// ```toml
/// categorical = ["employment", "charge_type"]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalSchema {
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl CategoricalSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::SchemaFile(e.to_string()))
    }
}

/// Tabular cases before encoding. Cells are kept as text; `None` marks a
/// missing value and makes the row incomplete.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub rows: Vec<Vec<Option<String>>>,
    pub response: String,
}

impl RawTable {
    pub fn new(
        columns: Vec<RawColumn>,
        rows: Vec<Vec<Option<String>>>,
        response: impl Into<String>,
    ) -> Result<Self, DataError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DataError::Shape(format!(
                    "row {i} has {} cells, header has {}",
                    row.len(),
                    columns.len()
                )));
            }
        }
        Ok(Self {
            columns,
            rows,
            response: response.into(),
        })
    }

    /// Reads a headed CSV. Columns listed in `schema` are categorical; any
    /// other column is numeric if all its non-missing cells parse as finite
    /// numbers and categorical otherwise. A `case_id` column is an identifier,
    /// not a predictor, and is skipped.
    pub fn from_csv<R: Read>(
        reader: R,
        response: &str,
        schema: Option<&CategoricalSchema>,
    ) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let full: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let keep: Vec<usize> = (0..full.len()).filter(|&j| full[j] != CASE_ID).collect();
        let header: Vec<String> = keep.iter().map(|&j| full[j].clone()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(
                keep.iter()
                    .map(|&j| rec.get(j).filter(|c| !is_missing(c)).map(str::to_owned))
                    .collect::<Vec<_>>(),
            );
        }
        let declared: HashSet<&str> = schema
            .map(|s| s.categorical.iter().map(String::as_str).collect())
            .unwrap_or_default();
        if let Some(s) = schema {
            for name in &s.categorical {
                if !header.contains(name) {
                    return Err(DataError::SchemaMismatch(format!(
                        "schema declares `{name}` categorical but the CSV has no such column"
                    )));
                }
            }
        }
        let columns = header
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let numeric = rows
                    .iter()
                    .filter_map(|r: &Vec<Option<String>>| r[j].as_deref())
                    .all(|v| parse_finite(v).is_some());
                let kind = if declared.contains(name.as_str()) || !numeric {
                    ColumnKind::Categorical
                } else {
                    ColumnKind::Numeric
                };
                RawColumn {
                    name: name.clone(),
                    kind,
                }
            })
            .collect();
        Self::new(columns, rows, response)
    }
}

/// Encoding rule for one source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceColumn {
    Numeric { name: String },
    /// `levels` are sorted; the first is the reference level and gets no indicator.
    Categorical { name: String, levels: Vec<String> },
}

impl SourceColumn {
    pub fn name(&self) -> &str {
        match self {
            SourceColumn::Numeric { name } | SourceColumn::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            SourceColumn::Numeric { .. } => 1,
            SourceColumn::Categorical { levels, .. } => levels.len() - 1,
        }
    }
}

/// The mapping from raw predictor columns to encoded feature columns,
/// kept so new cases are encoded exactly like the training cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<SourceColumn>,
}

impl FeatureSchema {
    /// All-numeric schema with the given column names.
    pub fn numeric(names: &[String]) -> Self {
        Self {
            columns: names
                .iter()
                .map(|n| SourceColumn::Numeric { name: n.clone() })
                .collect(),
        }
    }

    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(SourceColumn::width).sum()
    }

    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.encoded_width());
        for col in &self.columns {
            match col {
                SourceColumn::Numeric { name } => names.push(name.clone()),
                SourceColumn::Categorical { name, levels } => {
                    names.extend(levels[1..].iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }

    /// Encodes raw text rows laid out per `header`. Header columns that the
    /// schema does not know must be listed in `ignored`; every schema column
    /// must be present.
    pub fn encode_rows(
        &self,
        header: &[String],
        rows: &[Vec<Option<String>>],
        ignored: &[&str],
    ) -> Result<DMatrix<f64>, DataError> {
        let known: HashSet<&str> = self.columns.iter().map(SourceColumn::name).collect();
        for h in header {
            if !known.contains(h.as_str()) && !ignored.contains(&h.as_str()) {
                return Err(DataError::SchemaMismatch(format!(
                    "unexpected column `{h}` (model expects {:?})",
                    self.columns.iter().map(SourceColumn::name).collect::<Vec<_>>()
                )));
            }
        }
        let mut positions = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            let pos = header.iter().position(|h| h == col.name()).ok_or_else(|| {
                DataError::SchemaMismatch(format!("missing column `{}`", col.name()))
            })?;
            positions.push(pos);
        }

        let mut x = DMatrix::zeros(rows.len(), self.encoded_width());
        for (i, row) in rows.iter().enumerate() {
            let mut out = 0;
            for (col, &pos) in self.columns.iter().zip(&positions) {
                let cell = row.get(pos).and_then(|c| c.as_deref());
                let unencodable = |value: &str| DataError::Unencodable {
                    column: col.name().to_owned(),
                    row: i,
                    value: value.to_owned(),
                };
                let cell = cell.ok_or_else(|| unencodable("<missing>"))?;
                match col {
                    SourceColumn::Numeric { .. } => {
                        x[(i, out)] = parse_finite(cell).ok_or_else(|| unencodable(cell))?;
                        out += 1;
                    }
                    SourceColumn::Categorical { levels, .. } => {
                        let idx = levels
                            .iter()
                            .position(|l| l == cell.trim())
                            .ok_or_else(|| unencodable(cell))?;
                        if idx > 0 {
                            x[(i, out + idx - 1)] = 1.0;
                        }
                        out += levels.len() - 1;
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Outcome of encoding beyond the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub schema: FeatureSchema,
    pub dropped_incomplete: usize,
    /// Raw response values mapped to 0 and 1 (classification mode).
    pub class_labels: Option<[String; 2]>,
}

/// Encodes every categorical column with C levels into C−1 indicator
/// columns (reference level = first in sorted order) and drops incomplete rows.
pub fn load_and_encode(
    table: &RawTable,
    mode: ResponseMode,
) -> Result<(Dataset, EncodeReport), DataError> {
    let resp_idx = table
        .columns
        .iter()
        .position(|c| c.name == table.response)
        .ok_or_else(|| DataError::MissingResponse(table.response.clone()))?;

    let complete: Vec<&Vec<Option<String>>> = table
        .rows
        .iter()
        .filter(|row| {
            row.iter().enumerate().all(|(j, cell)| match cell {
                None => false,
                Some(v) => {
                    j == resp_idx
                        || table.columns[j].kind == ColumnKind::Categorical
                        || parse_finite(v).is_some()
                }
            })
        })
        .collect();
    let dropped_incomplete = table.rows.len() - complete.len();
    if complete.len() < 3 {
        return Err(DataError::TooFewRows {
            complete: complete.len(),
        });
    }
    let cell = |row: &Vec<Option<String>>, j: usize| -> String {
        row[j].as_deref().unwrap_or_default().trim().to_owned()
    };

    let mut schema_cols = Vec::new();
    for (j, col) in table.columns.iter().enumerate() {
        if j == resp_idx {
            continue;
        }
        match col.kind {
            ColumnKind::Numeric => schema_cols.push(SourceColumn::Numeric {
                name: col.name.clone(),
            }),
            ColumnKind::Categorical => {
                let levels: BTreeSet<String> = complete.iter().map(|r| cell(r, j)).collect();
                if levels.len() < 2 {
                    return Err(DataError::SingleLevel(col.name.clone()));
                }
                schema_cols.push(SourceColumn::Categorical {
                    name: col.name.clone(),
                    levels: levels.into_iter().collect(),
                });
            }
        }
    }
    let schema = FeatureSchema {
        columns: schema_cols,
    };

    let header: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
    let owned: Vec<Vec<Option<String>>> = complete.iter().map(|r| (*r).clone()).collect();
    let x = schema.encode_rows(&header, &owned, &[table.response.as_str()])?;

    let raw_y: Vec<String> = complete.iter().map(|r| cell(r, resp_idx)).collect();
    let (y, class_labels) = match mode {
        ResponseMode::Regression => {
            let y = raw_y
                .iter()
                .map(|v| parse_finite(v).ok_or_else(|| DataError::ResponseNotNumeric(v.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            (y, None)
        }
        ResponseMode::Classification => {
            let (negative, positive) = binary_levels(&raw_y)?;
            let y = raw_y
                .iter()
                .map(|v| if *v == positive { 1.0 } else { 0.0 })
                .collect();
            (y, Some([negative, positive]))
        }
    };

    let ds = Dataset::new(x, y, schema.encoded_names(), mode)?;
    ds.require_both_classes()?;
    Ok((
        ds,
        EncodeReport {
            schema,
            dropped_incomplete,
            class_labels,
        },
    ))
}

/// Picks (negative, positive) labels from exactly two distinct values.
/// Numeric labels order numerically, text labels lexicographically.
fn binary_levels(values: &[String]) -> Result<(String, String), DataError> {
    let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        return Err(DataError::ResponseNotBinary(
            distinct.into_iter().map(str::to_owned).collect(),
        ));
    }
    let mut levels: Vec<&str> = distinct.into_iter().collect();
    if let (Some(a), Some(b)) = (parse_finite(levels[0]), parse_finite(levels[1])) {
        if a > b {
            levels.swap(0, 1);
        }
    }
    Ok((levels[0].to_owned(), levels[1].to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> Option<String> {
        Some(v.to_owned())
    }

    fn table(csv: &str, response: &str) -> RawTable {
        RawTable::from_csv(csv.as_bytes(), response, None).unwrap()
    }

    #[test]
    fn four_level_column_becomes_three_indicators() {
        let t = table(
            "employment,age,y\nnone,30,0\nfull,41,1\npart,25,0\nself,52,1\nfull,33,0\n",
            "y",
        );
        let (ds, rep) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(ds.n_features(), 1 + 3);
        assert_eq!(
            ds.feature_names(),
            &["employment=none", "employment=part", "employment=self", "age"]
        );
        // "full" is the reference level: all indicators zero
        assert_eq!(ds.row(1)[..3], [0.0, 0.0, 0.0]);
        assert_eq!(ds.row(0)[..3], [1.0, 0.0, 0.0]);
        assert_eq!(rep.schema.encoded_width(), 4);
    }

    #[test]
    fn two_levels_hand_encoded() {
        let cols = vec![
            RawColumn {
                name: "c".into(),
                kind: ColumnKind::Categorical,
            },
            RawColumn {
                name: "y".into(),
                kind: ColumnKind::Numeric,
            },
        ];
        let rows = vec![vec![s("A"), s("0")], vec![s("B"), s("1")], vec![s("A"), s("1")]];
        let t = RawTable::new(cols, rows, "y").unwrap();
        let (ds, _) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(ds.x().column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_numeric_passes_through() {
        let t = table("a,b,y\n1.5,2,0\n-3,4e1,1\n0,7,1\n", "y");
        let (ds, rep) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(rep.dropped_incomplete, 0);
        assert_eq!(ds.row(0), vec![1.5, 2.0]);
        assert_eq!(ds.row(1), vec![-3.0, 40.0]);
        assert_eq!(ds.row(2), vec![0.0, 7.0]);
        assert_eq!(ds.y(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn incomplete_rows_are_dropped_and_counted() {
        let t = table("a,b,y\n1,2,0\n,4,1\n3,NA,1\n5,6,1\n7,8,0\n", "y");
        let (ds, rep) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(rep.dropped_incomplete, 2);
        assert_eq!(ds.n_cases(), 3);
    }

    #[test]
    fn errors() {
        let t = table("a,y\n1,0\n2,1\n3,0\n", "z");
        assert!(matches!(
            load_and_encode(&t, ResponseMode::Classification),
            Err(DataError::MissingResponse(_))
        ));

        let t = table("c,y\nA,0\nA,1\nA,0\n", "y");
        assert!(matches!(
            load_and_encode(&t, ResponseMode::Classification),
            Err(DataError::SingleLevel(_))
        ));

        let t = table("a,y\n1,0\n,1\n3,\n", "y");
        assert!(matches!(
            load_and_encode(&t, ResponseMode::Classification),
            Err(DataError::TooFewRows { complete: 1 })
        ));

        let t = table("a,y\n1,0\n2,1\n3,2\n", "y");
        assert!(matches!(
            load_and_encode(&t, ResponseMode::Classification),
            Err(DataError::ResponseNotBinary(_))
        ));
    }

    #[test]
    fn text_response_orders_lexicographically() {
        let t = table("a,y\n1,yes\n2,no\n3,yes\n", "y");
        let (ds, rep) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(rep.class_labels, Some(["no".to_owned(), "yes".to_owned()]));
        assert_eq!(ds.y(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn schema_forces_categorical() {
        let schema = CategoricalSchema::from_toml_str("categorical = [\"zip\"]").unwrap();
        let t = RawTable::from_csv("zip,y\n10,0\n20,1\n10,1\n".as_bytes(), "y", Some(&schema))
            .unwrap();
        assert_eq!(t.columns[0].kind, ColumnKind::Categorical);
        let (ds, _) = load_and_encode(&t, ResponseMode::Classification).unwrap();
        assert_eq!(ds.feature_names(), &["zip=20"]);
        assert!(CategoricalSchema::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn encode_rows_rejects_schema_drift() {
        let schema = FeatureSchema {
            columns: vec![
                SourceColumn::Numeric { name: "a".into() },
                SourceColumn::Categorical {
                    name: "c".into(),
                    levels: vec!["x".into(), "y".into()],
                },
            ],
        };
        let header = vec!["c".to_owned(), "a".to_owned()];
        let x = schema
            .encode_rows(&header, &[vec![s("y"), s("2.5")]], &[])
            .unwrap();
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![2.5, 1.0]);

        let err = schema.encode_rows(&["a".to_owned()], &[vec![s("1")]], &[]);
        assert!(matches!(err, Err(DataError::SchemaMismatch(_))));
        let err = schema.encode_rows(&header, &[vec![s("q"), s("1")]], &[]);
        assert!(matches!(err, Err(DataError::Unencodable { .. })));
    }

    #[test]
    fn output_width_counts_indicator_columns() {
        use proptest::prelude::*;
        proptest!(|(levels in proptest::collection::vec(2usize..6, 1..4), numeric in 0usize..3)| {
            let mut cols = Vec::new();
            for (k, &c) in levels.iter().enumerate() {
                cols.push(SourceColumn::Categorical {
                    name: format!("c{k}"),
                    levels: (0..c).map(|l| format!("L{l}")).collect(),
                });
            }
            for k in 0..numeric {
                cols.push(SourceColumn::Numeric { name: format!("n{k}") });
            }
            let schema = FeatureSchema { columns: cols };
            let expected = numeric + levels.iter().map(|c| c - 1).sum::<usize>();
            prop_assert_eq!(schema.encoded_width(), expected);
            prop_assert_eq!(schema.encoded_names().len(), expected);
        });
    }
}
