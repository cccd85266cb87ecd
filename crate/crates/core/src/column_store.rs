//! CSV ingestion, numeric column detection and ground-truth labels.
//!
//! A cell counts as numeric when, after trimming whitespace, it parses as a
//! finite `f64`. Empty cells are missing and do not count toward the numeric
//! fraction. Thousands separators are not supported.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NUMERIC_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnId {
    /// File stem of the source table.
    pub table: String,
    /// Header text, or a positional name when the header is blank.
    pub column: String,
    pub index: usize,
}

impl ColumnId {
    pub fn new(table: impl Into<String>, column: impl Into<String>, index: usize) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
            index,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.table, &self.column)
    }
}

impl fmt::Display for ColumnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericColumn {
    pub id: ColumnId,
    pub header: String,
    /// Parsed values in file order; never empty, always finite.
    pub values: Vec<f64>,
    /// Data rows in the table, including rows whose cell was dropped.
    pub row_count: usize,
}

impl NumericColumn {
    /// Builds a column from in-memory values. Fails on empty or non-finite input.
    pub fn new(id: ColumnId, header: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("column {id} has no values")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "column {id} contains non-finite value {v}"
            )));
        }
        let row_count = values.len();
        Ok(Self {
            id,
            header: header.into(),
            values,
            row_count,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub columns: Vec<NumericColumn>,
    pub source: String,
}

impl Corpus {
    pub fn new(columns: Vec<NumericColumn>, source: impl Into<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::NoNumericColumns(PathBuf::from(source.into())));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert((c.id.table.as_str(), c.id.index)) {
                return Err(Error::InvalidArgument(format!("duplicate column id {}", c.id)));
            }
        }
        Ok(Self {
            columns,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ColumnId> {
        self.columns.iter().map(|c| &c.id)
    }

    /// All values of all columns concatenated in corpus order.
    pub fn pooled_stack(&self) -> Vec<f64> {
        let total = self.columns.iter().map(NumericColumn::len).sum();
        let mut stack = Vec::with_capacity(total);
        for c in &self.columns {
            stack.extend_from_slice(&c.values);
        }
        stack
    }

    /// Loads every `*.csv` file in `dir` (sorted by file name) and keeps the
    /// columns whose non-empty cells are at least `numeric_threshold` numeric.
    pub fn load(dir: impl AsRef<Path>, numeric_threshold: f64) -> Result<Self> {
        load_corpus(dir, numeric_threshold)
    }
}

pub fn load_corpus(dir: impl AsRef<Path>, numeric_threshold: f64) -> Result<Corpus> {
    let dir = dir.as_ref();
    if !(numeric_threshold > 0.0 && numeric_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "numeric threshold must lie in (0, 1], got {numeric_threshold}"
        )));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv && path.is_file() {
            files.push(path);
        }
    }
    files.sort();

    let mut columns = Vec::new();
    for file in &files {
        columns.extend(read_table(file, numeric_threshold)?);
    }
    if columns.is_empty() {
        return Err(Error::NoNumericColumns(dir.to_path_buf()));
    }
    Corpus::new(columns, dir.display().to_string())
}

fn csv_error(file: &Path, err: csv::Error) -> Error {
    let row = err.position().map_or(0, |p| p.line());
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => err.to_string(),
    };
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(file, e),
        _ => Error::Csv {
            file: file.to_path_buf(),
            row,
            message,
        },
    }
}

fn read_table(file: &Path, numeric_threshold: f64) -> Result<Vec<NumericColumn>> {
    let table = file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(file)
        .map_err(|e| csv_error(file, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(file, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let width = headers.len();
    let mut parsed: Vec<Vec<f64>> = vec![Vec::new(); width];
    let mut non_empty = vec![0usize; width];
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(file, e))?;
        rows += 1;
        for (i, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            non_empty[i] += 1;
            if let Ok(v) = cell.parse::<f64>() {
                if v.is_finite() {
                    parsed[i].push(v);
                }
            }
        }
    }

    let mut used = HashSet::new();
    let mut out = Vec::new();
    for (index, (header, values)) in headers.iter().zip(parsed).enumerate() {
        let name = if header.is_empty() {
            format!("column_{index}")
        } else if used.contains(header.as_str()) {
            format!("{header}_{index}")
        } else {
            header.clone()
        };
        used.insert(name.clone());
        if values.is_empty() {
            continue;
        }
        let fraction = values.len() as f64 / non_empty[index] as f64;
        if fraction >= numeric_threshold {
            out.push(NumericColumn {
                id: ColumnId::new(table.clone(), name, index),
                header: header.clone(),
                values,
                row_count: rows,
            });
        }
    }
    Ok(out)
}

/// Semantic-type labels keyed by `(table, column)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: BTreeMap<(String, String), String>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn insert(&mut self, table: &str, column: &str, label: &str) -> Result<()> {
        let key = (table.to_string(), column.to_string());
        if self.labels.contains_key(&key) {
            return Err(Error::GroundTruth(format!(
                "duplicate entry for {table}.{column}"
            )));
        }
        self.labels.insert(key, label.to_string());
        Ok(())
    }

    pub fn label(&self, table: &str, column: &str) -> Option<&str> {
        self.labels
            .get(&(table.to_string(), column.to_string()))
            .map(String::as_str)
    }

    pub fn label_of(&self, id: &ColumnId) -> Option<&str> {
        self.label(&id.table, &id.column)
    }

    /// Every labeled key must name a column among `ids`.
    pub fn check_covered<'a>(&self, ids: impl IntoIterator<Item = &'a ColumnId>) -> Result<()> {
        let present: HashSet<(&str, &str)> = ids.into_iter().map(ColumnId::key).collect();
        for (table, column) in self.labels.keys() {
            if !present.contains(&(table.as_str(), column.as_str())) {
                return Err(Error::GroundTruth(format!(
                    "labeled column {table}.{column} is not in the corpus"
                )));
            }
        }
        Ok(())
    }

    /// Labels aligned with `ids`; unlabeled columns map to `None`.
    pub fn aligned<'a>(&self, ids: impl IntoIterator<Item = &'a ColumnId>) -> Vec<Option<String>> {
        ids.into_iter()
            .map(|id| self.label_of(id).map(str::to_string))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["table", "column", "label"])
            .map_err(|e| csv_error(path, e))?;
        for ((table, column), label) in &self.labels {
            w.write_record([table, column, label])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `table,column,label` CSV. A header-only file is a valid empty map.
pub fn load_ground_truth(file: impl AsRef<Path>) -> Result<GroundTruth> {
    let file = file.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(file)
        .map_err(|e| csv_error(file, e))?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(file, e))?,
        None => {
            return Err(Error::GroundTruth(format!(
                "{}: missing header row",
                file.display()
            )))
        }
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["table", "column", "label"] {
        return Err(Error::GroundTruth(format!(
            "{}: expected header table,column,label, found {}",
            file.display(),
            names.join(",")
        )));
    }
    let mut gt = GroundTruth::default();
    for record in records {
        let record = record.map_err(|e| csv_error(file, e))?;
        gt.insert(record[0].trim(), record[1].trim(), record[2].trim())?;
    }
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn threshold_decides_inclusion() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "shop.csv", "price,name\n1.5,a\n2.0,b\nn/a,c\n");
        let corpus = load_corpus(dir.path(), 0.5).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.columns[0].id.column, "price");
        assert_eq!(corpus.columns[0].values, vec![1.5, 2.0]);
        assert_eq!(corpus.columns[0].row_count, 3);

        let err = load_corpus(dir.path(), 0.95).unwrap_err();
        assert!(matches!(err, Error::NoNumericColumns(_)));
    }

    #[test]
    fn empty_directory_has_no_numeric_columns() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(dir.path(), 0.95).unwrap_err();
        assert!(err.to_string().contains("no numeric columns"));
    }

    #[test]
    fn missing_cells_are_dropped_and_whitespace_trimmed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.csv", "a,b\n 1 ,\n,2\n3,inf\n");
        let corpus = load_corpus(dir.path(), 0.5).unwrap();
        assert_eq!(corpus.columns[0].values, vec![1.0, 3.0]);
        // "inf" is non-empty but not finite: 1 of 2 cells numeric.
        assert_eq!(corpus.columns[1].values, vec![2.0]);
        assert!(load_corpus(dir.path(), 0.6).unwrap().len() == 1);
    }

    #[test]
    fn thousands_separators_are_not_numeric() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.csv", "a\n\"1,000\"\n2\n");
        let corpus = load_corpus(dir.path(), 0.5).unwrap();
        assert_eq!(corpus.columns[0].values, vec![2.0]);
    }

    #[test]
    fn ragged_row_names_file_and_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "bad.csv", "a,b\n1,2\n3\n");
        let err = load_corpus(dir.path(), 0.5).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.csv"), "{msg}");
        assert!(msg.contains("row 3"), "{msg}");
    }

    #[test]
    fn files_load_in_name_order_with_positional_names() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "b.csv", "x,x,\n1,2,3\n");
        write(dir.path(), "a.csv", "y\n4\n");
        write(dir.path(), "notes.txt", "z\n5\n");
        let corpus = load_corpus(dir.path(), 0.95).unwrap();
        let names: Vec<String> = corpus.ids().map(|i| i.to_string()).collect();
        assert_eq!(names, ["a.y", "b.x", "b.x_1", "b.column_2"]);
        assert_eq!(corpus.pooled_stack(), vec![4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pooled_stack_concatenates_in_order() {
        let cols = vec![
            NumericColumn::new(ColumnId::new("t", "a", 0), "a", vec![1.0, 2.0]).unwrap(),
            NumericColumn::new(ColumnId::new("t", "b", 1), "b", vec![3.0]).unwrap(),
        ];
        let corpus = Corpus::new(cols, "mem").unwrap();
        assert_eq!(corpus.pooled_stack(), vec![1.0, 2.0, 3.0]);

        let single = Corpus::new(
            vec![NumericColumn::new(ColumnId::new("t", "a", 0), "a", vec![5.0]).unwrap()],
            "mem",
        )
        .unwrap();
        assert_eq!(single.pooled_stack(), vec![5.0]);
    }

    #[test]
    fn invalid_threshold_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(dir.path(), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(load_corpus(dir.path(), 1.5).is_err());
    }

    #[test]
    fn ground_truth_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        fs::write(&p, "table,column,label\nt1,a,age\nt1,b,year\n").unwrap();
        let gt = load_ground_truth(&p).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt.label("t1", "b"), Some("year"));

        fs::write(&p, "table,column,label\nt1,a,age\nt1,a,year\n").unwrap();
        assert!(matches!(load_ground_truth(&p), Err(Error::GroundTruth(_))));

        fs::write(&p, "table,column,label\n").unwrap();
        assert!(load_ground_truth(&p).unwrap().is_empty());

        fs::write(&p, "").unwrap();
        assert!(load_ground_truth(&p).unwrap_err().to_string().contains("missing header"));

        fs::write(&p, "a,b,c\nt,x,y\n").unwrap();
        assert!(load_ground_truth(&p).is_err());
    }

    #[test]
    fn ground_truth_coverage_check() {
        let mut gt = GroundTruth::default();
        gt.insert("t", "a", "age").unwrap();
        let ids = [ColumnId::new("t", "a", 0)];
        assert!(gt.check_covered(ids.iter()).is_ok());
        gt.insert("t", "zz", "age").unwrap();
        assert!(gt.check_covered(ids.iter()).is_err());
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.csv", "a,b\n1,2\n3,4.5\n");
        let a = load_corpus(dir.path(), 0.95).unwrap();
        let b = load_corpus(dir.path(), 0.95).unwrap();
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pooled_length_is_sum_of_lengths(lens in proptest::collection::vec(1usize..20, 1..10)) {
                let cols: Vec<NumericColumn> = lens
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        NumericColumn::new(ColumnId::new("t", format!("c{i}"), i), "", vec![i as f64; n]).unwrap()
                    })
                    .collect();
                let corpus = Corpus::new(cols, "mem").unwrap();
                prop_assert_eq!(corpus.pooled_stack().len(), lens.iter().sum::<usize>());
            }
        }
    }
}
