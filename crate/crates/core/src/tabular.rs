//! Tabular datasets: construction, CSV ingestion and export, and
//! train/test splitting.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[serde(alias = "reg")]
    Regression,
    #[serde(alias = "clf")]
    Classification,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reg" | "regression" => Ok(Task::Regression),
            "clf" | "classification" => Ok(Task::Classification),
            other => Err(format!("unknown task `{other}` (expected reg or clf)")),
        }
    }
}

/// Immutable feature matrix plus response. Rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    y: Vec<f64>,
    task: Task,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(
        x: Vec<f64>,
        n_cols: usize,
        y: Vec<f64>,
        task: Task,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n_cols == 0 || !x.len().is_multiple_of(n_cols) {
            return Err(Error::InvalidData(format!(
                "buffer of length {} is not a multiple of {n_cols} columns",
                x.len()
            )));
        }
        let n_rows = x.len() / n_cols;
        if n_rows < 2 || n_cols < 2 {
            return Err(Error::EmptyData(format!(
                "need at least 2 rows and 2 features, got {n_rows}x{n_cols}"
            )));
        }
        if y.len() != n_rows {
            return Err(Error::InvalidData(format!(
                "response has {} entries for {n_rows} rows",
                y.len()
            )));
        }
        if feature_names.len() != n_cols {
            return Err(Error::InvalidData(format!(
                "{} feature names for {n_cols} columns",
                feature_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate feature name `{name}`"
                )));
            }
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite response at row {pos}"
            )));
        }
        if task == Task::Classification {
            if let Some(pos) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "classification label {} at row {pos} is not 0 or 1",
                    y[pos]
                )));
            }
        }
        Ok(Self {
            x,
            n_rows,
            n_cols,
            y,
            task,
            feature_names,
            target_name: "y".to_string(),
        })
    }

    /// Same as [`Dataset::new`] with generated names `X1..XM`.
    pub fn from_rows(x: Vec<f64>, n_cols: usize, y: Vec<f64>, task: Task) -> Result<Self> {
        let names = (1..=n_cols).map(|j| format!("X{j}")).collect();
        Self::new(x, n_cols, y, task, names)
    }

    pub fn with_target_name(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n_cols + j]
    }

    /// New dataset holding `rows` (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(rows.len() * self.n_cols);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
        }
        Ok(
            Self::new(x, self.n_cols, y, self.task, self.feature_names.clone())?
                .with_target_name(self.target_name.clone()),
        )
    }

    /// Writes the dataset as CSV: feature columns then the target column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_cols + 1);
        for i in 0..self.n_rows {
            record.clear();
            // `{}` on f64 prints the shortest representation that parses back exactly.
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            record.push(self.y[i].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Reads a CSV file with a header row into a [`Dataset`].
///
/// With `encode_categoricals`, any non-numeric feature column is expanded
/// into indicator columns named `<col>=<level>`, levels sorted
/// lexicographically. Classification targets must have at most two observed
/// labels; they are mapped to 0/1 in lexicographic order.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &str,
    task: Task,
    encode_categoricals: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, task, encode_categoricals)
}

pub fn read_csv<R: Read>(
    reader: R,
    target: &str,
    task: Task,
    encode_categoricals: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingTarget(target.to_string()))?;

    let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in rdr.records() {
        let record = record?;
        for (c, field) in record.iter().enumerate() {
            columns[c].push(field.trim().to_string());
        }
    }
    let n_rows = columns[0].len();
    if n_rows == 0 {
        return Err(Error::EmptyData("no data rows".into()));
    }
    for (c, col) in columns.iter().enumerate() {
        if let Some(row) = col.iter().position(String::is_empty) {
            return Err(Error::MissingValue {
                column: header[c].clone(),
                row,
            });
        }
    }

    let mut feature_cols: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (c, col) in columns.iter().enumerate() {
        if c == target_idx {
            continue;
        }
        match parse_numeric(col) {
            Ok(values) => {
                feature_cols.push(values);
                names.push(header[c].clone());
            }
            Err((row, value)) => {
                if !encode_categoricals {
                    return Err(Error::NonNumericColumn {
                        column: header[c].clone(),
                        row,
                        value,
                    });
                }
                let levels: BTreeSet<&str> = col.iter().map(String::as_str).collect();
                for level in levels {
                    feature_cols.push(
                        col.iter()
                            .map(|v| if v == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    names.push(format!("{}={}", header[c], level));
                }
            }
        }
    }

    let y = parse_target(&columns[target_idx], &header[target_idx], task)?;
    let n_cols = feature_cols.len();
    let mut x = Vec::with_capacity(n_rows * n_cols);
    for i in 0..n_rows {
        for col in &feature_cols {
            x.push(col[i]);
        }
    }
    Ok(Dataset::new(x, n_cols, y, task, names)?.with_target_name(target))
}

fn parse_numeric(col: &[String]) -> std::result::Result<Vec<f64>, (usize, String)> {
    col.iter()
        .enumerate()
        .map(|(i, s)| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err((i, s.clone())),
        })
        .collect()
}

fn parse_target(col: &[String], name: &str, task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Regression => parse_numeric(col).map_err(|(row, value)| Error::NonNumericColumn {
            column: name.to_string(),
            row,
            value,
        }),
        Task::Classification => {
            let levels: Vec<&str> = col
                .iter()
                .map(String::as_str)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            match levels.as_slice() {
                [only] => match only.parse::<f64>() {
                    Ok(v) if v == 0.0 || v == 1.0 => Ok(vec![v; col.len()]),
                    _ => Err(Error::NonBinaryLabels(1, vec![only.to_string()])),
                },
                [zero, _one] => Ok(col
                    .iter()
                    .map(|v| if v == zero { 0.0 } else { 1.0 })
                    .collect()),
                many => Err(Error::NonBinaryLabels(
                    many.len(),
                    many.iter().map(|s| s.to_string()).collect(),
                )),
            }
        }
    }
}

/// Disjoint train (D1) and test (D2) halves of a dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub split_seed: u64,
}

/// Uniformly random row partition with `floor(train_frac * N)` training rows.
pub fn split(data: &Dataset, train_frac: f64, rng: RngStream) -> Result<SplitPair> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::TooFewRows(format!(
            "train fraction {train_frac} must lie strictly between 0 and 1"
        )));
    }
    let n = data.n_rows();
    let n_train = (train_frac * n as f64).floor() as usize;
    // Both halves are datasets in their own right, so each needs two rows.
    if n_train < 2 || n - n_train < 2 {
        return Err(Error::TooFewRows(format!(
            "{n} rows at fraction {train_frac} gives {n_train} train / {} test rows",
            n - n_train
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    let mut train_rows = idx[..n_train].to_vec();
    let mut test_rows = idx[n_train..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    let train = data.select_rows(&train_rows)?;
    let test = data.select_rows(&test_rows)?;
    Ok(SplitPair {
        train,
        test,
        train_rows,
        test_rows,
        split_seed: rng.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n * 2).map(|v| v as f64 * 0.5).collect();
        let y: Vec<f64> = (0..n).map(|v| v as f64).collect();
        Dataset::from_rows(x, 2, y, Task::Regression).unwrap()
    }

    #[test]
    fn parses_numeric_file() {
        let csv = "a,b,t\n1,2,3\n4,5,6\n7,8.5,9\n";
        let d = read_csv(csv.as_bytes(), "t", Task::Regression, false).unwrap();
        assert_eq!((d.n_rows(), d.n_cols()), (3, 2));
        assert_eq!(d.row(2), &[7.0, 8.5]);
        assert_eq!(d.y(), &[3.0, 6.0, 9.0]);
        assert_eq!(d.feature_names(), &["a", "b"]);
    }

    #[test]
    fn one_hot_encodes_in_level_order() {
        let csv = "color,z,t\nred,1,0\nblue,2,1\nred,3,1\n";
        let d = read_csv(csv.as_bytes(), "t", Task::Classification, true).unwrap();
        assert_eq!(d.feature_names(), &["color=blue", "color=red", "z"]);
        for i in 0..3 {
            assert_eq!(d.get(i, 0) + d.get(i, 1), 1.0);
        }
        assert_eq!(d.row(0), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn non_numeric_without_flag_is_an_error() {
        let csv = "color,z,t\nred,1,0\nblue,2,1\n";
        let err = read_csv(csv.as_bytes(), "t", Task::Regression, false).unwrap_err();
        assert!(matches!(err, Error::NonNumericColumn { .. }));
    }

    #[test]
    fn three_labels_rejected() {
        let csv = "a,b,t\n1,2,x\n3,4,y\n5,6,z\n";
        let err = read_csv(csv.as_bytes(), "t", Task::Classification, false).unwrap_err();
        assert!(matches!(err, Error::NonBinaryLabels(3, _)));
    }

    #[test]
    fn string_labels_map_lexicographically() {
        let csv = "a,b,t\n1,2,yes\n3,4,no\n5,6,yes\n";
        let d = read_csv(csv.as_bytes(), "t", Task::Classification, false).unwrap();
        assert_eq!(d.y(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_target_and_missing_values() {
        let csv = "a,b,t\n1,2,3\n4,5,6\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), "nope", Task::Regression, false),
            Err(Error::MissingTarget(_))
        ));
        let holes = "a,b,t\n1,,3\n4,5,6\n";
        assert!(matches!(
            read_csv(holes.as_bytes(), "t", Task::Regression, false),
            Err(Error::MissingValue { row: 0, .. })
        ));
        assert!(matches!(
            read_csv("a,b,t\n".as_bytes(), "t", Task::Regression, false),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0, f64::MAX, 1e-17];
        let d = Dataset::from_rows(x, 2, vec![0.2, -1.0 / 7.0, 3.0], Task::Regression).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "y", Task::Regression, false).unwrap();
        assert_eq!(back.x(), d.x());
        assert_eq!(back.y(), d.y());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = toy(500);
        let s = split(&d, 0.5, RngStream::new(3)).unwrap();
        assert_eq!(s.train.n_rows(), 250);
        assert_eq!(s.test.n_rows(), 250);
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let d = toy(10);
        let a = split(&d, 0.5, RngStream::new(11)).unwrap();
        let b = split(&d, 0.5, RngStream::new(11)).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        let c = split(&d, 0.5, RngStream::new(12)).unwrap();
        assert_ne!(a.train_rows, c.train_rows);
    }

    #[test]
    fn split_too_few_rows() {
        let d = toy(3);
        assert!(matches!(
            split(&d, 0.9, RngStream::new(1)),
            Err(Error::TooFewRows(_))
        ));
    }

    #[test]
    fn rejects_bad_labels_and_names() {
        assert!(Dataset::from_rows(vec![0.0; 4], 2, vec![0.0, 2.0], Task::Classification).is_err());
        assert!(Dataset::new(
            vec![0.0; 4],
            2,
            vec![0.0, 1.0],
            Task::Regression,
            vec!["a".into(), "a".into()]
        )
        .is_err());
        assert!(Dataset::from_rows(
            vec![f64::NAN, 0.0, 0.0, 0.0],
            2,
            vec![0.0, 1.0],
            Task::Regression
        )
        .is_err());
    }
}
