use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{PersistError, Result};
use crate::nnengine::Targets;
use crate::quantifiers::ProblemType;
use crate::rng::{self, Purpose};

/// Features plus labels (classification) or real targets (regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Targets,
    /// Class count for classification, output dimension for regression.
    pub num_outputs: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Targets, num_outputs: usize) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(PersistError::InvalidDataset(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        match &targets {
            Targets::Labels(labels) => {
                if let Some(&bad) = labels.iter().find(|&&c| c >= num_outputs) {
                    return Err(PersistError::InvalidDataset(format!(
                        "label {bad} outside [0, {num_outputs})"
                    )));
                }
            }
            Targets::Values(v) => {
                if v.ncols() != num_outputs {
                    return Err(PersistError::InvalidDataset(format!(
                        "targets have {} columns, expected {num_outputs}",
                        v.ncols()
                    )));
                }
            }
        }
        Ok(Self {
            features,
            targets,
            num_outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn problem_type(&self) -> ProblemType {
        match self.targets {
            Targets::Labels(_) => ProblemType::Classification,
            Targets::Values(_) => ProblemType::Regression,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select(Axis(0), &idx)),
        };
        Dataset {
            features: self.features.select(Axis(0), &idx),
            targets,
            num_outputs: self.num_outputs,
        }
    }

    /// Splits off the first `round(fraction * len)` rows.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        (self.slice(0, cut), self.slice(cut, self.len()))
    }
}

/// Gaussian clusters around seeded random centers in two dimensions.
pub fn generate_blobs(num_points: usize, num_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    generate_blobs_with_features(num_points, num_classes, 2, spread, seed)
}

/// Gaussian clusters around centers drawn uniformly from `[-10, 10]^F`.
/// Point `i` belongs to class `i mod C`, so labels are balanced within one
/// and any prefix of the dataset is too.
pub fn generate_blobs_with_features(
    num_points: usize,
    num_classes: usize,
    num_features: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(PersistError::InvalidDataset(format!(
            "blobs need at least 2 classes, got {num_classes}"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(PersistError::InvalidDataset(format!(
            "spread must be positive, got {spread}"
        )));
    }
    if num_features == 0 {
        return Err(PersistError::InvalidDataset("blobs need at least one feature".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let centers = Array2::from_shape_simple_fn((num_classes, num_features), || {
        rng.random_range(-10.0..10.0)
    });
    let noise = Normal::new(0.0, spread).expect("spread validated");
    let labels: Vec<usize> = (0..num_points).map(|i| i % num_classes).collect();
    let mut features = Array2::zeros((num_points, num_features));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for (f, v) in row.iter_mut().enumerate() {
            *v = centers[[labels[i], f]] + noise.sample(&mut rng);
        }
    }
    Dataset::new(features, Targets::Labels(labels), num_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub delimiter: u8,
    /// Name of the final column holding the label (or regression target).
    pub label_column: String,
    pub problem: ProblemType,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: b',',
            label_column: "label".into(),
            problem: ProblemType::Classification,
        }
    }
}

/// Loads a CSV file with a header row whose final column is the label.
///
/// Row numbers in errors count data rows from 1 (the header is not counted);
/// column numbers count from 1.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| PersistError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| PersistError::csv(path, e))?.clone();
    if headers.iter().last().map(str::trim) != Some(schema.label_column.as_str()) {
        return Err(PersistError::MissingLabelColumn {
            expected: schema.label_column.clone(),
        });
    }
    let width = headers.len();
    let num_features = width - 1;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| PersistError::csv(path, e))?;
        if record.len() != width {
            return Err(PersistError::RaggedRow {
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| PersistError::CsvParse {
                row,
                column: c + 1,
                value: cell.to_string(),
            })?;
            if c < num_features {
                features.push(value);
            } else {
                raw_labels.push((row, value));
            }
        }
    }
    let n = raw_labels.len();
    let features = Array2::from_shape_vec((n, num_features), features).expect("row widths checked");
    match schema.problem {
        ProblemType::Classification => {
            let labels = raw_labels
                .iter()
                .map(|&(row, v)| {
                    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                        Ok(v as usize)
                    } else {
                        Err(PersistError::CsvParse {
                            row,
                            column: width,
                            value: v.to_string(),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
            Dataset::new(features, Targets::Labels(labels), classes)
        }
        ProblemType::Regression => {
            let values = Array2::from_shape_vec((n, 1), raw_labels.iter().map(|&(_, v)| v).collect())
                .expect("one target per row");
            Dataset::new(features, Targets::Values(values), 1)
        }
    }
}

/// Where a dataset comes from: `blobs:<N>,<C>,<spread>` or a CSV path.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Blobs {
        points: usize,
        classes: usize,
        spread: f64,
    },
    Csv(PathBuf),
}

impl DatasetSource {
    /// Materializes the dataset; `seed` only affects generated blobs.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Blobs {
                points,
                classes,
                spread,
            } => generate_blobs(*points, *classes, *spread, seed),
            DatasetSource::Csv(path) => load_csv(path, &CsvSchema::default()),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = PersistError;

    fn from_str(s: &str) -> Result<Self> {
        let Some(spec) = s.strip_prefix("blobs:") else {
            return Ok(DatasetSource::Csv(PathBuf::from(s)));
        };
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let bad = || PersistError::InvalidDataset(format!("expected blobs:<N>,<C>,<spread>, got '{s}'"));
        let [n, c, spread] = parts.as_slice() else {
            return Err(bad());
        };
        Ok(DatasetSource::Blobs {
            points: n.parse().map_err(|_| bad())?,
            classes: c.parse().map_err(|_| bad())?,
            spread: spread.parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Blobs {
                points,
                classes,
                spread,
            } => write!(f, "blobs:{points},{classes},{spread}"),
            DatasetSource::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = generate_blobs(300, 3, 0.5, 4).unwrap();
        assert_eq!(a, generate_blobs(300, 3, 0.5, 4).unwrap());
        let mut counts = [0; 3];
        a.labels().unwrap().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [100, 100, 100]);
        let b = generate_blobs(301, 3, 0.5, 4).unwrap();
        let mut counts = [0; 3];
        b.labels().unwrap().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn blobs_reject_bad_parameters() {
        assert!(generate_blobs(10, 1, 1.0, 0).is_err());
        assert!(generate_blobs(10, 2, 0.0, 0).is_err());
        assert!(generate_blobs(10, 2, -1.0, 0).is_err());
    }

    #[test]
    fn csv_two_rows() {
        let f = write_csv("a,b,label\n1.5,-2,1\n0,3.25,0\n");
        let d = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.features, array![[1.5, -2.0], [0.0, 3.25]]);
        assert_eq!(d.labels().unwrap(), &[1, 0]);
        assert_eq!(d.num_outputs, 2);
    }

    #[test]
    fn csv_header_only_is_empty() {
        let f = write_csv("a,b,label\n");
        let d = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.num_features(), 2);
    }

    #[test]
    fn csv_reports_row_and_column() {
        let f = write_csv("a,b,c,label\n1,2,3,0\n4,5,abc,1\n");
        match load_csv(f.path(), &CsvSchema::default()).unwrap_err() {
            PersistError::CsvParse { row, column, value } => {
                assert_eq!((row, column, value.as_str()), (2, 3, "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_missing_label_and_ragged_rows() {
        let f = write_csv("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(PersistError::MissingLabelColumn { .. })
        ));
        let f = write_csv("a,b,label\n1,2,0\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(PersistError::RaggedRow { row: 2, .. })
        ));
    }

    #[test]
    fn dataset_source_parsing() {
        assert_eq!(
            "blobs:200,2,0.5".parse::<DatasetSource>().unwrap(),
            DatasetSource::Blobs {
                points: 200,
                classes: 2,
                spread: 0.5
            }
        );
        assert!("blobs:1,2".parse::<DatasetSource>().is_err());
        assert_eq!(
            "data/x.csv".parse::<DatasetSource>().unwrap(),
            DatasetSource::Csv("data/x.csv".into())
        );
    }
}
