//! Diabetes CSV ingestion, stratified split and z-scoring.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::FeatureVector;
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "Outcome";

/// Parsed table before any preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }
}

pub fn load_diabetes_csv(path: &Path) -> Result<RawTable> {
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    if !path.exists() {
        return Err(data_err("file not found".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| data_err(format!("missing `{LABEL_COLUMN}` column")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(data_err("no feature columns".into()));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_col {
                let label = match cell {
                    "0" | "0.0" => 0,
                    "1" | "1.0" => 1,
                    other => return Err(parse_err(format!("invalid label `{other}`"))),
                };
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(format!("non-numeric value `{cell}` in column `{}`", &headers[j]))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value in column `{}`", &headers[j])));
                }
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_err("empty table".into()));
    }
    Ok(RawTable {
        feature_names,
        rows,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population mean and std over `rows`.
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyBatch);
        };
        let d = first.len();
        let m = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (acc, v) in mean.iter_mut().zip(r.iter()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((acc, v), mu) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std: Vec<f64> = var.into_iter().map(|v| (v / m).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "feature {j} has zero variance on the training split"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> FeatureVector {
        FeatureVector(
            row.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (mu, s))| (v - mu) / s)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Standardized features for every row, in file order.
    pub features: Vec<FeatureVector>,
    pub labels: Vec<u8>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub standardization: Standardization,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.standardization.mean.len()
    }

    pub fn train_features(&self) -> Vec<FeatureVector> {
        self.train.iter().map(|&i| self.features[i].clone()).collect()
    }

    pub fn test_features(&self) -> Vec<FeatureVector> {
        self.test.iter().map(|&i| self.features[i].clone()).collect()
    }
}

/// Stratified shuffle split followed by z-scoring fit on the train rows.
pub fn prepare_dataset(raw: &RawTable, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if raw.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..raw.len()).filter(|&i| raw.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == idx.len() {
            return Err(Error::InvalidArgument(format!(
                "class {class} ({} rows) would be absent from one split",
                idx.len()
            )));
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let train_rows: Vec<&[f64]> = train.iter().map(|&i| raw.rows[i].as_slice()).collect();
    let standardization = Standardization::fit(&train_rows)?;
    let features = raw.rows.iter().map(|r| standardization.apply(r)).collect();
    Ok(Dataset {
        features,
        labels: raw.labels.clone(),
        train,
        test,
        standardization,
    })
}
