//! CSV ingestion and export.
//!
//! Files must have a header row. The response and every predictor must parse
//! as finite numbers; the cluster column is read as an opaque label.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::{Dataset, Family};
use crate::error::{Error, Result};

/// Which columns of a CSV file make up a dataset.
#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub family: Family,
    pub response: String,
    pub cluster: String,
    /// Predictor columns in order; `None` takes every other column.
    pub predictors: Option<Vec<String>>,
}

pub fn read_dataset(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset_from(file, spec)
}

pub fn read_dataset_from<R: Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let response_idx = find(&spec.response)?;
    let cluster_idx = find(&spec.cluster)?;
    let predictor_names: Vec<String> = match &spec.predictors {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != response_idx && i != cluster_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let predictor_idx = predictor_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Schema(format!("line {line}, column '{}': '{raw}' is not a finite number", headers[idx]))
            })
        };
        y.push(cell(response_idx)?);
        for &idx in &predictor_idx {
            values.push(cell(idx)?);
        }
        labels.push(record.get(cluster_idx).unwrap_or("").trim().to_string());
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, predictor_idx.len()), values)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Dataset::from_labels(x, Array1::from(y), &labels, spec.family)?.with_names(predictor_names)
}

/// Writes `cluster, y, predictors...` with the dataset's column names.
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string(), "y".to_string()];
    header.extend(data.names().iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..data.n_obs() {
        let mut record = Vec::with_capacity(header.len());
        record.push(data.cluster_labels()[data.cluster()[i]].clone());
        record.push(data.y()[i].to_string());
        record.extend(data.x().row(i).iter().map(f64::to_string));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}
