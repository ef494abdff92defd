//! Clustered regression data.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response distribution. Gaussian uses the identity link, binomial the logit link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Binomial => f.write_str("binomial"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::Schema(format!("unknown family `{other}`"))),
        }
    }
}

/// Predictors, response and cluster membership for one regression problem.
///
/// The predictor matrix never contains the intercept; every fitted model adds
/// its own leading column of ones.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    cluster: Arc<Vec<usize>>,
    cluster_labels: Vec<String>,
    names: Vec<String>,
    family: Family,
}

impl Dataset {
    /// Builds a dataset from arbitrary integer cluster ids. Ids are renumbered
    /// densely in order of first appearance.
    pub fn new(x: Array2<f64>, y: Array1<f64>, cluster: &[usize], family: Family) -> Result<Self> {
        let labels: Vec<String> = cluster.iter().map(|c| c.to_string()).collect();
        Self::from_labels(x, y, &labels, family)
    }

    pub fn from_labels<S: AsRef<str>>(
        x: Array2<f64>,
        y: Array1<f64>,
        labels: &[S],
        family: Family,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor rows for {n} responses",
                x.nrows()
            )));
        }
        if labels.len() != n {
            return Err(Error::LabelMismatch { labels: labels.len(), rows: n });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("response at row {i} is not finite")));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!("predictor at row {i}, column {j} is not finite")));
        }
        if family == Family::Binomial {
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "binomial response at row {i} is {}, expected 0 or 1",
                    y[i]
                )));
            }
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut cluster_labels = Vec::new();
        let cluster: Vec<usize> = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l).or_insert_with(|| {
                    cluster_labels.push(l.to_string());
                    cluster_labels.len() - 1
                })
            })
            .collect();

        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Dataset { x, y, cluster: Arc::new(cluster), cluster_labels, names, family })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} predictors",
                names.len(),
                self.x.ncols()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    /// Dense cluster index (0..M) of every row.
    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    pub(crate) fn cluster_arc(&self) -> Arc<Vec<usize>> {
        Arc::clone(&self.cluster)
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    /// Observation count of each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &c in self.cluster.iter() {
            sizes[c] += 1;
        }
        sizes
    }

    /// Row indices of each cluster, ascending within a cluster.
    pub fn cluster_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_clusters()];
        for (i, &c) in self.cluster.iter().enumerate() {
            rows[c].push(i);
        }
        rows
    }

    /// Design matrix `[1, x[:, columns]]`.
    pub fn design(&self, columns: &[usize]) -> Result<Array2<f64>> {
        self.check_columns(columns)?;
        let n = self.n_obs();
        let mut design = Array2::<f64>::ones((n, columns.len() + 1));
        for (k, &c) in columns.iter().enumerate() {
            design.column_mut(k + 1).assign(&self.x.column(c));
        }
        Ok(design)
    }

    pub(crate) fn check_columns(&self, columns: &[usize]) -> Result<()> {
        for (k, &c) in columns.iter().enumerate() {
            if c >= self.n_predictors() {
                return Err(Error::DimensionMismatch(format!(
                    "predictor index {c} out of range for {} predictors",
                    self.n_predictors()
                )));
            }
            if columns[..k].contains(&c) {
                return Err(Error::DimensionMismatch(format!("predictor index {c} repeated")));
            }
        }
        Ok(())
    }

    /// Rows `rows` as a new dataset; cluster labels are kept.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let x = self.x.select(ndarray::Axis(0), rows);
        let y = self.y.select(ndarray::Axis(0), rows);
        let labels: Vec<&str> =
            rows.iter().map(|&i| self.cluster_labels[self.cluster[i]].as_str()).collect();
        Dataset::from_labels(x, y, &labels, self.family)?.with_names(self.names.clone())
    }

    /// Same rows with cluster membership replaced.
    pub fn with_clusters(&self, cluster: &[usize]) -> Result<Dataset> {
        Dataset::new(self.x.clone(), self.y.clone(), cluster, self.family)?
            .with_names(self.names.clone())
    }
}
