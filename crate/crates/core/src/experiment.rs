//! The simulation study: draw datasets for each design cell and iteration,
//! score the full model under every criterion against the leave-one-cluster-out
//! deviance, and in the selection cell compare forward-selection choices.
//!
//! A design spec is a key-value text file:
//!
//! ```text
//! # comments and blank lines are ignored
//! base_seed = 2024
//! iterations = 20
//! families = gaussian, binomial
//! sweeps = n_i, phi, r_b, selection
//! p = 5, 6              # optional filters on cell levels
//! n_i = 50
//! clusters = 50
//! polynomial_degree = 5
//! selection = true      # run forward selection in the selection cell
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{information_criteria, CriterionName, CriterionValue};
use crate::cv::loo_cluster_deviance;
use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::glm::fit_glm;
use crate::selection::{forward_path, jaccard_index, model_size_error, select_1se, select_min, Criterion, ModelChoice};
use crate::simulation::{
    enumerate_design, generate, polynomial_expand, DesignCell, Sweep, SELECTION_POLY_DEGREE,
};

pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub base_seed: u64,
    pub iterations: usize,
    pub families: Vec<Family>,
    pub sweeps: Vec<Sweep>,
    pub p: Option<Vec<usize>>,
    pub n_i: Option<Vec<usize>>,
    pub r_b: Option<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
    pub clusters: usize,
    pub polynomial_degree: usize,
    pub selection: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            base_seed: 0,
            iterations: DEFAULT_ITERATIONS,
            families: vec![Family::Gaussian, Family::Binomial],
            sweeps: Sweep::ALL.to_vec(),
            p: None,
            n_i: None,
            r_b: None,
            phi: None,
            clusters: 50,
            polynomial_degree: SELECTION_POLY_DEGREE,
            selection: true,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| Error::Schema(format!("{key}: cannot parse '{v}'"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::Schema(format!("{key}: cannot parse '{value}'")))
}

impl DesignSpec {
    pub fn parse(text: &str) -> Result<DesignSpec> {
        let mut spec = DesignSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("design spec line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            match key {
                "base_seed" => spec.base_seed = parse_one(key, value)?,
                "iterations" => spec.iterations = parse_one(key, value)?,
                "families" => spec.families = parse_list(key, value)?,
                "sweeps" => {
                    spec.sweeps = value
                        .split(',')
                        .map(str::trim)
                        .map(|s| Sweep::from_key(s).ok_or_else(|| Error::Schema(format!("unknown sweep '{s}'"))))
                        .collect::<Result<_>>()?
                }
                "p" => spec.p = Some(parse_list(key, value)?),
                "n_i" => spec.n_i = Some(parse_list(key, value)?),
                "r_b" => spec.r_b = Some(parse_list(key, value)?),
                "phi" => spec.phi = Some(parse_list(key, value)?),
                "clusters" => spec.clusters = parse_one(key, value)?,
                "polynomial_degree" => spec.polynomial_degree = parse_one(key, value)?,
                "selection" => spec.selection = parse_one(key, value)?,
                other => return Err(Error::Schema(format!("unknown design key '{other}'"))),
            }
        }
        if spec.iterations == 0 || spec.clusters == 0 || spec.polynomial_degree == 0 {
            return Err(Error::InvalidConfig("iterations, clusters and polynomial_degree must be positive".into()));
        }
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<DesignSpec> {
        DesignSpec::parse(&std::fs::read_to_string(path)?)
    }

    pub fn cells(&self) -> Vec<DesignCell> {
        let keep = |filter: &Option<Vec<f64>>, v: f64| filter.as_ref().is_none_or(|f| f.contains(&v));
        enumerate_design(self.base_seed)
            .into_iter()
            .filter(|c| self.families.contains(&c.config.family) && self.sweeps.contains(&c.sweep))
            .filter(|c| self.p.as_ref().is_none_or(|f| f.contains(&c.config.p)))
            .filter(|c| self.n_i.as_ref().is_none_or(|f| f.contains(&c.config.cluster_size)))
            .filter(|c| keep(&self.r_b, c.config.r_b) && keep(&self.phi, c.config.phi))
            .map(|mut c| {
                c.config.clusters = self.clusters;
                c
            })
            .collect()
    }
}

/// One row of the experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sweep: Sweep,
    pub cell_id: String,
    pub family: Family,
    pub clusters: usize,
    pub n_i: usize,
    pub p: usize,
    pub r_b: f64,
    pub phi: f64,
    pub iteration: usize,
    pub seed: u64,
    pub criterion: CriterionName,
    pub value: f64,
    pub penalty: f64,
    pub loo_deviance: f64,
    /// `value - loo_deviance`.
    pub approximation_error: f64,
    pub size_min: Option<usize>,
    pub size_1se: Option<usize>,
    pub size_error_min: Option<i64>,
    pub size_error_1se: Option<i64>,
    pub jaccard_min: Option<f64>,
    pub jaccard_1se: Option<f64>,
    pub failed: bool,
    pub error: String,
}

/// Elapsed time of one (cell, iteration) unit. Kept apart from the records so
/// that the record table is reproducible byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitTiming {
    pub cell_id: String,
    pub iteration: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub timings: Vec<UnitTiming>,
}

/// Criteria reported per unit, baseline last.
pub const REPORTED: [CriterionName; 5] =
    [CriterionName::Aic, CriterionName::Bic, CriterionName::Nic, CriterionName::Nicc, CriterionName::LooDeviance];

struct Choices {
    min: ModelChoice,
    one_se: Option<ModelChoice>,
}

fn choose(data: &Dataset, name: CriterionName) -> Result<Choices> {
    let path = forward_path(data, &Criterion::from_name(name, 0, 0))?;
    Ok(Choices { min: select_min(&path), one_se: select_1se(&path).ok() })
}

fn blank_record(cell: &DesignCell, iteration: usize, criterion: CriterionName) -> ExperimentRecord {
    let c = &cell.config;
    ExperimentRecord {
        sweep: cell.sweep,
        cell_id: cell.id.clone(),
        family: c.family,
        clusters: c.clusters,
        n_i: c.cluster_size,
        p: c.p,
        r_b: c.r_b,
        phi: c.phi,
        iteration,
        seed: cell.seed_for(iteration),
        criterion,
        value: f64::NAN,
        penalty: f64::NAN,
        loo_deviance: f64::NAN,
        approximation_error: f64::NAN,
        size_min: None,
        size_1se: None,
        size_error_min: None,
        size_error_1se: None,
        jaccard_min: None,
        jaccard_1se: None,
        failed: false,
        error: String::new(),
    }
}

fn mark_failed(records: &mut [ExperimentRecord], err: &Error) {
    for r in records {
        r.failed = true;
        if r.error.is_empty() {
            r.error = err.to_string();
        }
    }
}

fn approximation(data: &Dataset, records: &mut [ExperimentRecord]) -> Result<()> {
    let columns: Vec<usize> = (0..data.n_predictors()).collect();
    let fit = fit_glm(data, &columns)?;
    let loo = loo_cluster_deviance(data, &columns)?.to_criterion(CriterionName::LooDeviance)?;
    let info = information_criteria(&fit)?;
    let values: Vec<&CriterionValue> = info.iter().chain(std::iter::once(&loo)).collect();
    for (record, value) in records.iter_mut().zip(values) {
        record.value = value.value;
        record.penalty = value.penalty;
        record.loo_deviance = loo.value;
        record.approximation_error = value.value - loo.value;
    }
    Ok(())
}

fn selection(data: &Dataset, random_set: &[usize], degree: usize, records: &mut [ExperimentRecord]) -> Result<()> {
    let expanded = polynomial_expand(data, random_set, degree)?;
    let baseline = choose(&expanded, CriterionName::LooDeviance)?;
    for record in records.iter_mut() {
        let outcome = if record.criterion == CriterionName::LooDeviance {
            Ok(Choices { min: baseline.min.clone(), one_se: baseline.one_se.clone() })
        } else {
            choose(&expanded, record.criterion)
        };
        match outcome {
            Ok(ch) => {
                record.size_min = Some(ch.min.size);
                record.size_error_min = Some(model_size_error(&ch.min, &baseline.min));
                record.jaccard_min = Some(jaccard_index(&ch.min.variable_set, &baseline.min.variable_set));
                if let (Some(c), Some(b)) = (&ch.one_se, &baseline.one_se) {
                    record.size_1se = Some(c.size);
                    record.size_error_1se = Some(model_size_error(c, b));
                    record.jaccard_1se = Some(jaccard_index(&c.variable_set, &b.variable_set));
                }
            }
            Err(e) => {
                record.failed = true;
                record.error = format!("selection: {e}");
            }
        }
    }
    Ok(())
}

/// Runs one (cell, iteration) unit; failures are recorded, never raised.
pub fn run_unit(cell: &DesignCell, iteration: usize, polynomial_degree: usize, with_selection: bool) -> Vec<ExperimentRecord> {
    let mut records: Vec<ExperimentRecord> = REPORTED.iter().map(|&c| blank_record(cell, iteration, c)).collect();
    let (data, truth) = match generate(&cell.config_for(iteration)) {
        Ok(v) => v,
        Err(e) => {
            mark_failed(&mut records, &e);
            return records;
        }
    };
    if let Err(e) = approximation(&data, &mut records) {
        mark_failed(&mut records, &e);
    }
    if with_selection && cell.sweep == Sweep::Selection {
        if let Err(e) = selection(&data, &truth.random_set, polynomial_degree, &mut records) {
            let e = Error::InvalidData(format!("selection: {e}"));
            mark_failed(&mut records, &e);
        }
    }
    records
}

/// Runs every (cell, iteration) unit of the spec on `parallelism` threads.
/// Records come back in (cell, iteration, criterion) order whatever the
/// schedule.
pub fn run_experiment(spec: &DesignSpec, parallelism: usize) -> Result<ExperimentOutput> {
    if parallelism == 0 {
        return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
    }
    let cells = spec.cells();
    let mut seen = HashSet::new();
    if let Some(dup) = cells.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(Error::InvalidConfig(format!("duplicate cell id {}", dup.id)));
    }
    let units: Vec<(&DesignCell, usize)> =
        cells.iter().flat_map(|c| (0..spec.iterations).map(move |it| (c, it))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<(Vec<ExperimentRecord>, UnitTiming)> = pool.install(|| {
        units
            .par_iter()
            .map(|&(cell, iteration)| {
                let start = Instant::now();
                let records = run_unit(cell, iteration, spec.polynomial_degree, spec.selection);
                let timing = UnitTiming {
                    cell_id: cell.id.clone(),
                    iteration,
                    wall_seconds: start.elapsed().as_secs_f64(),
                };
                (records, timing)
            })
            .collect()
    });
    let mut output = ExperimentOutput { records: Vec::new(), timings: Vec::new() };
    for (records, timing) in results {
        output.records.extend(records);
        output.timings.push(timing);
    }
    Ok(output)
}

pub fn write_records<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_timings<W: Write>(timings: &[UnitTiming], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for t in timings {
        wtr.serialize(t)?;
    }
    wtr.flush()?;
    Ok(())
}
